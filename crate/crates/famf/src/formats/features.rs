//! Precomputed per-episode features: a binary record file plus a text
//! manifest that lists the records.
//!
//! # Feature file (`features.bin`)
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 8    | magic `FAMFFEAT`                   |
//! | 8      | 4    | format version, u32 (currently 1)  |
//! | 12     | ...  | episode records, back to back      |
//!
//! Each record:
//!
//! | size         | field                                              |
//! |--------------|----------------------------------------------------|
//! | 8            | episode id, u64                                    |
//! | 4            | label, u32                                         |
//! | 4            | feature dimension `D`, u32                         |
//! | 4            | face rows `N_raw`, u32                             |
//! | 1 each       | audio, body, text rows (0 or 1), u8                |
//! | 1            | quality flags present (0 or 1), u8                 |
//! | 8·N_raw·D    | face features, f64, row-major                      |
//! | 8·D each     | audio, body, text features when present, f64       |
//! | N_raw        | quality flags when present: 0 clean, 1 corrupt     |
//!
//! # Manifest (`manifest.txt`)
//!
//! UTF-8 lines; blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! famf-features 1
//! file features.bin
//! dim 64
//! classes 50
//! episode <id> <byte offset of record> <label>
//! ...
//! ```
//!
//! The `file` path is relative to the manifest. A manifest without episode
//! lines (even an empty file) loads as an empty dataset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use famf_core::data::{Dataset, Episode, FrameQuality};
use famf_core::Tensor;

use super::{put_f64s, put_u32, put_u64, to_u32, ByteReader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FAMFFEAT";
pub const VERSION: u32 = 1;
pub const MANIFEST_TAG: &str = "famf-features";
const HEADER_LEN: usize = 12;

/// Serializes `dataset`; returns the file bytes and each record's offset.
pub fn encode(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u64>)> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let mut offsets = Vec::with_capacity(dataset.len());
    for e in &dataset.episodes {
        offsets.push(out.len() as u64);
        put_u64(&mut out, e.id);
        put_u32(&mut out, to_u32(e.label, "label")?);
        put_u32(&mut out, to_u32(e.dim(), "dimension")?);
        put_u32(&mut out, to_u32(e.frames(), "frame count")?);
        for f in [&e.audio, &e.body, &e.text] {
            out.push(f.is_some() as u8);
        }
        out.push(e.quality.is_some() as u8);
        put_f64s(&mut out, e.face.data());
        for f in [&e.audio, &e.body, &e.text].into_iter().flatten() {
            put_f64s(&mut out, f);
        }
        if let Some(q) = &e.quality {
            out.extend(q.iter().map(|q| (*q == FrameQuality::Corrupt) as u8));
        }
    }
    Ok((out, offsets))
}

fn manifest_text(dataset: &Dataset, file_name: &str, offsets: &[u64]) -> String {
    let mut s = format!(
        "{MANIFEST_TAG} {VERSION}\nfile {file_name}\ndim {}\nclasses {}\n",
        dataset.dim, dataset.num_classes
    );
    for (e, off) in dataset.episodes.iter().zip(offsets) {
        s.push_str(&format!("episode {} {} {}\n", e.id, off, e.label));
    }
    s
}

/// Writes `features.bin` next to `manifest` and the manifest itself.
pub fn write_dataset(dataset: &Dataset, manifest: &Path) -> Result<()> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bytes, offsets) = encode(dataset)?;
    let features = dir.join("features.bin");
    std::fs::write(&features, bytes).map_err(|e| Error::io(&features, e))?;
    std::fs::write(manifest, manifest_text(dataset, "features.bin", &offsets)).map_err(|e| Error::io(manifest, e))
}

/// Hex SHA-256 of the encoded dataset: identifies content regardless of
/// where it was loaded from.
pub fn digest(dataset: &Dataset) -> Result<String> {
    use sha2::{Digest, Sha256};
    let (bytes, _) = encode(dataset)?;
    let mut h = Sha256::new();
    h.update(bytes);
    h.update(to_u32(dataset.num_classes, "class count")?.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

struct ManifestEntry {
    id: u64,
    offset: u64,
    label: usize,
    line_offset: usize,
}

struct Manifest {
    file: Option<PathBuf>,
    dim: usize,
    classes: usize,
    entries: Vec<ManifestEntry>,
}

fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let mut m = Manifest { file: None, dim: 0, classes: 0, entries: Vec::new() };
    let mut seen_tag = false;
    let mut line_offset = 0;
    for raw in text.split_inclusive('\n') {
        let start = line_offset;
        line_offset += raw.len();
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            offset: start as u64,
            episode: None,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("expected a number, got `{s}`")));
        if !seen_tag {
            if fields != [MANIFEST_TAG, "1"] {
                return Err(err(format!("expected `{MANIFEST_TAG} {VERSION}` header, got `{line}`")));
            }
            seen_tag = true;
            continue;
        }
        match fields.as_slice() {
            ["file", f] => m.file = Some(PathBuf::from(f)),
            ["dim", d] => m.dim = num(d)? as usize,
            ["classes", c] => m.classes = num(c)? as usize,
            ["episode", id, off, label] => m.entries.push(ManifestEntry {
                id: num(id)?,
                offset: num(off)?,
                label: num(label)? as usize,
                line_offset: start,
            }),
            _ => return Err(err(format!("unrecognized manifest line `{line}`"))),
        }
    }
    Ok(m)
}

/// Loads every episode listed in `manifest`.
pub fn load_features(manifest: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m = parse_manifest(&text, manifest)?;
    if m.entries.is_empty() {
        return Ok(Dataset::new(m.classes, m.dim, Vec::new())?);
    }
    let mut ids = BTreeSet::new();
    for e in &m.entries {
        if !ids.insert(e.id) {
            return Err(Error::Parse {
                path: manifest.to_path_buf(),
                offset: e.line_offset as u64,
                episode: Some(e.id),
                msg: "episode listed twice".into(),
            });
        }
    }
    let file = m.file.as_ref().ok_or_else(|| Error::Parse {
        path: manifest.to_path_buf(),
        offset: 0,
        episode: None,
        msg: "manifest lists episodes but no `file`".into(),
    })?;
    let path = manifest.parent().unwrap_or(Path::new(".")).join(file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = ByteReader::new(&bytes, &path);
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(r.error_at(0, "not a famf feature file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error_at(8, format!("unsupported feature file version {version}")));
    }
    let mut episodes = Vec::with_capacity(m.entries.len());
    for entry in &m.entries {
        r.set_episode(Some(entry.id));
        let start = usize::try_from(entry.offset).unwrap_or(usize::MAX);
        if start < HEADER_LEN {
            return Err(r.error_at(start, "record offset inside the file header"));
        }
        r.seek(start)?;
        let episode = read_record(&mut r, entry, m.dim)?;
        episode
            .validate(m.classes, m.dim)
            .map_err(|e| r.error_at(start, e.to_string()))?;
        episodes.push(episode);
    }
    Ok(Dataset::new(m.classes, m.dim, episodes)?)
}

fn read_record(r: &mut ByteReader<'_>, entry: &ManifestEntry, dim: usize) -> Result<Episode> {
    let start = r.pos();
    let id = r.u64("record header")?;
    if id != entry.id {
        return Err(r.error_at(start, format!("record holds episode {id}, manifest expects {}", entry.id)));
    }
    let label = r.u32("record header")? as usize;
    if label != entry.label {
        return Err(r.error_at(start + 8, format!("record label {label}, manifest says {}", entry.label)));
    }
    let d = r.u32("record header")? as usize;
    if d != dim {
        return Err(r.error_at(start + 12, format!("record dimension {d}, manifest says {dim}")));
    }
    let rows = r.u32("record header")? as usize;
    let mut present = [false; 4];
    for (i, p) in present.iter_mut().enumerate() {
        let pos = r.pos();
        *p = match r.u8("record header")? {
            0 => false,
            1 => true,
            v => return Err(r.error_at(pos, format!("presence flag {i} must be 0 or 1, got {v}"))),
        };
    }
    let face = r.f64s(rows.saturating_mul(d), "face features")?;
    let face = Tensor::matrix(rows, d, face)?;
    let mut clip: [Option<Vec<f64>>; 3] = Default::default();
    for (i, name) in ["audio", "body", "text"].into_iter().enumerate() {
        if present[i] {
            clip[i] = Some(r.f64s(d, &format!("{name} features"))?);
        }
    }
    let quality = if present[3] {
        let pos = r.pos();
        let raw = r.take(rows, "quality flags")?;
        let flags = raw
            .iter()
            .map(|b| match b {
                0 => Ok(FrameQuality::Clean),
                1 => Ok(FrameQuality::Corrupt),
                v => Err(r.error_at(pos, format!("quality flag must be 0 or 1, got {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Some(flags)
    } else {
        None
    };
    let [audio, body, text] = clip;
    Ok(Episode { id, label, face, audio, body, text, quality })
}

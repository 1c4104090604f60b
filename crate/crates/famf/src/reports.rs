//! Plain-text reports: the per-epoch metrics log, frame-weight and
//! attention-matrix inspection reports, and the ablation results table.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! report parses back to the exact values that were written.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use famf_core::data::FrameQuality;
use famf_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_agg: f64,
    pub lr_rest: f64,
    pub loss: f64,
    pub accuracy: f64,
    /// Seconds spent on this epoch. The only field that varies between
    /// otherwise identical runs.
    pub wall_time_s: f64,
}

/// Line-delimited JSON log, flushed after every record.
pub struct MetricsLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog { out: BufWriter::new(file), path: path.to_path_buf() })
    }

    pub fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                offset,
                episode: None,
                msg: e.to_string(),
            })?);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameWeightRow {
    pub episode: u64,
    pub frame: usize,
    pub quality: Option<FrameQuality>,
    pub weight: f64,
}

fn quality_name(q: Option<FrameQuality>) -> &'static str {
    match q {
        Some(FrameQuality::Clean) => "clean",
        Some(FrameQuality::Corrupt) => "corrupt",
        None => "unknown",
    }
}

/// Tab-separated `episode frame quality weight`, one row per raw frame.
pub fn frame_weights_tsv(rows: &[FrameWeightRow]) -> String {
    let mut s = String::from("episode\tframe\tquality\tweight\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\t{}\n", r.episode, r.frame, quality_name(r.quality), r.weight));
    }
    s
}

/// Mean weight of clean and of corrupt frames, when the episode has both.
pub fn mean_weights_by_quality(rows: &[FrameWeightRow]) -> (Option<f64>, Option<f64>) {
    let mean = |q: FrameQuality| {
        let w: Vec<f64> = rows.iter().filter(|r| r.quality == Some(q)).map(|r| r.weight).collect();
        (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
    };
    (mean(FrameQuality::Clean), mean(FrameQuality::Corrupt))
}

/// Fusion attention matrix with its row labels.
///
/// Text layout, tab-delimited:
///
/// ```text
/// # famf attention 1
/// # episode 42
/// <TAB>face0<TAB>face1<TAB>audio
/// face0<TAB>0.5<TAB>0.25<TAB>0.1
/// ...
/// ```
///
/// Entry `(i, j)` is the weight of input row `j` in fused row `i`; each
/// column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrid {
    pub episode: u64,
    pub tags: Vec<String>,
    pub matrix: Tensor,
}

const GRID_TAG: &str = "# famf attention 1";

impl AttentionGrid {
    pub fn to_text(&self) -> String {
        let mut s = format!("{GRID_TAG}\n# episode {}\n", self.episode);
        for t in &self.tags {
            s.push('\t');
            s.push_str(t);
        }
        s.push('\n');
        for (i, tag) in self.tags.iter().enumerate() {
            s.push_str(tag);
            for v in self.matrix.row(i) {
                s.push('\t');
                s.push_str(&v.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut offset = 0u64;
        let err = |offset: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            offset,
            episode: None,
            msg,
        };
        let mut lines = text.split_inclusive('\n').map(|l| {
            let at = offset;
            offset += l.len() as u64;
            (at, l.trim_end_matches(['\n', '\r']))
        });
        let mut next = |what: &str| lines.next().ok_or_else(|| err(text.len() as u64, format!("missing {what}")));
        let (at, first) = next("header")?;
        if first != GRID_TAG {
            return Err(err(at, format!("expected `{GRID_TAG}`")));
        }
        let (at, ep) = next("episode line")?;
        let episode = ep
            .strip_prefix("# episode ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(at, "expected `# episode <id>`".into()))?;
        let (at, head) = next("column labels")?;
        let tags: Vec<String> = head
            .strip_prefix('\t')
            .ok_or_else(|| err(at, "column label line must start with a tab".into()))?
            .split('\t')
            .map(String::from)
            .collect();
        let n = tags.len();
        let mut data = Vec::with_capacity(n * n);
        for tag in &tags {
            let (at, line) = next("matrix row")?;
            let mut cells = line.split('\t');
            if cells.next() != Some(tag.as_str()) {
                return Err(err(at, format!("row label does not match column `{tag}`")));
            }
            let row: Vec<f64> = cells
                .map(|c| c.parse::<f64>().map_err(|_| err(at, format!("bad number `{c}`"))))
                .collect::<Result<_>>()?;
            if row.len() != n {
                return Err(err(at, format!("row `{tag}` has {} entries, expected {n}", row.len())));
            }
            data.extend(row);
        }
        Ok(AttentionGrid { episode, tags, matrix: Tensor::matrix(n, n, data)? })
    }
}

/// One row of the ablation results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub fingerprint: String,
    pub aggregation: String,
    pub fusion: String,
    pub modalities: String,
    pub clusters: usize,
    pub seed: u64,
    pub map: f64,
    pub wall_time_s: f64,
}

pub const RESULTS_HEADER: &str = "fingerprint\taggregation\tfusion\tmodalities\tclusters\tseed\tmap\twall_time_s";

pub fn results_tsv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\n",
            r.fingerprint, r.aggregation, r.fusion, r.modalities, r.clusters, r.seed, r.map, r.wall_time_s
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_grid_round_trips() {
        let g = AttentionGrid {
            episode: 7,
            tags: vec!["face0".into(), "face1".into(), "audio".into()],
            matrix: Tensor::matrix(3, 3, vec![0.1, 1.0 / 3.0, 2e-300, 0.7, 0.0, 1.0, 0.2, 2.0 / 3.0, 0.123456789]).unwrap(),
        };
        let back = AttentionGrid::parse(&g.to_text(), Path::new("g")).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn attention_grid_rejects_ragged_rows() {
        let text = "# famf attention 1\n# episode 1\n\ta\tb\na\t1\t0\nb\t0\n";
        let err = AttentionGrid::parse(text, Path::new("g")).unwrap_err();
        assert!(err.to_string().contains("row `b`"), "{err}");
    }

    #[test]
    fn quality_means() {
        let row = |q, w| FrameWeightRow { episode: 1, frame: 0, quality: Some(q), weight: w };
        let rows = [row(FrameQuality::Clean, 1.0), row(FrameQuality::Clean, 0.5), row(FrameQuality::Corrupt, 0.25)];
        assert_eq!(mean_weights_by_quality(&rows), (Some(0.75), Some(0.25)));
        assert!(frame_weights_tsv(&rows).lines().nth(3).unwrap().ends_with("corrupt\t0.25"));
    }
}

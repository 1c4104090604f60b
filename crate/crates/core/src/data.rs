//! Episodes, synthetic multi-modal data and frame sampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Face,
    Audio,
    Body,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Face, Modality::Audio, Modality::Body, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Audio => "audio",
            Modality::Body => "body",
            Modality::Text => "text",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Modality::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameQuality {
    Clean,
    Corrupt,
}

/// One labeled clip: frame-level face features plus optional clip-level
/// features for the other modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub label: usize,
    /// `N_raw×D`; zero rows means no face was detected.
    pub face: Tensor,
    pub audio: Option<Vec<f64>>,
    pub body: Option<Vec<f64>>,
    pub text: Option<Vec<f64>>,
    /// Ground-truth frame quality, known only for synthetic data.
    pub quality: Option<Vec<FrameQuality>>,
}

impl Episode {
    pub fn dim(&self) -> usize {
        self.face.cols()
    }

    pub fn frames(&self) -> usize {
        self.face.rows()
    }

    /// Clip-level feature of a non-face modality.
    pub fn clip_feature(&self, m: Modality) -> Option<&[f64]> {
        match m {
            Modality::Face => None,
            Modality::Audio => self.audio.as_deref(),
            Modality::Body => self.body.as_deref(),
            Modality::Text => self.text.as_deref(),
        }
    }

    pub fn validate(&self, num_classes: usize, dim: usize) -> Result<()> {
        if self.label >= num_classes {
            return Err(Error::Config(format!(
                "episode {}: label {} out of {} classes",
                self.id, self.label, num_classes
            )));
        }
        let (_, d) = self.face.dims2()?;
        if d != dim {
            return Err(dim_err!("episode {}: face dim {} vs {}", self.id, d, dim));
        }
        let mut present = self.frames() > 0;
        for m in [Modality::Audio, Modality::Body, Modality::Text] {
            if let Some(f) = self.clip_feature(m) {
                present = true;
                if f.len() != dim {
                    return Err(dim_err!("episode {}: {} dim {} vs {}", self.id, m.name(), f.len(), dim));
                }
                if !f.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("episode features"));
                }
            }
        }
        if !present {
            return Err(Error::Config(format!("episode {} has no modality", self.id)));
        }
        if let Some(q) = &self.quality {
            if q.len() != self.frames() {
                return Err(dim_err!("episode {}: {} quality flags for {} frames", self.id, q.len(), self.frames()));
            }
        }
        self.face.ensure_finite("episode features")
    }
}

/// Immutable collection of episodes sharing a label space and feature dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub dim: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn new(num_classes: usize, dim: usize, episodes: Vec<Episode>) -> Result<Self> {
        for e in &episodes {
            e.validate(num_classes, dim)?;
        }
        Ok(Dataset { num_classes, dim, episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            num_classes: self.num_classes,
            dim: self.dim,
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }
}

/// Derives an independent stream seed from a base seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub episodes_per_class: usize,
    pub dim: usize,
    /// Raw face frames per episode, drawn uniformly from `min_frames..=max_frames`.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Probability that a face frame is corrupted.
    pub corrupt_fraction: f64,
    /// Per-coordinate noise std of clean face frames.
    pub clean_noise: f64,
    /// Corrupt noise std as a multiple of `clean_noise`.
    pub corrupt_noise_factor: f64,
    /// Factor applied to the identity latent in corrupt frames.
    pub corrupt_shrink: f64,
    /// Per-coordinate noise std of audio/body/text features.
    pub modality_noise: f64,
    /// Rescale audio/body/text features to unit L2 norm, like embedding
    /// extractors do.
    pub unit_clip_features: bool,
    pub audio_dropout: f64,
    pub body_dropout: f64,
    pub text_dropout: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 50,
            episodes_per_class: 20,
            dim: 64,
            min_frames: 8,
            max_frames: 40,
            corrupt_fraction: 0.3,
            clean_noise: 0.25,
            corrupt_noise_factor: 5.0,
            corrupt_shrink: 0.2,
            modality_noise: 1.0,
            unit_clip_features: true,
            audio_dropout: 0.1,
            body_dropout: 0.2,
            text_dropout: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("synth: num_classes must be ≥ 1".into()));
        }
        if self.dim == 0 || self.episodes_per_class == 0 {
            return Err(Error::Config("synth: dim and episodes_per_class must be ≥ 1".into()));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config("synth: need 1 ≤ min_frames ≤ max_frames".into()));
        }
        for (name, p) in [
            ("corrupt_fraction", self.corrupt_fraction),
            ("audio_dropout", self.audio_dropout),
            ("body_dropout", self.body_dropout),
            ("text_dropout", self.text_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("synth: {name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, v) in [
            ("clean_noise", self.clean_noise),
            ("corrupt_noise_factor", self.corrupt_noise_factor),
            ("corrupt_shrink", self.corrupt_shrink),
            ("modality_noise", self.modality_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("synth: {name} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noisy<R: Rng + ?Sized>(rng: &mut R, base: &[f64], scale: f64, noise: f64) -> Vec<f64> {
    base.iter().map(|b| scale * b + noise * gaussian(rng)).collect()
}

/// Generates a labeled synthetic dataset.
///
/// Each class owns one unit latent per modality. Clean face frames are the
/// face latent plus small noise; corrupt frames shrink the latent and add
/// much larger noise. Other modalities are their own latent plus noise,
/// optionally rescaled to unit norm, and may be dropped per episode. Episode `e` of class `c` gets id
/// `c·episodes_per_class + e` and its own random stream, so the output is a
/// pure function of the spec.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut latent_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
    let latents: Vec<[Vec<f64>; 4]> = (0..spec.num_classes)
        .map(|_| core::array::from_fn(|_| unit_vector(&mut latent_rng, spec.dim)))
        .collect();

    let mut episodes = Vec::with_capacity(spec.num_classes * spec.episodes_per_class);
    for (label, lat) in latents.iter().enumerate() {
        for e in 0..spec.episodes_per_class {
            let id = (label * spec.episodes_per_class + e) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, id));
            let frames = rng.random_range(spec.min_frames..=spec.max_frames);
            let mut face = Vec::with_capacity(frames * spec.dim);
            let mut quality = Vec::with_capacity(frames);
            for _ in 0..frames {
                let corrupt = rng.random_bool(spec.corrupt_fraction);
                let row = if corrupt {
                    let noise = spec.clean_noise * spec.corrupt_noise_factor;
                    noisy(&mut rng, &lat[0], spec.corrupt_shrink, noise)
                } else {
                    noisy(&mut rng, &lat[0], 1.0, spec.clean_noise)
                };
                face.extend(row);
                quality.push(if corrupt { FrameQuality::Corrupt } else { FrameQuality::Clean });
            }
            let mut clip = |m: usize, dropout: f64| {
                let dropped = rng.random_bool(dropout);
                let mut f = noisy(&mut rng, &lat[m], 1.0, spec.modality_noise);
                if spec.unit_clip_features {
                    let n = libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());
                    if n > 0.0 {
                        f.iter_mut().for_each(|v| *v /= n);
                    }
                }
                (!dropped).then_some(f)
            };
            let audio = clip(1, spec.audio_dropout);
            let body = clip(2, spec.body_dropout);
            let text = clip(3, spec.text_dropout);
            episodes.push(Episode {
                id,
                label,
                face: Tensor::matrix(frames, spec.dim, face)?,
                audio,
                body,
                text,
                quality: Some(quality),
            });
        }
    }
    Dataset::new(spec.num_classes, spec.dim, episodes)
}

/// Row indices for resampling `available` frames to exactly `target`.
///
/// With enough frames, `target` distinct rows are drawn. Otherwise every row
/// is used once and the remainder is drawn with replacement. Order is random.
pub fn sample_frame_indices<R: Rng + ?Sized>(available: usize, target: usize, rng: &mut R) -> Result<Vec<usize>> {
    if available == 0 {
        return Err(Error::EmptyInput("cannot sample frames from an empty set"));
    }
    let mut idx = if available >= target {
        rand::seq::index::sample(rng, available, target).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..available).collect();
        idx.extend((available..target).map(|_| rng.random_range(0..available)));
        idx
    };
    idx.shuffle(rng);
    Ok(idx)
}

/// Resamples the rows of `features` to exactly `target` rows.
pub fn sample_frames(features: &Tensor, target: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_frames_with(features, target, &mut rng)
}

pub fn sample_frames_with<R: Rng + ?Sized>(features: &Tensor, target: usize, rng: &mut R) -> Result<Tensor> {
    let (n, d) = features.dims2()?;
    let idx = sample_frame_indices(n, target, rng)?;
    let mut data = Vec::with_capacity(target * d);
    for i in idx {
        data.extend_from_slice(features.row(i));
    }
    Tensor::matrix(target, d, data)
}

/// Face frames for `episode` resampled to `target`, substituting a single
/// zero frame when no face was detected.
pub fn episode_face_frames<R: Rng + ?Sized>(episode: &Episode, target: usize, rng: &mut R) -> Result<Tensor> {
    if episode.frames() == 0 {
        let zero = Tensor::zeros(&[1, episode.dim()]);
        return sample_frames_with(&zero, target, rng);
    }
    sample_frames_with(&episode.face, target, rng)
}

/// Train/validation split, disjoint by episode and stratified by label.
///
/// Each label keeps `round(fraction · count)` episodes for validation, at
/// least one when it has two or more episodes and `fraction > 0`.
pub fn stratified_split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction {val_fraction} must lie in [0, 1)")));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.episodes.iter().enumerate() {
        by_label.entry(e.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let mut take = libm::round(val_fraction * idx.len() as f64) as usize;
        if take == 0 && val_fraction > 0.0 && idx.len() >= 2 {
            take = 1;
        }
        let take = take.min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Zero-filled clip feature used for absent modalities.
pub fn zero_feature(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}

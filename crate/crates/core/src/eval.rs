//! Retrieval-style mean average precision over per-identity rankings.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{derive_seed, episode_face_frames, Dataset, Episode};
use crate::error::{Error, Result};
use crate::model::{argmax, softmax, EpisodeInput, FamfModel};

/// Retrievals kept per identity.
pub const DEFAULT_CUTOFF: usize = 100;

/// Ranked retrievals for one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub identity: usize,
    /// `(episode id, score)`, descending score, ties by ascending id.
    pub ranked: Vec<(u64, f64)>,
    pub positives: BTreeSet<u64>,
    pub cutoff: usize,
}

impl ScoreTable {
    /// Sorts `scores` into retrieval order and truncates to `cutoff`.
    pub fn new(identity: usize, mut scores: Vec<(u64, f64)>, positives: BTreeSet<u64>, cutoff: usize) -> Self {
        rank(&mut scores);
        scores.truncate(cutoff);
        ScoreTable {
            identity,
            ranked: scores,
            positives,
            cutoff,
        }
    }

    /// Ground-truth positives for this identity, `m`.
    pub fn positive_count(&self) -> usize {
        self.positives.len()
    }

    pub fn average_precision(&self) -> Option<f64> {
        let ids: Vec<u64> = self.ranked.iter().map(|(id, _)| *id).collect();
        average_precision(&ids, &self.positives, self.positive_count(), self.cutoff)
    }
}

/// Descending score, ascending id on ties.
pub fn rank(scores: &mut [(u64, f64)]) {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// `(1/m) Σ_j precision@rank(j-th positive)` over the first `cutoff`
/// retrievals. `None` when `m = 0`.
pub fn average_precision(ranked: &[u64], positives: &BTreeSet<u64>, m: usize, cutoff: usize) -> Option<f64> {
    if m == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (pos, id) in ranked.iter().take(cutoff).enumerate() {
        if positives.contains(id) {
            hits += 1;
            total += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(total / m as f64)
}

/// Mean of per-identity AP over identities with at least one positive.
pub fn mean_average_precision(tables: &[ScoreTable]) -> Result<f64> {
    let aps: Vec<f64> = tables.iter().filter_map(ScoreTable::average_precision).collect();
    if aps.is_empty() {
        return Err(Error::EmptyInput("no identity has a positive example"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// mAP with every table cut at 100 retrievals.
pub fn map_at_100(tables: &[ScoreTable]) -> Result<f64> {
    let cut: Vec<ScoreTable> = tables
        .iter()
        .map(|t| ScoreTable {
            cutoff: DEFAULT_CUTOFF.min(t.cutoff),
            ..t.clone()
        })
        .collect();
    mean_average_precision(&cut)
}

/// One score table per identity that has at least one positive: every
/// episode ranked by that identity's probability.
pub fn score_tables(ids: &[u64], labels: &[usize], probs: &[Vec<f64>], num_classes: usize, cutoff: usize) -> Vec<ScoreTable> {
    (0..num_classes)
        .filter_map(|q| {
            let positives: BTreeSet<u64> = ids
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == q)
                .map(|(id, _)| *id)
                .collect();
            if positives.is_empty() {
                return None;
            }
            let scores = ids.iter().zip(probs).map(|(id, p)| (*id, p[q])).collect();
            Some(ScoreTable::new(q, scores, positives, cutoff))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cutoff: usize,
    /// Episodes per eval forward pass; results do not depend on it.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoff: DEFAULT_CUTOFF,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub accuracy: f64,
    pub episodes: usize,
    /// Identities in the query set.
    pub identities: usize,
    /// Identities with no validation positive, excluded from the query set.
    pub skipped_identities: usize,
}

/// The face frames evaluation feeds the model for `episode`: a fixed
/// per-episode stream of the eval seed, so results do not depend on batch
/// composition or order.
pub fn eval_face_frames(episode: &Episode, target: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, episode.id));
    episode_face_frames(episode, target, &mut rng)
}

/// Softmax class probabilities for every episode, frames resampled with a
/// per-episode stream of `seed`.
pub fn predict_probabilities(model: &FamfModel, dataset: &Dataset, seed: u64, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let frames = model.config.frames;
    let mut probs = Vec::with_capacity(dataset.len());
    for chunk in dataset.episodes.chunks(batch_size.max(1)) {
        let faces = chunk
            .iter()
            .map(|e| {
                eval_face_frames(e, frames, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<EpisodeInput<'_>> = chunk
            .iter()
            .zip(&faces)
            .map(|(episode, face)| EpisodeInput { face, episode })
            .collect();
        probs.extend(model.forward_many(&inputs)?.iter().map(|l| softmax(l)));
    }
    Ok(probs)
}

/// Retrieval mAP and top-1 accuracy of `model` on `dataset`.
pub fn evaluate(model: &FamfModel, dataset: &Dataset, config: &EvalConfig, seed: u64) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = predict_probabilities(model, dataset, seed, config.batch_size)?;
    let ids: Vec<u64> = dataset.episodes.iter().map(|e| e.id).collect();
    let labels: Vec<usize> = dataset.episodes.iter().map(|e| e.label).collect();
    let tables = score_tables(&ids, &labels, &probs, dataset.num_classes, config.cutoff);
    let correct = probs.iter().zip(&labels).filter(|(p, l)| argmax(p) == **l).count();
    Ok(EvalReport {
        map: mean_average_precision(&tables)?,
        accuracy: correct as f64 / dataset.len() as f64,
        episodes: dataset.len(),
        identities: tables.len(),
        skipped_identities: dataset.num_classes - tables.len(),
    })
}

//! Mini-batch training: Adam with two learning-rate groups and a step decay.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Tape, Tensor};
use crate::data::{derive_seed, episode_face_frames, Dataset};
use crate::error::{Error, Result};
use crate::model::{argmax, EpisodeInput, FamfModel, Mode, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning rates for the aggregation parameters and for everything else,
/// divided by `decay_factor` at `decay_start`, `decay_start + decay_every`, …
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub lr_agg: f64,
    pub lr_rest: f64,
    pub decay_start: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            lr_agg: 0.04,
            lr_rest: 0.004,
            decay_start: 50,
            decay_every: 10,
            decay_factor: 10.0,
            batch_size: 64,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_agg >= 0.0
            && self.lr_rest >= 0.0
            && self.lr_agg.is_finite()
            && self.lr_rest.is_finite()
            && self.decay_every > 0
            && self.decay_factor > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "schedule: rates must be finite and ≥ 0, decay_every, decay_factor and batch_size positive".into(),
            ))
        }
    }
}

/// `(lr_agg, lr_rest)` for a 0-indexed epoch.
pub fn lr_at(schedule: &Schedule, epoch: usize) -> (f64, f64) {
    if epoch < schedule.decay_start {
        return (schedule.lr_agg, schedule.lr_rest);
    }
    let decays = (epoch - schedule.decay_start) / schedule.decay_every + 1;
    let mut div = 1.0;
    for _ in 0..decays {
        div *= schedule.decay_factor;
    }
    (schedule.lr_agg / div, schedule.lr_rest / div)
}

/// Adam moment accumulators, one pair per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn for_shapes<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Vec<f64>> = params.into_iter().map(|t| vec![0.0; t.numel()]).collect();
        OptimizerState {
            second: zeros.clone(),
            first: zeros,
            step: 0,
        }
    }

    pub fn for_model(model: &FamfModel) -> Self {
        Self::for_shapes(model.parameters().into_iter().map(|(_, t, _)| t))
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn adam_step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lrs: &[f64], cfg: &AdamConfig) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() || lrs.len() != params.len() {
            return Err(Error::Dimension(alloc::format!(
                "adam: {} params, {} grads, {} rates, {} moment slots",
                params.len(),
                grads.len(),
                lrs.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first[i], &mut self.second[i], grads[i].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= lrs[i] * mhat / (libm::sqrt(vhat) + cfg.eps);
            }
            p.ensure_finite("adam step")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr_agg: f64,
    pub lr_rest: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss, parameter gradients (in [`FamfModel::parameters`] order), batch
/// statistics and logits for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub batch_stats: Option<[BatchStats; 2]>,
    pub logits: Tensor,
}

/// Mean cross-entropy of `inputs` against `labels` and its gradient.
pub fn batch_gradients(model: &FamfModel, inputs: &[EpisodeInput<'_>], labels: &[usize], mode: Mode) -> Result<BatchGradients> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true)?;
    let out = model.forward_batch(&mut tape, &vars, inputs, mode)?;
    let loss = tape.cross_entropy_with_logits(out.logits, labels)?;
    let grads = tape.backward(loss)?;
    let params = model.parameters();
    let grads = vars
        .trainable()
        .iter()
        .zip(&params)
        .map(|(v, (_, t, _))| grads.get_or_zeros(*v, t))
        .collect();
    Ok(BatchGradients {
        loss: tape.value(loss).data()[0],
        grads,
        batch_stats: out.batch_stats,
        logits: tape.value(out.logits).clone(),
    })
}

/// One shuffled pass over `dataset`.
///
/// A trailing batch with a single episode uses running batch-norm
/// statistics, since batch statistics need at least two rows.
pub fn train_epoch(
    model: &mut FamfModel,
    dataset: &Dataset,
    state: &mut OptimizerState,
    schedule: &Schedule,
    adam: &AdamConfig,
    epoch: usize,
    seed: u64,
) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    schedule.validate()?;
    let (lr_agg, lr_rest) = lr_at(schedule, epoch);
    let lrs: Vec<f64> = model
        .parameters()
        .iter()
        .map(|(_, _, g)| match g {
            ParamGroup::Aggregation => lr_agg,
            ParamGroup::Rest => lr_rest,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);

    let frames = model.config.frames;
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for chunk in order.chunks(schedule.batch_size) {
        let faces = chunk
            .iter()
            .map(|&i| episode_face_frames(&dataset.episodes[i], frames, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<EpisodeInput<'_>> = chunk
            .iter()
            .zip(&faces)
            .map(|(&i, face)| EpisodeInput {
                face,
                episode: &dataset.episodes[i],
            })
            .collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.episodes[i].label).collect();
        let mode = if chunk.len() >= 2 { Mode::Train } else { Mode::Eval };
        let step = batch_gradients(model, &inputs, &labels, mode)?;

        loss_sum += step.loss * chunk.len() as f64;
        correct += (0..labels.len())
            .filter(|&r| argmax(step.logits.row(r)) == labels[r])
            .count();

        let mut params = model.parameters_mut();
        state.adam_step(&mut params, &step.grads, &lrs, adam)?;
        if let Some(stats) = &step.batch_stats {
            model.update_running_stats(stats);
        }
    }
    Ok(EpochMetrics {
        epoch,
        lr_agg,
        lr_rest,
        loss: loss_sum / dataset.len() as f64,
        accuracy: correct as f64 / dataset.len() as f64,
    })
}

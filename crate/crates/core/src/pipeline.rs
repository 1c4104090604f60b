//! Seeded end-to-end runs: split, initialize, train, evaluate.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::model::{FamfConfig, FamfModel};
use crate::training::{train_epoch, AdamConfig, EpochMetrics, OptimizerState, Schedule};

/// RNG streams derived from the run seed, so every stage is independent
/// of how many draws the others make.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const SPLIT: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Share of each identity's episodes held out for validation.
    pub val_fraction: f64,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            val_fraction: 0.2,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.eval.cutoff == 0 {
            return Err(Error::Config("eval cutoff must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: FamfModel,
    pub history: Vec<EpochMetrics>,
}

/// Trains a freshly initialized model on `train` for `config.epochs` epochs.
/// `on_epoch` sees each epoch's metrics as soon as it finishes.
pub fn train(
    model_config: &FamfConfig,
    train_set: &Dataset,
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics, &FamfModel),
) -> Result<TrainedModel> {
    config.validate()?;
    if train_set.dim != model_config.dim {
        return Err(Error::Config(alloc::format!(
            "dataset dim {} does not match model dim {}",
            train_set.dim,
            model_config.dim
        )));
    }
    let mut model = FamfModel::new(model_config.clone(), derive_seed(seed, streams::INIT))?;
    let mut state = OptimizerState::for_model(&model);
    let train_seed = derive_seed(seed, streams::TRAIN);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let m = train_epoch(&mut model, train_set, &mut state, &config.schedule, &config.adam, epoch, train_seed)?;
        on_epoch(&m, &model);
        history.push(m);
    }
    Ok(TrainedModel { model, history })
}

/// Validation metrics with the run's eval frame stream.
pub fn evaluate_run(model: &FamfModel, val: &Dataset, config: &TrainConfig, seed: u64) -> Result<EvalReport> {
    evaluate(model, val, &config.eval, derive_seed(seed, streams::EVAL))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trained: TrainedModel,
    pub report: EvalReport,
}

/// Stratified split of `dataset`, training on one side and evaluating on the other.
pub fn train_and_evaluate(
    model_config: &FamfConfig,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochMetrics, &FamfModel),
) -> Result<RunOutcome> {
    let (train_set, val_set) = split(dataset, config, seed)?;
    let trained = train(model_config, &train_set, config, seed, on_epoch)?;
    let report = evaluate_run(&trained.model, &val_set, config, seed)?;
    Ok(RunOutcome { trained, report })
}

/// The train/validation datasets used by [`train_and_evaluate`].
pub fn split(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let (tr, va) = crate::data::stratified_split(dataset, config.val_fraction, derive_seed(seed, streams::SPLIT))?;
    Ok((dataset.subset(&tr), dataset.subset(&va)))
}

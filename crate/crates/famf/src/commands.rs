//! The work behind each subcommand. Every command takes a validated
//! [`RunConfig`], writes under its run directory and returns a summary for
//! the caller to print.

use std::path::{Path, PathBuf};
use std::time::Instant;

use famf_core::data::{derive_seed, generate, Dataset};
use famf_core::eval::{eval_face_frames, EvalReport};
use famf_core::fusion::attention_matrix_report;
use famf_core::model::{EpisodeInput, FamfConfig};
use famf_core::pipeline::{self, streams};
use serde::{Deserialize, Serialize};

use crate::ablation::run_ablation;
use crate::config::{run_fingerprint, RunConfig, RunDir};
use crate::error::{Error, Result};
use crate::formats::checkpoint::Checkpoint;
use crate::formats::features::{self, load_features, write_dataset};
use crate::reports::{
    frame_weights_tsv, mean_weights_by_quality, results_tsv, AttentionGrid, EpochRecord, FrameWeightRow, MetricsLog,
    ResultRow,
};

/// Where a command's dataset came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synthesized,
}

pub struct LoadedData {
    pub dataset: Dataset,
    /// Content digest, part of every fingerprint.
    pub digest: String,
    pub source: DataSource,
}

/// Explicit `[data] manifest`, else the run directory's synthesized files,
/// else the `[synth]` dataset generated in memory.
pub fn load_dataset(config: &RunConfig) -> Result<LoadedData> {
    let run = RunDir(config.output.run_dir.clone());
    let (dataset, source) = match &config.data.manifest {
        Some(m) => (load_features(m)?, DataSource::Manifest(m.clone())),
        None if run.manifest().exists() => (load_features(&run.manifest())?, DataSource::Manifest(run.manifest())),
        None => (generate(&config.synth)?, DataSource::Synthesized),
    };
    let digest = features::digest(&dataset)?;
    Ok(LoadedData { dataset, digest, source })
}

fn create_run_dir(config: &RunConfig, command: &str) -> Result<RunDir> {
    let run = RunDir(config.output.run_dir.clone());
    std::fs::create_dir_all(&run.0).map_err(|e| Error::io(&run.0, e))?;
    let path = run.resolved_config(command);
    std::fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(run)
}

struct Prepared {
    run: RunDir,
    data: LoadedData,
    model: FamfConfig,
    fingerprint: String,
}

fn prepare(config: &RunConfig, command: &str) -> Result<Prepared> {
    let data = load_dataset(config)?;
    let model = config.model.resolve(data.dataset.dim, data.dataset.num_classes)?;
    let fingerprint = run_fingerprint(&model, &config.train, config.seed, &data.digest)?;
    let run = create_run_dir(config, command)?;
    Ok(Prepared { run, data, model, fingerprint })
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub manifest: PathBuf,
    pub episodes: usize,
}

pub fn synth(config: &RunConfig) -> Result<SynthSummary> {
    let dataset = generate(&config.synth)?;
    let run = create_run_dir(config, "synth")?;
    write_dataset(&dataset, &run.manifest())?;
    Ok(SynthSummary { manifest: run.manifest(), episodes: dataset.len() })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub fingerprint: String,
    pub last: Option<EpochRecord>,
}

pub fn train(config: &RunConfig) -> Result<TrainSummary> {
    let p = prepare(config, "train")?;
    let (train_set, _) = pipeline::split(&p.data.dataset, &config.train, config.seed)?;
    let mut log = MetricsLog::create(&p.run.metrics())?;
    let mut failure: Option<Error> = None;
    let mut last_record = None;
    let mut clock = Instant::now();
    let every = config.output.checkpoint_every;
    let trained = pipeline::train(&p.model, &train_set, &config.train, config.seed, |m, model| {
        if failure.is_some() {
            return;
        }
        let record = EpochRecord {
            epoch: m.epoch,
            lr_agg: m.lr_agg,
            lr_rest: m.lr_rest,
            loss: m.loss,
            accuracy: m.accuracy,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        clock = Instant::now();
        let done = m.epoch + 1;
        let mut step = log.append(&record);
        if step.is_ok() && every > 0 && done % every == 0 {
            step = Checkpoint::from_model(model, &p.fingerprint, config.seed, done).save(&p.run.epoch_checkpoint(done));
        }
        failure = step.err();
        last_record = Some(record);
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let checkpoint = p.run.checkpoint();
    Checkpoint::from_model(&trained.model, &p.fingerprint, config.seed, config.train.epochs).save(&checkpoint)?;
    Ok(TrainSummary { checkpoint, fingerprint: p.fingerprint, last: last_record })
}

/// Contents of `eval.json`. Deterministic: two evals of one checkpoint
/// write identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub fingerprint: String,
    pub cutoff: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn load_checked(p: &Prepared, checkpoint: Option<&Path>) -> Result<Checkpoint> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| p.run.checkpoint());
    let ckpt = Checkpoint::load(&path)?;
    ckpt.check_fingerprint(&p.fingerprint)?;
    Ok(ckpt)
}

pub fn eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalFile> {
    let p = prepare(config, "eval")?;
    let model = load_checked(&p, checkpoint)?.to_model()?;
    let (_, val) = pipeline::split(&p.data.dataset, &config.train, config.seed)?;
    let report = pipeline::evaluate_run(&model, &val, &config.train, config.seed)?;
    let out = EvalFile { fingerprint: p.fingerprint.clone(), cutoff: config.train.eval.cutoff, report };
    let path = p.run.eval_report();
    let mut text = serde_json::to_string_pretty(&out)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

pub fn ablate(config: &RunConfig, jobs: usize) -> Result<Vec<ResultRow>> {
    let data = load_dataset(config)?;
    let base = config.model.resolve(data.dataset.dim, data.dataset.num_classes)?;
    let run = create_run_dir(config, "ablate")?;
    let cells = config.ablation.cells();
    let rows = run_ablation(&base, &cells, &data.dataset, &config.train, &data.digest, jobs)?;
    let path = run.results();
    std::fs::write(&path, results_tsv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeInspection {
    pub episode: u64,
    pub frames: usize,
    pub clean_mean: Option<f64>,
    pub corrupt_mean: Option<f64>,
    /// Attention grid file; `None` for concatenation fusion.
    pub attention: Option<PathBuf>,
}

/// Frame-weight report over every raw face frame, plus the fusion attention
/// matrix on the frames eval would sample.
pub fn inspect(config: &RunConfig, checkpoint: Option<&Path>, episodes: &[u64]) -> Result<Vec<EpisodeInspection>> {
    let p = prepare(config, "inspect")?;
    let model = load_checked(&p, checkpoint)?.to_model()?;
    let ids: Vec<u64> = if !episodes.is_empty() {
        episodes.to_vec()
    } else if !config.inspect.episodes.is_empty() {
        config.inspect.episodes.clone()
    } else {
        let (_, val) = pipeline::split(&p.data.dataset, &config.train, config.seed)?;
        val.episodes.iter().take(config.inspect.count).map(|e| e.id).collect()
    };
    let eval_seed = derive_seed(config.seed, streams::EVAL);
    let dir = p.run.0.join("inspect");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for id in ids {
        let episode = p
            .data
            .dataset
            .episodes
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Config(format!("episode {id} is not in the dataset")))?;
        let mut summary = EpisodeInspection {
            episode: id,
            frames: episode.frames(),
            clean_mean: None,
            corrupt_mean: None,
            attention: None,
        };
        if episode.frames() > 0 {
            let weights = model.aggregation.frame_weight_report(&episode.face)?;
            let these: Vec<FrameWeightRow> = weights
                .iter()
                .enumerate()
                .map(|(frame, &weight)| FrameWeightRow {
                    episode: id,
                    frame,
                    quality: episode.quality.as_ref().map(|q| q[frame]),
                    weight,
                })
                .collect();
            (summary.clean_mean, summary.corrupt_mean) = mean_weights_by_quality(&these);
            rows.extend(these);
        }
        if let Some(params) = &model.fusion.params {
            let face = eval_face_frames(episode, model.config.frames, eval_seed)?;
            let bundle = model.bundle(&EpisodeInput { face: &face, episode })?;
            let grid = AttentionGrid {
                episode: id,
                tags: bundle.tags().iter().map(|t| t.label()).collect(),
                matrix: attention_matrix_report(&bundle, params)?,
            };
            let path = p.run.attention(id);
            std::fs::write(&path, grid.to_text()).map_err(|e| Error::io(&path, e))?;
            summary.attention = Some(path);
        }
        out.push(summary);
    }
    let path = p.run.frame_weights();
    std::fs::write(&path, frame_weights_tsv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

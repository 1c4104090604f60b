//! Ablation sweeps: every (aggregation, fusion, modality subset, K, seed)
//! cell is trained and evaluated with the same pipeline as `famf train` +
//! `famf eval`, so a one-cell grid reproduces a standalone run exactly.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use famf_core::aggregation::AggregationKind;
use famf_core::data::{Dataset, Modality};
use famf_core::fusion::FusionKind;
use famf_core::model::FamfConfig;
use famf_core::pipeline::{train_and_evaluate, TrainConfig};
use serde::Serialize;

use crate::config::{fingerprint, AblationGrid};
use crate::error::Result;
use crate::reports::ResultRow;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub aggregation: AggregationKind,
    pub fusion: FusionKind,
    pub modalities: Vec<Modality>,
    pub clusters: usize,
    pub seed: u64,
}

impl AblationGrid {
    /// Cartesian product in a fixed order: aggregation, fusion, modalities,
    /// K, then seed varies fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &aggregation in &self.aggregations {
            for &fusion in &self.fusions {
                for modalities in &self.modality_subsets {
                    for &clusters in &self.clusters {
                        for &seed in &self.seeds {
                            out.push(Cell {
                                aggregation,
                                fusion,
                                modalities: modalities.clone(),
                                clusters,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// `base` with the cell's axes substituted. GhostVLAD keeps the base ghost
/// count, or one ghost if the base has none.
pub fn cell_config(base: &FamfConfig, cell: &Cell) -> FamfConfig {
    let mut c = base.clone();
    c.aggregation.kind = cell.aggregation;
    c.aggregation.clusters = cell.clusters;
    if cell.aggregation == AggregationKind::GhostVlad && c.aggregation.ghost_clusters == 0 {
        c.aggregation.ghost_clusters = 1;
    }
    c.fusion.kind = cell.fusion;
    c.modalities = cell.modalities.clone();
    c
}

#[derive(Serialize)]
struct CellIdentity<'a> {
    model: &'a FamfConfig,
    train: &'a TrainConfig,
    data: &'a str,
}

/// Fingerprint of everything about a cell except its seed.
pub fn cell_fingerprint(model: &FamfConfig, train: &TrainConfig, data_digest: &str) -> Result<String> {
    let full = fingerprint(&CellIdentity { model, train, data: data_digest })?;
    Ok(full[..16].to_string())
}

pub fn modality_label(modalities: &[Modality]) -> String {
    modalities.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
}

fn run_cell(base: &FamfConfig, cell: &Cell, dataset: &Dataset, train: &TrainConfig, digest: &str) -> Result<ResultRow> {
    let config = cell_config(base, cell);
    config.validate()?;
    let fp = cell_fingerprint(&config, train, digest)?;
    let start = Instant::now();
    let outcome = train_and_evaluate(&config, dataset, train, cell.seed, |_, _| {})?;
    Ok(ResultRow {
        fingerprint: fp,
        aggregation: cell.aggregation.name().to_string(),
        fusion: cell.fusion.name().to_string(),
        modalities: modality_label(&cell.modalities),
        clusters: cell.clusters,
        seed: cell.seed,
        map: outcome.report.map,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every cell on up to `jobs` threads. Rows come back in cell order;
/// the first failing cell (in that order) fails the sweep.
pub fn run_ablation(
    base: &FamfConfig,
    cells: &[Cell],
    dataset: &Dataset,
    train: &TrainConfig,
    data_digest: &str,
    jobs: usize,
) -> Result<Vec<ResultRow>> {
    let slots: Mutex<Vec<Option<Result<ResultRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(cells.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let row = run_cell(base, &cells[i], dataset, train, data_digest);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(row);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

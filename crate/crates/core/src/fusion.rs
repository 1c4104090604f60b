//! Multi-modal fusion over the stacked modality matrix `X` ((K1+K2)×D).
//!
//! MMA and MLMA both reweight rows of `X` through a softmax over the Gram
//! matrix of projected rows; MLMA projects twice (D→h1→h2), MMA once
//! (D→h1). Projections are bias-free shared maps applied to every row.
//!
//! With `A[j,i] = exp(Z[j,i]) / Σ_i exp(Z[j,i])` the output is
//! `Y_i = Σ_j A[j,i]·X_j`, i.e. `Y = Aᵀ·X`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Modality;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Concat,
    Mma,
    Mlma,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Concat, FusionKind::Mma, FusionKind::Mlma];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::Mma => "mma",
            FusionKind::Mlma => "mlma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub kind: FusionKind,
    #[serde(default = "default_hidden1")]
    pub hidden1: usize,
    #[serde(default = "default_hidden2")]
    pub hidden2: usize,
    /// Projection weights start as `N(0, gain²/fan_in)`.
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

fn default_hidden1() -> usize {
    128
}

fn default_hidden2() -> usize {
    32
}

fn default_init_gain() -> f64 {
    1.0
}

impl FusionConfig {
    pub fn new(kind: FusionKind, hidden1: usize, hidden2: usize) -> Self {
        FusionConfig {
            kind,
            hidden1,
            hidden2,
            init_gain: default_init_gain(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.init_gain.is_finite() && self.init_gain > 0.0) {
            return Err(Error::Config("fusion init_gain must be positive".into()));
        }
        match self.kind {
            FusionKind::Concat => Ok(()),
            FusionKind::Mma if self.hidden1 == 0 || self.hidden1 > dim => Err(Error::Config(format!(
                "mma needs 1 ≤ hidden1 ≤ dim, got hidden1={} dim={}",
                self.hidden1, dim
            ))),
            FusionKind::Mlma if self.hidden2 == 0 || self.hidden2 > self.hidden1 || self.hidden1 > dim => {
                Err(Error::Config(format!(
                    "mlma needs 1 ≤ hidden2 ≤ hidden1 ≤ dim, got {}/{} with dim {}",
                    self.hidden1, self.hidden2, dim
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Label of one row of the fusion input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowTag {
    pub modality: Modality,
    /// Cluster index for face rows, 0 otherwise.
    pub index: usize,
}

impl RowTag {
    pub fn label(&self) -> String {
        match self.modality {
            Modality::Face => format!("face{}", self.index),
            m => String::from(m.name()),
        }
    }
}

/// Stacked modality rows fed to fusion. Missing modalities are zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBundle {
    x: Tensor,
    face_rows: usize,
    tags: Vec<RowTag>,
}

impl ModalBundle {
    pub fn new(x: Tensor, face_rows: usize, tags: Vec<RowTag>) -> Result<Self> {
        let (rows, _) = x.dims2()?;
        if face_rows == 0 || face_rows > rows {
            return Err(dim_err!("bundle of {} rows needs 1..={} face rows, got {}", rows, rows, face_rows));
        }
        if tags.len() != rows {
            return Err(dim_err!("{} tags for {} rows", tags.len(), rows));
        }
        x.ensure_finite("modal bundle")?;
        Ok(ModalBundle { x, face_rows, tags })
    }

    /// Bundle with generic tags: `face_rows` face rows then unnamed extras.
    pub fn untagged(x: Tensor, face_rows: usize) -> Result<Self> {
        let rows = x.rows();
        let others = [Modality::Audio, Modality::Body, Modality::Text];
        let tags = (0..rows)
            .map(|r| {
                if r < face_rows {
                    RowTag { modality: Modality::Face, index: r }
                } else {
                    RowTag { modality: others[(r - face_rows) % others.len()], index: 0 }
                }
            })
            .collect();
        ModalBundle::new(x, face_rows, tags)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.x
    }

    pub fn face_rows(&self) -> usize {
        self.face_rows
    }

    pub fn other_rows(&self) -> usize {
        self.x.rows() - self.face_rows
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn tags(&self) -> &[RowTag] {
        &self.tags
    }
}

/// `proj_in` is `W_F2` (h1×D); `proj_out` is `W_F1` (h2×h1), MLMA only.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub proj_in: Tensor,
    pub proj_out: Option<Tensor>,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(config: &FusionConfig, dim: usize, rng: &mut R) -> Result<Option<Self>> {
        config.validate(dim)?;
        let mut gaussian = |rows: usize, cols: usize| {
            let s = config.init_gain / libm::sqrt(cols as f64);
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * s
                })
                .collect();
            Tensor::matrix(rows, cols, data)
        };
        Ok(match config.kind {
            FusionKind::Concat => None,
            FusionKind::Mma => Some(FusionParams {
                proj_in: gaussian(config.hidden1, dim)?,
                proj_out: None,
            }),
            FusionKind::Mlma => Some(FusionParams {
                proj_in: gaussian(config.hidden1, dim)?,
                proj_out: Some(gaussian(config.hidden2, config.hidden1)?),
            }),
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<FusionVars> {
        Ok(FusionVars {
            proj_in: tape.leaf(self.proj_in.clone(), trainable)?,
            proj_out: self
                .proj_out
                .as_ref()
                .map(|w| tape.leaf(w.clone(), trainable))
                .transpose()?,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        core::iter::once(&self.proj_in).chain(self.proj_out.as_ref()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        core::iter::once(&mut self.proj_in).chain(self.proj_out.as_mut()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub proj_in: Var,
    pub proj_out: Option<Var>,
}

impl FusionVars {
    pub fn all(&self) -> Vec<Var> {
        core::iter::once(self.proj_in).chain(self.proj_out).collect()
    }
}

/// Projected rows `X′` (R×h): every row of `x` mapped through `proj_in`, then `proj_out`.
pub fn project_graph(tape: &mut Tape, x: Var, vars: &FusionVars) -> Result<Var> {
    let w = tape.transpose(vars.proj_in)?;
    let mut h = tape.matmul(x, w)?;
    if let Some(out) = vars.proj_out {
        let w = tape.transpose(out)?;
        h = tape.matmul(h, w)?;
    }
    Ok(h)
}

/// Attention `A[j,i]` (R×R): softmax over `i` of the Gram matrix `Z = X′·X′ᵀ`.
pub fn attention_graph(tape: &mut Tape, x: Var, vars: &FusionVars) -> Result<Var> {
    let h = project_graph(tape, x, vars)?;
    let ht = tape.transpose(h)?;
    let gram = tape.matmul(h, ht)?;
    tape.softmax(gram, 1)
}

/// Fused rows `Y = Aᵀ·X` (R×D).
pub fn reweight_graph(tape: &mut Tape, x: Var, vars: &FusionVars) -> Result<Var> {
    let a = attention_graph(tape, x, vars)?;
    let at = tape.transpose(a)?;
    tape.matmul(at, x)
}

fn check_params(bundle: &ModalBundle, params: &FusionParams, two_layer: bool) -> Result<()> {
    let (h1, d) = params.proj_in.dims2()?;
    if d != bundle.dim() {
        return Err(dim_err!("projection expects dim {}, bundle has {}", d, bundle.dim()));
    }
    match (&params.proj_out, two_layer) {
        (Some(out), true) => {
            let (_, h) = out.dims2()?;
            if h != h1 {
                return Err(dim_err!("second projection expects {} channels, first yields {}", h, h1));
            }
            Ok(())
        }
        (None, false) => Ok(()),
        (None, true) => Err(dim_err!("mlma needs two projections")),
        (Some(_), false) => Err(dim_err!("mma takes a single projection")),
    }
}

fn eval_reweight(bundle: &ModalBundle, params: &FusionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let x = tape.constant(bundle.matrix().clone())?;
    let y = reweight_graph(&mut tape, x, &vars)?;
    Ok(tape.value(y).clone())
}

/// Two-projection multi-modal attention.
pub fn mlma(bundle: &ModalBundle, params: &FusionParams) -> Result<Tensor> {
    check_params(bundle, params, true)?;
    eval_reweight(bundle, params)
}

/// Single-projection multi-modal attention (no residual, no L2 term).
pub fn mma_baseline(bundle: &ModalBundle, params: &FusionParams) -> Result<Tensor> {
    check_params(bundle, params, false)?;
    eval_reweight(bundle, params)
}

/// Row-major flattening in tag order.
pub fn concat_baseline(bundle: &ModalBundle) -> Vec<f64> {
    bundle.matrix().data().to_vec()
}

/// Inverse of [`concat_baseline`].
pub fn unflatten(flat: &[f64], rows: usize, dim: usize) -> Result<Tensor> {
    Tensor::matrix(rows, dim, flat.to_vec())
}

/// Attention weights laid out with output index `i` on rows and source row
/// `j` on columns, so each column sums to 1.
pub fn attention_matrix_report(bundle: &ModalBundle, params: &FusionParams) -> Result<Tensor> {
    check_params(bundle, params, params.proj_out.is_some())?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let x = tape.constant(bundle.matrix().clone())?;
    let a = attention_graph(&mut tape, x, &vars)?;
    tape.value(a).transpose()
}

/// Configured fusion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionLayer {
    pub config: FusionConfig,
    pub params: Option<FusionParams>,
}

impl FusionLayer {
    pub fn init<R: Rng + ?Sized>(config: FusionConfig, dim: usize, rng: &mut R) -> Result<Self> {
        let params = FusionParams::init(&config, dim, rng)?;
        Ok(FusionLayer { config, params })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<Option<FusionVars>> {
        self.params.as_ref().map(|p| p.bind(tape, trainable)).transpose()
    }

    /// Fused rows for `x` (R×D). Concatenation passes `x` through.
    pub fn forward(&self, tape: &mut Tape, x: Var, vars: Option<&FusionVars>) -> Result<Var> {
        match (self.config.kind, vars) {
            (FusionKind::Concat, _) => Ok(x),
            (_, Some(v)) => reweight_graph(tape, x, v),
            (_, None) => Err(Error::Config("attention fusion bound without parameters".into())),
        }
    }

    pub fn apply(&self, bundle: &ModalBundle) -> Result<Tensor> {
        match (&self.params, self.config.kind) {
            (None, _) | (_, FusionKind::Concat) => Ok(bundle.matrix().clone()),
            (Some(p), FusionKind::Mma) => mma_baseline(bundle, p),
            (Some(p), FusionKind::Mlma) => mlma(bundle, p),
        }
    }
}

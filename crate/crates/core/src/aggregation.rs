//! Frame-feature aggregation: NetVLAD, GhostVLAD and AttentionVLAD.
//!
//! All three map an `N×D` set of frame features to a fixed `D×K` template of
//! soft-assigned residual sums. They differ only in the per-cluster weight
//! applied to each residual column:
//!
//! * NetVLAD: every cluster weighted 1.
//! * GhostVLAD: `K` real clusters weighted 1, `G` ghost clusters weighted 0
//!   and dropped from the output.
//! * AttentionVLAD: cluster `k` weighted by `φ(c_k) = σ(w_φᵀ c_k + b_φ)`.
//!
//! Inside the tape the template is carried transposed (`K×D`, one row per
//! cluster) because that is the layout the fusion stage stacks.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    NetVlad,
    GhostVlad,
    AttentionVlad,
}

impl AggregationKind {
    pub const ALL: [AggregationKind; 3] = [
        AggregationKind::NetVlad,
        AggregationKind::GhostVlad,
        AggregationKind::AttentionVlad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationKind::NetVlad => "netvlad",
            AggregationKind::GhostVlad => "ghostvlad",
            AggregationKind::AttentionVlad => "attentionvlad",
        }
    }
}

/// Squashing applied to the cluster-attention logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiActivation {
    #[default]
    Logistic,
}

/// Template normalization applied after the cluster weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw residual sums.
    None,
    /// One L2 normalization of the whole template.
    Global,
    /// Per-cluster L2 normalization of the residual sums, then cluster
    /// weights, then whole-template L2 normalization.
    #[default]
    IntraGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    pub kind: AggregationKind,
    /// Output clusters `K`.
    pub clusters: usize,
    /// Ghost clusters `G` (GhostVLAD only).
    #[serde(default)]
    pub ghost_clusters: usize,
    #[serde(default)]
    pub phi_activation: PhiActivation,
    #[serde(default)]
    pub normalization: Normalization,
    /// Sharpness of the anchor-tied assignment init.
    #[serde(default = "default_init_sigma")]
    pub init_sigma: f64,
}

fn default_init_sigma() -> f64 {
    1.0
}

impl AggregationConfig {
    pub fn new(kind: AggregationKind, clusters: usize) -> Self {
        AggregationConfig {
            kind,
            clusters,
            ghost_clusters: if kind == AggregationKind::GhostVlad { 1 } else { 0 },
            phi_activation: PhiActivation::Logistic,
            normalization: Normalization::IntraGlobal,
            init_sigma: 1.0,
        }
    }

    /// Clusters that carry soft-assignment parameters, ghosts included.
    pub fn total_clusters(&self) -> usize {
        match self.kind {
            AggregationKind::GhostVlad => self.clusters + self.ghost_clusters,
            _ => self.clusters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::Config("aggregation needs at least one cluster".into()));
        }
        if self.kind == AggregationKind::GhostVlad && self.ghost_clusters == 0 {
            return Err(Error::Config("ghostvlad needs at least one ghost cluster".into()));
        }
        if !(self.init_sigma.is_finite() && self.init_sigma > 0.0) {
            return Err(Error::Config("init_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Trainable cluster parameters. Row `k` of each matrix belongs to cluster `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationParams {
    /// `a_k`, K×D.
    pub assign_weights: Tensor,
    /// `b_k`, K.
    pub assign_bias: Tensor,
    /// `c_k`, K×D.
    pub anchors: Tensor,
    /// `w_φ`, D.
    pub attn_weight: Tensor,
    /// `b_φ`, scalar stored as a length-1 vector.
    pub attn_bias: Tensor,
}

impl AggregationParams {
    /// Anchors drawn from `N(0, 1/D)`, assignment tied to them as
    /// `a_k = 2σ·c_k`, `b_k = −σ·‖c_k‖²`, and zero attention so `φ ≡ ½`.
    pub fn init<R: Rng + ?Sized>(clusters: usize, dim: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if clusters == 0 || dim == 0 {
            return Err(Error::Config("aggregation needs clusters ≥ 1 and dim ≥ 1".into()));
        }
        let scale = 1.0 / libm::sqrt(dim as f64);
        let anchors: Vec<f64> = (0..clusters * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        let assign_weights = anchors.iter().map(|c| 2.0 * sigma * c).collect();
        let assign_bias = anchors
            .chunks(dim)
            .map(|c| -sigma * c.iter().map(|v| v * v).sum::<f64>())
            .collect();
        Ok(AggregationParams {
            assign_weights: Tensor::matrix(clusters, dim, assign_weights)?,
            assign_bias: Tensor::vector(assign_bias),
            anchors: Tensor::matrix(clusters, dim, anchors)?,
            attn_weight: Tensor::zeros(&[dim]),
            attn_bias: Tensor::zeros(&[1]),
        })
    }

    pub fn clusters(&self) -> usize {
        self.anchors.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchors.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.anchors.dims2()?;
        if self.assign_weights.shape() != [k, d]
            || self.assign_bias.numel() != k
            || self.attn_weight.numel() != d
            || self.attn_bias.numel() != 1
        {
            return Err(dim_err!("aggregation parameters disagree on K={} D={}", k, d));
        }
        for t in self.tensors() {
            t.ensure_finite("aggregation params")?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor; 5] {
        [
            &self.assign_weights,
            &self.assign_bias,
            &self.anchors,
            &self.attn_weight,
            &self.attn_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.assign_weights,
            &mut self.assign_bias,
            &mut self.anchors,
            &mut self.attn_weight,
            &mut self.attn_bias,
        ]
    }

    /// Records every parameter on `tape`, trainable when `trainable` is set.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<AggregationVars> {
        let [a, b, c, w, wb] = self.tensors();
        Ok(AggregationVars {
            assign_weights: tape.leaf(a.clone(), trainable)?,
            assign_bias: tape.leaf(b.clone(), trainable)?,
            anchors: tape.leaf(c.clone(), trainable)?,
            attn_weight: tape.leaf(w.clone(), trainable)?,
            attn_bias: tape.leaf(wb.clone(), trainable)?,
        })
    }
}

/// Tape handles for [`AggregationParams`], in the same order as `tensors()`.
#[derive(Debug, Clone, Copy)]
pub struct AggregationVars {
    pub assign_weights: Var,
    pub assign_bias: Var,
    pub anchors: Var,
    pub attn_weight: Var,
    pub attn_bias: Var,
}

impl AggregationVars {
    pub fn all(&self) -> [Var; 5] {
        [
            self.assign_weights,
            self.assign_bias,
            self.anchors,
            self.attn_weight,
            self.attn_bias,
        ]
    }
}

/// Per-cluster weight applied to the residual sums.
#[derive(Debug, Clone, Copy)]
pub enum ClusterWeights<'a> {
    /// Every cluster weighted 1.
    Unit,
    /// Learned `φ(c_k)`.
    Learned(PhiActivation),
    /// Fixed weights, one per cluster; used for the `φ ≡ 1` / `φ ≡ 0` limits.
    Fixed(&'a [f64]),
}

/// Fixed-length `D×K` aggregation output.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedTemplate {
    v: Tensor,
}

impl AggregatedTemplate {
    /// Builds a template from cluster rows (`K×D`).
    pub fn from_cluster_rows(rows: &Tensor) -> Result<Self> {
        Ok(AggregatedTemplate { v: rows.transpose()? })
    }

    /// `V(j, k)` as a `D×K` matrix.
    pub fn values(&self) -> &Tensor {
        &self.v
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.v.get(j, k)
    }

    pub fn dim(&self) -> usize {
        self.v.rows()
    }

    pub fn clusters(&self) -> usize {
        self.v.cols()
    }

    /// Row-major flattening of the `D×K` matrix.
    pub fn flatten(&self) -> &[f64] {
        self.v.data()
    }

    /// The template transposed to one row per cluster (`K×D`).
    pub fn cluster_rows(&self) -> Tensor {
        self.v.transpose().expect("template is a matrix")
    }
}

fn check_input(x: &Tensor, dim: usize) -> Result<()> {
    let (n, d) = x.dims2()?;
    if n == 0 {
        return Err(Error::EmptyInput("aggregation needs at least one frame"));
    }
    if d != dim {
        return Err(dim_err!("frame features have dim {}, clusters expect {}", d, dim));
    }
    Ok(())
}

/// Soft assignment `α` (N×K): row-wise softmax of `x·aᵀ + b`.
pub fn soft_assign_graph(tape: &mut Tape, x: Var, vars: &AggregationVars) -> Result<Var> {
    let at = tape.transpose(vars.assign_weights)?;
    let logits = tape.matmul(x, at)?;
    let logits = tape.add_bias(logits, vars.assign_bias)?;
    tape.softmax(logits, 1)
}

/// Residual sums `Σ_i α_k(x_i)(x_i − c_k)` as cluster rows (K×D).
pub fn residual_sums_graph(tape: &mut Tape, x: Var, alpha: Var, anchors: Var) -> Result<Var> {
    let alpha_t = tape.transpose(alpha)?;
    let weighted = tape.matmul(alpha_t, x)?;
    let mass = tape.sum_axis(alpha, 0)?;
    let shifted = tape.scale_rows(anchors, mass)?;
    tape.sub(weighted, shifted)
}

/// Cluster attention `φ(c_k)` for every cluster (length K).
pub fn cluster_attention_graph(
    tape: &mut Tape,
    vars: &AggregationVars,
    activation: PhiActivation,
) -> Result<Var> {
    let d = tape.value(vars.attn_weight).numel();
    let w = tape.reshape(vars.attn_weight, &[d, 1])?;
    let logits = tape.matmul(vars.anchors, w)?;
    let logits = tape.add_bias(logits, vars.attn_bias)?;
    let k = tape.value(logits).rows();
    let logits = tape.reshape(logits, &[k])?;
    match activation {
        PhiActivation::Logistic => tape.sigmoid(logits),
    }
}

/// Full aggregation graph returning cluster rows (`keep×D`).
///
/// The first `keep` clusters are kept; the rest act as ghosts. `weights`
/// scales the kept rows, then `normalization` is applied.
pub fn aggregate_graph(
    tape: &mut Tape,
    x: Var,
    vars: &AggregationVars,
    keep: usize,
    weights: ClusterWeights<'_>,
    normalization: Normalization,
) -> Result<Var> {
    let total = tape.value(vars.anchors).rows();
    check_input(tape.value(x), tape.value(vars.anchors).cols())?;
    if keep == 0 || keep > total {
        return Err(dim_err!("cannot keep {} of {} clusters", keep, total));
    }
    let alpha = soft_assign_graph(tape, x, vars)?;
    let mut rows = residual_sums_graph(tape, x, alpha, vars.anchors)?;
    if keep < total {
        let kept: Vec<usize> = (0..keep).collect();
        rows = tape.gather_rows(rows, &kept)?;
    }
    if normalization == Normalization::IntraGlobal {
        rows = tape.l2_normalize_rows(rows)?;
    }
    rows = match weights {
        ClusterWeights::Unit => rows,
        ClusterWeights::Learned(act) => {
            let mut phi = cluster_attention_graph(tape, vars, act)?;
            if keep < total {
                let kept: Vec<usize> = (0..keep).collect();
                let col = tape.reshape(phi, &[total, 1])?;
                let col = tape.gather_rows(col, &kept)?;
                phi = tape.reshape(col, &[keep])?;
            }
            tape.scale_rows(rows, phi)?
        }
        ClusterWeights::Fixed(w) => {
            if w.len() != keep {
                return Err(dim_err!("{} fixed cluster weights for {} clusters", w.len(), keep));
            }
            let w = tape.constant(Tensor::vector(w.to_vec()))?;
            tape.scale_rows(rows, w)?
        }
    };
    match normalization {
        Normalization::None => Ok(rows),
        Normalization::Global | Normalization::IntraGlobal => tape.l2_normalize(rows),
    }
}

fn eval_raw(
    x: &Tensor,
    params: &AggregationParams,
    keep: usize,
    weights: ClusterWeights<'_>,
) -> Result<AggregatedTemplate> {
    params.validate()?;
    check_input(x, params.dim())?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let xv = tape.constant(x.clone())?;
    let rows = aggregate_graph(&mut tape, xv, &vars, keep, weights, Normalization::None)?;
    AggregatedTemplate::from_cluster_rows(tape.value(rows))
}

/// `α_k(x_i)` for every frame and cluster (N×K).
pub fn soft_assign(x: &Tensor, params: &AggregationParams) -> Result<Tensor> {
    params.validate()?;
    let (_, d) = x.dims2()?;
    if d != params.dim() {
        return Err(dim_err!("frame features have dim {}, clusters expect {}", d, params.dim()));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let xv = tape.constant(x.clone())?;
    let alpha = soft_assign_graph(&mut tape, xv, &vars)?;
    Ok(tape.value(alpha).clone())
}

/// Raw NetVLAD over every cluster in `params`.
pub fn netvlad(x: &Tensor, params: &AggregationParams) -> Result<AggregatedTemplate> {
    eval_raw(x, params, params.clusters(), ClusterWeights::Unit)
}

/// Raw AttentionVLAD. `weights` is normally `Learned`; `Fixed` overrides φ.
pub fn attention_vlad(
    x: &Tensor,
    params: &AggregationParams,
    weights: ClusterWeights<'_>,
) -> Result<AggregatedTemplate> {
    eval_raw(x, params, params.clusters(), weights)
}

/// Raw GhostVLAD: the last `ghosts` clusters of `params` are ghosts.
pub fn ghost_vlad(x: &Tensor, params: &AggregationParams, ghosts: usize) -> Result<AggregatedTemplate> {
    let total = params.clusters();
    if ghosts >= total {
        return Err(dim_err!("{} ghosts leave no output cluster out of {}", ghosts, total));
    }
    eval_raw(x, params, total - ghosts, ClusterWeights::Unit)
}

/// Learned `φ(c_k)` for every cluster.
pub fn cluster_attention(params: &AggregationParams, activation: PhiActivation) -> Result<Vec<f64>> {
    params.validate()?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let phi = cluster_attention_graph(&mut tape, &vars, activation)?;
    Ok(tape.value(phi).data().to_vec())
}

/// Effective per-frame weight `Σ_k φ_k·α_k(x_i) / max_k φ_k`.
///
/// Frame weights are not defined by the layer itself: this is the
/// assignment-weighted average cluster weight, rescaled so that a frame
/// assigned entirely to the most trusted cluster scores 1.
pub fn frame_weights(x: &Tensor, alpha: &Tensor, cluster_weights: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = alpha.dims2()?;
    if x.rows() != n || cluster_weights.len() != k {
        return Err(dim_err!("frame weights: {} frames, α {}×{}, {} cluster weights", x.rows(), n, k, cluster_weights.len()));
    }
    let max = cluster_weights.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok((0..n)
        .map(|i| {
            let s: f64 = alpha.row(i).iter().zip(cluster_weights).map(|(a, w)| a * w).sum();
            (s / max).clamp(0.0, 1.0)
        })
        .collect())
}

/// Configured aggregation layer: hyperparameters plus trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationLayer {
    pub config: AggregationConfig,
    pub params: AggregationParams,
}

impl AggregationLayer {
    pub fn init<R: Rng + ?Sized>(config: AggregationConfig, dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = AggregationParams::init(config.total_clusters(), dim, config.init_sigma, rng)?;
        Ok(AggregationLayer { config, params })
    }

    pub fn output_clusters(&self) -> usize {
        self.config.clusters
    }

    fn weights(&self) -> ClusterWeights<'static> {
        match self.config.kind {
            AggregationKind::AttentionVlad => ClusterWeights::Learned(self.config.phi_activation),
            _ => ClusterWeights::Unit,
        }
    }

    /// Normalized cluster rows (K×D) for frames `x` already on the tape.
    pub fn forward(&self, tape: &mut Tape, x: Var, vars: &AggregationVars) -> Result<Var> {
        aggregate_graph(
            tape,
            x,
            vars,
            self.config.clusters,
            self.weights(),
            self.config.normalization,
        )
    }

    /// Normalized template for `x`.
    pub fn encode(&self, x: &Tensor) -> Result<AggregatedTemplate> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let rows = self.forward(&mut tape, xv, &vars)?;
        AggregatedTemplate::from_cluster_rows(tape.value(rows))
    }

    /// Raw (unnormalized) template, dispatching on the configured kind.
    pub fn encode_raw(&self, x: &Tensor) -> Result<AggregatedTemplate> {
        match self.config.kind {
            AggregationKind::NetVlad => netvlad(x, &self.params),
            AggregationKind::GhostVlad => ghost_vlad(x, &self.params, self.config.ghost_clusters),
            AggregationKind::AttentionVlad => attention_vlad(x, &self.params, self.weights()),
        }
    }

    /// Weight each soft-assignment cluster carries into the output:
    /// `φ(c_k)` for AttentionVLAD, 1/0 for real/ghost clusters, 1 for NetVLAD.
    pub fn cluster_weights(&self) -> Result<Vec<f64>> {
        let k = self.config.clusters;
        match self.config.kind {
            AggregationKind::NetVlad => Ok(vec![1.0; k]),
            AggregationKind::GhostVlad => {
                let mut w = vec![1.0; k];
                w.resize(k + self.config.ghost_clusters, 0.0);
                Ok(w)
            }
            AggregationKind::AttentionVlad => cluster_attention(&self.params, self.config.phi_activation),
        }
    }

    /// Per-frame effective weights (see [`frame_weights`]).
    pub fn frame_weight_report(&self, x: &Tensor) -> Result<Vec<f64>> {
        check_input(x, self.params.dim())?;
        let alpha = soft_assign(x, &self.params)?;
        frame_weights(x, &alpha, &self.cluster_weights()?)
    }
}

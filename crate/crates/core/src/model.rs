//! The full recognition pipeline: face frames → aggregation → modality
//! bundle → fusion → three-layer MLP classifier → class logits.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationConfig, AggregationKind, AggregationLayer, AggregationVars};
use crate::autodiff::{BatchStats, Tape, Tensor, Var};
use crate::data::{zero_feature, Episode, Modality};
use crate::error::{dim_err, Error, Result};
use crate::fusion::{FusionConfig, FusionKind, FusionLayer, FusionVars, ModalBundle, RowTag};

/// How the aggregated face template enters the fusion input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceRows {
    /// One row per output cluster (`K1 = K`).
    #[default]
    PerCluster,
    /// A single row: the mean of the cluster rows (`K1 = 1`).
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamfConfig {
    pub dim: usize,
    pub num_classes: usize,
    /// Face frames sampled per episode (`N`).
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    pub aggregation: AggregationConfig,
    pub fusion: FusionConfig,
    /// Modalities used; must include face. Order fixes the bundle row order.
    #[serde(default = "default_modalities")]
    pub modalities: Vec<Modality>,
    #[serde(default)]
    pub face_rows: FaceRows,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_bn_eps")]
    pub batchnorm_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub batchnorm_momentum: f64,
}

fn default_frames() -> usize {
    24
}
fn default_hidden() -> usize {
    4096
}
fn default_modalities() -> Vec<Modality> {
    vec![Modality::Face, Modality::Audio, Modality::Body]
}
fn default_bn_eps() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.1
}

impl FamfConfig {
    /// Default settings: K=8, N=24, hidden 4096, MLMA 128/32, face+audio+body.
    pub fn new(dim: usize, num_classes: usize) -> Self {
        FamfConfig {
            dim,
            num_classes,
            frames: default_frames(),
            hidden_dim: default_hidden(),
            aggregation: AggregationConfig::new(AggregationKind::AttentionVlad, 8),
            fusion: FusionConfig::new(FusionKind::Mlma, 128, 32),
            modalities: default_modalities(),
            face_rows: FaceRows::PerCluster,
            activation: Activation::Relu,
            batchnorm_eps: default_bn_eps(),
            batchnorm_momentum: default_bn_momentum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_classes == 0 || self.frames == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("dim, num_classes, frames and hidden_dim must be positive".into()));
        }
        if !self.modalities.contains(&Modality::Face) {
            return Err(Error::Config("modality subset must include face".into()));
        }
        let mut seen = self.modalities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modalities.len() {
            return Err(Error::Config("modality subset lists a modality twice".into()));
        }
        if !(self.batchnorm_eps > 0.0) || !(0.0..=1.0).contains(&self.batchnorm_momentum) {
            return Err(Error::Config("batchnorm_eps must be > 0 and momentum in [0, 1]".into()));
        }
        self.aggregation.validate()?;
        self.fusion.validate(self.dim)
    }

    /// Non-face modalities in bundle order.
    pub fn clip_modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.modalities.iter().copied().filter(|m| *m != Modality::Face)
    }

    pub fn face_row_count(&self) -> usize {
        match self.face_rows {
            FaceRows::PerCluster => self.aggregation.clusters,
            FaceRows::Pooled => 1,
        }
    }

    /// Rows of the fusion input, `K1 + K2`.
    pub fn bundle_rows(&self) -> usize {
        self.face_row_count() + self.clip_modalities().count()
    }

    /// Length of the flattened fused matrix fed to the classifier.
    pub fn classifier_input(&self) -> usize {
        self.bundle_rows() * self.dim
    }

    /// Closed-form trainable parameter count.
    ///
    /// * aggregation: `K′(2D + 1)` with `K′ = K (+ G)`, plus `D + 1` for φ (AttentionVLAD only)
    /// * fusion: `h1·D` (MMA), `h1·D + h2·h1` (MLMA), 0 (concat)
    /// * classifier: `F·H + H + H·H + H + H·C + C` with `F = (K1+K2)·D`, plus `2H` per batch norm
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let k = self.aggregation.total_clusters();
        let mut n = k * (2 * d + 1);
        if self.aggregation.kind == AggregationKind::AttentionVlad {
            n += d + 1;
        }
        n += match self.fusion.kind {
            FusionKind::Concat => 0,
            FusionKind::Mma => self.fusion.hidden1 * d,
            FusionKind::Mlma => self.fusion.hidden1 * d + self.fusion.hidden2 * self.fusion.hidden1,
        };
        let (f, h, c) = (self.classifier_input(), self.hidden_dim, self.num_classes);
        n + f * h + h + h * h + h + h * c + c + 4 * h
    }
}

/// Which learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Aggregation,
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm standardizes with batch statistics.
    Train,
    /// Batch norm uses running statistics.
    Eval,
}

/// Affine layer `y = x·W + b` with `W` stored `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let s = libm::sqrt(2.0 / inputs as f64);
        let w = (0..inputs * outputs)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * s
            })
            .collect();
        Ok(Linear {
            weight: Tensor::matrix(inputs, outputs, w)?,
            bias: Tensor::zeros(&[outputs]),
        })
    }

    fn forward(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::filled(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    /// Exponential moving average update; the running variance uses the
    /// unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats, momentum: f64) {
        let b = stats.batch as f64;
        let correction = if stats.batch > 1 { b / (b - 1.0) } else { 1.0 };
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = (1.0 - momentum) * self.running_mean[j] + momentum * stats.mean[j];
            self.running_var[j] = (1.0 - momentum) * self.running_var[j] + momentum * stats.var[j] * correction;
        }
    }
}

/// Three affine layers with batch norm and activation between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub fc1: Linear,
    pub bn1: BatchNorm,
    pub fc2: Linear,
    pub bn2: BatchNorm,
    pub fc3: Linear,
}

impl Classifier {
    fn init(inputs: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Classifier {
            fc1: Linear::init(inputs, hidden, rng)?,
            bn1: BatchNorm::new(hidden),
            fc2: Linear::init(hidden, hidden, rng)?,
            bn2: BatchNorm::new(hidden),
            fc3: Linear::init(hidden, classes, rng)?,
        })
    }
}

/// Tape handles for every model parameter.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub aggregation: AggregationVars,
    pub fusion: Option<FusionVars>,
    /// fc1.w, fc1.b, bn1.γ, bn1.β, fc2.w, fc2.b, bn2.γ, bn2.β, fc3.w, fc3.b
    pub classifier: [Var; 10],
    trainable: Vec<Var>,
}

impl ModelVars {
    /// Trainable vars in [`FamfModel::parameters`] order.
    pub fn trainable(&self) -> &[Var] {
        &self.trainable
    }
}

/// One episode ready for the forward pass: face frames already resampled.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInput<'a> {
    pub face: &'a Tensor,
    pub episode: &'a Episode,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// B×C logits.
    pub logits: Var,
    /// Train-mode statistics for bn1 and bn2.
    pub batch_stats: Option<[BatchStats; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamfModel {
    pub config: FamfConfig,
    pub aggregation: AggregationLayer,
    pub fusion: FusionLayer,
    pub classifier: Classifier,
}

impl FamfModel {
    pub fn new(config: FamfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let aggregation = AggregationLayer::init(config.aggregation.clone(), config.dim, &mut rng)?;
        let fusion = FusionLayer::init(config.fusion.clone(), config.dim, &mut rng)?;
        let classifier = Classifier::init(config.classifier_input(), config.hidden_dim, config.num_classes, &mut rng)?;
        Ok(FamfModel {
            config,
            aggregation,
            fusion,
            classifier,
        })
    }

    fn uses_attention(&self) -> bool {
        self.config.aggregation.kind == AggregationKind::AttentionVlad
    }

    /// Trainable parameters with names and learning-rate groups.
    pub fn parameters(&self) -> Vec<(&'static str, &Tensor, ParamGroup)> {
        use ParamGroup::*;
        let a = &self.aggregation.params;
        let mut out = vec![
            ("agg.assign_weights", &a.assign_weights, Aggregation),
            ("agg.assign_bias", &a.assign_bias, Aggregation),
            ("agg.anchors", &a.anchors, Aggregation),
        ];
        if self.uses_attention() {
            out.push(("agg.attn_weight", &a.attn_weight, Aggregation));
            out.push(("agg.attn_bias", &a.attn_bias, Aggregation));
        }
        if let Some(f) = &self.fusion.params {
            out.push(("fusion.proj_in", &f.proj_in, Rest));
            if let Some(w) = &f.proj_out {
                out.push(("fusion.proj_out", w, Rest));
            }
        }
        let c = &self.classifier;
        out.extend([
            ("cls.fc1.weight", &c.fc1.weight, Rest),
            ("cls.fc1.bias", &c.fc1.bias, Rest),
            ("cls.bn1.gamma", &c.bn1.gamma, Rest),
            ("cls.bn1.beta", &c.bn1.beta, Rest),
            ("cls.fc2.weight", &c.fc2.weight, Rest),
            ("cls.fc2.bias", &c.fc2.bias, Rest),
            ("cls.bn2.gamma", &c.bn2.gamma, Rest),
            ("cls.bn2.beta", &c.bn2.beta, Rest),
            ("cls.fc3.weight", &c.fc3.weight, Rest),
            ("cls.fc3.bias", &c.fc3.bias, Rest),
        ]);
        out
    }

    /// Mutable view of the trainable parameters, same order as [`Self::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let attention = self.uses_attention();
        let a = &mut self.aggregation.params;
        let mut out: Vec<&mut Tensor> = vec![&mut a.assign_weights, &mut a.assign_bias, &mut a.anchors];
        if attention {
            out.push(&mut a.attn_weight);
            out.push(&mut a.attn_bias);
        }
        if let Some(f) = &mut self.fusion.params {
            out.extend(f.tensors_mut());
        }
        let c = &mut self.classifier;
        out.extend([
            &mut c.fc1.weight,
            &mut c.fc1.bias,
            &mut c.bn1.gamma,
            &mut c.bn1.beta,
            &mut c.fc2.weight,
            &mut c.fc2.bias,
            &mut c.bn2.gamma,
            &mut c.bn2.beta,
            &mut c.fc3.weight,
            &mut c.fc3.bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t, _)| t.numel()).sum()
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<ModelVars> {
        let attention = self.uses_attention();
        let p = &self.aggregation.params;
        // φ parameters are recorded as constants when the layer ignores them.
        let aggregation = AggregationVars {
            assign_weights: tape.leaf(p.assign_weights.clone(), trainable)?,
            assign_bias: tape.leaf(p.assign_bias.clone(), trainable)?,
            anchors: tape.leaf(p.anchors.clone(), trainable)?,
            attn_weight: tape.leaf(p.attn_weight.clone(), trainable && attention)?,
            attn_bias: tape.leaf(p.attn_bias.clone(), trainable && attention)?,
        };
        let fusion = self.fusion.bind(tape, trainable)?;
        let c = &self.classifier;
        let mut classifier = [Var(0); 10];
        for (slot, t) in classifier.iter_mut().zip([
            &c.fc1.weight,
            &c.fc1.bias,
            &c.bn1.gamma,
            &c.bn1.beta,
            &c.fc2.weight,
            &c.fc2.bias,
            &c.bn2.gamma,
            &c.bn2.beta,
            &c.fc3.weight,
            &c.fc3.bias,
        ]) {
            *slot = tape.leaf(t.clone(), trainable)?;
        }
        let mut trainable_vars = vec![aggregation.assign_weights, aggregation.assign_bias, aggregation.anchors];
        if attention {
            trainable_vars.extend([aggregation.attn_weight, aggregation.attn_bias]);
        }
        if let Some(f) = &fusion {
            trainable_vars.extend(f.all());
        }
        trainable_vars.extend(classifier);
        Ok(ModelVars {
            aggregation,
            fusion,
            classifier,
            trainable: trainable_vars,
        })
    }

    fn check_input(&self, input: &EpisodeInput<'_>) -> Result<()> {
        let (n, d) = input.face.dims2()?;
        if d != self.config.dim {
            return Err(dim_err!("episode {}: face dim {} vs model dim {}", input.episode.id, d, self.config.dim));
        }
        if n == 0 {
            return Err(Error::EmptyInput("episode has no face frames"));
        }
        for m in self.config.clip_modalities() {
            if let Some(f) = input.episode.clip_feature(m) {
                if f.len() != self.config.dim {
                    return Err(dim_err!("episode {}: {} dim {} vs {}", input.episode.id, m.name(), f.len(), self.config.dim));
                }
            }
        }
        Ok(())
    }

    /// Bundle rows for one episode: face rows first, then each clip modality
    /// in config order with absent ones as zero rows.
    pub fn bundle_graph(&self, tape: &mut Tape, vars: &ModelVars, input: &EpisodeInput<'_>) -> Result<Var> {
        self.check_input(input)?;
        let x = tape.constant(input.face.clone())?;
        let face = self.aggregation.forward(tape, x, &vars.aggregation)?;
        let face = match self.config.face_rows {
            FaceRows::PerCluster => face,
            FaceRows::Pooled => tape.mean_axis(face, 0)?,
        };
        let mut rows = vec![face];
        for m in self.config.clip_modalities() {
            let f = input
                .episode
                .clip_feature(m)
                .map(|f| f.to_vec())
                .unwrap_or_else(|| zero_feature(self.config.dim));
            rows.push(tape.constant(Tensor::vector(f))?);
        }
        tape.concat_rows(&rows)
    }

    pub fn bundle_tags(&self) -> Vec<RowTag> {
        let mut tags: Vec<RowTag> = (0..self.config.face_row_count())
            .map(|index| RowTag {
                modality: Modality::Face,
                index,
            })
            .collect();
        tags.extend(self.config.clip_modalities().map(|modality| RowTag { modality, index: 0 }));
        tags
    }

    /// The fusion input for one episode as a value.
    pub fn bundle(&self, input: &EpisodeInput<'_>) -> Result<ModalBundle> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let x = self.bundle_graph(&mut tape, &vars, input)?;
        ModalBundle::new(tape.value(x).clone(), self.config.face_row_count(), self.bundle_tags())
    }

    /// Logits for a batch of episodes (B×C).
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        inputs: &[EpisodeInput<'_>],
        mode: Mode,
    ) -> Result<ForwardOutput> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("forward on an empty batch"));
        }
        let width = self.config.classifier_input();
        let mut flat = Vec::with_capacity(inputs.len());
        for input in inputs {
            let x = self.bundle_graph(tape, vars, input)?;
            let y = self.fusion.forward(tape, x, vars.fusion.as_ref())?;
            flat.push(tape.reshape(y, &[1, width])?);
        }
        let h = tape.concat_rows(&flat)?;
        let [w1, b1, g1, be1, w2, b2, g2, be2, w3, b3] = vars.classifier;
        let eps = self.config.batchnorm_eps;
        let c = &self.classifier;

        let h = Linear::forward(tape, h, w1, b1)?;
        let (h, s1) = self.norm(tape, h, g1, be1, &c.bn1, mode, eps)?;
        let h = self.activate(tape, h)?;
        let h = Linear::forward(tape, h, w2, b2)?;
        let (h, s2) = self.norm(tape, h, g2, be2, &c.bn2, mode, eps)?;
        let h = self.activate(tape, h)?;
        let logits = Linear::forward(tape, h, w3, b3)?;
        let batch_stats = match (s1, s2) {
            (Some(a), Some(b)) => Some([a, b]),
            _ => None,
        };
        Ok(ForwardOutput { logits, batch_stats })
    }

    #[allow(clippy::too_many_arguments)]
    fn norm(
        &self,
        tape: &mut Tape,
        h: Var,
        gamma: Var,
        beta: Var,
        bn: &BatchNorm,
        mode: Mode,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        match mode {
            Mode::Train => {
                let (y, s) = tape.batchnorm_train(h, gamma, beta, eps)?;
                Ok((y, Some(s)))
            }
            Mode::Eval => Ok((tape.batchnorm_eval(h, gamma, beta, &bn.running_mean, &bn.running_var, eps)?, None)),
        }
    }

    fn activate(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        match self.config.activation {
            Activation::Relu => tape.relu(h),
        }
    }

    /// Applies train-mode batch statistics to the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats; 2]) {
        let m = self.config.batchnorm_momentum;
        self.classifier.bn1.update_running(&stats[0], m);
        self.classifier.bn2.update_running(&stats[1], m);
    }

    /// Eval-mode logits for one episode.
    pub fn forward(&self, input: &EpisodeInput<'_>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let out = self.forward_batch(&mut tape, &vars, core::slice::from_ref(input), Mode::Eval)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Eval-mode logits for many episodes, one row each.
    pub fn forward_many(&self, inputs: &[EpisodeInput<'_>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let out = self.forward_batch(&mut tape, &vars, inputs, Mode::Eval)?;
        let logits = tape.value(out.logits);
        Ok((0..logits.rows()).map(|r| logits.row(r).to_vec()).collect())
    }

    /// Every tensor needed to restore the model, running statistics included.
    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        let a = &self.aggregation.params;
        let mut out: Vec<(String, Tensor)> = vec![
            ("agg.assign_weights".to_string(), a.assign_weights.clone()),
            ("agg.assign_bias".to_string(), a.assign_bias.clone()),
            ("agg.anchors".to_string(), a.anchors.clone()),
            ("agg.attn_weight".to_string(), a.attn_weight.clone()),
            ("agg.attn_bias".to_string(), a.attn_bias.clone()),
        ];
        out.extend(
            self.parameters()
                .into_iter()
                .filter(|(n, _, _)| !n.starts_with("agg."))
                .map(|(n, t, _)| (n.to_string(), t.clone())),
        );
        let c = &self.classifier;
        for (name, bn) in [("cls.bn1", &c.bn1), ("cls.bn2", &c.bn2)] {
            out.push((alloc::format!("{name}.running_mean"), Tensor::vector(bn.running_mean.clone())));
            out.push((alloc::format!("{name}.running_var"), Tensor::vector(bn.running_var.clone())));
        }
        out
    }

    /// Restores tensors written by [`Self::state_dict`]; every entry must be
    /// present with a matching shape.
    pub fn load_state_dict(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let expected = self.state_dict();
        if entries.len() != expected.len() {
            return Err(dim_err!("checkpoint holds {} tensors, model needs {}", entries.len(), expected.len()));
        }
        let find = |name: &str| -> Result<&Tensor> {
            let t = entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| dim_err!("checkpoint lacks tensor `{}`", name))?;
            t.ensure_finite("checkpoint")?;
            Ok(t)
        };
        for (name, t) in &expected {
            let got = find(name)?;
            if got.shape() != t.shape() {
                return Err(dim_err!("tensor `{}` has shape {:?}, expected {:?}", name, got.shape(), t.shape()));
            }
        }
        let a = &mut self.aggregation.params;
        a.assign_weights = find("agg.assign_weights")?.clone();
        a.assign_bias = find("agg.assign_bias")?.clone();
        a.anchors = find("agg.anchors")?.clone();
        a.attn_weight = find("agg.attn_weight")?.clone();
        a.attn_bias = find("agg.attn_bias")?.clone();
        if let Some(f) = &mut self.fusion.params {
            f.proj_in = find("fusion.proj_in")?.clone();
            if let Some(w) = &mut f.proj_out {
                *w = find("fusion.proj_out")?.clone();
            }
        }
        let c = &mut self.classifier;
        c.fc1.weight = find("cls.fc1.weight")?.clone();
        c.fc1.bias = find("cls.fc1.bias")?.clone();
        c.fc2.weight = find("cls.fc2.weight")?.clone();
        c.fc2.bias = find("cls.fc2.bias")?.clone();
        c.fc3.weight = find("cls.fc3.weight")?.clone();
        c.fc3.bias = find("cls.fc3.bias")?.clone();
        for (name, bn) in [("cls.bn1", &mut c.bn1), ("cls.bn2", &mut c.bn2)] {
            bn.gamma = find(&alloc::format!("{name}.gamma"))?.clone();
            bn.beta = find(&alloc::format!("{name}.beta"))?.clone();
            bn.running_mean = find(&alloc::format!("{name}.running_mean"))?.data().to_vec();
            bn.running_var = find(&alloc::format!("{name}.running_var"))?.data().to_vec();
        }
        Ok(())
    }
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The `k` best classes by descending score, ties broken by ascending class id.
pub fn predict_topk(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Index of the highest score (lowest id on ties).
pub fn argmax(scores: &[f64]) -> usize {
    predict_topk(scores, 1).first().map_or(0, |(c, _)| *c)
}

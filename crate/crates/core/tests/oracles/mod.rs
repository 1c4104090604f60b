//! Direct loop transcriptions of the aggregation, fusion and ranking maps.
//!
//! Nothing here touches the tape: every oracle is a plain nested loop over
//! `Vec<Vec<f64>>`, written to be read against the formulas, not to be fast.

#![allow(dead_code)]

use famf_core::Tensor;

pub type Mat = Vec<Vec<f64>>;

/// SplitMix64, enough for seeded test instances.
pub struct Rng64(u64);

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Rng64(seed ^ 0x5DEE_CE66_D1CE_4E5B)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    /// Uniform integer on `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, scale: f64) -> Mat {
        (0..rows).map(|_| self.vector(cols, scale)).collect()
    }

    pub fn vector(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(-scale, scale)).collect()
    }
}

pub fn to_tensor(m: &Mat) -> Tensor {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    Tensor::matrix(rows, cols, m.concat()).expect("rectangular")
}

pub fn from_tensor(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| {
            assert_eq!(ra.len(), rb.len(), "column count");
            ra.iter().zip(rb).map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cluster parameters: assignment weights `a` (K×D), biases `b` (K),
/// anchors `c` (K×D).
pub struct Clusters {
    pub a: Mat,
    pub b: Vec<f64>,
    pub c: Mat,
}

/// Soft assignment `α_k(x_i) = e^{a_kᵀx_i + b_k} / Σ_k' e^{a_k'ᵀx_i + b_k'}`.
pub fn soft_assign(x: &Mat, p: &Clusters) -> Mat {
    x.iter()
        .map(|xi| {
            let logits: Vec<f64> = (0..p.a.len()).map(|k| dot(&p.a[k], xi) + p.b[k]).collect();
            softmax(&logits)
        })
        .collect()
}

/// `V(j,k) = Σ_i α_k(x_i)·(x_i(j) − c_k(j))`, laid out D×K.
pub fn netvlad(x: &Mat, p: &Clusters) -> Mat {
    let k_total = p.c.len();
    let d = p.c[0].len();
    let alpha = soft_assign(x, p);
    let mut v = vec![vec![0.0; k_total]; d];
    for (i, xi) in x.iter().enumerate() {
        for k in 0..k_total {
            for j in 0..d {
                v[j][k] += alpha[i][k] * (xi[j] - p.c[k][j]);
            }
        }
    }
    v
}

/// `φ(c_k) = 1 / (1 + e^{−(wᵀc_k + b)})`.
pub fn cluster_attention(p: &Clusters, w: &[f64], b: f64) -> Vec<f64> {
    p.c.iter().map(|ck| 1.0 / (1.0 + (-(dot(w, ck) + b)).exp())).collect()
}

/// `V(j,k) = Σ_i φ_k·α_k(x_i)·(x_i(j) − c_k(j))` with explicit `φ`.
pub fn attention_vlad_with(x: &Mat, p: &Clusters, phi: &[f64]) -> Mat {
    let k_total = p.c.len();
    let d = p.c[0].len();
    let alpha = soft_assign(x, p);
    let mut v = vec![vec![0.0; k_total]; d];
    for (i, xi) in x.iter().enumerate() {
        for k in 0..k_total {
            for j in 0..d {
                v[j][k] += phi[k] * alpha[i][k] * (xi[j] - p.c[k][j]);
            }
        }
    }
    v
}

pub fn attention_vlad(x: &Mat, p: &Clusters, w: &[f64], b: f64) -> Mat {
    attention_vlad_with(x, p, &cluster_attention(p, w, b))
}

/// NetVLAD over all `K + G` clusters with the last `G` columns dropped.
pub fn ghost_vlad(x: &Mat, p: &Clusters, ghosts: usize) -> Mat {
    let keep = p.c.len() - ghosts;
    netvlad(x, p).into_iter().map(|row| row[..keep].to_vec()).collect()
}

/// Rows of `x` mapped through each `h×d` projection in turn.
fn project(x: &Mat, maps: &[&Mat]) -> Mat {
    x.iter()
        .map(|row| {
            let mut v = row.clone();
            for w in maps {
                v = w.iter().map(|wr| dot(wr, &v)).collect();
            }
            v
        })
        .collect()
}

/// `A[j][i] = e^{Z[j][i]} / Σ_i e^{Z[j][i]}` with `Z[j][i] = ⟨x′_j, x′_i⟩`.
pub fn attention(x: &Mat, maps: &[&Mat]) -> Mat {
    let xp = project(x, maps);
    let r = x.len();
    (0..r)
        .map(|j| {
            let z: Vec<f64> = (0..r).map(|i| dot(&xp[j], &xp[i])).collect();
            softmax(&z)
        })
        .collect()
}

/// `Y_i = Σ_j A[j][i]·X_j`.
fn reweight(x: &Mat, a: &Mat) -> Mat {
    let (r, d) = (x.len(), x[0].len());
    let mut y = vec![vec![0.0; d]; r];
    for i in 0..r {
        for j in 0..r {
            for c in 0..d {
                y[i][c] += a[j][i] * x[j][c];
            }
        }
    }
    y
}

/// Two projections, `w_f2` (h1×D) first and `w_f1` (h2×h1) second.
pub fn mlma(x: &Mat, w_f2: &Mat, w_f1: &Mat) -> Mat {
    reweight(x, &attention(x, &[w_f2, w_f1]))
}

/// One projection `w` (h1×D).
pub fn mma(x: &Mat, w: &Mat) -> Mat {
    reweight(x, &attention(x, &[w]))
}

/// Average precision by explicit prefix enumeration: for every cutoff
/// `n ≤ min(len, limit)` where item `n` is relevant, add `|relevant ∩
/// top n| / n`; divide by the total number of relevant items.
pub fn average_precision(ranked_relevance: &[bool], total_relevant: usize, limit: usize) -> Option<f64> {
    if total_relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    for n in 1..=ranked_relevance.len().min(limit) {
        if ranked_relevance[n - 1] {
            let hits = ranked_relevance[..n].iter().filter(|r| **r).count();
            sum += hits as f64 / n as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Ranks by brute force: repeatedly pick the highest remaining score,
/// lowest id first on ties.
pub fn brute_force_rank(items: &[(u64, f64)]) -> Vec<u64> {
    let mut left: Vec<(u64, f64)> = items.to_vec();
    let mut out = Vec::with_capacity(left.len());
    while !left.is_empty() {
        let mut best = 0;
        for (i, it) in left.iter().enumerate() {
            let b = left[best];
            if it.1 > b.1 || (it.1 == b.1 && it.0 < b.0) {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

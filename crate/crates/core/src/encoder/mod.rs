//! Adaptive multi-head attention encoder.
//!
//! Regions are tokens and their time courses are token features. Each head
//! produces a row-stochastic attention matrix `A_h = softmax(Q_h K_hᵀ / √d)`;
//! heads are fused with softmax-normalised logits `α = softmax(a)` into
//! `A = Σ α_h A_h`. Node embeddings are `Z = (A · X W_V) W_O` and the pooled
//! embedding `z` is the column mean of `Z`.
//!
//! There is exactly one attention stage: no feed-forward sublayer, no
//! normalisation layers and no positional encoding.

mod fit;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{math, rng, Error, Result};

pub use fit::{fit_to_matrices, fit_to_target, normalize_target_rows, FitConfig, FitReport};

/// Head count and projection widths; the feature width comes from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderShape {
    pub heads: usize,
    pub head_dim: usize,
    pub value_dim: usize,
    pub out_dim: usize,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self { heads: 4, head_dim: 32, value_dim: 32, out_dim: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Per-head query projections, `T × d`.
    pub w_q: Vec<Matrix>,
    /// Per-head key projections, `T × d`.
    pub w_k: Vec<Matrix>,
    pub fusion_logits: Vec<f64>,
    /// Value projection, `T × d_v`.
    pub w_v: Matrix,
    /// Output projection, `d_v × d_out`.
    pub w_o: Matrix,
}

/// Gradients share the parameter layout.
pub type ParamGrads = EncoderParams;

impl EncoderParams {
    pub fn n_features(&self) -> usize {
        self.w_v.rows()
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q[0].cols()
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            heads: self.heads(),
            head_dim: self.head_dim(),
            value_dim: self.w_v.cols(),
            out_dim: self.w_o.cols(),
        }
    }

    pub fn scale(&self) -> f64 {
        1.0 / math::sqrt(self.head_dim() as f64)
    }

    /// Fusion weights `softmax(a)`; non-negative and summing to one.
    pub fn alpha(&self) -> Vec<f64> {
        math::softmax(&self.fusion_logits)
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            w_q: self.w_q.iter().map(z).collect(),
            w_k: self.w_k.iter().map(z).collect(),
            fusion_logits: vec![0.0; self.fusion_logits.len()],
            w_v: z(&self.w_v),
            w_o: z(&self.w_o),
        }
    }

    /// Every tensor in declaration order: `W_Q[h]`, `W_K[h]`, logits, `W_V`, `W_O`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.heads() + 3);
        out.extend(self.w_q.iter().map(Matrix::as_slice));
        out.extend(self.w_k.iter().map(Matrix::as_slice));
        out.push(&self.fusion_logits);
        out.push(self.w_v.as_slice());
        out.push(self.w_o.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.w_q.len() + 3);
        out.extend(self.w_q.iter_mut().map(Matrix::as_mut_slice));
        out.extend(self.w_k.iter_mut().map(Matrix::as_mut_slice));
        out.push(&mut self.fusion_logits);
        out.push(self.w_v.as_mut_slice());
        out.push(self.w_o.as_mut_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += s * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    /// FNV-1a over the bit patterns of every entry.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Glorot-uniform projections, zero fusion logits.
pub fn init_params(n_features: usize, shape: &EncoderShape, seed: u64) -> Result<EncoderParams> {
    let EncoderShape { heads, head_dim, value_dim, out_dim } = *shape;
    if n_features == 0 || heads == 0 || head_dim == 0 || value_dim == 0 || out_dim == 0 {
        return Err(Error::InvalidConfig("encoder dimensions must be at least 1".into()));
    }
    let mut r = rng::seeded(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let b = math::sqrt(6.0 / (rows + cols) as f64);
        Matrix::from_fn(rows, cols, |_, _| rng::uniform_range(&mut r, -b, b))
    };
    let w_q = (0..heads).map(|_| glorot(n_features, head_dim)).collect();
    let w_k = (0..heads).map(|_| glorot(n_features, head_dim)).collect();
    let w_v = glorot(n_features, value_dim);
    let w_o = glorot(value_dim, out_dim);
    Ok(EncoderParams { w_q, w_k, fusion_logits: vec![0.0; heads], w_v, w_o })
}

/// Forward intermediates kept for backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Matrix,
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    alpha: Vec<f64>,
    values: Matrix,
    attended: Matrix,
    fingerprint: u64,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub fused: Matrix,
    pub per_head: Vec<Matrix>,
    pub node_embeddings: Matrix,
    pub pooled: Vec<f64>,
    pub cache: ForwardCache,
}

/// Row-wise softmax in place.
fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        math::softmax_in_place(m.row_mut(i));
    }
}

/// Convex combination of head matrices with weights `softmax(logits)`.
pub fn fuse_heads(heads: &[Matrix], logits: &[f64]) -> Matrix {
    let alpha = math::softmax(logits);
    let (n, m) = heads[0].shape();
    let mut fused = Matrix::zeros(n, m);
    for (a, h) in alpha.iter().zip(heads) {
        fused.add_scaled(h, *a);
    }
    fused
}

pub fn forward(p: &EncoderParams, x: &Matrix) -> Result<EncoderOutput> {
    if x.cols() != p.n_features() {
        return Err(Error::DimensionMismatch { what: "time points", expected: p.n_features(), got: x.cols() });
    }
    let n = x.rows();
    let scale = p.scale();
    let alpha = p.alpha();
    let mut q = Vec::with_capacity(p.heads());
    let mut k = Vec::with_capacity(p.heads());
    let mut per_head = Vec::with_capacity(p.heads());
    let mut fused = Matrix::zeros(n, n);
    for h in 0..p.heads() {
        let qh = x.matmul(&p.w_q[h]);
        let kh = x.matmul(&p.w_k[h]);
        let mut a = qh.matmul_t(&kh);
        a.scale(scale);
        softmax_rows(&mut a);
        fused.add_scaled(&a, alpha[h]);
        q.push(qh);
        k.push(kh);
        per_head.push(a);
    }
    let values = x.matmul(&p.w_v);
    let attended = fused.matmul(&values);
    let node_embeddings = attended.matmul(&p.w_o);
    let pooled = column_mean(&node_embeddings);
    Ok(EncoderOutput {
        fused,
        per_head,
        node_embeddings,
        pooled,
        cache: ForwardCache { x: x.clone(), q, k, alpha, values, attended, fingerprint: p.fingerprint() },
    })
}

fn column_mean(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Gradients of `<grad_z, z> + <grad_a, A>` with respect to every parameter.
/// Either loss gradient may be absent.
pub fn backward(
    p: &EncoderParams,
    out: &EncoderOutput,
    grad_z: Option<&[f64]>,
    grad_a: Option<&Matrix>,
) -> Result<ParamGrads> {
    let c = &out.cache;
    if c.fingerprint != p.fingerprint() || c.q.len() != p.heads() {
        return Err(Error::StaleCache);
    }
    let n = c.x.rows();
    let mut g = p.zeros_like();

    let mut d_fused = Matrix::zeros(n, n);
    if let Some(gz) = grad_z {
        if gz.len() != p.w_o.cols() {
            return Err(Error::DimensionMismatch { what: "grad_z", expected: p.w_o.cols(), got: gz.len() });
        }
        // z = mean_rows(U W_O): every row of dZ is gz / n.
        let d_nodes = Matrix::from_fn(n, gz.len(), |_, j| gz[j] / n as f64);
        g.w_o = c.attended.t_matmul(&d_nodes);
        let d_attended = d_nodes.matmul_t(&p.w_o);
        d_fused = d_attended.matmul_t(&c.values);
        let d_values = out.fused.t_matmul(&d_attended);
        g.w_v = c.x.t_matmul(&d_values);
    }
    if let Some(ga) = grad_a {
        if ga.shape() != (n, n) {
            return Err(Error::DimensionMismatch { what: "grad_A", expected: n, got: ga.rows() });
        }
        d_fused.add_scaled(ga, 1.0);
    }

    let scale = p.scale();
    let d_alpha: Vec<f64> = out.per_head.iter().map(|a| d_fused.inner(a)).collect();
    let mean_d: f64 = c.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    for h in 0..p.heads() {
        g.fusion_logits[h] = c.alpha[h] * (d_alpha[h] - mean_d);

        let a = &out.per_head[h];
        let mut d_scores = Matrix::zeros(n, n);
        for i in 0..n {
            let (ar, dr) = (a.row(i), d_fused.row(i));
            let inner: f64 = ar.iter().zip(dr).map(|(x, y)| x * y).sum::<f64>() * c.alpha[h];
            for (j, s) in d_scores.row_mut(i).iter_mut().enumerate() {
                *s = ar[j] * (c.alpha[h] * dr[j] - inner) * scale;
            }
        }
        let d_q = d_scores.matmul(&c.k[h]);
        let d_k = d_scores.t_matmul(&c.q[h]);
        g.w_q[h] = c.x.t_matmul(&d_q);
        g.w_k[h] = c.x.t_matmul(&d_k);
    }
    Ok(g)
}

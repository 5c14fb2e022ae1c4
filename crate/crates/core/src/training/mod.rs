//! Identity-supervised contrastive training with Adam.
//!
//! Positives are ordered pairs of distinct segments from the same subject;
//! the negatives of an anchor are the batch members from other subjects.
//! After every epoch a full-dataset evaluation pass feeds each sample's
//! fused attention matrix to the SPS accumulator.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoder::{backward, forward, init_params, EncoderParams, EncoderShape, ParamGrads};
use crate::matrix::{dot, Matrix};
use crate::sps::{SpsAccumulator, SpsRecord};
use crate::{math, rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: ParamGrads,
    pub second: ParamGrads,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        Self { first: params.zeros_like(), second: params.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts before any
/// state is touched.
pub fn adam_step(p: &mut EncoderParams, g: &ParamGrads, s: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient("adam_step"));
    }
    if p.shape() != g.shape() || p.n_features() != g.n_features() {
        return Err(Error::DimensionMismatch { what: "gradient", expected: p.n_features(), got: g.n_features() });
    }
    s.step += 1;
    let c1 = 1.0 - math::powf(cfg.beta1, s.step as f64);
    let c2 = 1.0 - math::powf(cfg.beta2, s.step as f64);
    let tensors = p.tensors_mut().into_iter().zip(g.tensors());
    let moments = s.first.tensors_mut().into_iter().zip(s.second.tensors_mut());
    for ((param, grad), (m, v)) in tensors.zip(moments) {
        for i in 0..param.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            param[i] -= lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + cfg.eps);
        }
    }
    Ok(())
}

/// Contrastive loss over every ordered same-group pair, with cosine
/// similarity and temperature `tau`. Returns the mean loss and its gradient
/// with respect to each embedding.
pub fn contrastive_loss<G: PartialEq>(
    embeddings: &[Vec<f64>],
    groups: &[G],
    tau: f64,
    include_positive: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = embeddings.len();
    if groups.len() != n {
        return Err(Error::DimensionMismatch { what: "group labels", expected: n, got: groups.len() });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    if groups.iter().all(|g| *g == groups[0]) {
        return Err(Error::SingleSubject);
    }
    let norms: Vec<f64> = embeddings.iter().map(|z| math::sqrt(dot(z, z)).max(1e-12)).collect();
    let units: Vec<Vec<f64>> = embeddings.iter().zip(&norms).map(|(z, n)| z.iter().map(|v| v / n).collect()).collect();
    let sim = Matrix::from_fn(n, n, |i, j| dot(&units[i], &units[j]));

    let mut d_sim = Matrix::zeros(n, n);
    let mut loss = 0.0;
    let mut pairs = 0usize;
    let mut logits = Vec::with_capacity(n);
    let mut members = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..n {
            if i == j || groups[i] != groups[j] {
                continue;
            }
            logits.clear();
            members.clear();
            if include_positive {
                logits.push(sim[(i, j)] / tau);
                members.push(j);
            }
            for k in 0..n {
                if groups[k] != groups[i] {
                    logits.push(sim[(i, k)] / tau);
                    members.push(k);
                }
            }
            let lse = math::log_sum_exp(&logits);
            loss += lse - sim[(i, j)] / tau;
            d_sim[(i, j)] -= 1.0 / tau;
            for (&k, &l) in members.iter().zip(&logits) {
                d_sim[(i, k)] += math::exp(l - lse) / tau;
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::NoPositivePair);
    }
    let inv = 1.0 / pairs as f64;
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut d_units = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let g = d_sim[(i, j)] * inv;
            if g == 0.0 {
                continue;
            }
            for c in 0..dim {
                d_units[i][c] += g * units[j][c];
                d_units[j][c] += g * units[i][c];
            }
        }
    }
    let grads = d_units
        .iter()
        .zip(&units)
        .zip(&norms)
        .map(|((du, u), norm)| {
            let radial = dot(du, u);
            du.iter().zip(u).map(|(d, v)| (d - radial * v) / norm).collect()
        })
        .collect();
    Ok((loss * inv, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub temperature: f64,
    pub include_positive_in_denominator: bool,
    pub snapshot_every: usize,
    pub shape: EncoderShape,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            adam: AdamConfig::default(),
            temperature: 0.2,
            include_positive_in_denominator: true,
            snapshot_every: 1,
            shape: EncoderShape::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 2 {
            return Err(Error::InvalidConfig("epochs must be at least 2".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.batch_size < 3 {
            return Err(Error::InvalidConfig("batch_size must be at least 3".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidConfig("snapshot_every must be at least 1".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Contrastive loss of the evaluation pass over fixed batches.
    pub loss: f64,
    /// Mean of the training minibatch losses during the epoch.
    pub train_loss: f64,
    /// Mean squared Frobenius change of the fused attention, when a
    /// snapshot was taken this epoch.
    pub mean_perturbation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub sps: SpsRecord,
    pub trace: TrainTrace,
}

/// Subject-stratified batches: each subject's segments are shuffled and cut
/// into groups of two (a trailing odd segment joins the last group), groups
/// are shuffled and packed `max(2, batch_size / 2)` per batch. A final batch
/// with a single subject is merged into its predecessor.
pub fn subject_batches(subjects: &[(String, Vec<usize>)], batch_size: usize, r: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut units: Vec<(usize, Vec<usize>)> = Vec::new();
    for (s, (_, idx)) in subjects.iter().enumerate() {
        let mut idx = idx.clone();
        rng::shuffle(r, &mut idx);
        let mut chunks: Vec<Vec<usize>> = idx.chunks(2).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            let tail = chunks.pop().expect("non-empty");
            chunks.last_mut().expect("non-empty").extend(tail);
        }
        units.extend(chunks.into_iter().map(|c| (s, c)));
    }
    rng::shuffle(r, &mut units);
    let per_batch = (batch_size / 2).max(2);
    let mut batches: Vec<Vec<(usize, Vec<usize>)>> = Vec::new();
    for chunk in units.chunks(per_batch) {
        batches.push(chunk.to_vec());
    }
    if batches.len() > 1 {
        let last = batches.last().expect("non-empty");
        if last.iter().all(|(s, _)| *s == last[0].0) {
            let tail = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(tail);
        }
    }
    batches.into_iter().map(|b| b.into_iter().flat_map(|(_, c)| c).collect()).collect()
}

/// Evaluation-mode pass over the whole dataset: fused attention and pooled
/// embedding of every sample. Parameters are only borrowed.
pub fn snapshot_pass(params: &EncoderParams, d: &Dataset) -> Result<(Vec<Matrix>, Vec<Vec<f64>>)> {
    let mut fused = Vec::with_capacity(d.len());
    let mut pooled = Vec::with_capacity(d.len());
    for s in &d.samples {
        let out = forward(params, &s.data)?;
        fused.push(out.fused);
        pooled.push(out.pooled);
    }
    Ok((fused, pooled))
}

fn batch_loss(d: &Dataset, batch: &[usize], pooled: &[Vec<f64>], cfg: &TrainConfig) -> Result<Option<f64>> {
    let emb: Vec<Vec<f64>> = batch.iter().map(|&i| pooled[i].clone()).collect();
    let groups: Vec<&str> = batch.iter().map(|&i| d.samples[i].subject_id.as_str()).collect();
    match contrastive_loss(&emb, &groups, cfg.temperature, cfg.include_positive_in_denominator) {
        Ok((l, _)) => Ok(Some(l)),
        Err(Error::NoPositivePair | Error::SingleSubject) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    d.validate()?;
    let subjects = d.by_subject();
    if subjects.iter().filter(|(_, idx)| idx.len() >= 2).count() < 2 {
        return Err(Error::InvalidConfig("training needs two subjects with at least two segments".into()));
    }
    let t_len = d.samples[0].n_time();
    let mut params = init_params(t_len, &cfg.shape, rng::derive_seed(cfg.seed, 1))?;
    let mut adam = AdamState::new(&params);
    let mut shuffler = rng::stream(cfg.seed, 2);
    let eval_batches = subject_batches(&subjects, cfg.batch_size, &mut rng::stream(cfg.seed, 3));
    let ids: Vec<&str> = d.samples.iter().map(|s| s.sample_id.as_str()).collect();

    let mut acc = SpsAccumulator::new();
    let (initial, _) = snapshot_pass(&params, d)?;
    acc.update(ids.iter().copied().zip(initial.iter()))?;

    let mut trace = TrainTrace::default();
    for epoch in 1..=cfg.epochs {
        let mut train_losses = Vec::new();
        for batch in subject_batches(&subjects, cfg.batch_size, &mut shuffler) {
            let outputs = batch.iter().map(|&i| forward(&params, &d.samples[i].data)).collect::<Result<Vec<_>>>()?;
            let emb: Vec<Vec<f64>> = outputs.iter().map(|o| o.pooled.clone()).collect();
            let groups: Vec<&str> = batch.iter().map(|&i| d.samples[i].subject_id.as_str()).collect();
            let (loss, grads) = match contrastive_loss(&emb, &groups, cfg.temperature, cfg.include_positive_in_denominator) {
                Ok(v) => v,
                Err(Error::NoPositivePair | Error::SingleSubject) => continue,
                Err(e) => return Err(e),
            };
            let mut total = params.zeros_like();
            for (out, gz) in outputs.iter().zip(&grads) {
                total.add_scaled(&backward(&params, out, Some(gz), None)?, 1.0);
            }
            adam_step(&mut params, &total, &mut adam, cfg.lr, &cfg.adam)?;
            train_losses.push(loss);
        }

        let (fused, pooled) = snapshot_pass(&params, d)?;
        let mut eval_losses = Vec::new();
        for batch in &eval_batches {
            if let Some(l) = batch_loss(d, batch, &pooled, cfg)? {
                eval_losses.push(l);
            }
        }
        let mean_perturbation = if epoch % cfg.snapshot_every == 0 {
            Some(acc.update(ids.iter().copied().zip(fused.iter()))?)
        } else {
            None
        };
        trace.rows.push(TraceRow {
            epoch,
            loss: math::mean(&eval_losses),
            train_loss: math::mean(&train_losses),
            mean_perturbation,
        });
    }
    Ok(TrainOutcome { params, sps: acc.finalize()?, trace })
}

/// Per-sample fused attention keyed by sample id.
pub fn fused_by_id(d: &Dataset, fused: Vec<Matrix>) -> BTreeMap<String, Matrix> {
    d.samples.iter().map(|s| s.sample_id.clone()).zip(fused).collect()
}

#[cfg(test)]
mod tests;

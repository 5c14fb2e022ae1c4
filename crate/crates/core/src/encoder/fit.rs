//! Supervised fitting of the fused attention matrix to an SPI target.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{backward, forward, init_params, EncoderParams, EncoderShape};
use crate::dataset::Dataset;
use crate::matrix::Matrix;
use crate::spi::{compute_fc, SpiOperator};
use crate::training::{adam_step, AdamConfig, AdamState};
use crate::{math, rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub shape: EncoderShape,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub patience: usize,
    /// Train / validation fractions of subjects; the rest is test.
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            shape: EncoderShape::default(),
            max_epochs: 150,
            batch_size: 16,
            lr: 5e-3,
            adam: AdamConfig::default(),
            patience: 10,
            train_frac: 0.7,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

/// Start/end/test MSE in the row-normalised target space, plus the same
/// errors mapped back to the operator's raw scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub operator: String,
    pub train_mse_start: f64,
    pub train_mse_end: f64,
    pub val_mse_best: f64,
    pub test_mse: f64,
    pub raw_train_mse_end: f64,
    pub raw_test_mse: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Per-row map into the row-stochastic set: subtract the row minimum, divide
/// by the row sum. Rows that become all-zero map to uniform `1/N`. Returns the
/// normalised matrix and the `(min, sum)` pair of each row.
pub fn normalize_target_rows(raw: &Matrix) -> (Matrix, Vec<(f64, f64)>) {
    let n = raw.cols();
    let mut out = raw.clone();
    let mut affine = Vec::with_capacity(raw.rows());
    for i in 0..raw.rows() {
        let row = out.row_mut(i);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        row.iter_mut().for_each(|v| *v -= min);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / n as f64);
        }
        affine.push((min, sum));
    }
    (out, affine)
}

struct Target {
    input: Matrix,
    normalized_sym: Matrix,
    raw_sym: Matrix,
    affine: Vec<(f64, f64)>,
}

fn sym_mse(a: &Matrix, target_sym: &Matrix) -> f64 {
    a.symmetrized().frobenius_dist_sq(target_sym) / a.as_slice().len() as f64
}

/// Raw-scale error: undo the row map on `A`, then compare symmetrised forms.
fn raw_mse(a: &Matrix, t: &Target) -> f64 {
    let mut back = a.clone();
    for (i, &(min, sum)) in t.affine.iter().enumerate() {
        let s = if sum > 0.0 { sum } else { 0.0 };
        back.row_mut(i).iter_mut().for_each(|v| *v = *v * s + min);
    }
    sym_mse(&back, &t.raw_sym)
}

fn mean_over(p: &EncoderParams, set: &[Target], raw: bool) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in set {
        let a = forward(p, &t.input)?.fused;
        total += if raw { raw_mse(&a, t) } else { sym_mse(&a, &t.normalized_sym) };
    }
    Ok(total / set.len() as f64)
}

/// Subject-level split into (train, val, test) index lists.
fn split_subjects(d: &Dataset, cfg: &FitConfig) -> Result<[Vec<usize>; 3]> {
    let mut groups = d.by_subject();
    if groups.len() < 3 {
        return Err(Error::InvalidConfig("fitting needs at least three subjects".into()));
    }
    rng::shuffle(&mut rng::stream(cfg.seed, 17), &mut groups);
    let s = groups.len();
    let n_val = (math::round(cfg.val_frac * s as f64) as usize).max(1);
    let n_train = (math::round(cfg.train_frac * s as f64) as usize).clamp(1, s - n_val - 1);
    let take = |range: core::ops::Range<usize>| -> Vec<usize> {
        groups[range].iter().flat_map(|(_, idx)| idx.iter().copied()).collect()
    };
    Ok([take(0..n_train), take(n_train..n_train + n_val), take(n_train + n_val..s)])
}

/// Minimises symmetrised MSE between the fused attention and the
/// row-normalised target FC, with early stopping on validation MSE.
pub fn fit_to_target(d: &Dataset, target_op: &SpiOperator, cfg: &FitConfig) -> Result<FitReport> {
    let raw = d.samples.iter().map(|s| compute_fc(target_op, s).map(|fc| fc.values)).collect::<Result<Vec<_>>>()?;
    fit_to_matrices(d, &target_op.name, raw, cfg)
}

/// As [`fit_to_target`] with precomputed raw targets, one per sample.
pub fn fit_to_matrices(d: &Dataset, name: &str, raw_targets: Vec<Matrix>, cfg: &FitConfig) -> Result<FitReport> {
    d.validate()?;
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and max_epochs must be positive".into()));
    }
    if raw_targets.len() != d.len() {
        return Err(Error::DimensionMismatch { what: "targets", expected: d.len(), got: raw_targets.len() });
    }
    let mut targets = Vec::with_capacity(d.len());
    for (s, raw) in d.samples.iter().zip(raw_targets) {
        let (norm, affine) = normalize_target_rows(&raw);
        targets.push(Some(Target {
            input: s.data.clone(),
            normalized_sym: norm.symmetrized(),
            raw_sym: raw.symmetrized(),
            affine,
        }));
    }
    let [train_idx, val_idx, test_idx] = split_subjects(d, cfg)?;
    let mut collect = |idx: &[usize]| -> Vec<Target> { idx.iter().filter_map(|&i| targets[i].take()).collect() };
    let train = collect(&train_idx);
    let val = collect(&val_idx);
    let test = collect(&test_idx);

    let t_len = d.samples[0].n_time();
    let mut params = init_params(t_len, &cfg.shape, rng::derive_seed(cfg.seed, 1))?;
    let mut adam = AdamState::new(&params);
    let train_mse_start = mean_over(&params, &train, false)?;

    let mut best = (mean_over(&params, &val, false)?, params.clone());
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffler = rng::stream(cfg.seed, 23);
    for _ in 0..cfg.max_epochs {
        epochs_run += 1;
        rng::shuffle(&mut shuffler, &mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let t = &train[i];
                let out = forward(&params, &t.input)?;
                let n2 = (t.input.rows() * t.input.rows()) as f64;
                // d/dA of mean((A+Aᵀ)/2 - S)²: the residual is symmetric.
                let mut g = out.fused.symmetrized().sub(&t.normalized_sym);
                g.scale(2.0 / (n2 * batch.len() as f64));
                grads.add_scaled(&backward(&params, &out, None, Some(&g))?, 1.0);
            }
            adam_step(&mut params, &grads, &mut adam, cfg.lr, &cfg.adam)?;
        }
        let val_mse = mean_over(&params, &val, false)?;
        if val_mse < best.0 * (1.0 - 1e-9) {
            best = (val_mse, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (val_mse_best, best_params) = best;
    Ok(FitReport {
        operator: name.into(),
        train_mse_start,
        train_mse_end: mean_over(&best_params, &train, false)?,
        val_mse_best,
        test_mse: mean_over(&best_params, &test, false)?,
        raw_train_mse_end: mean_over(&best_params, &train, true)?,
        raw_test_mse: mean_over(&best_params, &test, true)?,
        epochs_run,
        stopped_early,
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
    })
}

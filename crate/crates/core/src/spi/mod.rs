//! Statistical pairwise interaction (SPI) operators.
//!
//! Each operator maps a sample's regions × time matrix to a symmetric
//! regions × regions FC matrix. Degenerate rows (zero variance, zero norm)
//! never produce NaN: their off-diagonal entries are set to 0 and the row
//! index is reported in [`FcMatrix::degenerate_rows`].

mod spectral;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TimeSeriesSample};
use crate::matrix::Matrix;
use crate::{math, Error, Result};

pub use spectral::{analytic_signal, Dft, WelchPlan};

/// Spectral operators need enough points for several Welch segments.
pub const MIN_SPECTRAL_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpiKind {
    Covariance,
    Precision,
    Correlation,
    RankCorrelation,
    CrossCorrelation,
    Distance,
    Spectral,
    Phase,
    Information,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiOperator {
    pub name: String,
    pub kind: SpiKind,
    pub params: BTreeMap<String, f64>,
}

impl SpiOperator {
    fn new(name: &str, kind: SpiKind, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            kind,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }
}

/// Parameter override applied on top of the default registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamOverride {
    pub operator: String,
    pub key: String,
    pub value: f64,
}

/// Sentinel for `lag_max`: resolved to `T / 4` at compute time.
const AUTO: f64 = -1.0;

fn defaults() -> Vec<SpiOperator> {
    use SpiKind::*;
    let band = [("f_lo", 0.0), ("f_hi", 1.0)];
    vec![
        SpiOperator::new("cov_empirical", Covariance, &[]),
        SpiOperator::new("cov_shrunk", Covariance, &[("shrinkage", 0.1)]),
        SpiOperator::new("prec", Precision, &[("ridge", 1e-3)]),
        SpiOperator::new("pearson", Correlation, &[]),
        SpiOperator::new("pearson_sq", Correlation, &[]),
        SpiOperator::new("spearman", RankCorrelation, &[]),
        SpiOperator::new("kendall", RankCorrelation, &[]),
        SpiOperator::new("xcorr_max", CrossCorrelation, &[("lag_max", AUTO)]),
        SpiOperator::new("xcorr_mean", CrossCorrelation, &[("lag_max", AUTO)]),
        SpiOperator::new("pdist_euclidean", Distance, &[]),
        SpiOperator::new("pdist_cityblock", Distance, &[]),
        SpiOperator::new("pdist_cosine", Distance, &[]),
        SpiOperator::new("pdist_chebyshev", Distance, &[]),
        SpiOperator::new("cohmag_mean", Spectral, &band),
        SpiOperator::new("icoh_mean", Spectral, &band),
        SpiOperator::new("plv_mean", Phase, &[]),
        SpiOperator::new("pli_mean", Phase, &[]),
        SpiOperator::new("wpli_mean", Phase, &[]),
        SpiOperator::new("mi_gaussian", Information, &[]),
        SpiOperator::new("bary_euclidean_mean", Distance, &[]),
    ]
}

/// The default 20-operator registry with `overrides` applied. Overrides may
/// only touch parameters an operator already declares.
pub fn registry(overrides: &[ParamOverride]) -> Result<Vec<SpiOperator>> {
    let mut ops = defaults();
    for o in overrides {
        let op = ops
            .iter_mut()
            .find(|op| op.name == o.operator)
            .ok_or_else(|| Error::UnknownOperator(o.operator.clone()))?;
        let slot = op.params.get_mut(&o.key).ok_or_else(|| {
            Error::InvalidConfig(alloc::format!("operator `{}` has no parameter `{}`", o.operator, o.key))
        })?;
        if !o.value.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!("non-finite value for `{}`", o.key)));
        }
        *slot = o.value;
    }
    for op in &ops {
        validate_params(op)?;
    }
    Ok(ops)
}

fn validate_params(op: &SpiOperator) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidConfig(alloc::format!("{}: {m}", op.name)));
    if let Some(s) = op.param("shrinkage") {
        if !(0.0..=1.0).contains(&s) {
            return bad("shrinkage must lie in [0, 1]");
        }
    }
    if let Some(r) = op.param("ridge") {
        if r <= 0.0 {
            return bad("ridge must be positive");
        }
    }
    if let Some(l) = op.param("lag_max") {
        if l != AUTO && (l < 0.0 || l.fract() != 0.0) {
            return bad("lag_max must be a non-negative integer");
        }
    }
    if let (Some(lo), Some(hi)) = (op.param("f_lo"), op.param("f_hi")) {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("band must satisfy 0 <= f_lo < f_hi <= 1");
        }
    }
    Ok(())
}

/// Looks up operators by name in the default registry, keeping the order given.
pub fn select_operators(names: &[&str]) -> Result<Vec<SpiOperator>> {
    let all = registry(&[])?;
    names
        .iter()
        .map(|n| all.iter().find(|op| op.name == *n).cloned().ok_or_else(|| Error::UnknownOperator(n.to_string())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcMatrix {
    pub operator_name: String,
    pub sample_id: String,
    pub values: Matrix,
    /// Rows whose off-diagonal entries were sanitised to 0.
    pub degenerate_rows: Vec<usize>,
}

pub fn compute_fc(op: &SpiOperator, x: &TimeSeriesSample) -> Result<FcMatrix> {
    let data = &x.data;
    if !data.is_finite() {
        return Err(Error::InvalidSample { id: x.sample_id.clone(), reason: "non-finite entry".into() });
    }
    let (values, degenerate) = compute_matrix(op, data)?;
    debug_assert!(values.is_finite());
    Ok(FcMatrix {
        operator_name: op.name.clone(),
        sample_id: x.sample_id.clone(),
        values,
        degenerate_rows: degenerate.into_iter().collect(),
    })
}

type Computed = (Matrix, BTreeSet<usize>);

/// Operator dispatch on a bare regions × time matrix.
pub fn compute_matrix(op: &SpiOperator, x: &Matrix) -> Result<Computed> {
    let t = x.cols();
    match op.name.as_str() {
        "cov_empirical" => Ok((covariance(x), BTreeSet::new())),
        "cov_shrunk" => {
            let s = op.param("shrinkage").unwrap_or(0.1);
            let cov = covariance(x);
            let mu = cov.trace() / x.rows() as f64;
            let shrunk = Matrix::from_fn(x.rows(), x.rows(), |i, j| {
                (1.0 - s) * cov[(i, j)] + if i == j { s * mu } else { 0.0 }
            });
            Ok((shrunk, BTreeSet::new()))
        }
        "prec" => precision(x, op.param("ridge").unwrap_or(1e-3)),
        "pearson" => Ok(correlation(&standardized_rows(x))),
        "pearson_sq" => {
            let (mut r, d) = correlation(&standardized_rows(x));
            r.as_mut_slice().iter_mut().for_each(|v| *v *= *v);
            Ok((r, d))
        }
        "spearman" => {
            let ranked = Matrix::from_fn(x.rows(), t, {
                let ranks: Vec<Vec<f64>> = x.row_iter().map(math::average_ranks).collect();
                move |i, j| ranks[i][j]
            });
            Ok(correlation(&standardized_rows(&ranked)))
        }
        "kendall" => Ok(kendall(x)),
        "xcorr_max" | "xcorr_mean" => {
            let lag = match op.param("lag_max") {
                Some(l) if l != AUTO => l as usize,
                _ => t / 4,
            }
            .min(t - 1);
            Ok(cross_correlation(x, lag, op.name == "xcorr_max"))
        }
        "pdist_euclidean" => Ok(distance(x, |a, b| math::sqrt(sq_dist(a, b)))),
        "pdist_cityblock" => Ok(distance(x, |a, b| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum())),
        "pdist_chebyshev" => Ok(distance(x, |a, b| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))),
        "pdist_cosine" => Ok(cosine_distance(x)),
        "bary_euclidean_mean" => Ok(distance(x, |a, b| {
            let centre: Vec<f64> = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
            0.5 * (math::sqrt(sq_dist(a, &centre)) + math::sqrt(sq_dist(b, &centre)))
        })),
        "cohmag_mean" | "icoh_mean" => {
            if t < MIN_SPECTRAL_LEN {
                return Err(Error::SeriesTooShort { op: op.name.clone(), need: MIN_SPECTRAL_LEN, got: t });
            }
            let band = (op.param("f_lo").unwrap_or(0.0), op.param("f_hi").unwrap_or(1.0));
            Ok(coherence(x, band, op.name == "icoh_mean"))
        }
        "plv_mean" | "pli_mean" | "wpli_mean" => Ok(phase_sync(x, &op.name)),
        "mi_gaussian" => {
            let (mut r, d) = correlation(&standardized_rows(x));
            let n = r.rows();
            for i in 0..n {
                for j in 0..n {
                    r[(i, j)] = if i == j {
                        0.0
                    } else {
                        let c = r[(i, j)].abs().min(1.0 - 1e-12);
                        -0.5 * math::ln(1.0 - c * c)
                    };
                }
            }
            Ok((r, d))
        }
        other => Err(Error::UnknownOperator(other.to_string())),
    }
}

fn covariance(x: &Matrix) -> Matrix {
    let n = x.rows();
    let t = x.cols();
    let centred: Vec<Vec<f64>> = x
        .row_iter()
        .map(|r| {
            let m = math::mean(r);
            r.iter().map(|v| v - m).collect()
        })
        .collect();
    let denom = (t - 1).max(1) as f64;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = crate::matrix::dot(&centred[i], &centred[j]) / denom;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn precision(x: &Matrix, ridge: f64) -> Result<Computed> {
    let n = x.rows();
    let mut cov = covariance(x);
    let lambda = (ridge * cov.trace() / n as f64).max(1e-12);
    for i in 0..n {
        cov[(i, i)] += lambda;
    }
    match cov.spd_inverse() {
        Some(p) => Ok((p.symmetrized(), BTreeSet::new())),
        None => Ok((Matrix::zeros(n, n), (0..n).collect())),
    }
}

/// Rows scaled to zero mean and unit population variance; `None` marks a
/// constant row.
fn standardized_rows(x: &Matrix) -> Vec<Option<Vec<f64>>> {
    x.row_iter()
        .map(|r| {
            let m = math::mean(r);
            let sd = math::std_dev(r, 0);
            (sd > 0.0 && sd.is_finite()).then(|| r.iter().map(|v| (v - m) / sd).collect())
        })
        .collect()
}

fn correlation(z: &[Option<Vec<f64>>]) -> Computed {
    let n = z.len();
    let mut out = Matrix::identity(n);
    let mut degenerate = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = match (&z[i], &z[j]) {
                (Some(a), Some(b)) => (crate::matrix::dot(a, b) / a.len() as f64).clamp(-1.0, 1.0),
                _ => 0.0,
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        if z[i].is_none() {
            degenerate.insert(i);
        }
    }
    (out, degenerate)
}

fn kendall(x: &Matrix) -> Computed {
    let n = x.rows();
    let t = x.cols();
    let mut out = Matrix::identity(n);
    let mut degenerate = BTreeSet::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (x.row(i), x.row(j));
            let (mut conc, mut disc, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
            for p in 0..t {
                for q in (p + 1)..t {
                    let da = a[p] - a[q];
                    let db = b[p] - b[q];
                    if da == 0.0 {
                        ties_a += 1;
                    }
                    if db == 0.0 {
                        ties_b += 1;
                    }
                    if da != 0.0 && db != 0.0 {
                        if (da > 0.0) == (db > 0.0) {
                            conc += 1;
                        } else {
                            disc += 1;
                        }
                    }
                }
            }
            let total = (t * (t - 1) / 2) as i64;
            let denom = ((total - ties_a) as f64) * ((total - ties_b) as f64);
            let v = if denom > 0.0 {
                ((conc - disc) as f64 / math::sqrt(denom)).clamp(-1.0, 1.0)
            } else {
                if ties_a == total {
                    degenerate.insert(i);
                }
                if ties_b == total {
                    degenerate.insert(j);
                }
                0.0
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, degenerate)
}

/// Normalised cross-correlation `r(l) = (1/T) Σ z_i(t) z_j(t+l)` over
/// `|l| <= lag_max`, reduced by max or mean of `|r(l)|`.
fn cross_correlation(x: &Matrix, lag_max: usize, take_max: bool) -> Computed {
    let z = standardized_rows(x);
    let n = z.len();
    let t = x.cols();
    let mut out = Matrix::identity(n);
    let mut degenerate = BTreeSet::new();
    for i in 0..n {
        if z[i].is_none() {
            degenerate.insert(i);
        }
        for j in (i + 1)..n {
            let v = match (&z[i], &z[j]) {
                (Some(a), Some(b)) => {
                    let at_lag = |l: usize, p: &[f64], q: &[f64]| -> f64 {
                        (0..t - l).map(|s| p[s] * q[s + l]).sum::<f64>() / t as f64
                    };
                    let mut vals = Vec::with_capacity(2 * lag_max + 1);
                    vals.push(at_lag(0, a, b).abs());
                    for l in 1..=lag_max {
                        vals.push(at_lag(l, a, b).abs());
                        vals.push(at_lag(l, b, a).abs());
                    }
                    if take_max {
                        vals.iter().copied().fold(0.0, f64::max).min(1.0)
                    } else {
                        math::mean(&vals)
                    }
                }
                _ => 0.0,
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, degenerate)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn distance(x: &Matrix, metric: impl Fn(&[f64], &[f64]) -> f64) -> Computed {
    let n = x.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = metric(x.row(i), x.row(j));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, BTreeSet::new())
}

fn cosine_distance(x: &Matrix) -> Computed {
    let n = x.rows();
    let norms: Vec<f64> = x.row_iter().map(|r| math::sqrt(crate::matrix::dot(r, r))).collect();
    let mut out = Matrix::zeros(n, n);
    let degenerate: BTreeSet<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let cos = crate::matrix::dot(x.row(i), x.row(j)) / (norms[i] * norms[j]);
            let v = 1.0 - cos.clamp(-1.0, 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, degenerate)
}

fn coherence(x: &Matrix, (f_lo, f_hi): (f64, f64), imaginary: bool) -> Computed {
    let n = x.rows();
    let plan = WelchPlan::for_length(x.cols());
    let bins = plan.bins(f_lo, f_hi);
    let rows: Vec<&[f64]> = x.row_iter().collect();
    let segs = spectral::welch_segments(&rows, &plan, &bins);
    let auto: Vec<Vec<f64>> = segs.iter().map(|s| spectral::cross_spectrum(s, s).iter().map(|c| c.re).collect()).collect();
    let mut out = if imaginary { Matrix::zeros(n, n) } else { Matrix::identity(n) };
    let mut degenerate = BTreeSet::new();
    for i in 0..n {
        if auto[i].iter().all(|&p| p <= 0.0) {
            degenerate.insert(i);
        }
        for j in (i + 1)..n {
            let cross = spectral::cross_spectrum(&segs[i], &segs[j]);
            let mut acc = 0.0;
            let mut used = 0usize;
            for (k, c) in cross.iter().enumerate() {
                let denom = math::sqrt(auto[i][k] * auto[j][k]);
                if denom > 0.0 {
                    let part = if imaginary { c.im.abs() } else { spectral::abs(*c) };
                    acc += (part / denom).min(1.0);
                }
                used += 1;
            }
            let v = if used > 0 { acc / used as f64 } else { 0.0 };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, degenerate)
}

fn phase_sync(x: &Matrix, which: &str) -> Computed {
    let n = x.rows();
    let t = x.cols();
    let dft = Dft::new(t);
    let z: Vec<Vec<spectral::C64>> = x.row_iter().map(|r| analytic_signal(r, &dft)).collect();
    let energy: Vec<f64> = z.iter().map(|zi| zi.iter().map(|c| c.norm_sqr()).sum()).collect();
    let mut out = if which == "plv_mean" { Matrix::identity(n) } else { Matrix::zeros(n, n) };
    let degenerate: BTreeSet<usize> = (0..n).filter(|&i| energy[i] == 0.0).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if energy[i] == 0.0 || energy[j] == 0.0 {
                continue;
            }
            let cross: Vec<spectral::C64> = z[i].iter().zip(&z[j]).map(|(a, b)| a * b.conj()).collect();
            let v = match which {
                "plv_mean" => {
                    let (mut re, mut im) = (0.0, 0.0);
                    for c in &cross {
                        let m = spectral::abs(*c);
                        if m > 0.0 {
                            re += c.re / m;
                            im += c.im / m;
                        }
                    }
                    (math::sqrt(re * re + im * im) / t as f64).min(1.0)
                }
                "pli_mean" => {
                    let s: f64 = cross.iter().map(|c| sign(c.im)).sum();
                    (s / t as f64).abs()
                }
                _ => {
                    let num: f64 = cross.iter().map(|c| c.im).sum();
                    let den: f64 = cross.iter().map(|c| c.im.abs()).sum();
                    if den > 0.0 {
                        num.abs() / den
                    } else {
                        0.0
                    }
                }
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    (out, degenerate)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// In-memory FC store keyed by operator then sample id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FcTable {
    entries: BTreeMap<String, BTreeMap<String, Matrix>>,
}

impl FcTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, operator: &str, sample_id: &str, values: Matrix) {
        self.entries.entry(operator.into()).or_default().insert(sample_id.into(), values);
    }

    pub fn get(&self, operator: &str, sample_id: &str) -> Result<&Matrix> {
        self.entries
            .get(operator)
            .and_then(|m| m.get(sample_id))
            .ok_or_else(|| Error::MissingFc { op: operator.into(), sample: sample_id.into() })
    }

    pub fn operators(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Failure of one (operator, sample) pair during batch computation.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFailure {
    pub operator: String,
    pub sample_id: String,
    pub error: Error,
}

/// Computes every (operator, sample) pair in memory. Per-pair failures are
/// collected rather than aborting the batch.
pub fn compute_table(d: &Dataset, ops: &[SpiOperator]) -> (FcTable, Vec<PairFailure>) {
    let mut table = FcTable::new();
    let mut failures = Vec::new();
    for op in ops {
        for s in &d.samples {
            match compute_fc(op, s) {
                Ok(fc) => table.insert(&op.name, &s.sample_id, fc.values),
                Err(error) => failures.push(PairFailure { operator: op.name.clone(), sample_id: s.sample_id.clone(), error }),
            }
        }
    }
    (table, failures)
}

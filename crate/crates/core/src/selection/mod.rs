//! Core-set selectors: SPS top-k, density-balanced SPS sampling, and the
//! random and k-means baselines.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::spi::FcTable;
use crate::sps::SpsRecord;
use crate::{math, rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreSet {
    pub method: String,
    pub ratio: f64,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, f64>,
    /// Transition count of the SPS record the selection was drawn from.
    pub sps_epochs: Option<usize>,
    pub sample_ids: Vec<String>,
}

impl CoreSet {
    fn new(method: &str, pool_size: usize, seed: Option<u64>, sample_ids: Vec<String>) -> Self {
        let ratio = if pool_size == 0 { 0.0 } else { sample_ids.len() as f64 / pool_size as f64 };
        Self { method: method.into(), ratio, seed, params: BTreeMap::new(), sps_epochs: None, sample_ids }
    }
}

/// Core-set size for a ratio of the full dataset, at least one sample.
pub fn target_size(ratio: f64, n: usize) -> usize {
    (math::round(ratio * n as f64) as usize).clamp(1, n.max(1))
}

fn check_budget(m: usize, available: usize) -> Result<()> {
    if m > available {
        return Err(Error::PoolExhausted { requested: m, available });
    }
    Ok(())
}

/// The `m` lowest-SPS samples, ties broken by sample id.
pub fn select_topk_sps(sps: &SpsRecord, m: usize) -> Result<CoreSet> {
    check_budget(m, sps.len())?;
    let ids = sps.ascending().into_iter().take(m).map(|(id, _)| id.to_string()).collect();
    let mut cs = CoreSet::new("sclcs", sps.len(), None, ids);
    cs.sps_epochs = Some(sps.epochs);
    Ok(cs)
}

/// Bandwidth choice for the SPS density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Silverman,
    Fixed(f64),
}

pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// `0.9 · min(σ, IQR/1.34) · n^(-1/5)`, floored at [`BANDWIDTH_FLOOR`]. When
/// one spread measure is zero the other is used.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return BANDWIDTH_FLOOR;
    }
    let sd = math::std_dev(values, 1);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (math::quantile_sorted(&sorted, 0.75) - math::quantile_sorted(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    (0.9 * spread * math::powf(n as f64, -0.2)).max(BANDWIDTH_FLOOR)
}

/// Gaussian KDE density `(1/(n h √(2π))) Σ exp(-(q - v_i)² / (2h²))`.
pub fn kde_density(values: &[f64], bandwidth: f64, query: f64) -> f64 {
    let h = bandwidth.max(BANDWIDTH_FLOOR);
    let norm = 1.0 / (values.len() as f64 * h * math::sqrt(2.0 * core::f64::consts::PI));
    norm * values.iter().map(|v| math::exp(-(query - v) * (query - v) / (2.0 * h * h))).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub values: Vec<f64>,
    pub bandwidth: f64,
    pub eps_reg: f64,
}

impl DensityEstimate {
    pub fn fit(values: &[f64], rule: BandwidthRule, eps_reg: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("density source values"));
        }
        let bandwidth = match rule {
            BandwidthRule::Silverman => silverman_bandwidth(values),
            BandwidthRule::Fixed(h) => h.max(BANDWIDTH_FLOOR),
        };
        Ok(Self { values: values.to_vec(), bandwidth, eps_reg })
    }

    pub fn density(&self, q: f64) -> f64 {
        kde_density(&self.values, self.bandwidth, q)
    }

    /// Normalised inverse-density weights `1/(ρ + ε)` at the source values.
    pub fn inverse_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.values.iter().map(|&v| 1.0 / (self.density(v) + self.eps_reg)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

/// Sequential weighted draws without replacement, renormalising the
/// remaining weights after each draw. Returns indices in draw order.
pub fn weighted_sample_without_replacement(weights: &[f64], m: usize, r: &mut rng::Rng) -> Result<Vec<usize>> {
    check_budget(m, weights.len())?;
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidConfig("sampling weights must be finite and non-negative".into()));
    }
    let mut remaining: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let pick = if total > 0.0 {
            let mut u = rng::uniform(r) * total;
            let mut chosen = remaining.len() - 1;
            for (pos, (_, w)) in remaining.iter().enumerate() {
                if u < *w {
                    chosen = pos;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng::below(r, remaining.len())
        };
        out.push(remaining.remove(pick).0);
    }
    Ok(out)
}

/// Samples whose score is at most the type-7 `(1 - β)` quantile.
pub fn stable_pool(scores: &BTreeMap<String, f64>, beta: f64) -> Result<Vec<(&str, f64)>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidConfig("beta must lie in [0, 1)".into()));
    }
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    if sorted.is_empty() {
        return Err(Error::Empty("score map"));
    }
    sorted.sort_by(f64::total_cmp);
    let cut = math::quantile_sorted(&sorted, 1.0 - beta);
    Ok(scores.iter().filter(|(_, &s)| s <= cut).map(|(k, &s)| (k.as_str(), s)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityParams {
    pub beta: f64,
    pub eps_reg: f64,
    pub bandwidth: BandwidthRule,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self { beta: 0.2, eps_reg: 1e-8, bandwidth: BandwidthRule::Silverman }
    }
}

/// Density-balanced selection over any score map (SPS by default): β-quantile
/// filter, Gaussian KDE on the surviving scores, inverse-density weights,
/// sequential weighted sampling without replacement.
pub fn select_density_balanced_scores(
    scores: &BTreeMap<String, f64>,
    m: usize,
    params: &DensityParams,
    seed: u64,
) -> Result<CoreSet> {
    let pool = stable_pool(scores, params.beta)?;
    if pool.is_empty() {
        return Err(Error::Empty("stable pool"));
    }
    check_budget(m, pool.len())?;
    let values: Vec<f64> = pool.iter().map(|(_, s)| *s).collect();
    let kde = DensityEstimate::fit(&values, params.bandwidth, params.eps_reg)?;
    let weights = kde.inverse_weights();
    let picks = weighted_sample_without_replacement(&weights, m, &mut rng::seeded(seed))?;
    let ids = picks.into_iter().map(|i| pool[i].0.to_string()).collect();
    let mut cs = CoreSet::new("sclcs-dense", scores.len(), Some(seed), ids);
    cs.params.insert("beta".into(), params.beta);
    cs.params.insert("bandwidth".into(), kde.bandwidth);
    cs.params.insert("eps_reg".into(), params.eps_reg);
    cs.params.insert("pool_size".into(), pool.len() as f64);
    Ok(cs)
}

pub fn select_density_balanced(sps: &SpsRecord, m: usize, params: &DensityParams, seed: u64) -> Result<CoreSet> {
    let mut cs = select_density_balanced_scores(&sps.scores, m, params, seed)?;
    cs.sps_epochs = Some(sps.epochs);
    Ok(cs)
}

/// Uniform sampling without replacement.
pub fn select_random(ids: &[String], m: usize, seed: u64) -> Result<CoreSet> {
    check_budget(m, ids.len())?;
    let picks = rand::seq::index::sample(&mut rng::seeded(seed), ids.len(), m);
    let chosen = picks.into_iter().map(|i| ids[i].clone()).collect();
    Ok(CoreSet::new("random", ids.len(), Some(seed), chosen))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub const KMEANS_MAX_ITER: usize = 50;
pub const KMEANS_REL_TOL: f64 = 1e-6;

/// Lloyd's algorithm with k-means++ seeding. Returns the centroids.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let distinct: BTreeSet<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    if k == 0 || k > distinct.len() {
        return Err(Error::PoolExhausted { requested: k, available: distinct.len() });
    }
    let mut r = rng::seeded(seed);
    let mut centroids = vec![points[rng::below(&mut r, points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = weighted_sample_without_replacement(&nearest, 1, &mut r)?[0];
        centroids.push(points[next].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut assign = vec![0usize; points.len()];
    let mut previous = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        let mut inertia = 0.0;
        for (a, p) in assign.iter_mut().zip(points) {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(c, cent)| (c, sq_dist(p, cent)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("k >= 1");
            *a = best;
            inertia += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Empty cluster: restart it at the point worst served now.
                let far = (0..points.len())
                    .max_by(|&x, &y| sq_dist(&points[x], &centroids[assign[x]]).total_cmp(&sq_dist(&points[y], &centroids[assign[y]])))
                    .expect("non-empty");
                centroids[c] = points[far].clone();
            }
        }
        let converged = previous.is_finite() && (previous - inertia).abs() <= KMEANS_REL_TOL * previous.max(f64::MIN_POSITIVE);
        previous = inertia;
        if converged {
            break;
        }
    }
    Ok(centroids)
}

/// k-means baseline on the strict upper triangle of each sample's reference
/// FC. The sample nearest each centroid is chosen; if it was already taken
/// the next nearest free sample is used.
pub fn select_kmeans(table: &FcTable, reference_op: &str, ids: &[String], k: usize, seed: u64) -> Result<CoreSet> {
    check_budget(k, ids.len())?;
    let points = ids.iter().map(|id| table.get(reference_op, id).map(|m| m.upper_triangle())).collect::<Result<Vec<_>>>()?;
    let centroids = kmeans(&points, k, seed)?;
    let mut taken = vec![false; ids.len()];
    let mut chosen = Vec::with_capacity(k);
    for c in &centroids {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| sq_dist(&points[a], c).total_cmp(&sq_dist(&points[b], c)).then(a.cmp(&b)));
        let pick = order.into_iter().find(|&i| !taken[i]).expect("k <= number of samples");
        taken[pick] = true;
        chosen.push(ids[pick].clone());
    }
    let mut cs = CoreSet::new("kmeans", ids.len(), Some(seed), chosen);
    cs.params.insert("k".into(), k as f64);
    Ok(cs)
}

#[cfg(test)]
mod tests;

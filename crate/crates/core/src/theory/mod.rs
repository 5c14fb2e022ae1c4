//! Simulators and constructive checks for the method's formal claims: head
//! interference, mixture perturbation, top-k bias, ε-coverage, projection
//! discrepancy, SPS consistency and the attention family's fitting power.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoder::{fit_to_target, fuse_heads, FitConfig};
use crate::matrix::Matrix;
use crate::selection::{weighted_sample_without_replacement, BandwidthRule, DensityEstimate};
use crate::spi::SpiOperator;
use crate::sps::{consistency_trace, SpsAccumulator};
use crate::{math, rng, Error, Result};

// ---------------------------------------------------------------------------
// Head interference

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceReport {
    pub heads: usize,
    pub n: usize,
    pub rows_checked: usize,
    pub support_union_ok: bool,
    pub entropy_inflation_ok: bool,
    pub min_head_entropy: f64,
    pub avg_entropy: f64,
    /// Smallest `H(mean row) - min_h H(head row)` over rows.
    pub min_inflation: f64,
    pub note: Option<String>,
    pub passed: bool,
}

/// Builds `heads` row-stochastic `n × n` matrices whose supports are pairwise
/// disjoint in every row. Each head owns a block of columns per row and puts
/// mass on `max(1, ceil(sparsity · block))` of them.
pub fn disjoint_heads(heads: usize, n: usize, sparsity: f64, seed: u64) -> Result<Vec<Matrix>> {
    if heads == 0 || n < heads {
        return Err(Error::InvalidConfig(format!("cannot split {n} columns among {heads} heads")));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidConfig("sparsity must lie in [0, 1]".into()));
    }
    let mut r = rng::seeded(seed);
    let mut out = vec![Matrix::zeros(n, n); heads];
    for i in 0..n {
        let mut cols: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut r, &mut cols);
        for (h, head) in out.iter_mut().enumerate() {
            let block = &cols[h * n / heads..(h + 1) * n / heads];
            let used = (math::ceil(sparsity * block.len() as f64) as usize).clamp(1, block.len());
            let w: Vec<f64> = (0..used).map(|_| 0.1 + rng::uniform(&mut r)).collect();
            let total: f64 = w.iter().sum();
            for (&c, wi) in block[..used].iter().zip(&w) {
                head.row_mut(i)[c] = wi / total;
            }
        }
    }
    Ok(out)
}

/// Averaging heads with disjoint supports yields the union of supports and a
/// row entropy above the least-entropic head.
pub fn validate_interference(heads: usize, n: usize, sparsity: f64, seed: u64) -> Result<InterferenceReport> {
    if heads == 1 {
        return Ok(InterferenceReport {
            heads,
            n,
            rows_checked: 0,
            support_union_ok: true,
            entropy_inflation_ok: true,
            min_head_entropy: f64::NAN,
            avg_entropy: f64::NAN,
            min_inflation: f64::NAN,
            note: Some("skipped: identical heads, the claim needs at least two".into()),
            passed: true,
        });
    }
    let hs = disjoint_heads(heads, n, sparsity, seed)?;
    // uniform fusion weights: the naive average
    let mean = fuse_heads(&hs, &vec![0.0; heads]);
    let mut support_ok = true;
    let mut entropy_ok = true;
    let mut min_head = f64::INFINITY;
    let mut min_inflation = f64::INFINITY;
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        for c in 0..n {
            let union = hs.iter().any(|h| h[(i, c)] > 0.0);
            support_ok &= union == (mean[(i, c)] > 0.0);
        }
        let row_min = hs.iter().map(|h| math::entropy(h.row(i))).fold(f64::INFINITY, f64::min);
        let e = math::entropy(mean.row(i));
        entropy_ok &= e > row_min;
        min_head = min_head.min(row_min);
        min_inflation = min_inflation.min(e - row_min);
        entropies.push(e);
    }
    Ok(InterferenceReport {
        heads,
        n,
        rows_checked: n,
        support_union_ok: support_ok,
        entropy_inflation_ok: entropy_ok,
        min_head_entropy: min_head,
        avg_entropy: math::mean(&entropies),
        min_inflation,
        note: None,
        passed: support_ok && entropy_ok,
    })
}

// ---------------------------------------------------------------------------
// Mixture perturbation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub prototypes: Vec<Matrix>,
    pub weights: Vec<f64>,
    /// `D_kl = ‖S_k − S_l‖_F²`.
    pub distances: Vec<Vec<f64>>,
}

impl MixtureModel {
    pub fn new(prototypes: Vec<Matrix>, weights: Vec<f64>) -> Result<Self> {
        if prototypes.len() < 2 || prototypes.len() != weights.len() {
            return Err(Error::InvalidConfig("need matching prototypes and weights, K >= 2".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("weights must lie on the simplex".into()));
        }
        let k = prototypes.len();
        let mut distances = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                if prototypes[a].shape() != prototypes[b].shape() {
                    return Err(Error::DimensionMismatch { what: "prototype", expected: prototypes[a].rows(), got: prototypes[b].rows() });
                }
                distances[a][b] = prototypes[a].frobenius_dist_sq(&prototypes[b]);
                if a != b && distances[a][b] == 0.0 {
                    return Err(Error::DegeneratePrototypes(a.min(b), a.max(b)));
                }
            }
        }
        Ok(Self { prototypes, weights, distances })
    }

    /// `Σ_{k,l} λ_k λ_l D_kl`.
    pub fn expected_delta(&self) -> f64 {
        let k = self.weights.len();
        (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).map(|(a, b)| self.weights[a] * self.weights[b] * self.distances[a][b]).sum()
    }

    /// `1 - Σ λ²`.
    pub fn gini(&self) -> f64 {
        1.0 - self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let k = self.weights.len();
        (0..k).flat_map(move |a| (0..k).filter(move |&b| b != a).map(move |b| self.distances[a][b]))
    }

    pub fn d_min(&self) -> f64 {
        self.off_diagonal().fold(f64::INFINITY, f64::min)
    }

    pub fn d_max(&self) -> f64 {
        self.off_diagonal().fold(0.0, f64::max)
    }

    /// Index drawn from the mixture weights.
    pub fn draw(&self, r: &mut rng::Rng) -> usize {
        let mut u = rng::uniform(r);
        for (k, w) in self.weights.iter().enumerate() {
            if u < *w {
                return k;
            }
            u -= w;
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub trials: usize,
    pub empirical_mean_delta: f64,
    pub standard_error: f64,
    pub analytic_value: f64,
    pub gini: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub within_4se: bool,
    pub bounds_ok: bool,
    pub passed: bool,
}

/// Standard error of a mean of a 1-dependent sequence: `√((γ₀ + 2γ₁)/n)`.
fn one_dependent_se(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = math::mean(xs);
    let g0 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let g1 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / n;
    math::sqrt(((g0 + 2.0 * g1) / n).max(0.0))
}

/// Draws an i.i.d. prototype sequence and compares the mean squared jump
/// with `Σ λ_k λ_l D_kl`, and that value with its Gini bounds.
pub fn validate_mixture(model: &MixtureModel, trials: usize, seed: u64) -> Result<MixtureReport> {
    if trials < 1000 {
        return Err(Error::InvalidConfig("mixture validation needs at least 1000 trials".into()));
    }
    let mut r = rng::seeded(seed);
    let mut prev = model.draw(&mut r);
    let deltas: Vec<f64> = (0..trials)
        .map(|_| {
            let next = model.draw(&mut r);
            let d = model.prototypes[next].frobenius_dist_sq(&model.prototypes[prev]);
            prev = next;
            d
        })
        .collect();
    let empirical = math::mean(&deltas);
    let se = one_dependent_se(&deltas);
    let analytic = model.expected_delta();
    let gini = model.gini();
    let (lower, upper) = (model.d_min() * gini, model.d_max() * gini);
    let within = (empirical - analytic).abs() <= 4.0 * se;
    let slack = 1e-12 * upper.abs().max(1.0);
    let bounds_ok = lower - slack <= analytic && analytic <= upper + slack;
    Ok(MixtureReport {
        trials,
        empirical_mean_delta: empirical,
        standard_error: se,
        analytic_value: analytic,
        gini,
        lower_bound: lower,
        upper_bound: upper,
        within_4se: within,
        bounds_ok,
        passed: within && bounds_ok,
    })
}

// ---------------------------------------------------------------------------
// Top-k bias

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScoreDistribution {
    Uniform { a: f64, b: f64 },
    Normal { mu: f64, sigma: f64 },
}

impl ScoreDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
            Self::Normal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid score distribution {self:?}")))
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            Self::Uniform { a, b } => ((t - a) / (b - a)).clamp(0.0, 1.0),
            Self::Normal { mu, sigma } => math::normal_cdf((t - mu) / sigma),
        }
    }

    pub fn sample(&self, r: &mut rng::Rng) -> f64 {
        match *self {
            Self::Uniform { a, b } => rng::uniform_range(r, a, b),
            Self::Normal { mu, sigma } => mu + sigma * rng::normal(r),
        }
    }

    /// An interval holding all but a negligible amount of mass.
    fn range(&self) -> (f64, f64) {
        match *self {
            Self::Uniform { a, b } => (a, b),
            Self::Normal { mu, sigma } => (mu - 40.0 * sigma, mu + 40.0 * sigma),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoClusterModel {
    pub pi_p: f64,
    pub f_p: ScoreDistribution,
    pub f_q: ScoreDistribution,
    /// Selection ratio.
    pub ratio: f64,
}

impl TwoClusterModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.pi_p > 0.0 && self.pi_p < 1.0) || !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidConfig("pi_p and ratio must lie in (0, 1)".into()));
        }
        self.f_p.validate()?;
        self.f_q.validate()
    }

    pub fn pi_q(&self) -> f64 {
        1.0 - self.pi_p
    }

    pub fn mixture_cdf(&self, t: f64) -> f64 {
        self.pi_p * self.f_p.cdf(t) + self.pi_q() * self.f_q.cdf(t)
    }
}

pub const TAU_TOLERANCE: f64 = 1e-12;

/// Solves `π_p F_p(τ) + π_q F_q(τ) = ρ` by bisection.
pub fn solve_tau(model: &TwoClusterModel) -> Result<f64> {
    model.validate()?;
    let (pa, pb) = model.f_p.range();
    let (qa, qb) = model.f_q.range();
    let (mut lo, mut hi) = (pa.min(qa), pb.max(qb));
    let target = model.ratio;
    if !(model.mixture_cdf(lo) <= target && model.mixture_cdf(hi) >= target) {
        return Err(Error::NoBracket);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let res = model.mixture_cdf(mid) - target;
        if res.abs() < TAU_TOLERANCE {
            return Ok(mid);
        }
        if res < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (model.mixture_cdf(mid) - target).abs() < TAU_TOLERANCE {
        Ok(mid)
    } else {
        Err(Error::NoBracket)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub n: usize,
    pub k: usize,
    pub mean_pi_hat: f64,
    /// Spread of π̂_p across trials.
    pub trial_std: f64,
    /// Binomial standard error of the pooled estimate, `√(L(1−L)/(k·trials))`.
    pub binomial_se: f64,
    pub abs_error: f64,
    pub mean_delta_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkReport {
    pub model: TwoClusterModel,
    pub tau: f64,
    pub gamma: f64,
    pub limit: f64,
    pub delta: f64,
    pub trials: usize,
    pub rows: Vec<TopkRow>,
    pub concentrating: bool,
    pub final_within_3se: bool,
    pub delta_k_ok: bool,
    pub note: Option<String>,
    pub passed: bool,
}

pub const DEFAULT_N_GRID: [usize; 3] = [1_000, 10_000, 100_000];

/// Simulates top-k selection on the two-cluster model. Per population size
/// the `⌊ρN⌋` smallest scores are kept and the cluster-p share recorded.
pub fn validate_topk_bias(model: &TwoClusterModel, n_grid: &[usize], trials: usize, seed: u64) -> Result<TopkReport> {
    let tau = solve_tau(model)?;
    let gamma = model.f_p.cdf(tau) - model.f_q.cdf(tau);
    let limit = model.pi_p * model.f_p.cdf(tau) / model.ratio;
    let delta = limit - model.pi_p;
    if trials < 2 || n_grid.is_empty() {
        return Err(Error::InvalidConfig("need at least 2 trials and one population size".into()));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let k = math::floor(model.ratio * n as f64) as usize;
        if k == 0 {
            return Err(Error::InvalidConfig(format!("ratio selects nothing at N = {n}")));
        }
        let mut r = rng::stream(seed, gi as u64);
        let mut pop: Vec<(f64, bool)> = vec![(0.0, false); n];
        let mut shares = Vec::with_capacity(trials);
        for _ in 0..trials {
            for slot in pop.iter_mut() {
                let is_p = rng::uniform(&mut r) < model.pi_p;
                let s = if is_p { model.f_p.sample(&mut r) } else { model.f_q.sample(&mut r) };
                *slot = (s, is_p);
            }
            pop.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            shares.push(pop[..k].iter().filter(|x| x.1).count() as f64 / k as f64);
        }
        let mean = math::mean(&shares);
        let deltas: Vec<f64> = shares.iter().map(|s| (s - model.pi_p).abs() + ((1.0 - s) - model.pi_q()).abs()).collect();
        rows.push(TopkRow {
            n,
            k,
            mean_pi_hat: mean,
            trial_std: math::std_dev(&shares, 1),
            binomial_se: math::sqrt(limit * (1.0 - limit) / (k as f64 * trials as f64)),
            abs_error: (mean - limit).abs(),
            mean_delta_k: math::mean(&deltas),
        });
    }
    let concentrating = rows.windows(2).all(|w| w[1].trial_std < w[0].trial_std);
    let last = rows.last().expect("non-empty grid");
    let final_within = last.abs_error <= 3.0 * last.binomial_se;
    // Δ_k = 2|π̂_p − π_p|, so its error is twice that of π̂_p.
    let delta_k_ok = (last.mean_delta_k - 2.0 * delta.abs()).abs() <= 6.0 * last.binomial_se;
    let hypothesis = gamma > 0.0;
    let note = (!hypothesis).then(|| format!("gamma = {gamma:.3e} <= 0: separation hypothesis violated, checks reported only"));
    Ok(TopkReport {
        model: *model,
        tau,
        gamma,
        limit,
        delta,
        trials,
        passed: hypothesis && concentrating && final_within && delta_k_ok,
        rows,
        concentrating,
        final_within_3se: final_within,
        delta_k_ok,
        note,
    })
}

// ---------------------------------------------------------------------------
// ε-coverage and projection discrepancy

/// Greedy farthest-point ε-net; returns the chosen centre indices.
pub fn greedy_net(pool: &[Matrix], eps: f64) -> Vec<usize> {
    if pool.is_empty() {
        return Vec::new();
    }
    let mut centres = vec![0];
    let mut dist: Vec<f64> = pool.iter().map(|m| math::sqrt(m.frobenius_dist_sq(&pool[0]))).collect();
    loop {
        let (far, d) = dist.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty");
        if d <= eps {
            return centres;
        }
        centres.push(far);
        for (di, m) in dist.iter_mut().zip(pool) {
            *di = di.min(math::sqrt(m.frobenius_dist_sq(&pool[far])));
        }
    }
}

/// Nearest-centre projection onto a greedy ε-net.
pub fn net_projection(pool: &[Matrix], eps: f64) -> Vec<usize> {
    let centres = greedy_net(pool, eps);
    pool.iter()
        .map(|m| {
            *centres
                .iter()
                .min_by(|&&a, &&b| m.frobenius_dist_sq(&pool[a]).total_cmp(&m.frobenius_dist_sq(&pool[b])))
                .expect("non-empty net")
        })
        .collect()
}

/// Greedy partition into cells whose members are pairwise within `eps`, so
/// any member of a cell covers the rest of it. Returns a cell id per point.
pub fn diameter_cells(pool: &[Matrix], eps: f64) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut cell_of = vec![0; pool.len()];
    for (i, m) in pool.iter().enumerate() {
        let fits = |cell: &Vec<usize>| cell.iter().all(|&j| math::sqrt(m.frobenius_dist_sq(&pool[j])) <= eps);
        match members.iter().position(fits) {
            Some(c) => {
                members[c].push(i);
                cell_of[i] = c;
            }
            None => {
                cell_of[i] = members.len();
                members.push(vec![i]);
            }
        }
    }
    cell_of
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub eps: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub eps_reg: f64,
    /// Forces the number of draws instead of deriving it.
    pub m_override: Option<usize>,
}

impl CoverageConfig {
    pub fn new(eps: f64, delta: f64, trials: usize, seed: u64) -> Self {
        Self { eps, delta, trials, seed, eps_reg: 1e-8, m_override: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub eps: f64,
    pub delta: f64,
    pub n_eps: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    /// `⌈n(ρ_max+τ)/(ρ_min+τ)·(ln N_ε + ln(1/δ))⌉`.
    pub m_bound: usize,
    pub bound_vacuous: bool,
    /// Cells of diameter at most ε partitioning the pool.
    pub n_cells: usize,
    /// Draws needed by the per-draw hitting argument over those cells:
    /// `⌈ln(C/δ) / p_min⌉`, with `p_min` the lightest cell's sampling mass.
    pub m_hitting: usize,
    pub m_used: usize,
    pub m_rule: String,
    pub empirical_coverage: f64,
    pub standard_error: f64,
    pub passed: bool,
}

fn covered(pool: &[Matrix], chosen: &[usize], eps: f64) -> bool {
    pool.iter().all(|m| chosen.iter().any(|&c| math::sqrt(m.frobenius_dist_sq(&pool[c])) <= eps))
}

/// Runs the density-reweighted sampler on a finite pool and measures how
/// often every pool point ends within ε of a selected point.
pub fn validate_epsilon_coverage(pool: &[Matrix], scores: &[f64], cfg: &CoverageConfig) -> Result<CoverageReport> {
    let n = pool.len();
    if n == 0 || scores.len() != n {
        return Err(Error::DimensionMismatch { what: "coverage scores", expected: n, got: scores.len() });
    }
    if !(cfg.eps > 0.0 && cfg.delta > 0.0 && cfg.delta < 1.0 && cfg.trials > 0) {
        return Err(Error::InvalidConfig("need eps > 0, delta in (0, 1), trials > 0".into()));
    }
    let kde = DensityEstimate::fit(scores, BandwidthRule::Silverman, cfg.eps_reg)?;
    let dens: Vec<f64> = scores.iter().map(|&s| kde.density(s)).collect();
    let rho_min = dens.iter().copied().fold(f64::INFINITY, f64::min);
    let rho_max = dens.iter().copied().fold(0.0, f64::max);
    let weights = kde.inverse_weights();

    let n_eps = greedy_net(pool, cfg.eps).len();
    let bound = n as f64 * (rho_max + cfg.eps_reg) / (rho_min + cfg.eps_reg) * (math::ln(n_eps as f64) + math::ln(1.0 / cfg.delta));
    let m_bound = math::ceil(bound) as usize;
    let bound_vacuous = m_bound > n;

    let cells = diameter_cells(pool, cfg.eps);
    let n_cells = cells.iter().max().map_or(0, |c| c + 1);
    let mut cell_mass = vec![0.0; n_cells];
    for (i, c) in cells.iter().enumerate() {
        cell_mass[*c] += weights[i];
    }
    let p_min = cell_mass.iter().copied().fold(f64::INFINITY, f64::min);
    let m_hitting = math::ceil(math::ln(n_cells as f64 / cfg.delta) / p_min) as usize;

    let (m_used, m_rule) = match cfg.m_override {
        Some(m) => (m.min(n), "override".into()),
        None if !bound_vacuous => (m_bound, "bound".into()),
        None => (m_hitting.min(n), "hitting (bound vacuous at this scale)".into()),
    };
    let mut hits = 0usize;
    for t in 0..cfg.trials {
        let mut r = rng::stream(cfg.seed, t as u64);
        let chosen = weighted_sample_without_replacement(&weights, m_used, &mut r)?;
        hits += covered(pool, &chosen, cfg.eps) as usize;
    }
    let coverage = hits as f64 / cfg.trials as f64;
    let se = math::sqrt(cfg.delta * (1.0 - cfg.delta) / cfg.trials as f64);
    Ok(CoverageReport {
        n,
        eps: cfg.eps,
        delta: cfg.delta,
        n_eps,
        rho_min,
        rho_max,
        m_bound,
        bound_vacuous,
        n_cells,
        m_hitting,
        m_used,
        m_rule,
        empirical_coverage: coverage,
        standard_error: se,
        passed: coverage >= 1.0 - cfg.delta - 3.0 * se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Constant(f64),
    /// `‖X − A‖_F`, 1-Lipschitz.
    DistanceToAnchor(Matrix),
}

impl TestFunction {
    pub fn eval(&self, x: &Matrix) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::DistanceToAnchor(a) => math::sqrt(x.frobenius_dist_sq(a)),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::DistanceToAnchor(_) => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub expectation_full: f64,
    pub expectation_projected: f64,
    pub discrepancy: f64,
    pub lipschitz: f64,
    pub eps: f64,
    pub bound: f64,
    pub max_projection_distance: f64,
    pub passed: bool,
}

/// Exact expectations of `f` under the pool distribution and its push-forward
/// through `projection`, checked against `L_f · ε`.
pub fn validate_discrepancy(pool: &[Matrix], weights: &[f64], projection: &[usize], f: &TestFunction, eps: f64) -> Result<DiscrepancyReport> {
    let n = pool.len();
    if weights.len() != n || projection.len() != n {
        return Err(Error::DimensionMismatch { what: "discrepancy inputs", expected: n, got: weights.len().min(projection.len()) });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
        return Err(Error::InvalidConfig("weights must be non-negative with positive sum".into()));
    }
    let mut max_dist: f64 = 0.0;
    for (i, &p) in projection.iter().enumerate() {
        let d = pool.get(p).map(|m| math::sqrt(pool[i].frobenius_dist_sq(m))).ok_or(Error::InvalidProjection(i))?;
        if d > eps {
            return Err(Error::InvalidProjection(i));
        }
        max_dist = max_dist.max(d);
    }
    let full: f64 = pool.iter().zip(weights).map(|(x, w)| w * f.eval(x)).sum::<f64>() / total;
    let projected: f64 = projection.iter().zip(weights).map(|(&p, w)| w * f.eval(&pool[p])).sum::<f64>() / total;
    let discrepancy = (full - projected).abs();
    let bound = f.lipschitz() * eps;
    Ok(DiscrepancyReport {
        expectation_full: full,
        expectation_projected: projected,
        discrepancy,
        lipschitz: f.lipschitz(),
        eps,
        bound,
        max_projection_distance: max_dist,
        passed: discrepancy <= bound,
    })
}

// ---------------------------------------------------------------------------
// SPS consistency

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamGenerator {
    /// i.i.d. Uniform(lo, hi) perturbations.
    IidUniform { lo: f64, hi: f64 },
    Constant { value: f64 },
    /// Snapshots drawn i.i.d. from a prototype mixture and fed through the
    /// streaming SPS accumulator.
    Mixture { model: MixtureModel },
    /// `exp(y_t)` with `y` a stationary AR(1) of marginal variance `sigma²`.
    Ar1LogNormal { phi: f64, sigma: f64 },
}

impl StreamGenerator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::IidUniform { .. } => "iid_uniform",
            Self::Constant { .. } => "constant",
            Self::Mixture { .. } => "mixture",
            Self::Ar1LogNormal { .. } => "ar1_lognormal",
        }
    }

    pub fn analytic_mean(&self) -> f64 {
        match self {
            Self::IidUniform { lo, hi } => 0.5 * (lo + hi),
            Self::Constant { value } => *value,
            Self::Mixture { model } => model.expected_delta(),
            Self::Ar1LogNormal { sigma, .. } => math::exp(0.5 * sigma * sigma),
        }
    }

    /// The first `len` per-transition perturbations.
    pub fn deltas(&self, len: usize, seed: u64) -> Result<Vec<f64>> {
        let mut r = rng::seeded(seed);
        Ok(match self {
            Self::IidUniform { lo, hi } => (0..len).map(|_| rng::uniform_range(&mut r, *lo, *hi)).collect(),
            Self::Constant { value } => vec![*value; len],
            Self::Mixture { model } => {
                let mut acc = SpsAccumulator::new();
                let mut out = Vec::with_capacity(len);
                for step in 0..=len {
                    let z = &model.prototypes[model.draw(&mut r)];
                    let d = acc.update(core::iter::once(("stream", z)))?;
                    if step > 0 {
                        out.push(d);
                    }
                }
                out
            }
            Self::Ar1LogNormal { phi, sigma } => {
                if !(phi.abs() < 1.0) {
                    return Err(Error::InvalidConfig("AR(1) coefficient must satisfy |phi| < 1".into()));
                }
                let innov = sigma * math::sqrt(1.0 - phi * phi);
                let mut y = sigma * rng::normal(&mut r);
                (0..len)
                    .map(|_| {
                        let v = math::exp(y);
                        y = phi * y + innov * rng::normal(&mut r);
                        v
                    })
                    .collect()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub transitions: usize,
    pub running_mean: f64,
    pub relative_error: f64,
    /// Four batch-means standard errors at this length.
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpsConsistencyReport {
    pub generator: String,
    pub analytic_mean: f64,
    pub points: Vec<ConsistencyPoint>,
    pub within_envelope: bool,
    pub final_relative_error: f64,
    pub passed: bool,
}

pub const DEFAULT_L_GRID: [usize; 4] = [100, 1_000, 5_000, 10_000];

/// Running SPS means at each checkpoint against the generator's analytic
/// mean. The error must stay inside a 4-SE envelope shrinking like `1/√L`
/// (SE from batch means, so serial correlation is accounted for) and end
/// below 5% relative error.
pub fn validate_sps_consistency(generator: &StreamGenerator, l_grid: &[usize], seed: u64) -> Result<SpsConsistencyReport> {
    let l_max = *l_grid.iter().max().ok_or(Error::Empty("checkpoint grid"))?;
    let deltas = generator.deltas(l_max, seed)?;
    let trace = consistency_trace(deltas.iter().copied(), l_grid)?;
    let batch = (l_max / 50).max(1);
    let batch_means: Vec<f64> = deltas.chunks_exact(batch).map(math::mean).collect();
    let per_step_var = if batch_means.len() > 1 { math::variance(&batch_means, 1) * batch as f64 } else { 0.0 };
    let truth = generator.analytic_mean();
    let points: Vec<ConsistencyPoint> = trace
        .iter()
        .map(|&(l, m)| ConsistencyPoint {
            transitions: l,
            running_mean: m,
            relative_error: (m - truth).abs() / truth.abs().max(f64::MIN_POSITIVE),
            tolerance: 4.0 * math::sqrt(per_step_var / l as f64),
        })
        .collect();
    let within = points.iter().all(|p| (p.running_mean - truth).abs() <= p.tolerance + 1e-12 * truth.abs());
    let final_err = points.last().map(|p| p.relative_error).unwrap_or(f64::NAN);
    Ok(SpsConsistencyReport {
        generator: generator.name().into(),
        analytic_mean: truth,
        within_envelope: within,
        final_relative_error: final_err,
        passed: within && final_err < 0.05,
        points,
    })
}

// ---------------------------------------------------------------------------
// Fitting power of the attention family

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalRow {
    pub operator: String,
    pub mse_start: f64,
    pub mse_end: f64,
    pub mse_test: f64,
    pub epochs_run: usize,
    pub decreased: bool,
    pub halved: bool,
    pub generalizes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalReport {
    pub rows: Vec<UniversalRow>,
    pub n_decreased: usize,
    pub n_halved: usize,
    pub n_generalize: usize,
    /// Operators that failed to fit or produced non-finite losses.
    pub contract_violations: Vec<String>,
    /// Operators that trained but missed a target; an optimisation result,
    /// not evidence against representability.
    pub optimization_shortfall: Vec<String>,
    pub passed: bool,
}

pub const GENERALIZATION_TOLERANCE: f64 = 0.25;

/// Fits one operator. `Err` carries a contract-violation message.
pub fn universal_row(d: &Dataset, op: &SpiOperator, cfg: &FitConfig) -> core::result::Result<UniversalRow, String> {
    match fit_to_target(d, op, cfg) {
        Ok(rep) if rep.train_mse_start.is_finite() && rep.train_mse_end.is_finite() && rep.test_mse.is_finite() => Ok(UniversalRow {
            operator: op.name.clone(),
            mse_start: rep.train_mse_start,
            mse_end: rep.train_mse_end,
            mse_test: rep.test_mse,
            epochs_run: rep.epochs_run,
            decreased: rep.train_mse_end < rep.train_mse_start,
            halved: rep.train_mse_end <= 0.5 * rep.train_mse_start,
            generalizes: (rep.test_mse - rep.train_mse_end).abs() <= GENERALIZATION_TOLERANCE * rep.train_mse_end,
        }),
        Ok(_) => Err(format!("{}: non-finite loss", op.name)),
        Err(e) => Err(format!("{}: {e}", op.name)),
    }
}

/// Tabulates per-operator outcomes. Passing needs every fit to decrease and
/// generalize, and at least three quarters of them to halve their starting
/// error.
pub fn summarize_universal(outcomes: Vec<core::result::Result<UniversalRow, String>>) -> Result<UniversalReport> {
    if outcomes.is_empty() {
        return Err(Error::Empty("operator list"));
    }
    let n_ops = outcomes.len();
    let mut rows = Vec::with_capacity(n_ops);
    let mut violations = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(msg) => violations.push(msg),
        }
    }
    let shortfall = rows.iter().filter(|r| !(r.decreased && r.halved && r.generalizes)).map(|r| r.operator.clone()).collect();
    let n_decreased = rows.iter().filter(|r| r.decreased).count();
    let n_halved = rows.iter().filter(|r| r.halved).count();
    let n_generalize = rows.iter().filter(|r| r.generalizes).count();
    let needed_halved = (3 * n_ops).div_ceil(4);
    let passed = violations.is_empty() && n_decreased == n_ops && n_generalize == n_ops && n_halved >= needed_halved;
    Ok(UniversalReport { rows, n_decreased, n_halved, n_generalize, contract_violations: violations, optimization_shortfall: shortfall, passed })
}

/// Fits the encoder to every operator's FC in turn and summarises.
pub fn validate_universal(d: &Dataset, ops: &[SpiOperator], cfg: &FitConfig) -> Result<UniversalReport> {
    summarize_universal(ops.iter().map(|op| universal_row(d, op, cfg)).collect())
}

#[cfg(test)]
mod tests;

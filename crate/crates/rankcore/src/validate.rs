//! The validator suite behind `rankcore validate`.

use std::collections::BTreeMap;

use rankcore_core::dataset::{generate_windowed, SynthConfig};
use rankcore_core::encoder::{EncoderShape, FitConfig};
use rankcore_core::matrix::Matrix;
use rankcore_core::rng;
use rankcore_core::spi::select_operators;
use rankcore_core::theory::{
    diameter_cells, validate_discrepancy, validate_epsilon_coverage, validate_interference, validate_mixture, validate_sps_consistency,
    validate_topk_bias, summarize_universal, universal_row, CoverageConfig, MixtureModel, ScoreDistribution, StreamGenerator, TestFunction,
    TwoClusterModel, DEFAULT_L_GRID, DEFAULT_N_GRID,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::log::Logger;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Interference,
    Mixture,
    Topk,
    Coverage,
    Discrepancy,
    Consistency,
    Universal,
    All,
}

impl Which {
    const EACH: [Which; 7] =
        [Which::Interference, Which::Mixture, Which::Topk, Which::Coverage, Which::Discrepancy, Which::Consistency, Which::Universal];

    pub fn name(self) -> &'static str {
        match self {
            Which::Interference => "interference",
            Which::Mixture => "mixture",
            Which::Topk => "topk",
            Which::Coverage => "coverage",
            Which::Discrepancy => "discrepancy",
            Which::Consistency => "consistency",
            Which::Universal => "universal",
            Which::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutput {
    pub passed: bool,
    pub results: BTreeMap<String, Value>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialise")
}

fn passed_all(values: &[Value]) -> bool {
    values.iter().all(|v| v["passed"].as_bool().unwrap_or(false))
}

pub fn interference(seed: u64) -> Result<(bool, Value)> {
    let mut reports = Vec::new();
    for heads in [2, 4, 8] {
        for s in 0..20 {
            reports.push(to_value(&validate_interference(heads, 16, 0.5, rng::derive_seed(seed, s))?));
        }
    }
    reports.push(to_value(&validate_interference(2, 8, 0.0, seed)?));
    Ok((passed_all(&reports), json!(reports)))
}

/// Two 2×2 prototypes at squared distance `d`.
pub fn two_prototypes(d: f64) -> Vec<Matrix> {
    let mut b = Matrix::zeros(2, 2);
    b.as_mut_slice()[0] = d.sqrt();
    vec![Matrix::zeros(2, 2), b]
}

pub fn random_k3(seed: u64) -> Result<MixtureModel> {
    let mut r = rng::seeded(seed);
    let protos: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(4, 4, |_, _| rng::normal(&mut r))).collect();
    let raw: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r) + 0.05).collect();
    let total: f64 = raw.iter().sum();
    Ok(MixtureModel::new(protos, raw.iter().map(|w| w / total).collect())?)
}

pub fn mixture(seed: u64) -> Result<(bool, Value)> {
    let half = validate_mixture(&MixtureModel::new(two_prototypes(4.0), vec![0.5, 0.5])?, 10_000, seed)?;
    let mut reports = vec![to_value(&half)];
    for s in 0..10 {
        reports.push(to_value(&validate_mixture(&random_k3(rng::derive_seed(seed, s))?, 10_000, seed + s)?));
    }
    Ok((passed_all(&reports), json!(reports)))
}

pub fn uniform_two_cluster() -> TwoClusterModel {
    TwoClusterModel {
        pi_p: 0.5,
        f_p: ScoreDistribution::Uniform { a: 0.0, b: 1.0 },
        f_q: ScoreDistribution::Uniform { a: 0.5, b: 1.5 },
        ratio: 0.5,
    }
}

pub fn topk(seed: u64) -> Result<(bool, Value)> {
    let rep = validate_topk_bias(&uniform_two_cluster(), &DEFAULT_N_GRID, 200, seed)?;
    Ok((rep.passed, to_value(&rep)))
}

/// Two tight clusters of 3×3 matrices (30 and 10 members) with cluster-level
/// scores.
pub fn two_cluster_pool(seed: u64) -> (Vec<Matrix>, Vec<f64>) {
    let mut r = rng::seeded(seed);
    let mut pool = Vec::new();
    let mut scores = Vec::new();
    for (centre, count, score) in [(0.0, 30, 1.0), (5.0, 10, 3.0)] {
        for _ in 0..count {
            pool.push(Matrix::from_fn(3, 3, |_, _| centre + 0.05 * rng::normal(&mut r)));
            scores.push(score + 0.1 * rng::normal(&mut r));
        }
    }
    (pool, scores)
}

pub fn diameter(pool: &[Matrix]) -> f64 {
    pool.iter().flat_map(|a| pool.iter().map(move |b| a.frobenius_dist_sq(b).sqrt())).fold(0.0, f64::max)
}

pub fn coverage(seed: u64) -> Result<(bool, Value)> {
    let (pool, scores) = two_cluster_pool(seed);
    let eps = diameter(&pool[..30]).max(diameter(&pool[30..]));
    let rep = validate_epsilon_coverage(&pool, &scores, &CoverageConfig::new(eps, 0.1, 2_000, seed))?;
    Ok((rep.passed, to_value(&rep)))
}

pub fn discrepancy(seed: u64) -> Result<(bool, Value)> {
    let (pool, _) = two_cluster_pool(seed);
    let eps = diameter(&pool[..30]).max(diameter(&pool[30..]));
    let mut r = rng::stream(seed, 1);
    let weights: Vec<f64> = (0..pool.len()).map(|_| rng::uniform(&mut r) + 0.1).collect();
    let cells = diameter_cells(&pool, eps);
    // every point goes to a random member of its own cell
    let projection: Vec<usize> = cells
        .iter()
        .map(|c| {
            let members: Vec<usize> = (0..pool.len()).filter(|&j| cells[j] == *c).collect();
            members[rng::below(&mut r, members.len())]
        })
        .collect();
    let identity: Vec<usize> = (0..pool.len()).collect();
    let anchor = TestFunction::DistanceToAnchor(Matrix::filled(3, 3, 1.0));
    let reports = vec![
        to_value(&validate_discrepancy(&pool, &weights, &identity, &anchor, eps)?),
        to_value(&validate_discrepancy(&pool, &weights, &projection, &anchor, eps)?),
        to_value(&validate_discrepancy(&pool, &weights, &projection, &TestFunction::Constant(1.5), eps)?),
    ];
    Ok((passed_all(&reports), json!(reports)))
}

pub fn consistency(seed: u64) -> Result<(bool, Value)> {
    let generators = [
        StreamGenerator::IidUniform { lo: 0.0, hi: 2.0 },
        StreamGenerator::Constant { value: 0.7 },
        StreamGenerator::Mixture { model: MixtureModel::new(two_prototypes(4.0), vec![0.25, 0.75])? },
        StreamGenerator::Ar1LogNormal { phi: 0.5, sigma: 0.5 },
    ];
    let reports =
        generators.iter().map(|g| validate_sps_consistency(g, &DEFAULT_L_GRID, seed).map(|r| to_value(&r))).collect::<Result<Vec<_>, _>>()?;
    Ok((passed_all(&reports), json!(reports)))
}

/// Dataset, operators and fit settings of the desk-scale fitting experiment.
pub struct UniversalSetup {
    pub synth: SynthConfig,
    pub operators: Vec<&'static str>,
    pub fit: FitConfig,
}

impl UniversalSetup {
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            synth: SynthConfig { n_subjects: 200, stride: 7, seed, ..SynthConfig::default() },
            operators: vec![
                "cov_empirical",
                "prec",
                "pearson",
                "spearman",
                "xcorr_max",
                "pdist_euclidean",
                "pdist_cosine",
                "cohmag_mean",
                "plv_mean",
                "mi_gaussian",
            ],
            fit: FitConfig { shape: EncoderShape { heads: 4, head_dim: 8, value_dim: 8, out_dim: 8 }, seed, ..FitConfig::default() },
        }
    }
}

pub fn universal(setup: &UniversalSetup) -> Result<(bool, Value)> {
    let d = generate_windowed(&setup.synth)?;
    let ops = select_operators(&setup.operators)?;
    let rows = {
        use rayon::prelude::*;
        ops.par_iter().map(|op| universal_row(&d, op, &setup.fit)).collect()
    };
    let rep = summarize_universal(rows)?;
    Ok((rep.passed, to_value(&rep)))
}

fn run_one(which: Which, seed: u64) -> Result<(bool, Value)> {
    match which {
        Which::Interference => interference(seed),
        Which::Mixture => mixture(seed),
        Which::Topk => topk(seed),
        Which::Coverage => coverage(seed),
        Which::Discrepancy => discrepancy(seed),
        Which::Consistency => consistency(seed),
        Which::Universal => universal(&UniversalSetup::desk_scale(seed)),
        Which::All => Err(Error::Invalid("`all` is not a single validator".into())),
    }
}

/// Runs one validator or all of them; independent validators run in parallel.
pub fn run(which: Which, seed: u64, jobs: usize, log: &Logger) -> Result<ValidationOutput> {
    let list: Vec<Which> = if which == Which::All { Which::EACH.to_vec() } else { vec![which] };
    let outcomes: Vec<(Which, Result<(bool, Value)>)> = crate::fcstore::pool(jobs)?.install(|| {
        use rayon::prelude::*;
        list.par_iter().map(|&w| (w, run_one(w, seed))).collect()
    });
    let mut results = BTreeMap::new();
    let mut passed = true;
    for (w, out) in outcomes {
        let (ok, value) = out.map_err(|e| e.in_stage(&format!("validate:{}", w.name())))?;
        log.event("validate", w.name(), json!({ "passed": ok }));
        passed &= ok;
        results.insert(w.name().to_string(), json!({ "passed": ok, "report": value }));
    }
    Ok(ValidationOutput { passed, results })
}

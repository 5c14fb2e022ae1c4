use super::*;
use crate::dataset::{generate_synthetic, SynthConfig};
use crate::encoder::EncoderShape;
use crate::spi::select_operators;

fn uniform_example() -> TwoClusterModel {
    TwoClusterModel {
        pi_p: 0.5,
        f_p: ScoreDistribution::Uniform { a: 0.0, b: 1.0 },
        f_q: ScoreDistribution::Uniform { a: 0.5, b: 1.5 },
        ratio: 0.5,
    }
}

#[test]
fn interference_one_hot_pair() {
    let rep = validate_interference(2, 6, 0.0, 1).unwrap();
    assert!(rep.passed && rep.support_union_ok && rep.entropy_inflation_ok);
    assert_eq!(rep.min_head_entropy, 0.0);
    assert!((rep.avg_entropy - core::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn interference_random_heads() {
    for heads in [2, 4, 8] {
        for seed in 0..20 {
            let rep = validate_interference(heads, 16, 0.6, seed).unwrap();
            assert!(rep.passed, "H={heads} seed={seed}: {rep:?}");
            assert_eq!(rep.rows_checked, 16);
            assert!(rep.min_inflation > 0.0);
        }
    }
}

#[test]
fn interference_boundaries() {
    let single = validate_interference(1, 4, 0.5, 0).unwrap();
    assert!(single.note.unwrap().contains("identical heads"));
    assert!(validate_interference(5, 4, 0.5, 0).is_err());
    let hs = disjoint_heads(3, 9, 1.0, 2).unwrap();
    for h in &hs {
        for row in h.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    for i in 0..9 {
        for c in 0..9 {
            assert!(hs.iter().filter(|h| h[(i, c)] > 0.0).count() <= 1);
        }
    }
}

/// Two prototypes at squared Frobenius distance `d`.
fn two_prototypes(d: f64) -> Vec<Matrix> {
    let a = Matrix::zeros(2, 2);
    let mut b = Matrix::zeros(2, 2);
    b.as_mut_slice()[0] = libm::sqrt(d);
    vec![a, b]
}

#[test]
fn mixture_half_half() {
    let model = MixtureModel::new(two_prototypes(4.0), vec![0.5, 0.5]).unwrap();
    // D(1 - Σλ²) = 4 · 0.5
    assert!((model.expected_delta() - 2.0).abs() < 1e-15);
    let rep = validate_mixture(&model, 10_000, 3).unwrap();
    assert!(rep.passed, "{rep:?}");
    assert!((rep.empirical_mean_delta - 2.0).abs() <= 4.0 * rep.standard_error);
    // jumps are 0 or 4 with probability 1/2 each: sd 2, plus lag-1 correlation 0
    assert!((rep.standard_error - 2.0 / 100.0).abs() < 0.003);
}

#[test]
fn mixture_pure_archetype() {
    let model = MixtureModel::new(two_prototypes(4.0), vec![1.0, 0.0]).unwrap();
    let rep = validate_mixture(&model, 2_000, 0).unwrap();
    assert_eq!(rep.analytic_value, 0.0);
    assert_eq!(rep.empirical_mean_delta, 0.0);
    assert!(rep.passed);
}

#[test]
fn mixture_gini_bounds_random_k3() {
    for seed in 0..10 {
        let mut r = rng::seeded(seed);
        let protos: Vec<Matrix> = (0..3).map(|_| Matrix::from_fn(3, 3, |_, _| rng::normal(&mut r))).collect();
        let raw: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r) + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let model = MixtureModel::new(protos, raw.iter().map(|w| w / total).collect()).unwrap();
        let rep = validate_mixture(&model, 5_000, seed).unwrap();
        assert!(rep.bounds_ok && rep.lower_bound <= rep.analytic_value && rep.analytic_value <= rep.upper_bound);
        assert!(rep.passed, "{rep:?}");
    }
}

#[test]
fn mixture_errors() {
    let same = vec![Matrix::identity(2), Matrix::identity(2)];
    assert!(matches!(MixtureModel::new(same, vec![0.5, 0.5]), Err(Error::DegeneratePrototypes(0, 1))));
    assert!(MixtureModel::new(two_prototypes(1.0), vec![0.7, 0.7]).is_err());
    let model = MixtureModel::new(two_prototypes(1.0), vec![0.5, 0.5]).unwrap();
    assert!(validate_mixture(&model, 999, 0).is_err());
}

#[test]
fn tau_examples() {
    let tau = solve_tau(&uniform_example()).unwrap();
    assert!((tau - 0.75).abs() < 1e-11);
    let same = TwoClusterModel {
        pi_p: 0.3,
        f_p: ScoreDistribution::Normal { mu: 1.0, sigma: 2.0 },
        f_q: ScoreDistribution::Normal { mu: 1.0, sigma: 2.0 },
        ratio: 0.8413447460685429,
    };
    // the common quantile: Φ(1) = 0.8413…, so τ = μ + σ
    assert!((solve_tau(&same).unwrap() - 3.0).abs() < 1e-9);
    let tiny = TwoClusterModel { ratio: 1e-9, ..uniform_example() };
    assert!(solve_tau(&tiny).unwrap() < 1e-6);
    let bad = TwoClusterModel { ratio: 1.0, ..uniform_example() };
    assert!(solve_tau(&bad).is_err());
}

#[test]
fn topk_bias_uniform_example() {
    let rep = validate_topk_bias(&uniform_example(), &DEFAULT_N_GRID, 200, 7).unwrap();
    assert!((rep.limit - 0.75).abs() < 1e-11);
    assert!((rep.delta - 0.25).abs() < 1e-11);
    assert!(rep.gamma > 0.0);
    assert!(rep.passed, "{rep:?}");
    assert_eq!(rep.rows.last().unwrap().k, 50_000);
}

#[test]
fn topk_no_bias_when_clusters_match() {
    let model = TwoClusterModel {
        pi_p: 0.3,
        f_p: ScoreDistribution::Normal { mu: 0.0, sigma: 1.0 },
        f_q: ScoreDistribution::Normal { mu: 0.0, sigma: 1.0 },
        ratio: 0.2,
    };
    let rep = validate_topk_bias(&model, &[1_000, 10_000], 100, 1).unwrap();
    assert!(rep.delta.abs() < 1e-9);
    assert!(rep.note.is_some() && !rep.passed);
    let last = rep.rows.last().unwrap();
    assert!((last.mean_pi_hat - 0.3).abs() < 4.0 * last.binomial_se);
}

fn two_cluster_pool() -> (Vec<Matrix>, Vec<f64>) {
    let mut r = rng::seeded(21);
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

fn diameter(pool: &[Matrix]) -> f64 {
    let mut d: f64 = 0.0;
    for a in pool {
        for b in pool {
            d = d.max(libm::sqrt(a.frobenius_dist_sq(b)));
        }
    }
    d
}

#[test]
fn coverage_two_clusters() {
    let (pool, scores) = two_cluster_pool();
    let intra = diameter(&pool[..30]).max(diameter(&pool[30..]));
    let rep = validate_epsilon_coverage(&pool, &scores, &CoverageConfig::new(intra, 0.1, 2_000, 5)).unwrap();
    assert_eq!(rep.n_eps, 2);
    assert_eq!(rep.n_cells, 2);
    assert!(rep.bound_vacuous && rep.m_bound > pool.len());
    assert!(rep.m_used < pool.len(), "{rep:?}");
    assert!(rep.empirical_coverage >= 0.9, "{rep:?}");
    assert!(rep.passed);
}

#[test]
fn coverage_trivial_cases() {
    let (pool, scores) = two_cluster_pool();
    let all = CoverageConfig { m_override: Some(pool.len()), ..CoverageConfig::new(0.01, 0.1, 50, 0) };
    let rep = validate_epsilon_coverage(&pool, &scores, &all).unwrap();
    assert_eq!(rep.empirical_coverage, 1.0);
    let huge = diameter(&pool) * 1.01;
    let one = CoverageConfig { m_override: Some(1), ..CoverageConfig::new(huge, 0.1, 50, 0) };
    let rep = validate_epsilon_coverage(&pool, &scores, &one).unwrap();
    assert_eq!(rep.n_eps, 1);
    assert_eq!(rep.empirical_coverage, 1.0);
}

#[test]
fn greedy_net_covers_pool() {
    let (pool, _) = two_cluster_pool();
    for eps in [0.05, 0.2, 1.0, 10.0] {
        let proj = net_projection(&pool, eps);
        for (i, &p) in proj.iter().enumerate() {
            assert!(libm::sqrt(pool[i].frobenius_dist_sq(&pool[p])) <= eps);
        }
    }
}

#[test]
fn discrepancy_examples() {
    let (pool, _) = two_cluster_pool();
    let weights: Vec<f64> = (0..pool.len()).map(|i| 1.0 + (i % 3) as f64).collect();
    let identity: Vec<usize> = (0..pool.len()).collect();
    let anchor = TestFunction::DistanceToAnchor(Matrix::filled(3, 3, 1.0));
    let rep = validate_discrepancy(&pool, &weights, &identity, &anchor, 0.1).unwrap();
    assert_eq!(rep.discrepancy, 0.0);

    let eps = diameter(&pool[..30]);
    let mut r = rng::seeded(4);
    // random ε-projection: each point maps to a random neighbour within ε
    let proj: Vec<usize> = (0..pool.len())
        .map(|i| {
            let near: Vec<usize> = (0..pool.len()).filter(|&j| libm::sqrt(pool[i].frobenius_dist_sq(&pool[j])) <= eps).collect();
            near[rng::below(&mut r, near.len())]
        })
        .collect();
    let rep = validate_discrepancy(&pool, &weights, &proj, &anchor, eps).unwrap();
    assert!(rep.discrepancy <= eps && rep.passed);
    assert!(rep.discrepancy > 0.0);
    // independent evaluation of both expectations
    let total: f64 = weights.iter().sum();
    let f = |m: &Matrix| libm::sqrt(m.as_slice().iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>());
    let e_full: f64 = pool.iter().zip(&weights).map(|(m, w)| w * f(m)).sum::<f64>() / total;
    let e_proj: f64 = proj.iter().zip(&weights).map(|(&p, w)| w * f(&pool[p])).sum::<f64>() / total;
    assert!((rep.discrepancy - (e_full - e_proj).abs()).abs() < 1e-12);

    let constant = validate_discrepancy(&pool, &weights, &proj, &TestFunction::Constant(2.5), eps).unwrap();
    assert_eq!((constant.discrepancy, constant.bound), (0.0, 0.0));
    assert!(constant.passed);

    let mut far = identity.clone();
    far[0] = 35;
    assert!(matches!(validate_discrepancy(&pool, &weights, &far, &anchor, eps), Err(Error::InvalidProjection(0))));
}

#[test]
fn sps_consistency_generators() {
    let uniform = validate_sps_consistency(&StreamGenerator::IidUniform { lo: 0.0, hi: 2.0 }, &DEFAULT_L_GRID, 3).unwrap();
    assert!(uniform.passed, "{uniform:?}");
    assert!(uniform.final_relative_error < 0.05);

    let constant = validate_sps_consistency(&StreamGenerator::Constant { value: 0.7 }, &DEFAULT_L_GRID, 0).unwrap();
    assert!(constant.points.iter().all(|p| (p.running_mean - 0.7).abs() < 1e-12));
    assert!(constant.passed);

    let model = MixtureModel::new(two_prototypes(4.0), vec![0.25, 0.75]).unwrap();
    let mixture = validate_sps_consistency(&StreamGenerator::Mixture { model }, &DEFAULT_L_GRID, 2).unwrap();
    assert!((mixture.analytic_mean - 4.0 * (1.0 - 0.0625 - 0.5625)).abs() < 1e-12);
    assert!(mixture.passed, "{mixture:?}");

    let ar = validate_sps_consistency(&StreamGenerator::Ar1LogNormal { phi: 0.5, sigma: 0.5 }, &DEFAULT_L_GRID, 9).unwrap();
    assert!((ar.analytic_mean - libm::exp(0.125)).abs() < 1e-15);
    assert!(ar.passed, "{ar:?}");
}

#[test]
fn universal_table_small() {
    let d = generate_synthetic(&SynthConfig {
        n_regions: 6,
        t_total: 64,
        window_len: 32,
        stride: 16,
        n_subjects: 12,
        n_prototypes: 2,
        class_map: vec![0, 1],
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let ops = select_operators(&["pearson", "cov_empirical"]).unwrap();
    let cfg = FitConfig { shape: EncoderShape { heads: 2, head_dim: 8, value_dim: 8, out_dim: 8 }, max_epochs: 40, ..FitConfig::default() };
    let rep = validate_universal(&d, &ops, &cfg).unwrap();
    assert_eq!(rep.rows.len(), 2);
    assert!(rep.contract_violations.is_empty());
    for row in &rep.rows {
        assert!(row.mse_end < row.mse_start, "{row:?}");
    }
    assert!(validate_universal(&d, &[], &cfg).is_err());
}

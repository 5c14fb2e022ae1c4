use super::*;
use crate::dataset::{generate_synthetic, SynthConfig};
use crate::spi::{compute_table, select_operators};
use alloc::format;
use alloc::string::ToString;
use proptest::prelude::*;

fn record(pairs: &[(&str, f64)]) -> SpsRecord {
    SpsRecord { scores: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(), epochs: 5 }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}

/// Upper regularised incomplete gamma Q(a, x) by series / continued fraction.
fn gamma_q(a: f64, x: f64) -> f64 {
    let lg = libm::lgamma(a);
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
        }
        1.0 - sum * libm::exp(-x + a * libm::log(x) - lg)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            d = if d.abs() < tiny { tiny } else { d };
            c = b + an / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            h *= d * c;
        }
        libm::exp(-x + a * libm::log(x) - lg) * h
    }
}

fn chi_square_p(observed: &[usize], expected: f64) -> f64 {
    let stat: f64 = observed.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    gamma_q((observed.len() - 1) as f64 / 2.0, stat / 2.0)
}

#[test]
fn gamma_oracle_matches_known_critical_values() {
    // chi-square(9) at 21.666 has p = 0.01; chi-square(2) survival is exp(-x/2)
    assert!((gamma_q(4.5, 21.666 / 2.0) - 0.01).abs() < 1e-4);
    assert!((gamma_q(1.0, 1.7) - libm::exp(-1.7)).abs() < 1e-12);
}

#[test]
fn topk_examples() {
    let r = record(&[("a", 3.0), ("b", 1.0), ("c", 2.0)]);
    assert_eq!(select_topk_sps(&r, 2).unwrap().sample_ids, ["b", "c"]);
    assert_eq!(select_topk_sps(&r, 3).unwrap().sample_ids, ["b", "c", "a"]);
    let tied = record(&[("z", 1.0), ("m", 1.0), ("a", 1.0)]);
    assert_eq!(select_topk_sps(&tied, 2).unwrap().sample_ids, ["a", "m"]);
    assert!(matches!(select_topk_sps(&r, 4), Err(Error::PoolExhausted { requested: 4, available: 3 })));
    assert_eq!(select_topk_sps(&r, 2).unwrap().sps_epochs, Some(5));
}

proptest! {
    #[test]
    fn topk_invariant_under_monotone_transform(scores in prop::collection::vec(-5.0f64..5.0, 3..30), m in 1usize..3) {
        let pairs: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &v)| (format!("x{i:02}"), v)).collect();
        let a = SpsRecord { scores: pairs.iter().cloned().collect(), epochs: 1 };
        let b = SpsRecord { scores: pairs.iter().map(|(k, v)| (k.clone(), libm::exp(*v) * 3.0 + 1.0)).collect(), epochs: 1 };
        prop_assert_eq!(select_topk_sps(&a, m).unwrap().sample_ids, select_topk_sps(&b, m).unwrap().sample_ids);
    }
}

#[test]
fn target_size_rounds() {
    assert_eq!(target_size(0.1, 210), 21);
    assert_eq!(target_size(0.3, 25), 8);
    assert_eq!(target_size(1.0, 7), 7);
    assert_eq!(target_size(0.01, 10), 1);
}

#[test]
fn stable_pool_quantile_arithmetic() {
    let scores: BTreeMap<String, f64> = (0..10).map(|i| (format!("s{i}"), i as f64)).collect();
    assert_eq!(stable_pool(&scores, 0.0).unwrap().len(), 10);
    let half = stable_pool(&scores, 0.5).unwrap();
    // q(0.5) over 0..9 is 4.5, leaving 0..4
    assert_eq!(half.iter().map(|(k, _)| *k).collect::<Vec<_>>(), ["s0", "s1", "s2", "s3", "s4"]);
    let tiny = stable_pool(&scores, 0.95).unwrap();
    assert_eq!(tiny.len(), 1);
    assert!(stable_pool(&scores, 1.0).is_err());
}

#[test]
fn density_balanced_budget_errors() {
    let scores: BTreeMap<String, f64> = (0..10).map(|i| (format!("s{i}"), i as f64)).collect();
    let p = DensityParams { beta: 0.5, ..Default::default() };
    assert!(matches!(
        select_density_balanced_scores(&scores, 6, &p, 1),
        Err(Error::PoolExhausted { requested: 6, available: 5 })
    ));
    let cs = select_density_balanced_scores(&scores, 5, &p, 1).unwrap();
    let mut got = cs.sample_ids.clone();
    got.sort();
    assert_eq!(got, ["s0", "s1", "s2", "s3", "s4"]);
    assert_eq!(cs.params["pool_size"], 5.0);
}

#[test]
fn density_balanced_is_deterministic() {
    let scores: BTreeMap<String, f64> = (0..40).map(|i| (format!("s{i:02}"), libm::sin(i as f64) + 2.0)).collect();
    let p = DensityParams::default();
    let a = select_density_balanced_scores(&scores, 8, &p, 11).unwrap();
    let b = select_density_balanced_scores(&scores, 8, &p, 11).unwrap();
    let c = select_density_balanced_scores(&scores, 8, &p, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.sample_ids, c.sample_ids);
    let unique: BTreeSet<_> = a.sample_ids.iter().collect();
    assert_eq!(unique.len(), 8);
}

#[test]
fn identical_scores_reduce_to_uniform_sampling() {
    // 5 ids, m = 2: the 10 unordered subsets must be equally likely.
    let scores: BTreeMap<String, f64> = (0..5).map(|i| (format!("s{i}"), 0.7)).collect();
    let p = DensityParams::default();
    let subsets: Vec<(usize, usize)> = (0..5).flat_map(|a| (a + 1..5).map(move |b| (a, b))).collect();
    let mut counts = vec![0usize; subsets.len()];
    let trials = 10_000;
    for t in 0..trials {
        let cs = select_density_balanced_scores(&scores, 2, &p, t as u64).unwrap();
        let mut idx: Vec<usize> = cs.sample_ids.iter().map(|s| s[1..].parse().unwrap()).collect();
        idx.sort();
        counts[subsets.iter().position(|&(a, b)| a == idx[0] && b == idx[1]).unwrap()] += 1;
    }
    let p_value = chi_square_p(&counts, trials as f64 / subsets.len() as f64);
    assert!(p_value > 0.01, "chi-square p = {p_value}, counts {counts:?}");
}

#[test]
fn sparse_region_is_oversampled() {
    let mut r = rng::seeded(3);
    let mut scores = BTreeMap::new();
    for i in 0..90 {
        scores.insert(format!("d{i:02}"), 1.0 + 0.05 * rng::normal(&mut r));
    }
    for i in 0..10 {
        scores.insert(format!("s{i:02}"), 5.0 + 0.05 * rng::normal(&mut r));
    }
    let p = DensityParams { beta: 0.0, ..Default::default() };
    let (trials, m) = (10_000u64, 10);
    let mut sparse = 0usize;
    for t in 0..trials {
        let cs = select_density_balanced_scores(&scores, m, &p, t).unwrap();
        sparse += cs.sample_ids.iter().filter(|s| s.starts_with('s')).count();
    }
    let rate = sparse as f64 / (trials as f64 * m as f64);
    assert!(rate >= 2.0 * 0.1, "sparse selection rate {rate}");
}

#[test]
fn random_inclusion_rate_matches_binomial() {
    let pool = ids(20);
    let (m, trials) = (5, 10_000);
    let mut counts = vec![0usize; pool.len()];
    for t in 0..trials {
        for id in select_random(&pool, m, t as u64).unwrap().sample_ids {
            counts[id[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    let p = m as f64 / pool.len() as f64;
    let se = libm::sqrt(p * (1.0 - p) / trials as f64);
    for c in counts {
        assert!((c as f64 / trials as f64 - p).abs() < 4.0 * se);
    }
    assert_eq!(select_random(&pool, 5, 9).unwrap(), select_random(&pool, 5, 9).unwrap());
    let mut all = select_random(&pool, 20, 1).unwrap().sample_ids;
    all.sort();
    assert_eq!(all, pool);
    assert!(select_random(&pool, 21, 1).is_err());
}

#[test]
fn weighted_sampler_first_draw_follows_weights() {
    let w = [1.0, 3.0, 6.0];
    let mut counts = [0usize; 3];
    let mut r = rng::seeded(0);
    let trials = 20_000;
    for _ in 0..trials {
        counts[weighted_sample_without_replacement(&w, 1, &mut r).unwrap()[0]] += 1;
    }
    for (c, wi) in counts.iter().zip(w) {
        let p = wi / 10.0;
        assert!((*c as f64 / trials as f64 - p).abs() < 4.0 * libm::sqrt(p * (1.0 - p) / trials as f64));
    }
    assert!(weighted_sample_without_replacement(&[1.0, f64::NAN], 1, &mut r).is_err());
    let mut all = weighted_sample_without_replacement(&[0.0, 0.0, 1.0], 3, &mut r).unwrap();
    assert_eq!(all[0], 2);
    all.sort();
    assert_eq!(all, [0, 1, 2]);
}

#[test]
fn kde_examples() {
    let inv_sqrt_2pi = 1.0 / libm::sqrt(2.0 * core::f64::consts::PI);
    assert!((kde_density(&[0.0], 1.0, 0.0) - inv_sqrt_2pi).abs() < 1e-15);
    assert!((kde_density(&[0.0], 1.0, 0.0) - 0.39894).abs() < 1e-5);
    let sym = [-1.0, 1.0];
    for q in [0.1, 0.7, 2.5] {
        assert!((kde_density(&sym, 0.5, q) - kde_density(&sym, 0.5, -q)).abs() < 1e-15);
    }
    assert!(kde_density(&[0.0], 1.0, 10.0) < 1e-12);
    // zero bandwidth is floored, never a division by zero
    assert!(kde_density(&[0.0], 0.0, 0.0).is_finite());
}

#[test]
fn kde_integrates_to_one() {
    let values = [0.3, 0.35, 1.2, 2.0, 2.1, 2.15, 4.0];
    let kde = DensityEstimate::fit(&values, BandwidthRule::Silverman, 1e-8).unwrap();
    let (lo, hi, n) = (-10.0, 15.0, 20_000);
    let dx = (hi - lo) / n as f64;
    let ys: Vec<f64> = (0..=n).map(|i| kde.density(lo + i as f64 * dx)).collect();
    let integral = dx * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[n]));
    assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    assert!(ys.iter().all(|&y| y > 0.0));
}

#[test]
fn silverman_rule_by_hand() {
    let v = [1.0, 2.0, 3.0, 4.0, 10.0];
    let sd = math::std_dev(&v, 1);
    // type-7 quartiles are 2 and 4
    let iqr = 2.0 / 1.34;
    let expected = 0.9 * sd.min(iqr) * libm::pow(5.0, -0.2);
    assert!((silverman_bandwidth(&v) - expected).abs() < 1e-14);
    assert_eq!(silverman_bandwidth(&[2.0; 6]), BANDWIDTH_FLOOR);
    // IQR collapses but σ does not
    let spike = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0];
    let sd = math::std_dev(&spike, 1);
    assert!((silverman_bandwidth(&spike) - 0.9 * sd * libm::pow(7.0, -0.2)).abs() < 1e-14);
}

fn planted(seed: u64) -> (FcTable, Vec<String>, Vec<usize>) {
    let cfg = SynthConfig {
        n_regions: 8,
        t_total: 200,
        n_subjects: 12,
        n_prototypes: 2,
        class_map: vec![0, 1],
        prototype_separation: 0.8,
        noise_sigma: 0.1,
        seed,
        ..SynthConfig::default()
    };
    let d = generate_synthetic(&cfg).unwrap();
    let (table, failures) = compute_table(&d, &select_operators(&["pearson"]).unwrap());
    assert!(failures.is_empty());
    let labels = d.samples.iter().map(|s| s.class_label as usize).collect();
    (table, d.sample_ids(), labels)
}

#[test]
fn kmeans_recovers_planted_clusters() {
    let mut hits = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let (table, ids, labels) = planted(seed);
        let cs = select_kmeans(&table, "pearson", &ids, 2, seed).unwrap();
        let chosen: BTreeSet<usize> =
            cs.sample_ids.iter().map(|id| labels[ids.iter().position(|x| x == id).unwrap()]).collect();
        hits += (chosen.len() == 2) as usize;
    }
    assert!(hits as f64 >= 0.95 * seeds as f64, "{hits}/{seeds}");
}

#[test]
fn kmeans_edge_cases() {
    let (table, ids, _) = planted(1);
    let mut all = select_kmeans(&table, "pearson", &ids, ids.len(), 0).unwrap().sample_ids;
    all.sort();
    let mut sorted_ids = ids.clone();
    sorted_ids.sort();
    assert_eq!(all, sorted_ids);

    let one = select_kmeans(&table, "pearson", &ids, 1, 0).unwrap().sample_ids;
    let vecs: Vec<Vec<f64>> = ids.iter().map(|id| table.get("pearson", id).unwrap().upper_triangle()).collect();
    let dim = vecs[0].len();
    let centre: Vec<f64> = (0..dim).map(|j| vecs.iter().map(|v| v[j]).sum::<f64>() / vecs.len() as f64).collect();
    let closest = (0..ids.len()).min_by(|&a, &b| sq_dist(&vecs[a], &centre).total_cmp(&sq_dist(&vecs[b], &centre))).unwrap();
    assert_eq!(one, [ids[closest].clone()]);

    assert!(select_kmeans(&table, "pearson", &ids, ids.len() + 1, 0).is_err());
    assert!(matches!(select_kmeans(&table, "spearman", &ids, 2, 0), Err(Error::MissingFc { .. })));
    let dup = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, 3.0]];
    assert!(matches!(kmeans(&dup, 3, 0), Err(Error::PoolExhausted { requested: 3, available: 2 })));
    assert_eq!(kmeans(&dup, 2, 0).unwrap().len(), 2);
}

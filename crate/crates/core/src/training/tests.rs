use super::*;
use crate::dataset::{generate_windowed, SynthConfig};
use proptest::prelude::*;

fn random_embeddings(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| (0..dim).map(|_| rng::normal(&mut r)).collect()).collect()
}

#[test]
fn equal_similarities_give_log_counts() {
    for m in [1usize, 3, 7] {
        let emb = vec![vec![0.3, -1.0, 2.0]; m + 2];
        let mut groups = vec![0usize, 0];
        groups.extend(1..=m);
        let (with, _) = contrastive_loss(&emb, &groups, 0.2, true).unwrap();
        let (without, _) = contrastive_loss(&emb, &groups, 0.2, false).unwrap();
        assert!((with - ((m + 1) as f64).ln()).abs() < 1e-12);
        assert!((without - (m as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn literal_denominator_can_be_negative() {
    // Positive pair aligned, negatives opposite: -2/τ + ln M < 0.
    let emb = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]];
    let groups = [0, 0, 1, 2];
    let (loss, _) = contrastive_loss(&emb, &groups, 0.5, false).unwrap();
    assert!((loss - (-4.0 + 2f64.ln())).abs() < 1e-12);
    assert!(loss < 0.0);
}

#[test]
fn degenerate_batches_are_rejected() {
    let emb = random_embeddings(3, 2, 0);
    assert_eq!(contrastive_loss(&emb, &[0, 1, 2], 0.2, true).unwrap_err(), Error::NoPositivePair);
    assert_eq!(contrastive_loss(&emb, &[4, 4, 4], 0.2, true).unwrap_err(), Error::SingleSubject);
}

pub(crate) fn contrastive_fd_error(seed: u64, include_positive: bool) -> f64 {
    let emb = random_embeddings(8, 5, seed);
    let groups = [0, 1, 2, 0, 1, 2, 0, 1];
    let (_, grads) = contrastive_loss(&emb, &groups, 0.2, include_positive).unwrap();
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for i in 0..emb.len() {
        for c in 0..emb[i].len() {
            let mut plus = emb.clone();
            plus[i][c] += h;
            let mut minus = emb.clone();
            minus[i][c] -= h;
            let fd = (contrastive_loss(&plus, &groups, 0.2, include_positive).unwrap().0
                - contrastive_loss(&minus, &groups, 0.2, include_positive).unwrap().0)
                / (2.0 * h);
            let a = grads[i][c];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn contrastive_gradients_match_central_differences() {
    for seed in 0..5 {
        assert!(contrastive_fd_error(seed, true) < 1e-4);
        assert!(contrastive_fd_error(seed, false) < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_rotation_invariant_and_bounded(seed in any::<u64>()) {
        let emb = random_embeddings(6, 3, seed);
        let groups = [0, 0, 1, 1, 2, 2];
        // Random orthogonal map from the QR-free route: Householder reflection pair.
        let mut r = rng::seeded(seed ^ 7);
        let reflect = |v: &[f64], u: &[f64]| -> Vec<f64> {
            let k = 2.0 * dot(v, u) / dot(u, u);
            v.iter().zip(u).map(|(a, b)| a - k * b).collect()
        };
        let u1: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
        let u2: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
        let rotated: Vec<Vec<f64>> = emb.iter().map(|v| reflect(&reflect(v, &u1), &u2)).collect();
        let (a, _) = contrastive_loss(&emb, &groups, 0.2, true).unwrap();
        let (b, _) = contrastive_loss(&rotated, &groups, 0.2, true).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert!(a >= 0.0);
    }
}

fn tiny_params() -> EncoderParams {
    init_params(1, &EncoderShape { heads: 1, head_dim: 1, value_dim: 1, out_dim: 1 }, 0).unwrap()
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = init_params(6, &EncoderShape::default(), 1).unwrap();
    let before = p.clone();
    let g = p.zeros_like();
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
    assert_eq!(p, before);
    assert_eq!(s.step, 1);
}

#[test]
fn adam_first_step_hand_value() {
    let mut p = tiny_params();
    let start = p.w_q[0][(0, 0)];
    let mut g = p.zeros_like();
    g.w_q[0][(0, 0)] = 1.0;
    let mut s = AdamState::new(&p);
    adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
    let delta = p.w_q[0][(0, 0)] - start;
    assert!((delta - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15, "{delta}");
    let after_one = p.w_q[0][(0, 0)];
    adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
    assert!(p.w_q[0][(0, 0)] < after_one);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut p = tiny_params();
    let before = p.clone();
    let mut g = p.zeros_like();
    g.w_o[(0, 0)] = f64::NAN;
    let mut s = AdamState::new(&p);
    assert!(matches!(adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()), Err(Error::NonFiniteGradient(_))));
    assert_eq!(p, before);
    assert_eq!(s.step, 0);
}

fn small_dataset() -> Dataset {
    generate_windowed(&SynthConfig { n_subjects: 8, t_total: 90, window_len: 30, stride: 15, seed: 4, ..SynthConfig::default() })
        .unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 8,
        lr: 1e-2,
        shape: EncoderShape { heads: 2, head_dim: 4, value_dim: 4, out_dim: 4 },
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn batches_cover_each_sample_once_with_negatives() {
    let d = small_dataset();
    let subjects = d.by_subject();
    let batches = subject_batches(&subjects, 8, &mut rng::seeded(0));
    let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..d.len()).collect::<Vec<_>>());
    for b in &batches {
        let subs: alloc::collections::BTreeSet<&str> = b.iter().map(|&i| d.samples[i].subject_id.as_str()).collect();
        assert!(subs.len() >= 2);
        assert!(subs.len() < b.len(), "batch must contain a positive pair");
    }
}

#[test]
fn frozen_training_has_flat_trace_and_zero_sps() {
    let d = small_dataset();
    let out = train(&d, &TrainConfig { lr: 0.0, ..small_cfg() }).unwrap();
    let first = out.trace.rows[0].loss;
    assert!(out.trace.rows.iter().all(|r| r.loss == first));
    assert!(out.sps.scores.values().all(|&s| s == 0.0));
    assert_eq!(out.sps.epochs, 6);
}

#[test]
fn training_is_deterministic_and_moves_sps() {
    let d = small_dataset();
    let a = train(&d, &small_cfg()).unwrap();
    let b = train(&d, &small_cfg()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.sps, b.sps);
    assert_eq!(a.params, b.params);
    assert!(a.sps.scores.values().all(|&s| s > 0.0));
    assert!(a.trace.rows.iter().all(|r| r.mean_perturbation.is_some()));
}

#[test]
fn snapshot_cadence_sets_transition_count() {
    let d = small_dataset();
    let out = train(&d, &TrainConfig { snapshot_every: 2, ..small_cfg() }).unwrap();
    assert_eq!(out.sps.epochs, 3);
    assert!(out.trace.rows[0].mean_perturbation.is_none());
    assert!(out.trace.rows[1].mean_perturbation.is_some());
}

#[test]
fn snapshot_pass_leaves_parameters_untouched() {
    let d = small_dataset();
    let p = init_params(30, &small_cfg().shape, 9).unwrap();
    let before = p.clone();
    let (fused, pooled) = snapshot_pass(&p, &d).unwrap();
    assert_eq!(fused.len(), d.len());
    assert_eq!(pooled.len(), d.len());
    assert_eq!(p, before);
    assert_eq!(p.fingerprint(), before.fingerprint());
}

#[test]
fn config_validation() {
    assert!(TrainConfig { epochs: 1, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 2, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { temperature: 0.0, ..TrainConfig::default() }.validate().is_err());
}

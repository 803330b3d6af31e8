use mosaic_core::policy::agent::NetPolicy;
use mosaic_core::policy::checkpoint::{load_policy, quantize, save_policy};
use mosaic_core::policy::nn::{batch_from_rows, PolicyNet};
use mosaic_core::policy::obs::{ObsNormalizer, ObservationSpec};
use mosaic_core::policy::residual::{
    compose, distill_step, DistillConfig, DistillSample, Distiller, RecordedTeacher, Regime, Teachers,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn unit_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.into_iter().map(|v| v / norm).collect()
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut widths = vec![rng.random_range(2..6)];
        for _ in 0..rng.random_range(1..4) {
            widths.push(rng.random_range(2..8));
        }
        widths.push(rng.random_range(1..4));
        let net = PolicyNet::<f64>::init(&widths, false, 1.0, &mut rng).unwrap();
        let samples = 5;
        let obs = batch_from_rows(
            &(0..samples).map(|_| (0..widths[0]).map(|_| rng.random_range(-2.0..2.0)).collect()).collect::<Vec<Vec<f64>>>(),
        );
        let target = batch_from_rows(
            &(0..samples)
                .map(|_| (0..*widths.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect::<Vec<Vec<f64>>>(),
        );
        let (_, grads) = net.mse_loss_grad(&obs, &target).unwrap();
        let h = 1e-6;
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (plus.mse_loss_grad(&obs, &target).unwrap().0 - minus.mse_loss_grad(&obs, &target).unwrap().0) / (2.0 * h);
            let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn student_equals_base_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = ObservationSpec::default().actor_dim(6);
    let base = PolicyNet::init(&[dim, 64, 64, 6], false, 1.0, &mut rng).unwrap();
    let d = Distiller::new(dim, 6, DistillConfig::default(), &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = unit_obs(&mut rng, dim);
        let b = base.forward(&x).unwrap();
        let s = compose(&base, &d.residual, &x).unwrap();
        worst = b.iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    assert!(worst <= 1e-3, "max deviation {worst}");
}

#[test]
fn distillation_leaves_the_base_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = PolicyNet::init(&[8, 16, 3], false, 1.0, &mut rng).unwrap();
    let other = PolicyNet::init(&[8, 16, 3], false, 1.0, &mut rng).unwrap();
    let before = base.fingerprint();
    let mut d = Distiller::new(8, 3, DistillConfig { batch_size: 32, ..Default::default() }, &mut rng).unwrap();
    let teachers = Teachers { adapt: &RecordedTeacher, general: &other };
    for _ in 0..500 {
        let batch: Vec<DistillSample> = (0..32)
            .map(|i| {
                let obs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                if i % 2 == 0 {
                    DistillSample { obs, regime: Some(Regime::Adapt), label: Some(vec![0.5, -0.5, 0.0]) }
                } else {
                    DistillSample { obs, regime: Some(Regime::General), label: None }
                }
            })
            .collect();
        d.step(&base, &teachers, &batch).unwrap();
    }
    assert_eq!(base.fingerprint(), before);
}

#[test]
fn conflicting_teachers_reach_the_weighted_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Student s(x) = base(x) + r(x), both affine in one dimension.
    let base = PolicyNet::from_parts(&[1, 1], false, vec![0.5, 0.1]).unwrap();
    let general_teacher = PolicyNet::from_parts(&[1, 1], false, vec![-1.0, 0.0]).unwrap();
    let (w_a, w_g) = (1.0, 3.0);
    let mut batch = Vec::new();
    for _ in 0..40 {
        let x: f64 = rng.random_range(-1.0..1.0);
        batch.push(DistillSample { obs: vec![x], regime: Some(Regime::Adapt), label: Some(vec![2.0 * x + 0.3]) });
    }
    for _ in 0..60 {
        let x: f64 = rng.random_range(-1.0..1.0);
        batch.push(DistillSample { obs: vec![x], regime: Some(Regime::General), label: None });
    }
    // Weighted normal equations for s(x) = a x + c.
    let (mut sxx, mut sx, mut s1, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut targets = Vec::new();
    for s in &batch {
        let x = s.obs[0];
        let (w, y) = match s.regime.unwrap() {
            Regime::Adapt => (w_a / 40.0, 2.0 * x + 0.3),
            Regime::General => (w_g / 60.0, -x),
        };
        sxx += w * x * x;
        sx += w * x;
        s1 += w;
        sxy += w * x * y;
        sy += w * y;
        targets.push((w, x, y));
    }
    let det = sxx * s1 - sx * sx;
    let a = (sxy * s1 - sx * sy) / det;
    let c = (sxx * sy - sx * sxy) / det;
    let optimum: f64 = targets.iter().map(|(w, x, y)| w * (a * x + c - y).powi(2)).sum();

    let cfg = DistillConfig { w_adapt: w_a, w_general: w_g, learning_rate: 1e-2, ..Default::default() };
    let mut d = Distiller::from_residual(PolicyNet::zeros(&[1, 1], false).unwrap(), cfg).unwrap();
    let teachers = Teachers { adapt: &RecordedTeacher, general: &general_teacher };
    for step in 0..6000 {
        d.cfg.learning_rate = if step < 3000 { 1e-2 } else { 1e-3 };
        d.step(&base, &teachers, &batch).unwrap();
    }
    let fin = distill_step(&base, &d.residual, &teachers, &batch, &d.cfg).unwrap().loss;
    assert!((fin - optimum).abs() < 1e-3, "final {fin} vs optimum {optimum}");
}

#[test]
fn checkpoint_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = ObservationSpec::default();
    let dim = spec.actor_dim(6);
    let actor = PolicyNet::init(&[dim, 32, 6], true, 1.0, &mut rng).unwrap();
    let mut policy = NetPolicy::new(actor, ObsNormalizer::new(dim), spec);
    policy.residual = Some(Distiller::new(dim, 6, DistillConfig::default(), &mut rng).unwrap().residual);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    save_policy(&policy, 6, 8, &path).unwrap();
    assert_eq!(load_policy(&path).unwrap(), quantize(&policy));
}

proptest! {
    #[test]
    fn composition_is_a_sum(seed in 0u64..500, x in prop::collection::vec(-3.0f64..3.0, 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = PolicyNet::init(&[4, 8, 2], false, 1.0, &mut rng).unwrap();
        let res = PolicyNet::init(&[4, 5, 2], false, 1.0, &mut rng).unwrap();
        let s = compose(&base, &res, &x).unwrap();
        for ((s, b), r) in s.iter().zip(base.forward(&x).unwrap()).zip(res.forward(&x).unwrap()) {
            prop_assert!((s - (b + r)).abs() < 1e-12);
        }
    }
}

use mosaic_core::curriculum::{bin_count, sample_categorical, CurriculumError, SamplerConfig, SamplerState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn state(lengths: &[usize]) -> SamplerState {
    SamplerState::new(SamplerConfig::default(), lengths).unwrap()
}

#[test]
fn fresh_state_is_uniform() {
    let s = state(&[100, 200, 300, 400]);
    assert_eq!(s.motion_probabilities(), vec![0.25; 4]);
    assert_eq!(s.bin_probabilities(1).unwrap(), vec![0.25; 4]);
}

#[test]
fn ramp_reaches_targets_after_warmup() {
    let cfg = SamplerConfig { warmup_steps: 100, ramp_steps: 200, ..SamplerConfig::default() };
    assert_eq!(cfg.mixture_weights(99), (0.0, 0.0, 1.0));
    let (wf, wn, _) = cfg.mixture_weights(200);
    assert!((wf - 0.25).abs() < 1e-15 && (wn - 0.1).abs() < 1e-15);
    assert_eq!(cfg.mixture_weights(300).0, cfg.w_fail_target);
    assert_eq!(cfg.mixture_weights(10_000).1, cfg.w_novel_target);
}

#[test]
fn failures_pull_probability_toward_hard_motions() {
    let mut s = state(&[100, 100, 100]);
    s.step = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let t = s.sample_start_time(2, &mut rng).unwrap();
        s.record_episode(2, t, true).unwrap();
        let t = s.sample_start_time(0, &mut rng).unwrap();
        s.record_episode(0, t, false).unwrap();
    }
    let p = s.motion_probabilities();
    assert!(p[2] > p[1] && (p[1] - p[0]).abs() < 1e-15, "{p:?}");
    assert_eq!((s.sample_counts[2], s.fail_counts[2]), (20, 20));
}

#[test]
fn failing_bins_gain_weight_but_never_starve_others() {
    let mut s = state(&[500]);
    for _ in 0..50 {
        s.record_episode(0, 420, true).unwrap();
    }
    let p = s.bin_probabilities(0).unwrap();
    assert_eq!(p.len(), bin_count(500, 50));
    let best = p.iter().cloned().fold(0.0, f64::max);
    assert_eq!(p[8], best);
    assert!(p.iter().all(|&x| x > 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn pools_and_remaps_cover_every_environment() {
    let cfg = SamplerConfig { active_pool: Some(3), ..SamplerConfig::default() };
    let mut s = SamplerState::new(cfg, &[60, 70, 80, 90, 100]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pool = s.select_active_pool(&mut rng).unwrap();
    let mut sorted = pool.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 3);
    let envs = s.remap_environments(&pool, 10, &mut rng);
    for m in &pool {
        let n = envs.iter().filter(|&&e| e == *m).count();
        assert!(n == 3 || n == 4, "motion {m} got {n} envs");
    }
    assert_eq!(s.assign_counts.iter().sum::<u64>(), 10);
    assert!(!s.remap_due());
    s.advance(s.cfg.remap_interval);
    assert!(s.remap_due());

    let too_big = SamplerConfig { active_pool: Some(9), ..SamplerConfig::default() };
    let s = SamplerState::new(too_big, &[10, 10]).unwrap();
    assert_eq!(s.select_active_pool(&mut rng), Err(CurriculumError::PoolTooLarge { pool: 9, motions: 2 }));
}

#[test]
fn state_survives_json() {
    let mut s = state(&[120, 80]);
    s.record_episode(1, 30, true).unwrap();
    s.step = 77;
    let back: SamplerState = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn categorical_skips_zero_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let i = sample_categorical(&[0.0, 2.0, 0.0, 1.0, 0.0], &mut rng);
        assert!(i == 1 || i == 3);
    }
}

proptest! {
    #[test]
    fn probabilities_form_a_distribution(
        counts in prop::collection::vec((0u64..100, 0u64..100, 0u64..100), 1..12),
        step in 0u64..20_000,
    ) {
        let lengths = vec![100; counts.len()];
        let mut s = state(&lengths);
        for (i, &(a, b, c)) in counts.iter().enumerate() {
            s.sample_counts[i] = a.max(b);
            s.fail_counts[i] = b;
            s.assign_counts[i] = c;
        }
        s.step = step;
        let p = s.motion_probabilities();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean = s.fail_counts.iter().zip(&s.sample_counts).map(|(&f, &n)| f as f64 / (n as f64 + 1.0)).sum::<f64>() / p.len() as f64;
        prop_assert!(s.failure_rates().iter().all(|&r| r <= s.cfg.cap_beta * mean + 1e-12));
    }

    #[test]
    fn start_frames_leave_a_transition(len in 2usize..400, seed in 0u64..1000) {
        let mut s = state(&[len]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let t = s.sample_start_time(0, &mut rng).unwrap();
            prop_assert!(t + 1 < len);
        }
    }

    #[test]
    fn weights_never_decrease_during_the_ramp(a in 0u64..10_000, b in 0u64..10_000) {
        let cfg = SamplerConfig::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(cfg.mixture_weights(lo).0 <= cfg.mixture_weights(hi).0);
        prop_assert!(cfg.mixture_weights(lo).2 >= cfg.mixture_weights(hi).2);
    }
}

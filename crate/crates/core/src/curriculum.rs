//! Two-level adaptive resampling.
//!
//! Motion level: environments are periodically remapped to motions drawn from
//! `p(m) = w_f p_fail(m) + w_n p_novel(m) + w_u / M`, where `p_fail` follows
//! capped failure rates, `p_novel ∝ 1/sqrt(A_m + 1)`, and `w_f`, `w_n` ramp up
//! from zero after a warmup. Within a motion: episode start frames come from
//! coarse time bins weighted by a smoothed failure EMA plus a floor.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CurriculumError {
    #[error("active pool of {pool} motions exceeds the {motions} available")]
    PoolTooLarge { pool: usize, motions: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("motion {0} out of range")]
    MotionOutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub w_fail_target: f64,
    pub w_novel_target: f64,
    pub warmup_steps: u64,
    pub ramp_steps: u64,
    pub cap_beta: f64,
    pub epsilon: f64,
    /// Motions per remap; `None` uses every motion.
    pub active_pool: Option<usize>,
    pub remap_interval: u64,
    pub bin_width: usize,
    pub ema_decay: f64,
    pub smooth_sigma: f64,
    pub floor_prob: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            w_fail_target: 0.5,
            w_novel_target: 0.2,
            warmup_steps: 1000,
            ramp_steps: 4000,
            cap_beta: 3.0,
            epsilon: 1.0,
            active_pool: None,
            remap_interval: 2000,
            bin_width: 50,
            ema_decay: 0.9,
            smooth_sigma: 1.0,
            floor_prob: 0.02,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let bad = |m: &str| Err(CurriculumError::InvalidConfig(m.to_string()));
        if !(self.w_fail_target >= 0.0 && self.w_novel_target >= 0.0) {
            return bad("mixture weights must be non-negative");
        }
        if self.w_fail_target + self.w_novel_target > 1.0 + 1e-12 {
            return bad("w_fail_target + w_novel_target must not exceed 1");
        }
        if !(self.cap_beta > 0.0) {
            return bad("cap_beta must be positive");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in (0, 1)");
        }
        if !(self.floor_prob > 0.0 && self.floor_prob <= 1.0) {
            return bad("floor_prob must lie in (0, 1]");
        }
        if !(self.smooth_sigma >= 0.0) {
            return bad("smooth_sigma must be non-negative");
        }
        if self.bin_width == 0 {
            return bad("bin_width must be positive");
        }
        if self.active_pool == Some(0) {
            return bad("active_pool must be positive");
        }
        Ok(())
    }

    /// `(w_f, w_n, w_u)` at a training step: zero during warmup, then a
    /// linear ramp that reaches the targets exactly at `warmup + ramp`.
    pub fn mixture_weights(&self, step: u64) -> (f64, f64, f64) {
        let frac = if step < self.warmup_steps {
            0.0
        } else if self.ramp_steps == 0 || step >= self.warmup_steps + self.ramp_steps {
            1.0
        } else {
            (step - self.warmup_steps) as f64 / self.ramp_steps as f64
        };
        let w_f = self.w_fail_target * frac;
        let w_n = self.w_novel_target * frac;
        (w_f, w_n, (1.0 - w_f - w_n).max(0.0))
    }
}

/// Mutable curriculum statistics. Single writer; probability queries only read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub cfg: SamplerConfig,
    pub lengths: Vec<usize>,
    /// `S_m`: episodes started on motion m.
    pub sample_counts: Vec<u64>,
    /// `F_m`: episodes on motion m that ended in an error termination.
    pub fail_counts: Vec<u64>,
    /// `A_m`: environment assignments to motion m. Never decays.
    pub assign_counts: Vec<u64>,
    pub bin_fail_ema: Vec<Vec<f64>>,
    pub step: u64,
    pub last_remap: Option<u64>,
}

impl SamplerState {
    pub fn new(cfg: SamplerConfig, lengths: &[usize]) -> Result<Self, CurriculumError> {
        cfg.validate()?;
        if lengths.is_empty() {
            return Err(CurriculumError::InvalidConfig("no motions".into()));
        }
        let m = lengths.len();
        let bins = lengths.iter().map(|&l| vec![0.0; bin_count(l, cfg.bin_width)]).collect();
        Ok(Self {
            cfg,
            lengths: lengths.to_vec(),
            sample_counts: vec![0; m],
            fail_counts: vec![0; m],
            assign_counts: vec![0; m],
            bin_fail_ema: bins,
            step: 0,
            last_remap: None,
        })
    }

    pub fn motion_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn advance(&mut self, steps: u64) {
        self.step += steps;
    }

    fn check_motion(&self, m: usize) -> Result<(), CurriculumError> {
        if m < self.motion_count() {
            Ok(())
        } else {
            Err(CurriculumError::MotionOutOfRange(m))
        }
    }

    /// `r~_m = min(F_m / (S_m + eps), beta * mean(r))`.
    pub fn failure_rates(&self) -> Vec<f64> {
        let raw: Vec<f64> = self
            .fail_counts
            .iter()
            .zip(&self.sample_counts)
            .map(|(&f, &s)| {
                let denom = s as f64 + self.cfg.epsilon;
                if denom > 0.0 { f as f64 / denom } else { 0.0 }
            })
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let cap = self.cfg.cap_beta * mean;
        raw.into_iter().map(|r| r.min(cap)).collect()
    }

    pub fn novelty_weights(&self) -> Vec<f64> {
        normalize_or_uniform(self.assign_counts.iter().map(|&a| 1.0 / ((a as f64) + 1.0).sqrt()).collect())
    }

    pub fn motion_probabilities(&self) -> Vec<f64> {
        let m = self.motion_count();
        let (w_f, w_n, w_u) = self.cfg.mixture_weights(self.step);
        let p_fail = normalize_or_uniform(self.failure_rates());
        let p_novel = self.novelty_weights();
        let uni = 1.0 / m as f64;
        let p: Vec<f64> = (0..m).map(|i| w_f * p_fail[i] + w_n * p_novel[i] + w_u * uni).collect();
        // Renormalize away the last ulps so the sum is 1 to 1e-12.
        let s: f64 = p.iter().sum();
        p.into_iter().map(|x| x / s).collect()
    }

    /// Draws one motion index from `p(m)`.
    pub fn sample_motion<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.motion_probabilities(), rng)
    }

    /// `K` distinct motions drawn by `p(m)` without replacement (successive
    /// draws from the renormalized remainder).
    pub fn select_active_pool<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>, CurriculumError> {
        let m = self.motion_count();
        let k = self.cfg.active_pool.unwrap_or(m);
        if k > m {
            return Err(CurriculumError::PoolTooLarge { pool: k, motions: m });
        }
        if k == m {
            return Ok((0..m).collect());
        }
        let mut weights = self.motion_probabilities();
        let mut pool = Vec::with_capacity(k);
        for _ in 0..k {
            let i = sample_categorical(&weights, rng);
            pool.push(i);
            weights[i] = 0.0;
        }
        Ok(pool)
    }

    /// Spreads `n_envs` over the pool so every member gets `floor(E/K)` or
    /// `ceil(E/K)` environments; which members get the extra one is random.
    pub fn remap_environments<R: Rng + ?Sized>(&mut self, pool: &[usize], n_envs: usize, rng: &mut R) -> Vec<usize> {
        assert!(!pool.is_empty(), "pool must be non-empty");
        let k = pool.len();
        let mut order: Vec<usize> = pool.to_vec();
        shuffle(&mut order, rng);
        let mut assignment: Vec<usize> = (0..n_envs).map(|e| order[e % k]).collect();
        shuffle(&mut assignment, rng);
        for &m in &assignment {
            self.assign_counts[m] += 1;
        }
        self.last_remap = Some(self.step);
        assignment
    }

    pub fn remap_due(&self) -> bool {
        match self.last_remap {
            None => true,
            Some(at) => self.step >= at + self.cfg.remap_interval,
        }
    }

    /// Pool selection plus remap, only when the cadence allows it.
    pub fn remap_if_due<R: Rng + ?Sized>(&mut self, n_envs: usize, rng: &mut R) -> Result<Option<Vec<usize>>, CurriculumError> {
        if !self.remap_due() {
            return Ok(None);
        }
        let pool = self.select_active_pool(rng)?;
        Ok(Some(self.remap_environments(&pool, n_envs, rng)))
    }

    /// Bin distribution for motion `m`: Gaussian-smoothed EMAs, normalized,
    /// plus the floor, normalized again.
    pub fn bin_probabilities(&self, m: usize) -> Result<Vec<f64>, CurriculumError> {
        self.check_motion(m)?;
        let ema = &self.bin_fail_ema[m];
        let n = ema.len();
        let smoothed = smooth(ema, self.cfg.smooth_sigma);
        let base = normalize_or_uniform(smoothed);
        let floor = self.cfg.floor_prob.min(1.0 / n as f64);
        Ok(normalize_or_uniform(base.into_iter().map(|p| p + floor).collect()))
    }

    /// Picks an episode start frame for motion `m` and counts the episode.
    /// The frame never exceeds `L_m - 2`, so at least one transition remains.
    pub fn sample_start_time<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) -> Result<usize, CurriculumError> {
        let probs = self.bin_probabilities(m)?;
        let bin = sample_categorical(&probs, rng);
        let len = self.lengths[m];
        let lo = bin * self.cfg.bin_width;
        let hi = ((bin + 1) * self.cfg.bin_width).min(len);
        let frame = rng.random_range(lo..hi).min(len.saturating_sub(2));
        self.sample_counts[m] += 1;
        Ok(frame)
    }

    pub fn record_episode(&mut self, m: usize, start_frame: usize, failed: bool) -> Result<(), CurriculumError> {
        self.check_motion(m)?;
        if failed {
            self.fail_counts[m] += 1;
        }
        let bins = &mut self.bin_fail_ema[m];
        let b = (start_frame / self.cfg.bin_width).min(bins.len() - 1);
        let d = self.cfg.ema_decay;
        bins[b] = d * bins[b] + (1.0 - d) * if failed { 1.0 } else { 0.0 };
        Ok(())
    }
}

pub fn bin_count(len: usize, bin_width: usize) -> usize {
    len.div_ceil(bin_width).max(1)
}

/// Normalizes a non-negative vector; the all-zero vector maps to uniform.
pub fn normalize_or_uniform(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.into_iter().map(|x| x / s).collect()
    } else {
        let n = v.len();
        vec![1.0 / n as f64; n]
    }
}

/// Discrete Gaussian smoothing truncated at 3 sigma, with the kernel
/// renormalized over in-range bins so constant inputs stay constant.
fn smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for d in -radius..=radius {
                let j = i + d;
                if (0..n).contains(&j) {
                    let k = (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
                    acc += k * values[j as usize];
                    norm += k;
                }
            }
            acc / norm
        })
        .collect()
}

/// Inverse-CDF draw from an (unnormalized) non-negative weight vector.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(lengths: &[usize], cfg: SamplerConfig) -> SamplerState {
        SamplerState::new(cfg, lengths).unwrap()
    }

    fn post_ramp(cfg: &SamplerConfig) -> u64 {
        cfg.warmup_steps + cfg.ramp_steps
    }

    #[test]
    fn failure_rates_examples() {
        let mut s = state(&[100, 100], SamplerConfig { epsilon: 0.0, cap_beta: 2.0, ..Default::default() });
        s.fail_counts = vec![4, 0];
        s.sample_counts = vec![4, 4];
        assert_eq!(s.failure_rates(), vec![1.0, 0.0]);

        let mut s = state(&[100; 3], SamplerConfig { epsilon: 0.0, cap_beta: 2.0, ..Default::default() });
        s.fail_counts = vec![10, 1, 1];
        s.sample_counts = vec![10, 10, 10];
        let r = s.failure_rates();
        for (got, want) in r.iter().zip([0.8, 0.1, 0.1]) {
            assert!((got - want).abs() < 1e-15, "{r:?}");
        }

        let s = state(&[100; 4], SamplerConfig::default());
        assert_eq!(s.failure_rates(), vec![0.0; 4]);
    }

    #[test]
    fn uniform_during_warmup() {
        let mut s = state(&[10, 20, 30], SamplerConfig::default());
        s.fail_counts = vec![5, 0, 0];
        s.sample_counts = vec![5, 5, 5];
        s.assign_counts = vec![0, 100, 3];
        assert_eq!(s.motion_probabilities(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn novelty_mixture_example() {
        let cfg = SamplerConfig { w_fail_target: 0.5, w_novel_target: 0.3, ..Default::default() };
        let mut s = state(&[100, 100], cfg.clone());
        s.step = post_ramp(&cfg);
        s.assign_counts = vec![0, 3];
        s.fail_counts = vec![2, 2];
        s.sample_counts = vec![4, 4];
        let p = s.motion_probabilities();
        assert!((p[0] - 0.55).abs() < 1e-12 && (p[1] - 0.45).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn zero_failures_fall_back_to_uniform() {
        let cfg = SamplerConfig { w_fail_target: 1.0, w_novel_target: 0.0, ..Default::default() };
        let mut s = state(&[10, 10, 10, 10], cfg.clone());
        s.step = post_ramp(&cfg);
        assert_eq!(s.motion_probabilities(), vec![0.25; 4]);
    }

    #[test]
    fn pool_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = state(&[10; 5], SamplerConfig { active_pool: Some(5), ..Default::default() });
        assert_eq!(s.select_active_pool(&mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        let s = state(&[10; 5], SamplerConfig { active_pool: Some(6), ..Default::default() });
        assert_eq!(s.select_active_pool(&mut rng), Err(CurriculumError::PoolTooLarge { pool: 6, motions: 5 }));
    }

    #[test]
    fn single_pool_draw_follows_p() {
        // p = [0.99, 0.01/4 x 4] via failure mass on motion 0.
        let cfg = SamplerConfig {
            w_fail_target: 1.0,
            w_novel_target: 0.0,
            warmup_steps: 0,
            ramp_steps: 0,
            cap_beta: 100.0,
            epsilon: 0.0,
            active_pool: Some(1),
            ..Default::default()
        };
        let mut s = state(&[10; 5], cfg);
        s.sample_counts = vec![1; 5];
        s.fail_counts = vec![396, 1, 1, 1, 1];
        s.cap_check_off();
        let p = s.motion_probabilities();
        assert!((p[0] - 0.99).abs() < 1e-12, "{p:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let hits = (0..n).filter(|_| s.select_active_pool(&mut rng).unwrap()[0] == 0).count();
        assert!((hits as f64 / n as f64 - 0.99).abs() < 0.01);
    }

    impl SamplerState {
        /// Failure counts above are far from the mean; make sure the cap does not bind.
        fn cap_check_off(&mut self) {
            let r = self.failure_rates();
            assert_eq!(r[0], 396.0);
        }
    }

    #[test]
    fn remap_balances_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = state(&[10; 5], SamplerConfig::default());
        let a = s.remap_environments(&[0, 1, 2, 3, 4], 10, &mut rng);
        for m in 0..5 {
            assert_eq!(a.iter().filter(|&&x| x == m).count(), 2);
        }
        assert_eq!(s.assign_counts, vec![2; 5]);

        let mut s = state(&[10; 3], SamplerConfig::default());
        let a = s.remap_environments(&[0, 1, 2], 7, &mut rng);
        let mut counts: Vec<usize> = (0..3).map(|m| a.iter().filter(|&&x| x == m).count()).collect();
        counts.sort();
        assert_eq!(counts, vec![2, 2, 3]);
    }

    #[test]
    fn remap_respects_cadence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = state(&[10; 3], SamplerConfig { remap_interval: 100, ..Default::default() });
        assert!(s.remap_if_due(6, &mut rng).unwrap().is_some());
        s.advance(99);
        assert!(s.remap_if_due(6, &mut rng).unwrap().is_none());
        s.advance(1);
        assert!(s.remap_if_due(6, &mut rng).unwrap().is_some());
        assert_eq!(s.assign_counts.iter().sum::<u64>(), 12);
    }

    #[test]
    fn fresh_bins_are_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = state(&[500], SamplerConfig::default());
        assert!(s.bin_probabilities(0).unwrap().iter().all(|p| (p - 0.1).abs() < 1e-15));
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            counts[s.sample_start_time(0, &mut rng).unwrap() / 50] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 9 dof.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
        assert_eq!(s.sample_counts[0], n as u64);
    }

    #[test]
    fn hot_bin_is_the_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = state(&[500], SamplerConfig { floor_prob: 0.01, smooth_sigma: 1.0, ..Default::default() });
        s.bin_fail_ema[0][4] = 1.0;
        let p = s.bin_probabilities(0).unwrap();
        for (i, &pi) in p.iter().enumerate() {
            if i != 4 {
                assert!(p[4] > pi);
            }
        }
        let mut counts = [0usize; 10];
        for _ in 0..100_000 {
            counts[s.sample_start_time(0, &mut rng).unwrap() / 50] += 1;
        }
        let mode = (0..10).max_by_key(|&i| counts[i]).unwrap();
        assert_eq!(mode, 4);
    }

    #[test]
    fn single_bin_keeps_a_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut s = state(&[50], SamplerConfig::default());
        for _ in 0..1000 {
            assert!(s.sample_start_time(0, &mut rng).unwrap() <= 48);
        }
        let mut s = state(&[2], SamplerConfig::default());
        assert_eq!(s.sample_start_time(0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn record_episode_updates() {
        let mut s = state(&[100], SamplerConfig { ema_decay: 0.9, ..Default::default() });
        s.record_episode(0, 10, true).unwrap();
        assert!((s.bin_fail_ema[0][0] - 0.1).abs() < 1e-15);
        assert_eq!(s.fail_counts[0], 1);
        s.bin_fail_ema[0][1] = 1.0;
        s.record_episode(0, 60, false).unwrap();
        assert!((s.bin_fail_ema[0][1] - 0.9).abs() < 1e-15);
        assert_eq!(s.fail_counts[0], 1);
        assert!(s.record_episode(1, 0, false).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = SamplerConfig { w_fail_target: 0.8, w_novel_target: 0.3, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(SamplerConfig { ema_decay: 1.0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { cap_beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }

    fn arb_state() -> impl Strategy<Value = SamplerState> {
        (1usize..12, any::<u64>()).prop_flat_map(|(m, step)| {
            (
                prop::collection::vec(0u64..50, m),
                prop::collection::vec(0u64..50, m),
                prop::collection::vec(0u64..500, m),
                0.0f64..0.6,
                0.0f64..0.4,
                0.1f64..5.0,
            )
                .prop_map(move |(s, f, a, wf, wn, beta)| {
                    let cfg = SamplerConfig { w_fail_target: wf, w_novel_target: wn, cap_beta: beta, ..Default::default() };
                    let mut st = SamplerState::new(cfg, &vec![100; s.len()]).unwrap();
                    st.sample_counts = s;
                    st.fail_counts = f;
                    st.assign_counts = a;
                    st.step = step % 10_000;
                    st
                })
        })
    }

    proptest! {
        #[test]
        fn probabilities_form_a_distribution(s in arb_state()) {
            let p = s.motion_probabilities();
            let (_, _, w_u) = s.cfg.mixture_weights(s.step);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for &x in &p {
                prop_assert!(x >= w_u / p.len() as f64 - 1e-12);
            }
        }

        #[test]
        fn cap_bounds_rates(s in arb_state()) {
            let raw_mean = s.fail_counts.iter().zip(&s.sample_counts)
                .map(|(&f, &n)| f as f64 / (n as f64 + s.cfg.epsilon)).sum::<f64>() / s.motion_count() as f64;
            let r = s.failure_rates();
            if raw_mean > 0.0 {
                prop_assert!(r.iter().cloned().fold(0.0, f64::max) <= s.cfg.cap_beta * raw_mean + 1e-15);
            }
            prop_assert!(r.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn schedule_is_monotone(a in 0u64..20_000, b in 0u64..20_000) {
            let cfg = SamplerConfig::default();
            let (lo, hi) = (a.min(b), a.max(b));
            let (f0, n0, _) = cfg.mixture_weights(lo);
            let (f1, n1, _) = cfg.mixture_weights(hi);
            prop_assert!(f0 <= f1 && n0 <= n1);
            let (ft, nt, _) = cfg.mixture_weights(cfg.warmup_steps + cfg.ramp_steps);
            prop_assert_eq!((ft, nt), (cfg.w_fail_target, cfg.w_novel_target));
        }
    }
}

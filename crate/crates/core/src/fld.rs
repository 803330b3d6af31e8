//! Periodic motion model: an explicit phase advanced at a fixed frequency and
//! a per-channel Fourier decoder, fit by least squares; a diagonal Gaussian
//! mixture over the fitted styles; and long-horizon synthesis.
//!
//! State channels per frame: base linear velocity (3, base frame), base
//! angular velocity (3, base frame), base height (1), projected gravity (3),
//! joint positions (J).

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::motion_bank::{MotionClip, SourceId};
use crate::scalar::Real;
use crate::sim::demo::clip_from_base_trajectory;
use crate::sim::env::reference_state;
use crate::sim::RobotModel;

pub const BASE_CHANNELS: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FldError {
    #[error("no periodic component found")]
    NoPeriodicity,
    #[error("trajectory has {have} frames, needs {needed}")]
    TrajTooShort { have: usize, needed: usize },
    #[error("{samples} samples cannot support {components} components")]
    TooFewSamples { samples: usize, components: usize },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub fn channel_count(dof: usize) -> usize {
    BASE_CHANNELS + dof
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_phase<T: Real>(phi: T) -> T {
    let tau = T::lit(TAU);
    let r = phi % tau;
    let r = if r < T::zero() { r + tau } else { r };
    if r >= tau {
        T::zero()
    } else {
        r
    }
}

/// Wraps an angle difference to `(-π, π]`.
pub fn wrap_delta(d: f64) -> f64 {
    let r = wrap_phase(d + PI) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// `φ0 + 2π k f Δt`, wrapped to `[0, 2π)`.
pub fn propagate_phase<T: Real>(phi0: T, frequency: T, dt: T, k: usize) -> T {
    wrap_phase(phi0 + T::lit(TAU) * (T::lit(k as f64) * frequency * dt))
}

/// Frequency, time step and per-channel style parameters. For each channel
/// `theta` holds the offset followed by `(amplitude, phase shift)` for
/// harmonics `1..=n_harmonics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FldModel<T> {
    pub frequency: T,
    pub dt: T,
    pub n_harmonics: usize,
    pub channels: usize,
    pub theta: Vec<T>,
}

impl<T: Real> FldModel<T> {
    pub fn per_channel(n_harmonics: usize) -> usize {
        1 + 2 * n_harmonics
    }

    pub fn new(frequency: T, dt: T, n_harmonics: usize, channels: usize, theta: Vec<T>) -> Result<Self, FldError> {
        let expected = channels * Self::per_channel(n_harmonics);
        if theta.len() != expected {
            return Err(FldError::DimensionMismatch { what: "style parameters", expected, found: theta.len() });
        }
        if !(frequency > T::zero()) || !(dt > T::zero()) {
            return Err(FldError::Invalid("frequency and dt must be positive".into()));
        }
        Ok(Self { frequency, dt, n_harmonics, channels, theta })
    }

    pub fn offset(&self, c: usize) -> T {
        self.theta[c * Self::per_channel(self.n_harmonics)]
    }

    /// `(amplitude, phase shift)` of harmonic `h` (1-based) on channel `c`.
    pub fn harmonic(&self, c: usize, h: usize) -> (T, T) {
        let i = c * Self::per_channel(self.n_harmonics) + 2 * h - 1;
        (self.theta[i], self.theta[i + 1])
    }

    /// Phase increment per step, in radians.
    pub fn phase_step(&self) -> T {
        T::lit(TAU) * self.frequency * self.dt
    }

    /// `offset_c + Σ_h a_{c,h} sin(h φ + ψ_{c,h})` for every channel.
    pub fn decode(&self, phi: T) -> Vec<T> {
        (0..self.channels)
            .map(|c| {
                let mut v = self.offset(c);
                for h in 1..=self.n_harmonics {
                    let (a, psi) = self.harmonic(c, h);
                    v = v + a * (T::lit(h as f64) * phi + psi).sin();
                }
                v
            })
            .collect()
    }

    /// Derivative of `decode` with respect to the phase.
    pub fn decode_dphi(&self, phi: T) -> Vec<T> {
        (0..self.channels)
            .map(|c| {
                let mut v = T::zero();
                for h in 1..=self.n_harmonics {
                    let (a, psi) = self.harmonic(c, h);
                    let hh = T::lit(h as f64);
                    v = v + a * hh * (hh * phi + psi).cos();
                }
                v
            })
            .collect()
    }

    /// Decodes `frames` consecutive steps starting at `phi0`.
    pub fn rollout(&self, phi0: T, frames: usize) -> (Vec<T>, Vec<Vec<T>>) {
        let phases: Vec<T> = (0..frames).map(|k| propagate_phase(phi0, self.frequency, self.dt, k)).collect();
        let states = phases.iter().map(|&p| self.decode(p)).collect();
        (phases, states)
    }

    /// `[f, theta...]`, the vector the style mixture is fit on.
    pub fn style(&self) -> Vec<T> {
        std::iter::once(self.frequency).chain(self.theta.iter().copied()).collect()
    }

    pub fn from_style(style: &[T], dt: T, n_harmonics: usize, channels: usize) -> Result<Self, FldError> {
        let expected = 1 + channels * Self::per_channel(n_harmonics);
        if style.len() != expected {
            return Err(FldError::DimensionMismatch { what: "style vector", expected, found: style.len() });
        }
        Self::new(style[0], dt, n_harmonics, channels, style[1..].to_vec())
    }
}

/// Reconstruction, phase-consistency and combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FldLosses {
    pub rec: f64,
    pub phase: f64,
    pub total: f64,
}

/// Losses over every window of `horizon + 1` frames. `phases[t]` is the phase
/// assigned to frame `t`; predictions at `t + k` propagate it `k` steps.
pub fn fld_losses(
    states: &[Vec<f64>],
    phases: &[f64],
    model: &FldModel<f64>,
    horizon: usize,
    alpha: f64,
    lambda_phase: f64,
) -> Result<FldLosses, FldError> {
    let n = states.len();
    if n < horizon + 1 {
        return Err(FldError::TrajTooShort { have: n, needed: horizon + 1 });
    }
    if phases.len() != n {
        return Err(FldError::DimensionMismatch { what: "phases", expected: n, found: phases.len() });
    }
    let windows = n - horizon;
    let mut rec = 0.0;
    for t in 0..windows {
        for k in 0..=horizon {
            let pred = model.decode(propagate_phase(phases[t], model.frequency, model.dt, k));
            let err: f64 = pred.iter().zip(&states[t + k]).map(|(p, s)| (p - s) * (p - s)).sum();
            rec += alpha.powi(k as i32) * err;
        }
    }
    rec /= windows as f64;
    let step = model.phase_step();
    let phase = if n > 1 {
        phases.windows(2).map(|w| wrap_delta(w[1] - w[0] - step).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(FldLosses { rec, phase, total: rec + lambda_phase * phase })
}

/// A fitted segment: the model and the phase of its first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FldFit {
    pub model: FldModel<f64>,
    pub phase0: f64,
    pub rmse: f64,
}

impl FldFit {
    pub fn phases(&self, frames: usize) -> Vec<f64> {
        (0..frames).map(|k| propagate_phase(self.phase0, self.model.frequency, self.model.dt, k)).collect()
    }
}

fn basis(frames: usize, dt: f64, f: f64, h_max: usize) -> DMatrix<f64> {
    DMatrix::from_fn(frames, 1 + 2 * h_max, |t, j| {
        if j == 0 {
            return 1.0;
        }
        let h = j.div_ceil(2) as f64;
        let arg = h * TAU * f * t as f64 * dt;
        if j % 2 == 1 {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

fn basis_df(frames: usize, dt: f64, f: f64, h_max: usize) -> DMatrix<f64> {
    DMatrix::from_fn(frames, 1 + 2 * h_max, |t, j| {
        if j == 0 {
            return 0.0;
        }
        let h = j.div_ceil(2) as f64;
        let w = h * TAU * t as f64 * dt;
        let arg = w * f;
        if j % 2 == 1 {
            w * arg.cos()
        } else {
            -w * arg.sin()
        }
    })
}

fn solve_ls(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().svd(true, true).solve(b, 1e-13).expect("svd computed with u and v")
}

fn sse(a: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let x = solve_ls(a, s);
    (a * x - s).norm_squared()
}

/// Golden-section search for the minimum of `g` on `[lo, hi]`.
fn golden<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    while hi - lo > tol {
        if g1 < g2 {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - r * (hi - lo);
            g1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + r * (hi - lo);
            g2 = g(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Gauss-Newton on the frequency with the linear coefficients projected out.
fn refine_frequency(s: &DMatrix<f64>, dt: f64, mut f: f64, h_max: usize) -> f64 {
    let n = s.nrows();
    for _ in 0..20 {
        let a = basis(n, dt, f, h_max);
        let x = solve_ls(&a, s);
        let r = &a * &x - s;
        let d = basis_df(n, dt, f, h_max) * &x;
        let g = &d - &a * solve_ls(&a, &d);
        let gg = g.norm_squared();
        if gg <= 0.0 {
            break;
        }
        let step = -g.dot(&r) / gg;
        let candidate = f + step;
        if !(candidate > 0.0) || sse(&basis(n, dt, candidate, h_max), s) > r.norm_squared() {
            break;
        }
        f = candidate;
        if step.abs() <= 1e-15 * f {
            break;
        }
    }
    f
}

/// Periodogram of a demeaned signal on `[lo, hi]` with step `df`; returns the
/// peak frequency.
fn spectral_peak(x: &[f64], dt: f64, lo: f64, hi: f64, df: f64) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut best = (lo, -1.0);
    let mut f = lo;
    while f <= hi {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let arg = TAU * f * t as f64 * dt;
            re += (v - mean) * arg.cos();
            im += (v - mean) * arg.sin();
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (f, p);
        }
        f += df;
    }
    best.0
}

/// Fits one segment (`frames x channels`). The frequency comes from the
/// spectral peak of the highest-variance channel, refined against the
/// least-squares residual; the style parameters are the least-squares
/// Fourier coefficients. The phase origin is chosen so the reference
/// channel's first harmonic has zero phase shift.
pub fn fit_model(segment: &[Vec<f64>], dt: f64, n_harmonics: usize) -> Result<FldFit, FldError> {
    let n = segment.len();
    let needed = 2 * (1 + 2 * n_harmonics);
    if n < needed.max(8) {
        return Err(FldError::TrajTooShort { have: n, needed: needed.max(8) });
    }
    if n_harmonics == 0 || !(dt > 0.0) {
        return Err(FldError::Invalid("need at least one harmonic and a positive dt".into()));
    }
    let channels = segment[0].len();
    if let Some(bad) = segment.iter().find(|r| r.len() != channels) {
        return Err(FldError::DimensionMismatch { what: "channels per frame", expected: channels, found: bad.len() });
    }
    let s = DMatrix::from_fn(n, channels, |t, c| segment[t][c]);
    let variance = |c: usize| {
        let col = s.column(c);
        let m = col.mean();
        col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
    };
    let (ref_c, ref_var) = (0..channels).map(|c| (c, variance(c))).fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b });
    let total_var: f64 = (0..channels).map(variance).sum::<f64>() * n as f64;
    if ref_var < 1e-12 {
        return Err(FldError::NoPeriodicity);
    }
    let span = n as f64 * dt;
    let (lo, hi) = (1.0 / span, 0.5 / dt);
    let df = 1.0 / (8.0 * span);
    let col: Vec<f64> = s.column(ref_c).iter().copied().collect();
    let peak = spectral_peak(&col, dt, lo, hi, df);
    let fit_at = |center: f64| {
        let g = |f: f64| sse(&basis(n, dt, f, n_harmonics), &s);
        let f = golden(g, (center - df).max(0.5 * lo), center + df, 1e-10);
        let f = refine_frequency(&s, dt, f, n_harmonics);
        (f, g(f))
    };
    let mut best = fit_at(peak);
    for m in 2..=n_harmonics {
        let c = peak / m as f64;
        if c < lo {
            break;
        }
        let cand = fit_at(c);
        if cand.1 < 0.9 * best.1 {
            best = cand;
        }
    }
    let (f, residual) = best;
    // The fit must explain most of the variance to count as periodic.
    if residual > 0.5 * total_var {
        return Err(FldError::NoPeriodicity);
    }
    let x = solve_ls(&basis(n, dt, f, n_harmonics), &s);
    let per = FldModel::<f64>::per_channel(n_harmonics);
    let mut amp = vec![0.0; channels * per];
    for c in 0..channels {
        amp[c * per] = x[(0, c)];
        for h in 1..=n_harmonics {
            let (b, cc) = (x[(2 * h - 1, c)], x[(2 * h, c)]);
            amp[c * per + 2 * h - 1] = b.hypot(cc);
            amp[c * per + 2 * h] = cc.atan2(b);
        }
    }
    let phase0 = if amp[ref_c * per + 1] > 1e-9 { wrap_phase(amp[ref_c * per + 2]) } else { 0.0 };
    for c in 0..channels {
        for h in 1..=n_harmonics {
            let i = c * per + 2 * h;
            amp[i] = wrap_delta(amp[i] - h as f64 * phase0);
        }
    }
    let model = FldModel::new(f, dt, n_harmonics, channels, amp)?;
    let rmse = (residual / (n * channels) as f64).sqrt();
    Ok(FldFit { model, phase0, rmse })
}

/// Fits segments in parallel; segments without a periodic component are
/// skipped and counted.
pub fn fit_segments(segments: &[Vec<Vec<f64>>], dt: f64, n_harmonics: usize) -> Result<(Vec<FldFit>, usize), FldError> {
    let fits: Vec<Result<FldFit, FldError>> = segments.par_iter().map(|s| fit_model(s, dt, n_harmonics)).collect();
    let mut out = Vec::new();
    let mut skipped = 0;
    for f in fits {
        match f {
            Ok(f) => out.push(f),
            Err(FldError::NoPeriodicity) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Model state channels of every frame of a clip.
pub fn clip_states(clip: &MotionClip, model: &RobotModel<f64>) -> Vec<Vec<f64>> {
    let a = model.anchor;
    (0..clip.frames())
        .map(|t| {
            let s = reference_state(clip, t);
            let q = s.body_quat[a];
            let mut row = Vec::with_capacity(channel_count(clip.dof));
            row.extend(q.inverse_rotate(s.body_lin_vel[a]));
            row.extend(q.inverse_rotate(s.body_ang_vel[a]));
            row.push(s.body_pos[a][2]);
            row.extend(q.inverse_rotate([0.0, 0.0, -1.0]));
            row.extend(&s.joint_pos);
            row
        })
        .collect()
}

/// Splits a clip's states into non-overlapping windows of `len` frames.
pub fn segments(states: &[Vec<f64>], len: usize) -> Vec<Vec<Vec<f64>>> {
    states.chunks_exact(len.max(1)).map(|c| c.to_vec()).collect()
}

/// Diagonal Gaussian mixture over style vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmStyle {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

const VAR_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl GmmStyle {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn log_component(&self, k: usize, x: &[f64]) -> f64 {
        let mut l = self.weights[k].ln();
        for ((xi, m), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            l -= 0.5 * (LN_2PI + v.ln() + (xi - m) * (xi - m) / v);
        }
        l
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = (0..self.components()).map(|k| self.log_component(k, x)).collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.components()).map(|k| self.log_component(k, x)).collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = crate::curriculum::sample_categorical(&self.weights, rng);
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect::<Vec<f64>>()
    }
}

/// EM for a diagonal mixture: stops when the mean log-likelihood changes by
/// less than 1e-8 or after 200 iterations. Variances are floored at 1e-6.
/// Means start from distinct samples chosen k-means++ style.
pub fn fit_gmm<R: Rng + ?Sized>(samples: &[Vec<f64>], components: usize, rng: &mut R) -> Result<GmmStyle, FldError> {
    let n = samples.len();
    if components == 0 || n < components {
        return Err(FldError::TooFewSamples { samples: n, components });
    }
    let d = samples[0].len();
    let mean_all: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let var_all: Vec<f64> = (0..d)
        .map(|j| (samples.iter().map(|s| (s[j] - mean_all[j]).powi(2)).sum::<f64>() / n as f64).max(VAR_FLOOR))
        .collect();
    let mut means = vec![samples[rng.random_range(0..n)].clone()];
    while means.len() < components {
        let d2: Vec<f64> = samples
            .iter()
            .map(|s| {
                means
                    .iter()
                    .map(|m| s.iter().zip(m).zip(&var_all).map(|((a, b), v)| (a - b) * (a - b) / v).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let pick = if d2.iter().sum::<f64>() > 0.0 { crate::curriculum::sample_categorical(&d2, rng) } else { rng.random_range(0..n) };
        means.push(samples[pick].clone());
    }
    let mut gmm = GmmStyle {
        weights: vec![1.0 / components as f64; components],
        means,
        variances: vec![var_all; components],
        log_likelihood: f64::NEG_INFINITY,
        iterations: 0,
    };
    for it in 0..200 {
        let resp: Vec<Vec<f64>> = samples.iter().map(|s| gmm.responsibilities(s)).collect();
        let ll = samples.iter().map(|s| gmm.log_density(s)).sum::<f64>() / n as f64;
        for k in 0..components {
            let nk: f64 = resp.iter().map(|r| r[k]).sum::<f64>().max(1e-300);
            gmm.weights[k] = nk / n as f64;
            for j in 0..d {
                let m = resp.iter().zip(samples).map(|(r, s)| r[k] * s[j]).sum::<f64>() / nk;
                gmm.means[k][j] = m;
                let v = resp.iter().zip(samples).map(|(r, s)| r[k] * (s[j] - m).powi(2)).sum::<f64>() / nk;
                gmm.variances[k][j] = v.max(VAR_FLOOR);
            }
        }
        gmm.iterations = it + 1;
        let done = (ll - gmm.log_likelihood).abs() < 1e-8;
        gmm.log_likelihood = ll;
        if done {
            break;
        }
    }
    gmm.log_likelihood = samples.iter().map(|s| gmm.log_density(s)).sum::<f64>() / n as f64;
    Ok(gmm)
}

/// A fitted style library: the mixture plus the decoder layout it describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FldLibrary {
    pub dt: f64,
    pub n_harmonics: usize,
    pub channels: usize,
    pub gmm: GmmStyle,
    pub segments: usize,
}

/// A synthesized clip and the model it was decoded from.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub clip: MotionClip,
    pub model: FldModel<f64>,
    pub phase0: f64,
}

/// Samples a style and an initial phase, propagates the phase for
/// `round(duration / dt)` steps and decodes each one into a clip. Base `x`
/// comes from integrating the decoded forward velocity, pitch from the
/// decoded gravity direction, joint velocities from the decoder derivative.
pub fn synthesize<R: Rng + ?Sized>(
    lib: &FldLibrary,
    robot: &RobotModel<f64>,
    duration: f64,
    label: &str,
    rng: &mut R,
) -> Result<Synthesized, FldError> {
    let dof = robot.dof();
    if lib.channels != channel_count(dof) {
        return Err(FldError::DimensionMismatch { what: "state channels", expected: channel_count(dof), found: lib.channels });
    }
    let frames = (duration / lib.dt).round() as usize;
    if frames < 2 {
        return Err(FldError::TrajTooShort { have: frames, needed: 2 });
    }
    let mut style = lib.gmm.sample(rng);
    for _ in 0..100 {
        if style[0] > 0.0 {
            break;
        }
        style = lib.gmm.sample(rng);
    }
    style[0] = style[0].abs().max(1e-3);
    let model = FldModel::from_style(&style, lib.dt, lib.n_harmonics, lib.channels)?;
    let phase0 = rng.random_range(0.0..TAU);
    let (phases, states) = model.rollout(phase0, frames);
    let mut base = Vec::with_capacity(frames);
    let mut x = 0.0;
    for s in &states {
        let pitch = s[7].atan2(-s[9]);
        base.push([x, s[6], pitch]);
        // Forward velocity in the world frame.
        x += (pitch.cos() * s[0] + pitch.sin() * s[2]) * lib.dt;
    }
    let joints: Vec<Vec<f64>> = states.iter().map(|s| s[BASE_CHANNELS..].to_vec()).collect();
    let fps = (1.0 / lib.dt) as f32;
    let mut clip = clip_from_base_trajectory(robot, &base, &joints, fps, label, SourceId::Generated);
    let rate = model.phase_step() / lib.dt;
    for (t, &p) in phases.iter().enumerate() {
        let d = model.decode_dphi(p);
        for j in 0..dof {
            clip.joint_vel[t * dof + j] = (d[BASE_CHANNELS + j] * rate) as f32;
        }
    }
    Ok(Synthesized { clip, model, phase0 })
}

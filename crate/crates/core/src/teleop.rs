//! Simulated teleoperation reference channel: per-stage latency, jitter and
//! loss, then onboard EMA smoothing, rolling-buffer velocity estimation and
//! zero-order hold at the control rate.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::motion_bank::MotionClip;
use crate::quat::Quat;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TeleopError {
    #[error("invalid channel config: {0}")]
    InvalidChannel(String),
    #[error("invalid smoother config: {0}")]
    InvalidSmoother(String),
    #[error("velocity needs {needed} buffered samples, have {have}")]
    BufferNotFull { needed: usize, have: usize },
    #[error("no delivered packet matches a sent sequence number")]
    NoMatches,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamPacket {
    pub seq: u64,
    pub t_sent: f64,
    pub t_recv: f64,
    /// Arrival time after each pipeline stage; the last entry equals `t_recv`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hops: Vec<f64>,
    pub joint_pos: Vec<f64>,
    pub root_quat: Quat<f64>,
}

impl StreamPacket {
    pub fn new(seq: u64, t_sent: f64, joint_pos: Vec<f64>, root_quat: Quat<f64>) -> Self {
        Self { seq, t_sent, t_recv: t_sent, hops: Vec::new(), joint_pos, root_quat }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Mean one-way delay (s).
    pub base_latency: f64,
    /// Standard deviation of the Gaussian delay perturbation (s).
    pub jitter_std: f64,
    pub drop_rate: f64,
    /// When false a packet never overtakes an earlier one.
    pub reorder: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { base_latency: 0.0, jitter_std: 0.0, drop_rate: 0.0, reorder: false }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), TeleopError> {
        let bad = |m: &str| Err(TeleopError::InvalidChannel(m.to_string()));
        if !(self.base_latency >= 0.0) || !self.base_latency.is_finite() {
            return bad("base_latency must be >= 0");
        }
        if !(self.jitter_std >= 0.0) || !self.jitter_std.is_finite() {
            return bad("jitter_std must be >= 0");
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad("drop_rate must be in [0, 1)");
        }
        Ok(())
    }
}

/// Shipped two-stage pipelines: device to workstation, then workstation to robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPreset {
    Vr,
    Mocap,
}

impl ChannelPreset {
    pub const STAGE_JITTER: f64 = 0.01;

    pub fn stages(self) -> Vec<ChannelConfig> {
        let first = match self {
            ChannelPreset::Vr => 0.267,
            ChannelPreset::Mocap => 0.067,
        };
        [first, 0.133]
            .into_iter()
            .map(|base_latency| ChannelConfig { base_latency, jitter_std: Self::STAGE_JITTER, ..Default::default() })
            .collect()
    }
}

/// Packetizes frames sent at a fixed rate starting at `t0`.
pub fn packetize(frames: &[Vec<f64>], roots: &[Quat<f64>], rate: f64, t0: f64) -> Vec<StreamPacket> {
    frames
        .iter()
        .zip(roots)
        .enumerate()
        .map(|(k, (q, r))| StreamPacket::new(k as u64, t0 + k as f64 / rate, q.clone(), *r))
        .collect()
}

/// Packets for every frame of a clip; the root orientation is the anchor's.
pub fn packetize_clip(clip: &MotionClip, anchor: usize) -> Vec<StreamPacket> {
    let frames: Vec<Vec<f64>> = (0..clip.frames())
        .map(|t| clip.joint_pos_at(t).iter().map(|&x| x as f64).collect())
        .collect();
    let roots: Vec<Quat<f64>> = (0..clip.frames())
        .map(|t| {
            let o = (t * clip.bodies + anchor) * 4;
            let q = &clip.body_quat_w[o..o + 4];
            Quat::from_array([q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64])
        })
        .collect();
    packetize(&frames, &roots, clip.fps as f64, 0.0)
}

/// One channel stage. Each packet is dropped with `drop_rate`, otherwise
/// delayed by `max(0, base + N(0, jitter^2))` from its current arrival time.
pub fn transmit<R: Rng + ?Sized>(
    packets: &[StreamPacket],
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<Vec<StreamPacket>, TeleopError> {
    cfg.validate()?;
    let jitter = Normal::new(0.0, cfg.jitter_std).expect("validated std");
    let mut out = Vec::with_capacity(packets.len());
    let mut last_recv = f64::NEG_INFINITY;
    for p in packets {
        let dropped = cfg.drop_rate > 0.0 && rng.random::<f64>() < cfg.drop_rate;
        let noise = if cfg.jitter_std > 0.0 { jitter.sample(rng) } else { 0.0 };
        if dropped {
            continue;
        }
        let mut t = p.t_recv + (cfg.base_latency + noise).max(0.0);
        if !cfg.reorder {
            t = t.max(last_recv);
            last_recv = t;
        }
        let mut q = p.clone();
        q.t_recv = t;
        q.hops.push(t);
        out.push(q);
    }
    if cfg.reorder {
        out.sort_by(|a, b| a.t_recv.total_cmp(&b.t_recv).then(a.seq.cmp(&b.seq)));
    }
    Ok(out)
}

/// Chains stages; a packet lost at any stage is lost overall.
pub fn transmit_pipeline<R: Rng + ?Sized>(
    packets: &[StreamPacket],
    stages: &[ChannelConfig],
    rng: &mut R,
) -> Result<Vec<StreamPacket>, TeleopError> {
    let mut cur = packets.to_vec();
    for stage in stages {
        cur = transmit(&cur, stage, rng)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub p95: f64,
    /// Per-stage delay contributions; they add up to the end-to-end delay.
    pub stages: Vec<StageStats>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// End-to-end delay statistics over packets present in both lists (by seq).
pub fn measure_delay(sent: &[StreamPacket], received: &[StreamPacket]) -> Result<DelayStats, TeleopError> {
    let sent_at: std::collections::HashMap<u64, f64> = sent.iter().map(|p| (p.seq, p.t_sent)).collect();
    let matched: Vec<&StreamPacket> = received.iter().filter(|p| sent_at.contains_key(&p.seq)).collect();
    if matched.is_empty() {
        return Err(TeleopError::NoMatches);
    }
    let delays: Vec<f64> = matched.iter().map(|p| p.t_recv - sent_at[&p.seq]).collect();
    let (mean, std) = mean_std(&delays);
    let mut sorted = delays.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let p95 = sorted[rank - 1];
    let n_stages = matched.iter().map(|p| p.hops.len()).min().unwrap_or(0);
    let stages = (0..n_stages)
        .map(|s| {
            let d: Vec<f64> = matched
                .iter()
                .map(|p| p.hops[s] - if s == 0 { sent_at[&p.seq] } else { p.hops[s - 1] })
                .collect();
            let (mean, std) = mean_std(&d);
            StageStats { mean, std }
        })
        .collect();
    Ok(DelayStats { count: matched.len(), mean, std, p95, stages })
}

/// JSON-lines packet log: one `{seq, t_sent, t_recv}` object per line.
pub fn packet_log(packets: &[StreamPacket]) -> String {
    #[derive(Serialize)]
    struct Line {
        seq: u64,
        t_sent: f64,
        t_recv: f64,
    }
    let mut out = String::new();
    for p in packets {
        out.push_str(&serde_json::to_string(&Line { seq: p.seq, t_sent: p.t_sent, t_recv: p.t_recv }).expect("plain struct"));
        out.push('\n');
    }
    out
}

/// EMA filter plus a rolling buffer of timestamped (smoothed) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState<T> {
    pub alpha: T,
    pub window: usize,
    ema: Option<Vec<T>>,
    buffer: VecDeque<(T, Vec<T>)>,
}

impl<T: Real> SmootherState<T> {
    pub fn new(alpha: T, window: usize) -> Result<Self, TeleopError> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(TeleopError::InvalidSmoother(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if window < 3 || window % 2 == 0 {
            return Err(TeleopError::InvalidSmoother(format!("window must be odd and >= 3, got {window}")));
        }
        Ok(Self { alpha, window, ema: None, buffer: VecDeque::with_capacity(window) })
    }

    /// `y = alpha x + (1 - alpha) y_prev`; the first sample seeds `y`.
    pub fn ema_step(&mut self, x: &[T]) -> Vec<T> {
        let a = self.alpha;
        let y = match &self.ema {
            None => x.to_vec(),
            Some(prev) => x.iter().zip(prev).map(|(&xi, &yi)| a * xi + (T::one() - a) * yi).collect(),
        };
        self.ema = Some(y.clone());
        y
    }

    pub fn push_sample(&mut self, t: T, x: Vec<T>) {
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back((t, x));
    }

    /// Smooths `x` and appends it to the velocity buffer.
    pub fn process(&mut self, t: T, x: &[T]) -> Vec<T> {
        let y = self.ema_step(x);
        self.push_sample(t, y.clone());
        y
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.window
    }

    /// Central difference at the buffer's center sample.
    pub fn estimate_velocity(&self) -> Result<Vec<T>, TeleopError> {
        if !self.is_full() {
            return Err(TeleopError::BufferNotFull { needed: self.window, have: self.buffer.len() });
        }
        let k = self.window / 2;
        let (t0, x0) = &self.buffer[k - 1];
        let (t1, x1) = &self.buffer[k + 1];
        let span = *t1 - *t0;
        Ok(x1.iter().zip(x0).map(|(&b, &a)| (b - a) / span).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Playback {
    /// Repeat the latest smoothed frame until a new packet arrives.
    #[default]
    Hold,
    /// Blend from the previous to the latest frame over one send interval.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub ema_alpha: f64,
    pub window: usize,
    pub playback: Playback,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self { ema_alpha: 0.3, window: 5, playback: Playback::Hold }
    }
}

/// The reference frame handed to the policy on one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub seq: u64,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub root_quat: Quat<f64>,
    /// True when no new packet arrived this tick.
    pub held: bool,
}

/// Consumes a time-ordered packet stream at the control rate.
#[derive(Debug, Clone)]
pub struct StreamReceiver {
    packets: Vec<StreamPacket>,
    next: usize,
    smoother: SmootherState<f64>,
    playback: Playback,
    last_seq: Option<u64>,
    /// Total number of sequence numbers skipped between consumed packets.
    pub seq_gaps: u64,
    prev: Option<(f64, Vec<f64>)>,
    latest: Option<(f64, Vec<f64>, Quat<f64>)>,
    interval: f64,
}

impl StreamReceiver {
    /// `packets` must be in delivery order (as returned by [`transmit`]).
    pub fn new(packets: Vec<StreamPacket>, cfg: &ReceiverConfig, send_interval: f64) -> Result<Self, TeleopError> {
        Ok(Self {
            packets,
            next: 0,
            smoother: SmootherState::new(cfg.ema_alpha, cfg.window)?,
            playback: cfg.playback,
            last_seq: None,
            seq_gaps: 0,
            prev: None,
            latest: None,
            interval: send_interval,
        })
    }

    /// Reference at control time `clock`, or `None` before the first delivery.
    pub fn one_step_reference(&mut self, clock: f64) -> Option<ReferenceSample> {
        let mut fresh = None;
        while self.next < self.packets.len() && self.packets[self.next].t_recv <= clock {
            let p = &self.packets[self.next];
            self.next += 1;
            // Stale packets (older than one already used) are discarded.
            if self.last_seq.is_some_and(|s| p.seq <= s) {
                continue;
            }
            if fresh.as_ref().is_none_or(|f: &&StreamPacket| p.seq > f.seq) {
                fresh = Some(p);
            }
        }
        let held = fresh.is_none();
        if let Some(p) = fresh {
            if let Some(s) = self.last_seq {
                self.seq_gaps += p.seq - s - 1;
            }
            self.last_seq = Some(p.seq);
            let y = self.smoother.process(p.t_sent, &p.joint_pos);
            self.prev = self.latest.take().map(|(t, q, _)| (t, q));
            self.latest = Some((p.t_recv, y, p.root_quat));
        }
        let (t_latest, q_latest, root) = self.latest.clone()?;
        let joint_pos = match (self.playback, &self.prev) {
            (Playback::Linear, Some((_, q_prev))) => {
                let s = ((clock - t_latest) / self.interval).clamp(0.0, 1.0);
                q_prev.iter().zip(&q_latest).map(|(a, b)| a + s * (b - a)).collect()
            }
            _ => q_latest,
        };
        let joint_vel = self.smoother.estimate_velocity().unwrap_or_else(|_| vec![0.0; joint_pos.len()]);
        Some(ReferenceSample { seq: self.last_seq.unwrap_or(0), joint_pos, joint_vel, root_quat: root, held })
    }
}

/// Runs a clip through a channel and the receiver, sampling once per clip
/// frame. Joint fields come from the receiver; body fields are those of the
/// latest consumed frame. Ticks before the first delivery repeat frame 0.
pub fn stream_clip<R: Rng + ?Sized>(
    clip: &MotionClip,
    anchor: usize,
    stages: &[ChannelConfig],
    receiver: &ReceiverConfig,
    rng: &mut R,
) -> Result<(MotionClip, Vec<StreamPacket>), TeleopError> {
    let sent = packetize_clip(clip, anchor);
    let delivered = transmit_pipeline(&sent, stages, rng)?;
    let dt = 1.0 / clip.fps as f64;
    let mut rx = StreamReceiver::new(delivered.clone(), receiver, dt)?;
    let mut out = clip.clone();
    let (dof, b) = (clip.dof, clip.bodies);
    for t in 0..clip.frames() {
        let sample = rx.one_step_reference(t as f64 * dt);
        let (src, pos, vel) = match sample {
            Some(s) => (s.seq as usize, s.joint_pos, s.joint_vel),
            None => {
                let q: Vec<f64> = clip.joint_pos_at(0).iter().map(|&x| x as f64).collect();
                (0, q, vec![0.0; dof])
            }
        };
        for j in 0..dof {
            out.joint_pos[t * dof + j] = pos[j] as f32;
            out.joint_vel[t * dof + j] = vel[j] as f32;
        }
        for (field, src_field, w) in [
            (&mut out.body_pos_w, &clip.body_pos_w, 3),
            (&mut out.body_quat_w, &clip.body_quat_w, 4),
            (&mut out.body_lin_vel_w, &clip.body_lin_vel_w, 3),
            (&mut out.body_ang_vel_w, &clip.body_ang_vel_w, 3),
        ] {
            field[t * b * w..(t + 1) * b * w].copy_from_slice(&src_field[src * b * w..(src + 1) * b * w]);
        }
    }
    Ok((out, delivered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> Vec<StreamPacket> {
        let frames: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64 * 0.01, -(k as f64)]).collect();
        packetize(&frames, &vec![Quat::identity(); n], 50.0, 0.0)
    }

    #[test]
    fn fixed_latency_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ChannelConfig { base_latency: 0.4, ..Default::default() };
        let out = transmit(&ramp(100), &cfg, &mut rng).unwrap();
        assert_eq!(out.len(), 100);
        for p in &out {
            assert_eq!(p.t_recv, p.t_sent + 0.4);
        }
    }

    #[test]
    fn identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sent = ramp(50);
        let out = transmit(&sent, &ChannelConfig::default(), &mut rng).unwrap();
        for (a, b) in sent.iter().zip(&out) {
            assert_eq!((a.seq, a.t_sent, &a.joint_pos), (b.seq, b.t_recv, &b.joint_pos));
        }
    }

    #[test]
    fn drop_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ChannelConfig { drop_rate: 0.1, ..Default::default() };
        let out = transmit(&ramp(100_000), &cfg, &mut rng).unwrap();
        let frac = out.len() as f64 / 100_000.0;
        assert!((frac - 0.9).abs() < 0.005, "{frac}");
    }

    #[test]
    fn invalid_channels_rejected() {
        for cfg in [
            ChannelConfig { drop_rate: 1.0, ..Default::default() },
            ChannelConfig { base_latency: -0.1, ..Default::default() },
            ChannelConfig { jitter_std: f64::NAN, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn ema_recursion() {
        let mut s = SmootherState::new(0.5, 3).unwrap();
        assert_eq!(s.ema_step(&[0.0]), vec![0.0]);
        assert_eq!(s.ema_step(&[1.0]), vec![0.5]);
        assert_eq!(s.ema_step(&[1.0]), vec![0.75]);
        let mut p = SmootherState::new(1.0, 3).unwrap();
        for x in [3.0, -1.0, 2.5] {
            assert_eq!(p.ema_step(&[x]), vec![x]);
        }
        assert!(SmootherState::new(0.0, 5).is_err());
        assert!(SmootherState::new(0.3, 4).is_err());
    }

    #[test]
    fn central_difference_examples() {
        let mut s = SmootherState::<f64>::new(1.0, 3).unwrap();
        assert!(matches!(s.estimate_velocity(), Err(TeleopError::BufferNotFull { needed: 3, have: 0 })));
        for (t, x) in [(0.0, 0.0), (0.02, 0.02), (0.04, 0.04)] {
            s.push_sample(t, vec![x]);
        }
        assert!((s.estimate_velocity().unwrap()[0] - 1.0).abs() < 1e-12);
        // x = t^2 sampled at 0, 0.02, 0.04: exact slope 0.04 at the center.
        let mut q = SmootherState::<f64>::new(1.0, 3).unwrap();
        for t in [0.0f64, 0.02, 0.04] {
            q.push_sample(t, vec![t * t]);
        }
        assert!((q.estimate_velocity().unwrap()[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn lossless_passthrough_receiver() {
        let sent = ramp(30);
        let cfg = ReceiverConfig { ema_alpha: 1.0, ..Default::default() };
        let mut rx = StreamReceiver::new(sent.clone(), &cfg, 0.02).unwrap();
        for (k, p) in sent.iter().enumerate() {
            let s = rx.one_step_reference(k as f64 * 0.02).unwrap();
            assert_eq!(s.joint_pos, p.joint_pos);
            assert!(!s.held);
        }
    }

    #[test]
    fn dropped_packet_is_held_and_counted() {
        let mut sent = ramp(10);
        sent.remove(4);
        let cfg = ReceiverConfig { ema_alpha: 1.0, ..Default::default() };
        let mut rx = StreamReceiver::new(sent.clone(), &cfg, 0.02).unwrap();
        let mut outs = Vec::new();
        for k in 0..10 {
            outs.push(rx.one_step_reference(k as f64 * 0.02).unwrap());
        }
        assert!(outs[4].held);
        assert_eq!(outs[4].joint_pos, outs[3].joint_pos);
        assert_eq!(rx.seq_gaps, 1);
    }

    #[test]
    fn presets_reproduce_pipeline_delays() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sent = ramp(10_000);
        let vr = measure_delay(&sent, &transmit_pipeline(&sent, &ChannelPreset::Vr.stages(), &mut rng).unwrap()).unwrap();
        let mocap = measure_delay(&sent, &transmit_pipeline(&sent, &ChannelPreset::Mocap.stages(), &mut rng).unwrap()).unwrap();
        assert!((vr.mean - 0.400).abs() < 0.005);
        assert!((mocap.mean - 0.200).abs() < 0.005);
        assert!(vr.mean > mocap.mean);
        assert!((vr.stages[0].mean - 0.267).abs() < 0.005);
        let total: f64 = vr.stages.iter().map(|s| s.mean).sum();
        assert!((total - vr.mean).abs() < 1e-9);
        assert!(vr.p95 > vr.mean);
    }

    #[test]
    fn no_matches() {
        let a = ramp(3);
        let mut b = ramp(3);
        for p in &mut b {
            p.seq += 100;
        }
        assert_eq!(measure_delay(&a, &b), Err(TeleopError::NoMatches));
    }

    #[test]
    fn fifo_channel_keeps_order_reorder_sorts_by_arrival() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sent = ramp(2000);
        let fifo = transmit(&sent, &ChannelConfig { base_latency: 0.1, jitter_std: 0.05, ..Default::default() }, &mut rng).unwrap();
        assert!(fifo.windows(2).all(|w| w[0].seq < w[1].seq && w[0].t_recv <= w[1].t_recv));
        let cfg = ChannelConfig { base_latency: 0.1, jitter_std: 0.05, reorder: true, ..Default::default() };
        let shuffled = transmit(&sent, &cfg, &mut rng).unwrap();
        assert!(shuffled.windows(2).all(|w| w[0].t_recv <= w[1].t_recv));
        assert!(shuffled.windows(2).any(|w| w[0].seq > w[1].seq));
    }

    #[test]
    fn log_is_json_lines() {
        let log = packet_log(&ramp(3));
        assert_eq!(log.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(log.lines().nth(1).unwrap()).unwrap();
        assert_eq!(v["seq"], 1);
    }

    proptest! {
        #[test]
        fn ema_stays_in_input_hull(alpha in 0.01f64..=1.0, xs in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let mut s = SmootherState::new(alpha, 3).unwrap();
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for x in xs {
                lo = lo.min(x);
                hi = hi.max(x);
                let y = s.ema_step(&[x])[0];
                prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
            }
        }

        #[test]
        fn central_difference_exact_on_quadratics(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, t0 in 0.0f64..5.0) {
            let h = 0.02;
            let mut s = SmootherState::new(1.0, 5).unwrap();
            for k in 0..5 {
                let t = t0 + k as f64 * h;
                s.push_sample(t, vec![a * t * t + b * t + c]);
            }
            let center = t0 + 2.0 * h;
            let exact = 2.0 * a * center + b;
            prop_assert!((s.estimate_velocity().unwrap()[0] - exact).abs() < 1e-9);
        }

        #[test]
        fn delivered_payloads_are_bit_exact(seed in any::<u64>(), drop in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sent = ramp(200);
            let cfg = ChannelConfig { base_latency: 0.05, jitter_std: 0.02, drop_rate: drop, reorder: true };
            for p in transmit(&sent, &cfg, &mut rng).unwrap() {
                let orig = &sent[p.seq as usize];
                prop_assert_eq!(&p.joint_pos, &orig.joint_pos);
                prop_assert_eq!(p.t_sent, orig.t_sent);
                prop_assert!(p.t_recv >= p.t_sent);
            }
        }
    }

    #[test]
    fn mean_delay_converges_at_three_sigma_rate() {
        // Each seed lands inside 3 sigma / sqrt(N) with probability 0.997.
        let sent = ramp(2000);
        let cfg = ChannelConfig { base_latency: 0.2, jitter_std: 0.02, drop_rate: 0.0, reorder: true };
        let bound = 3.0 * cfg.jitter_std / (sent.len() as f64).sqrt();
        let inside = (0..200u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let stats = measure_delay(&sent, &transmit(&sent, &cfg, &mut rng).unwrap()).unwrap();
                (stats.mean - cfg.base_latency).abs() < bound
            })
            .count();
        assert!(inside >= 190, "{inside}");
    }
}

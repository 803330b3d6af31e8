use mosaic_core::quat::Quat;
use mosaic_core::sim::demo::DemoMotion;
use mosaic_core::sim::RobotModel;
use mosaic_core::teleop::{
    measure_delay, packetize, stream_clip, transmit, transmit_pipeline, ChannelConfig, ReceiverConfig, SmootherState,
    StreamPacket, TeleopError,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn packets(n: usize) -> Vec<StreamPacket> {
    let frames: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64]).collect();
    packetize(&frames, &vec![Quat::identity(); n], 50.0, 1.0)
}

fn stage(base_latency: f64, jitter_std: f64, drop_rate: f64, reorder: bool) -> ChannelConfig {
    ChannelConfig { base_latency, jitter_std, drop_rate, reorder }
}

#[test]
fn fixed_latency_is_exact() {
    let sent = packets(100);
    let got = transmit_pipeline(&sent, &[stage(0.25, 0.0, 0.0, false), stage(0.05, 0.0, 0.0, false)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(got.len(), 100);
    for (s, r) in sent.iter().zip(&got) {
        assert!((r.t_recv - s.t_sent - 0.3).abs() < 1e-12);
        assert_eq!(r.hops.len(), 2);
    }
    let stats = measure_delay(&sent, &got).unwrap();
    assert!((stats.stages[0].mean - 0.25).abs() < 1e-12 && (stats.stages[1].mean - 0.05).abs() < 1e-12);
}

#[test]
fn drop_rate_matches_its_expectation() {
    let sent = packets(20_000);
    let got = transmit(&sent, &stage(0.0, 0.0, 0.2, false), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let kept = got.len() as f64 / sent.len() as f64;
    // Five binomial standard deviations.
    assert!((kept - 0.8).abs() < 5.0 * (0.16f64 / 20_000.0).sqrt(), "kept {kept}");
}

#[test]
fn bad_channels_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for bad in [stage(-0.1, 0.0, 0.0, false), stage(0.1, f64::NAN, 0.0, false), stage(0.1, 0.0, 1.0, false)] {
        assert!(matches!(transmit(&packets(3), &bad, &mut rng), Err(TeleopError::InvalidChannel(_))));
    }
    assert_eq!(measure_delay(&packets(3), &[]).unwrap_err(), TeleopError::NoMatches);
}

#[test]
fn smoother_tracks_a_ramp() {
    let mut s = SmootherState::new(1.0, 5).unwrap();
    assert!(s.estimate_velocity().is_err());
    for k in 0..5 {
        s.process(k as f64 * 0.1, &[2.0 * k as f64 * 0.1]);
    }
    assert!((s.estimate_velocity().unwrap()[0] - 2.0).abs() < 1e-12);
    assert!(SmootherState::<f64>::new(0.0, 5).is_err());
    assert!(SmootherState::<f64>::new(0.5, 4).is_err());
}

#[test]
fn streamed_clip_lags_the_source() {
    let m = RobotModel::toy_biped();
    let clip = DemoMotion::Wave { amp: 0.8, freq: 1.0 }.clip(&m, 50.0, 4.0, "wave", Default::default());
    let rx = ReceiverConfig { ema_alpha: 1.0, ..ReceiverConfig::default() };
    let (out, delivered) = stream_clip(&clip, m.anchor, &[stage(0.21, 0.0, 0.0, false)], &rx, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(out.frames(), clip.frames());
    assert_eq!(delivered.len(), clip.frames());
    out.validate().unwrap();
    // 0.21 s at 50 fps: the newest packet at each tick is eleven frames old.
    for t in 20..clip.frames() {
        assert_eq!(out.joint_pos_at(t), clip.joint_pos_at(t - 11), "frame {t}");
    }
}

proptest! {
    #[test]
    fn fifo_channels_preserve_order(seed in 0u64..1000, base in 0.0f64..0.5, jitter in 0.0f64..0.1, drop in 0.0f64..0.5) {
        let sent = packets(300);
        let got = transmit(&sent, &stage(base, jitter, drop, false), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for w in got.windows(2) {
            prop_assert!(w[0].seq < w[1].seq);
            prop_assert!(w[0].t_recv <= w[1].t_recv);
        }
        for p in &got {
            prop_assert!(p.t_recv >= p.t_sent);
        }
    }

    #[test]
    fn reordering_channels_deliver_by_arrival(seed in 0u64..1000, jitter in 0.0f64..0.2) {
        let sent = packets(300);
        let got = transmit(&sent, &stage(0.1, jitter, 0.1, true), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut seqs: Vec<u64> = got.iter().map(|p| p.seq).collect();
        prop_assert!(got.windows(2).all(|w| w[0].t_recv <= w[1].t_recv));
        seqs.sort();
        seqs.dedup();
        prop_assert_eq!(seqs.len(), got.len());
    }

    #[test]
    fn stage_delays_add_up(seed in 0u64..1000) {
        let sent = packets(500);
        let stages = [stage(0.1, 0.02, 0.05, false), stage(0.05, 0.01, 0.0, true)];
        let got = transmit_pipeline(&sent, &stages, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let stats = measure_delay(&sent, &got).unwrap();
        let parts: f64 = stats.stages.iter().map(|s| s.mean).sum();
        prop_assert!((parts - stats.mean).abs() < 1e-9);
    }

    #[test]
    fn ema_keeps_constants_fixed(alpha in 0.01f64..1.0, x in -10.0f64..10.0) {
        let mut s = SmootherState::new(alpha, 3).unwrap();
        for _ in 0..10 {
            prop_assert!((s.ema_step(&[x])[0] - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

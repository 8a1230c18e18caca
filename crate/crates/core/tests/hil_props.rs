use levlab::controllers::{discretize_tustin, pid_tf_filtered, PidGains};
use levlab::hil::frame::cmd;
use levlab::hil::{
    decode_frame, device_handle, device_tick, encode_frame, run_realtime_loop, DeviceParams, DeviceSim, DeviceThread,
    Frame, FrameDecoder, LoopConfig, LoopMode,
};
use proptest::prelude::*;

fn frame() -> impl Strategy<Value = Frame> {
    (any::<u8>(), any::<u8>(), prop::collection::vec(any::<u8>(), 0..=16)).prop_map(|(s, c, p)| Frame::new(s, c, p))
}

fn pwm(duty: u8, dir: u8) -> Frame {
    Frame::new(0, cmd::SET_PWM_QUIET, [duty, dir])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn frames_round_trip(f in frame()) {
        let bytes = encode_frame(f.seq, f.cmd, &f.payload).unwrap();
        prop_assert_eq!(bytes.len(), f.encoded_len());
        prop_assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn single_byte_corruption_is_rejected(f in frame(), at in any::<prop::sample::Index>(), flip in 1..=255u8) {
        let mut bytes = encode_frame(f.seq, f.cmd, &f.payload).unwrap();
        let i = at.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(decode_frame(&bytes).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decoder_recovers_frames_between_garbage(
        frames in prop::collection::vec(frame(), 1..10),
        junk in prop::collection::vec(prop::collection::vec(any::<u8>().prop_filter("no start byte", |b| *b != 0x5A), 0..8), 10),
        chunk in 1usize..9,
    ) {
        let mut stream = Vec::new();
        for (f, j) in frames.iter().zip(&junk) {
            stream.extend_from_slice(j);
            stream.extend(encode_frame(f.seq, f.cmd, &f.payload).unwrap());
        }
        let mut d = FrameDecoder::new();
        let mut got = Vec::new();
        for c in stream.chunks(chunk) {
            d.push(c);
            while let Some(f) = d.next_frame() {
                got.push(f);
            }
        }
        prop_assert_eq!(got, frames);
    }

    #[test]
    fn device_is_deterministic(
        seed in any::<u64>(),
        cmds in prop::collection::vec((any::<u8>(), 0u8..2, 1usize..50), 1..20),
    ) {
        let params = DeviceParams { noise_std: 0.01, ..DeviceParams::default() };
        let run = || {
            let mut dev = DeviceSim::new(params.clone(), seed).unwrap();
            let mut out = Vec::new();
            for &(duty, dir, ticks) in &cmds {
                device_handle(&mut dev, &pwm(duty, dir));
                for _ in 0..ticks {
                    device_tick(&mut dev, 1e-3);
                }
                out.push((dev.state, dev.read_voltage()));
            }
            out
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn hard_stops_hold(cmds in prop::collection::vec((any::<u8>(), 0u8..2, 1usize..300), 1..20)) {
        let mut dev = DeviceSim::new(DeviceParams::default(), 0).unwrap();
        let travel = dev.params.travel;
        for &(duty, dir, ticks) in &cmds {
            device_handle(&mut dev, &pwm(duty, dir));
            for _ in 0..ticks {
                device_tick(&mut dev, 1e-3);
                prop_assert!((0.0..=travel).contains(&dev.state.position));
                prop_assert!(dev.state.pwm_duty == duty);
            }
        }
    }

    #[test]
    fn unpowered_motion_loses_energy(y0 in -0.01..0.01f64, v0 in -0.5..0.5f64) {
        let mut dev = DeviceSim::new(DeviceParams::default(), 0).unwrap();
        dev.state.position = (dev.state.position + y0).clamp(0.0, dev.params.travel);
        dev.state.velocity = v0;
        let mut e = dev.mechanical_energy();
        for _ in 0..3000 {
            device_tick(&mut dev, 1e-3);
            let next = dev.mechanical_energy();
            prop_assert!(next <= e + 1e-12 * e.abs().max(1e-9), "{next} > {e}");
            e = next;
        }
    }
}

#[test]
fn loop_iterations_match_duration() {
    let c = discretize_tustin(&pid_tf_filtered(&PidGains::new(0.0, 20.0, 0.0)).unwrap(), 0.01).unwrap();
    for mode in [LoopMode::Stream, LoopMode::Poll] {
        for duration in [0.2, 0.35] {
            let (mut host, dev) = DeviceThread::spawn(DeviceParams::default(), 1, None).unwrap();
            let mut cfg = LoopConfig::new(0.002, duration);
            cfg.mode = mode;
            let (tr, stats) = run_realtime_loop(&mut host, c.clone(), &cfg).unwrap();
            dev.finish().unwrap();
            let want = (duration / cfg.period).floor() as i64;
            assert!((stats.iterations as i64 - want).abs() <= 1, "{mode:?} {duration}: {}", stats.iterations);
            assert_eq!(tr.len(), stats.iterations);
            assert!(tr.within(&cfg.sat));
        }
    }
}

use proptest::prelude::*;

use super::*;

fn hw() -> SimHardware {
    SimHardware::new(["dev1", "dev2", "dev3"])
}

fn powered(volts: f64) -> SimHardware {
    let mut hw = hw();
    hw.socket_set(true).unwrap();
    hw.meter_power(true).unwrap();
    hw.meter_set_voltage(volts).unwrap();
    hw
}

fn sampling(rate_hz: u32, capacity: usize) -> (SimHardware, StreamReader) {
    let mut hw = powered(4.0);
    hw.relay_switch("dev1", PowerSource::Vout).unwrap();
    hw.usb_port_set("dev1", false).unwrap();
    let reader = hw
        .start_sampling(StreamConfig {
            rate_hz,
            capacity,
            noise_sigma_ma: 0.0,
            seed: 1,
        })
        .unwrap();
    (hw, reader)
}

#[test]
fn socket_on_leaves_meter_unpowered() {
    let mut hw = hw();
    assert!(hw.socket_set(true).unwrap().on);
    assert!(!hw.meter().powered);
}

#[test]
fn socket_off_while_sampling_is_rejected() {
    let (mut hw, _r) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    assert_eq!(hw.socket_set(false), Err(HwError::SamplingActive));
    assert!(hw.socket().on);
}

#[test]
fn socket_off_twice_is_idempotent() {
    let mut hw = hw();
    assert!(!hw.socket_set(false).unwrap().on);
    assert!(!hw.socket_set(false).unwrap().on);
    assert!(hw.events().is_empty());
}

#[test]
fn socket_off_depowers_meter() {
    let mut hw = powered(4.0);
    hw.socket_set(false).unwrap();
    assert!(!hw.meter().powered);
    assert_eq!(hw.meter().voltage, None);
}

#[test]
fn voltage_bounds_are_inclusive() {
    let mut hw = powered(4.0);
    assert_eq!(hw.meter().voltage, Some(4.0));
    assert_eq!(
        hw.meter_set_voltage(0.5),
        Err(HwError::VoltageOutOfRange(0.5))
    );
    assert_eq!(
        hw.meter_set_voltage(13.6),
        Err(HwError::VoltageOutOfRange(13.6))
    );
    assert_eq!(hw.meter_set_voltage(13.5).unwrap().voltage, Some(13.5));
    assert_eq!(hw.meter_set_voltage(0.8).unwrap().voltage, Some(0.8));
}

#[test]
fn voltage_needs_socket() {
    let mut hw = hw();
    assert_eq!(hw.meter_set_voltage(4.0), Err(HwError::SocketOff));
}

#[test]
fn relay_exclusivity() {
    let mut hw = powered(4.0);
    let bank = hw.relay_switch("dev1", PowerSource::Vout).unwrap();
    assert_eq!(bank.vout_device(), Some("dev1"));
    assert_eq!(
        hw.relay_switch("dev2", PowerSource::Vout),
        Err(HwError::RelayConflict {
            occupied: "dev1".into()
        })
    );
    assert_eq!(hw.relays().source("dev2"), Some(PowerSource::Battery));
}

#[test]
fn relay_to_battery_when_already_there_is_noop() {
    let mut hw = hw();
    let bank = hw.relay_switch("dev1", PowerSource::Battery).unwrap();
    assert_eq!(bank.source("dev1"), Some(PowerSource::Battery));
    assert!(hw.events().is_empty());
}

#[test]
fn relay_switch_records_break_gap() {
    let mut hw = powered(4.0);
    hw.relay_switch("dev1", PowerSource::Vout).unwrap();
    let gap = hw.events().iter().find_map(|e| match e {
        HwEvent::Relay { gap_ms, .. } => Some(*gap_ms),
        _ => None,
    });
    assert!(gap.unwrap() <= 1.0);
}

#[test]
fn relay_needs_powered_meter() {
    let mut hw = hw();
    assert_eq!(
        hw.relay_switch("dev1", PowerSource::Vout),
        Err(HwError::MeterOff)
    );
    assert_eq!(
        hw.relay_switch("nope", PowerSource::Vout),
        Err(HwError::UnknownDevice("nope".into()))
    );
}

#[test]
fn start_sampling_errors() {
    let mut hw = powered(4.0);
    let cfg = StreamConfig::default();
    assert_eq!(hw.start_sampling(cfg).unwrap_err(), HwError::NoLoad);
    assert_eq!(
        hw.start_sampling(StreamConfig { rate_hz: 0, ..cfg })
            .unwrap_err(),
        HwError::BadRate(0)
    );
    assert_eq!(
        hw.start_sampling(StreamConfig {
            rate_hz: 5001,
            ..cfg
        })
        .unwrap_err(),
        HwError::BadRate(5001)
    );
    hw.relay_switch("dev1", PowerSource::Vout).unwrap();
    assert_eq!(
        hw.start_sampling(cfg).unwrap_err(),
        HwError::UsbActive("dev1".into())
    );
    hw.usb_port_set("dev1", false).unwrap();
    hw.start_sampling(cfg).unwrap();
    assert_eq!(
        hw.start_sampling(cfg).unwrap_err(),
        HwError::AlreadySampling
    );
}

#[test]
fn one_second_at_5khz() {
    let (mut hw, reader) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    for _ in 0..100 {
        hw.advance(0.01, 150.0);
    }
    let stats = hw.stop_sampling().unwrap();
    assert_eq!(stats.delivered, 5000);
    assert_eq!(stats.lost, 0);
    assert!(stats.gaps.is_empty());
    let samples = reader.read_samples(usize::MAX);
    assert_eq!(samples.len(), 5000);
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.t, i as f64 / 5000.0);
        assert_eq!(s.current_ma, 150.0);
        assert_eq!(s.voltage_v, 4.0);
    }
}

#[test]
fn two_seconds_with_reads_along_the_way() {
    let (mut hw, reader) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    let mut got = 0;
    for _ in 0..200 {
        hw.advance(0.01, 100.0);
        got += reader.read_samples(1000).len();
    }
    let stats = hw.stop_sampling().unwrap();
    got += reader.read_samples(usize::MAX).len();
    assert_eq!((stats.delivered, stats.lost), (10_000, 0));
    assert_eq!(got, 10_000);
}

#[test]
fn stalled_consumer_within_capacity_loses_nothing() {
    let (mut hw, reader) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    // consumer does not read for a full second
    for _ in 0..100 {
        hw.advance(0.01, 100.0);
    }
    assert_eq!(reader.pending(), 5000);
    let stats = hw.stop_sampling().unwrap();
    assert_eq!(stats.lost, 0);
}

#[test]
fn overflow_drops_oldest_and_records_gap() {
    let (mut hw, reader) = sampling(1000, 100);
    for _ in 0..25 {
        hw.advance(0.01, 100.0);
    }
    let stats = hw.stop_sampling().unwrap();
    assert_eq!(stats.delivered + stats.lost, 250);
    assert_eq!(stats.lost, 150);
    assert_eq!(
        stats.gaps,
        vec![Gap {
            first_index: 0,
            count: 150
        }]
    );
    let samples = reader.read_samples(usize::MAX);
    assert_eq!(samples.len(), 100);
    assert_eq!(samples[0].t, 0.150);
}

#[test]
fn stop_twice_is_not_sampling() {
    let (mut hw, _r) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    hw.stop_sampling().unwrap();
    assert_eq!(hw.stop_sampling(), Err(HwError::NotSampling));
}

#[test]
fn read_zero_and_after_close() {
    let (mut hw, reader) = sampling(1000, DEFAULT_BUFFER_CAPACITY);
    hw.advance(0.1, 80.0);
    assert!(reader.read_samples(0).is_empty());
    let first = reader.read_samples(40);
    hw.stop_sampling().unwrap();
    assert!(reader.is_closed());
    let rest = reader.read_samples(1000);
    assert_eq!(first.len() + rest.len(), 100);
    assert!(first.last().unwrap().t < rest[0].t);
    assert!(reader.read_samples(1000).is_empty());
}

#[test]
fn clamps_at_six_amps() {
    let (mut hw, reader) = sampling(1000, DEFAULT_BUFFER_CAPACITY);
    hw.advance(0.01, 7000.0);
    let stats = hw.stop_sampling().unwrap();
    assert!(stats.clamped);
    assert!(reader
        .read_samples(100)
        .iter()
        .all(|s| s.current_ma == METER_MAX_CURRENT_MA));
}

#[test]
fn noise_is_seeded() {
    let run = |seed| {
        let mut hw = powered(4.0);
        hw.relay_switch("dev1", PowerSource::Vout).unwrap();
        hw.usb_port_set("dev1", false).unwrap();
        let r = hw
            .start_sampling(StreamConfig {
                seed,
                ..StreamConfig::default()
            })
            .unwrap();
        hw.advance(0.1, 100.0);
        r.read_samples(usize::MAX)
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn sampling_blocks_relay_release_and_usb() {
    let (mut hw, _r) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    assert_eq!(
        hw.relay_switch("dev1", PowerSource::Battery),
        Err(HwError::SamplingActive)
    );
    assert_eq!(hw.usb_port_set("dev1", true), Err(HwError::SamplingActive));
    assert_eq!(hw.meter_power(false), Err(HwError::SamplingActive));
}

#[test]
fn force_safe_state_from_sampling() {
    let (mut hw, _r) = sampling(5000, DEFAULT_BUFFER_CAPACITY);
    hw.force_safe_state();
    assert!(!hw.meter().sampling);
    assert!(!hw.socket().on);
    assert_eq!(hw.relays().vout_count(), 0);
    assert_eq!(hw.usb_port_on("dev1"), Some(true));
}

#[derive(Debug, Clone)]
enum Op {
    Socket(bool),
    MeterPower(bool),
    Voltage(f64),
    Relay(usize, bool),
    Usb(usize, bool),
    Start(u32),
    Stop,
    Advance(f64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        any::<bool>().prop_map(Op::Socket),
        any::<bool>().prop_map(Op::MeterPower),
        (0.0f64..15.0).prop_map(Op::Voltage),
        (0usize..3, any::<bool>()).prop_map(|(d, v)| Op::Relay(d, v)),
        (0usize..3, any::<bool>()).prop_map(|(d, v)| Op::Usb(d, v)),
        (0u32..6000).prop_map(Op::Start),
        Just(Op::Stop),
        (0.0f64..0.05).prop_map(Op::Advance),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn reachable_states_respect_hardware_invariants(ops in prop::collection::vec(op(), 1..40)) {
        let devices = ["dev1", "dev2", "dev3"];
        let mut hw = hw();
        for op in ops {
            let _ = match op {
                Op::Socket(on) => hw.socket_set(on).map(|_| ()),
                Op::MeterPower(on) => hw.meter_power(on).map(|_| ()),
                Op::Voltage(v) => hw.meter_set_voltage(v).map(|_| ()),
                Op::Relay(d, vout) => {
                    let src = if vout { PowerSource::Vout } else { PowerSource::Battery };
                    hw.relay_switch(devices[d], src).map(|_| ())
                }
                Op::Usb(d, on) => hw.usb_port_set(devices[d], on),
                Op::Start(rate) => hw
                    .start_sampling(StreamConfig { rate_hz: rate, capacity: 64, ..StreamConfig::default() })
                    .map(|_| ()),
                Op::Stop => hw.stop_sampling().map(|_| ()),
                Op::Advance(dt) => { hw.advance(dt, 120.0); Ok(()) }
            };
            prop_assert!(hw.relays().vout_count() <= 1);
            prop_assert!(!hw.meter().powered || hw.socket().on);
            if hw.meter().sampling {
                prop_assert!(hw.meter().powered);
                let d = hw.relays().vout_device();
                prop_assert!(d.is_some());
                prop_assert_eq!(hw.usb_port_on(d.unwrap()), Some(false));
            }
            if let Some(v) = hw.meter().voltage {
                prop_assert!((METER_MIN_VOLTAGE..=METER_MAX_VOLTAGE).contains(&v));
            }
        }
    }

    #[test]
    fn delivered_plus_lost_matches_elapsed(
        rate in 1u32..=5000,
        capacity in 1usize..5000,
        steps in prop::collection::vec(0.001f64..0.2, 1..30),
    ) {
        let (mut hw, _reader) = sampling(rate, capacity);
        let mut elapsed = 0.0;
        let mut elapsed_ns: u128 = 0;
        for dt in &steps {
            hw.advance(*dt, 50.0);
            elapsed += dt;
            elapsed_ns += (dt * 1e9).round() as u128;
        }
        let stats = hw.stop_sampling().unwrap();
        // grid points i / rate strictly before the elapsed time, which the
        // clock keeps in whole nanoseconds
        let exact = (elapsed_ns * rate as u128).div_ceil(1_000_000_000) as u64;
        prop_assert_eq!(stats.delivered + stats.lost, exact);
        let drift = steps.len() as f64 * 0.5e-9 * rate as f64;
        prop_assert!(((stats.delivered + stats.lost) as f64 - elapsed * rate as f64).abs() <= 1.0 + drift);
        prop_assert!(stats.delivered as usize <= capacity);
    }
}

use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::hwsim::Gap;

fn meta(rate_hz: u32) -> TraceMetadata {
    TraceMetadata {
        device_id: "j7duo".into(),
        rate_hz,
        voltage_v: 4.0,
        ..TraceMetadata::default()
    }
}

/// Samples `f` on `t_i = i / rate` for `i = 0..=duration·rate`.
fn synth(rate_hz: u32, duration_s: f64, f: impl Fn(f64) -> f64) -> Trace {
    let n = (duration_s * rate_hz as f64).round() as usize;
    let samples = (0..=n)
        .map(|i| {
            let t = i as f64 / rate_hz as f64;
            PowerSample {
                t,
                current_ma: f(t),
                voltage_v: 4.0,
            }
        })
        .collect();
    let mut m = meta(rate_hz);
    m.delivered = n as u64 + 1;
    Trace::new(m, samples)
}

/// Midpoint Riemann sum of `f` on a grid ten times finer than the trace.
fn riemann_oracle_mah(rate_hz: u32, duration_s: f64, f: impl Fn(f64) -> f64) -> f64 {
    let fine = rate_hz as f64 * 10.0;
    let n = (duration_s * fine).round() as usize;
    let h = 1.0 / fine;
    (0..n).map(|k| f((k as f64 + 0.5) * h) * h).sum::<f64>() / 3600.0
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn constant_load_closed_form() {
    let trace = synth(5000, 300.0, |_| 200.0);
    let q = integrate_discharge(&trace, IntegrationOptions::default()).unwrap();
    assert!(rel(q, 200.0 * 300.0 / 3600.0) < 1e-6);
    assert!((q - 16.666667).abs() < 1e-6);
}

#[test]
fn ramp_closed_form() {
    let trace = synth(100, 3600.0, |t| 1000.0 * t / 3600.0);
    let q = integrate_discharge(&trace, IntegrationOptions::default()).unwrap();
    assert!(rel(q, 500.0) < 1e-6);
}

#[test]
fn single_sample_is_too_few() {
    let trace = Trace::new(
        meta(5000),
        vec![PowerSample {
            t: 0.0,
            current_ma: 1.0,
            voltage_v: 4.0,
        }],
    );
    assert_eq!(
        integrate_discharge(&trace, IntegrationOptions::default()),
        Err(AnalysisError::TooFewSamples)
    );
}

#[test]
fn lossy_trace_needs_force() {
    let mut trace = synth(1000, 1.0, |_| 100.0);
    trace.meta.lost = 10;
    let err = integrate_discharge(&trace, IntegrationOptions::default()).unwrap_err();
    assert!(matches!(err, AnalysisError::LossyTrace(_)));
    let forced = IntegrationOptions {
        force: true,
        ..IntegrationOptions::default()
    };
    assert!(integrate_discharge(&trace, forced).is_ok());
    let summary = summarize_trace(&trace, IntegrationOptions::default()).unwrap();
    assert!(!summary.valid);
}

#[test]
fn gap_intervals_contribute_nothing() {
    let mut trace = synth(1000, 1.0, |_| 360.0);
    // drop samples 100..200
    trace.samples.drain(100..200);
    trace.meta.lost = 100;
    trace.meta.gaps = vec![Gap {
        first_index: 100,
        count: 100,
    }];
    let forced = IntegrationOptions {
        force: true,
        ..IntegrationOptions::default()
    };
    let q = integrate_discharge(&trace, forced).unwrap();
    // 1 s minus the 0.101 s interval that spans the hole
    assert!(rel(q, 360.0 * (1.0 - 0.101) / 3600.0) < 1e-9);
}

#[test]
fn trapezoid_matches_dense_riemann_on_smooth_loads() {
    let f = |t: f64| 180.0 + 40.0 * (t * 1.3).sin() + 15.0 * (t * 4.1 + 0.3).cos();
    let trace = synth(1000, 20.0, f);
    let q = integrate_discharge(&trace, IntegrationOptions::default()).unwrap();
    assert!(rel(q, riemann_oracle_mah(1000, 20.0, f)) < 1e-6);
}

#[test]
fn energy_uses_voltage() {
    let trace = synth(1000, 36.0, |_| 100.0);
    assert!(rel(integrate_energy(&trace), 100.0 * 4.0 * 36.0 / 3600.0) < 1e-12);
}

#[test]
fn quantile_examples() {
    assert_eq!(quantile(&[10.0, 20.0, 30.0], 0.5), Ok(20.0));
    assert_eq!(quantile(&[30.0, 10.0, 20.0], 0.0), Ok(10.0));
    assert_eq!(quantile(&[30.0, 10.0, 20.0], 1.0), Ok(30.0));
    for q in [0.0, 0.3, 1.0] {
        assert_eq!(quantile(&[7.0], q), Ok(7.0));
    }
    assert_eq!(quantile(&[], 0.5), Err(AnalysisError::EmptyInput));
    assert_eq!(quantile(&[1.0], 1.5), Err(AnalysisError::BadQ(1.5)));
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), Ok(2.0));
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.51), Ok(3.0));
}

#[test]
fn cdf_with_ties_has_vertical_steps() {
    let cdf = empirical_cdf(&[2.0, 1.0, 2.0, 3.0]).unwrap();
    let pts: Vec<(f64, f64)> = cdf.iter().map(|p| (p.value, p.fraction)).collect();
    assert_eq!(pts, vec![(1.0, 0.25), (2.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
    assert_eq!(empirical_cdf(&[]), Err(AnalysisError::EmptyInput));
}

#[test]
fn cdf_export_is_capped() {
    let values: Vec<f64> = (0..250_000).map(|i| i as f64).collect();
    let cdf = empirical_cdf_capped(&values, CDF_EXPORT_MAX_POINTS).unwrap();
    assert_eq!(cdf.len(), CDF_EXPORT_MAX_POINTS);
    assert_eq!(cdf.last().unwrap().fraction, 1.0);
    assert_eq!(cdf.last().unwrap().value, 249_999.0);
}

fn summary(discharge: f64, valid: bool) -> MeasurementSummary {
    MeasurementSummary {
        device_id: "d".into(),
        job_id: None,
        repetition: 0,
        discharge_mah: discharge,
        energy_mwh: 0.0,
        mean_current_ma: 0.0,
        median_current_ma: 0.0,
        duration_s: 0.0,
        sample_count: 0,
        sample_loss_fraction: 0.0,
        quantiles: vec![],
        valid,
    }
}

#[test]
fn summarize_runs_examples() {
    let same: Vec<_> = (0..5).map(|_| summary(3.25, true)).collect();
    assert_eq!(summarize_runs(&same).unwrap().std, 0.0);

    let two = summarize_runs(&[summary(10.0, true), summary(12.0, true)]).unwrap();
    assert_eq!(two.mean, 11.0);
    // sqrt(((10-11)^2 + (12-11)^2) / 1)
    assert!((two.std - 2f64.sqrt()).abs() < 1e-12);

    let one = summarize_runs(&[summary(4.0, true), summary(99.0, false)]).unwrap();
    assert_eq!((one.n, one.mean, one.std), (1, 4.0, 0.0));

    assert_eq!(
        summarize_runs(&[summary(1.0, false)]),
        Err(AnalysisError::NoValidTraces)
    );
}

#[test]
fn compare_groups_orders_and_diffs() {
    let mut groups = BTreeMap::new();
    groups.insert(
        "firefox".to_string(),
        RunStats {
            n: 5,
            mean: 30.0,
            std: 1.0,
        },
    );
    groups.insert(
        "brave".to_string(),
        RunStats {
            n: 5,
            mean: 20.0,
            std: 1.0,
        },
    );
    groups.insert(
        "chrome".to_string(),
        RunStats {
            n: 5,
            mean: 25.0,
            std: 1.0,
        },
    );
    let report = compare_groups(&groups).unwrap();
    assert_eq!(report.names(), vec!["brave", "chrome", "firefox"]);
    assert_eq!(report.pairwise.len(), 3);
    assert_eq!(report.diff("brave", "firefox"), Some(10.0));

    groups.retain(|k, _| k == "brave");
    assert_eq!(compare_groups(&groups), Err(AnalysisError::TooFewGroups));
}

#[test]
fn latency_examples() {
    let stats = latency_stats(&[(0.0, 1.5), (2.0, 3.3)]).unwrap();
    assert_eq!(stats.n, 2);
    assert!((stats.mean_s - 1.4).abs() < 1e-12);
    assert_eq!(latency_stats(&[]), Err(AnalysisError::EmptyInput));
    assert_eq!(
        latency_stats(&[(0.0, 1.0), (5.0, 4.9)]),
        Err(AnalysisError::NegativeLatency(1))
    );
}

#[test]
fn summary_fields() {
    let trace = synth(1000, 10.0, |t| if t < 5.0 { 100.0 } else { 300.0 });
    let s = summarize_trace(&trace, IntegrationOptions::default()).unwrap();
    assert!(s.valid);
    assert_eq!(s.sample_count, 10_001);
    assert_eq!(s.duration_s, 10.0);
    assert_eq!(s.median_current_ma, 300.0);
    assert_eq!(s.quantiles[0], (0.05, 100.0));
    assert!((s.energy_mwh - 4.0 * s.discharge_mah).abs() < 1e-9);
}

#[test]
fn non_monotonic_trace_is_rejected() {
    let mut trace = synth(1000, 0.01, |_| 1.0);
    trace.samples.swap(2, 3);
    assert_eq!(
        summarize_trace(&trace, IntegrationOptions::default()),
        Err(AnalysisError::NonMonotonic(3))
    );
}

#[test]
fn plot_exports() {
    let cdf = empirical_cdf(&[1.0, 2.0]).unwrap();
    let mut csv = Vec::new();
    plot::write_cdf_csv(&mut csv, &cdf).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "value,fraction\n1.000000,0.500000\n2.000000,1.000000\n"
    );
    let mut dat = Vec::new();
    plot::write_cdf_dat(&mut dat, &[("a", &cdf), ("b", &cdf)]).unwrap();
    assert_eq!(
        String::from_utf8(dat)
            .unwrap()
            .matches("# value fraction")
            .count(),
        2
    );
}

fn smooth_load() -> impl Strategy<Value = (f64, Vec<(f64, f64, f64)>)> {
    (
        150.0f64..400.0,
        prop::collection::vec((0.0f64..40.0, 0.05f64..5.0, 0.0f64..6.3), 1..4),
    )
}

fn eval(base: f64, terms: &[(f64, f64, f64)], t: f64) -> f64 {
    base + terms
        .iter()
        .map(|(a, w, p)| a * (w * t + p).sin())
        .sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trapezoid_vs_riemann((base, terms) in smooth_load()) {
        let f = |t: f64| eval(base, &terms, t);
        let trace = synth(500, 10.0, f);
        let q = integrate_discharge(&trace, IntegrationOptions::default()).unwrap();
        prop_assert!(rel(q, riemann_oracle_mah(500, 10.0, f)) < 1e-6);
    }

    #[test]
    fn integration_is_linear_and_additive((base, terms) in smooth_load(), alpha in 0.0f64..5.0) {
        let f = |t: f64| eval(base, &terms, t);
        let whole = synth(200, 10.0, f);
        let mut scaled = whole.clone();
        for s in &mut scaled.samples { s.current_ma *= alpha; }
        let opts = IntegrationOptions::default();
        let q = integrate_discharge(&whole, opts).unwrap();
        let qs = integrate_discharge(&scaled, opts).unwrap();
        prop_assert!((qs - alpha * q).abs() <= 1e-9 * q.max(1.0));

        // split at sample 1000 (t = 5 s); both halves share the boundary sample
        let first = Trace::new(whole.meta.clone(), whole.samples[..=1000].to_vec());
        let second = Trace::new(whole.meta.clone(), whole.samples[1000..].to_vec());
        let sum = integrate_discharge(&first, opts).unwrap() + integrate_discharge(&second, opts).unwrap();
        prop_assert!((sum - q).abs() <= 1e-9 * q);
    }

    #[test]
    fn quantile_and_cdf_properties(values in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(quantile(&values, 0.0).unwrap(), min);
        prop_assert_eq!(quantile(&values, 1.0).unwrap(), max);
        let cdf = empirical_cdf(&values).unwrap();
        prop_assert!(cdf.windows(2).all(|w| w[0].value <= w[1].value && w[0].fraction < w[1].fraction));
        prop_assert_eq!(cdf.last().unwrap().fraction, 1.0);
    }

    #[test]
    fn summarize_runs_permutation_invariant(values in prop::collection::vec(0.0f64..100.0, 1..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let runs: Vec<_> = values.iter().map(|v| summary(*v, true)).collect();
        let mut shuffled = runs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(summarize_runs(&runs).unwrap(), summarize_runs(&shuffled).unwrap());
    }
}

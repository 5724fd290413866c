use serde_json::json;

use super::*;
use crate::agent::{ExecutionRecord, Outcome, TelemetrySample, TraceRef};
use crate::analysis::MeasurementSummary;
use crate::coordinator::ArtifactBundle;

fn summary(rep: u32, discharge: f64, median: f64) -> MeasurementSummary {
    MeasurementSummary {
        device_id: "d".into(),
        job_id: Some(1),
        repetition: rep,
        discharge_mah: discharge,
        energy_mwh: discharge * 3.85,
        mean_current_ma: median,
        median_current_ma: median,
        duration_s: 10.0,
        sample_count: 50_000,
        sample_loss_fraction: 0.0,
        quantiles: Vec::new(),
        valid: true,
    }
}

fn input(label: &str, discharges: &[f64], digest: &str) -> JobInput {
    let record = ExecutionRecord {
        job_id: 99,
        vp_id: "node1".into(),
        device_id: "d".into(),
        channel: None,
        traces: (0..discharges.len() as u32)
            .map(|rep| TraceRef {
                trace_id: format!("t{rep}"),
                device_id: "d".into(),
                repetition: rep,
                samples: 50_000,
                lost: 0,
                duration_s: 10.0,
                digest: format!("{digest}{rep}"),
            })
            .collect(),
        summaries: discharges
            .iter()
            .enumerate()
            .map(|(i, d)| summary(i as u32, *d, 100.0 + i as f64))
            .collect(),
        telemetry: (0..10)
            .map(|i| TelemetrySample {
                t: i as f64,
                cpu_pct: 20.0 + i as f64,
                mem_pct: 12.0,
                up_bytes: 100,
            })
            .collect(),
        outcome: Outcome::Done,
    };
    let mut bundle = ArtifactBundle::default();
    bundle.push("summary.json", serde_json::to_vec(&record).unwrap());
    for rep in 0..discharges.len() {
        bundle.push(format!("cdf/rep{rep}.csv"), b"value,fraction\n1.0,0.5\n2.0,1.0\n".to_vec());
        bundle.push(format!("device_cpu/rep{rep}.csv"), b"t_s,cpu_pct\n1.000,10.0\n2.000,30.0\n".to_vec());
    }
    JobInput {
        label: label.into(),
        bundle,
    }
}

fn scenario(base: serde_json::Value, groups: serde_json::Value, variants: serde_json::Value) -> Scenario {
    serde_json::from_value(json!({
        "name": "t",
        "base": base,
        "groups": groups,
        "variants": variants,
    }))
    .unwrap()
}

#[test]
fn builtins_parse_and_expand() {
    let names: Vec<_> = Scenario::builtin_names().collect();
    assert_eq!(names, ["accuracy-fig1", "browsers-fig2", "locations-fig6"]);
    let fig1 = Scenario::builtin("accuracy-fig1").unwrap().jobs().unwrap();
    assert_eq!(fig1.len(), 4);
    assert!(fig1.iter().all(|j| j.manifest.duration_s == 300.0));
    let fig2 = Scenario::builtin("browsers-fig2").unwrap().jobs().unwrap();
    assert_eq!(fig2.len(), 8);
    assert!(fig2.iter().all(|j| j.manifest.repetitions == 5));
    assert_eq!(fig2.iter().filter(|j| j.manifest.mirroring).count(), 4);
    let fig6 = Scenario::builtin("locations-fig6").unwrap().jobs().unwrap();
    assert_eq!(fig6.len(), 10);
    assert!(fig6.iter().all(|j| j.manifest.constraints.network_profile.as_deref() == Some(j.variant.as_str())));
    assert!(matches!(Scenario::builtin("nope"), Err(ScenarioError::Unknown(_))));
}

#[test]
fn groups_share_seeds_across_variants() {
    let jobs = Scenario::builtin("browsers-fig2").unwrap().jobs().unwrap();
    for j in &jobs {
        let twin = jobs
            .iter()
            .find(|o| o.group == j.group && o.variant != j.variant)
            .unwrap();
        assert_eq!(j.manifest.seed, twin.manifest.seed);
        assert_eq!(j.manifest.script, twin.manifest.script);
    }
}

#[test]
fn cells_merge_recursively_and_label_jobs() {
    let s = scenario(
        json!({"duration_s": 10, "voltage": 3.85, "constraints": {"device_id": "j7duo"}}),
        json!({"video": {"manifest": {"seed": 4, "script": [{"cmd": "launch_app", "app": "video"}]}}}),
        json!({
            "far": {"manifest": {"constraints": {"network_profile": "japan"}}},
            "wired": {"wiring": "direct"}
        }),
    );
    let jobs = s.jobs().unwrap();
    assert_eq!(jobs.len(), 2);
    let far = &jobs[0];
    assert_eq!(far.label(), "video:far");
    assert_eq!(far.manifest.label.as_deref(), Some("video:far"));
    assert_eq!(far.manifest.constraints.device_id.as_deref(), Some("j7duo"));
    assert_eq!(far.manifest.constraints.network_profile.as_deref(), Some("japan"));
    assert_eq!(far.manifest.seed, 4);
    assert_eq!(jobs[1].wiring, Some(Wiring::Direct));
    assert_eq!(jobs[1].manifest.constraints.network_profile, None);
}

#[test]
fn invalid_cells_name_the_job_and_field() {
    let s = scenario(
        json!({"duration_s": 0, "voltage": 3.85}),
        json!({"g": {"manifest": {"script": []}}}),
        json!({"v": {}}),
    );
    match s.jobs() {
        Err(ScenarioError::Invalid { label, field, .. }) => {
            assert_eq!(label, "g:v");
            assert_eq!(field, "duration_s");
        }
        other => panic!("{other:?}"),
    }
    assert!(Scenario::from_json("{").is_err());
    let typo = r#"{"name":"x","base":{},"groups":{"g":{"manifst":{}}},"variants":{}}"#;
    assert!(Scenario::from_json(typo).is_err());
}

#[test]
fn labels_split_into_group_and_variant() {
    assert_eq!(split_label("chrome:japan"), ("chrome".into(), "japan".into()));
    assert_eq!(split_label("job7"), ("job7".into(), "default".into()));
}

#[test]
fn report_rows_series_and_comparisons() {
    let inputs = vec![
        input("chrome:off", &[2.0, 2.2], "c"),
        input("brave:off", &[1.0, 1.2], "b"),
        input("brave:on", &[3.0, 3.2], "b"),
        input("chrome:on", &[4.0, 4.2], "c"),
    ];
    let r = build_report(Some("t"), &inputs);
    assert_eq!(r.runs.len(), 8);
    assert_eq!((r.runs[0].group.as_str(), r.runs[0].variant.as_str()), ("brave", "off"));
    let s = r.series("chrome", "off").unwrap();
    assert!((s.discharge.unwrap().mean - 2.1).abs() < 1e-12);
    // nearest-rank median
    assert_eq!(s.median_current_ma, Some(100.0));
    assert_eq!(s.device_cpu_median_pct, Some(10.0));
    assert_eq!(s.upload_bytes, 1000);
    assert_eq!(r.comparisons["off"].names(), ["brave", "chrome"]);
    assert_eq!(r.variants(), ["off", "on"]);
    assert!(r.failures.is_empty());
    // order of inputs does not matter
    let mut reversed = inputs.clone();
    reversed.reverse();
    assert_eq!(build_report(Some("t"), &reversed), r);
}

#[test]
fn failures_are_reported() {
    let mut failed = input("g:v", &[], "x");
    let mut record: ExecutionRecord = serde_json::from_slice(failed.bundle.file("summary.json").unwrap()).unwrap();
    record.outcome = Outcome::Failed {
        code: "UnknownApp".into(),
        reason: "no such app".into(),
    };
    failed.bundle = ArtifactBundle::default();
    failed.bundle.push("summary.json", serde_json::to_vec(&record).unwrap());
    let missing = JobInput {
        label: "h:v".into(),
        bundle: ArtifactBundle::default(),
    };
    let r = build_report(None, &[failed, missing]);
    assert_eq!(r.failures.len(), 2);
    assert_eq!(r.failures[0].code, "UnknownApp");
    assert_eq!(r.failures[1].code, "NoArtifacts");
    assert!(!r.passed());
}

fn check(r: &Report, c: Check) -> CheckResult {
    evaluate(&[c], r).remove(0)
}

#[test]
fn checks_pass_and_fail() {
    let r = build_report(
        None,
        &[
            input("brave:off", &[1.0, 1.2], "b"),
            input("chrome:off", &[2.0, 2.2], "c"),
            input("brave:on", &[3.0, 3.2], "b"),
            input("chrome:on", &[4.0, 4.2], "c"),
            input("firefox:off", &[1.5, 1.7], "f"),
        ],
    );
    let order = |groups: &[&str]| Check::DischargeOrder {
        variant: "off".into(),
        groups: groups.iter().map(|s| s.to_string()).collect(),
    };
    assert!(check(&r, order(&["brave", "firefox", "chrome"])).passed);
    assert!(!check(&r, order(&["brave", "chrome", "firefox"])).passed);
    assert!(!check(&r, order(&["brave", "nope"])).passed);

    let offset = |tolerance| Check::ConstantOffset {
        from: "off".into(),
        to: "on".into(),
        tolerance,
    };
    // firefox has no "on" series
    assert!(!check(&r, offset(0.1)).passed);
    let r2 = build_report(
        None,
        &[
            input("brave:off", &[1.0], "b"),
            input("chrome:off", &[2.0], "c"),
            input("brave:on", &[3.0], "b"),
            input("chrome:on", &[4.1], "c"),
        ],
    );
    assert!(check(&r2, offset(0.1)).passed);
    assert!(!check(&r2, offset(0.01)).passed);

    let ident = |a: &str, b: &str| Check::IdenticalTraces {
        a: a.into(),
        b: b.into(),
    };
    assert!(check(&r, ident("brave:off", "brave:on")).passed);
    assert!(!check(&r, ident("brave:off", "chrome:off")).passed);
    assert!(!check(&r, ident("nope:off", "nope:on")).passed);

    let median = |target_ma| Check::MedianCurrentWithin {
        group: "brave".into(),
        variant: "off".into(),
        target_ma,
        tolerance_ma: 1.0,
    };
    assert!(check(&r, median(100.0)).passed);
    assert!(!check(&r, median(102.0)).passed);
}

#[test]
fn location_checks() {
    let r = build_report(
        None,
        &[
            input("brave:a", &[1.0, 1.2], "b"),
            input("brave:b", &[1.05, 1.25], "b"),
            input("chrome:a", &[2.0, 2.2], "c"),
            input("chrome:b", &[1.9, 2.0], "c"),
            input("chrome:c", &[2.5, 2.6], "c"),
        ],
    );
    assert!(check(&r, Check::SpreadWithinStd { group: "brave".into() }).passed);
    assert!(!check(&r, Check::SpreadWithinStd { group: "chrome".into() }).passed);
    let lowest = |v: &str| Check::LowestVariant {
        group: "chrome".into(),
        variant: v.into(),
    };
    assert!(check(&r, lowest("b")).passed);
    assert!(!check(&r, lowest("a")).passed);
}

#[test]
fn check_json_form() {
    let c: Check = serde_json::from_str(r#"{"check":"lowest_variant","group":"chrome","variant":"japan"}"#).unwrap();
    assert_eq!(
        c,
        Check::LowestVariant {
            group: "chrome".into(),
            variant: "japan".into()
        }
    );
    assert!(serde_json::from_str::<Check>(r#"{"check":"lowest_variant","group":"x"}"#).is_err());
}

#[test]
fn report_files() {
    let inputs = vec![
        input("brave:off", &[1.0, 1.2], "b"),
        input("chrome:off", &[2.0, 2.2], "c"),
        input("brave:on", &[3.0], "b"),
    ];
    let r = build_report(Some("t"), &inputs);
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&r, &inputs, dir.path()).unwrap();
    assert_eq!(
        files,
        [
            "report.json",
            "discharge.dat",
            "discharge-off.dat",
            "current-cdf.dat",
            "device-cpu-cdf.dat",
            "controller-cpu-cdf.dat"
        ]
    );
    let table = std::fs::read_to_string(dir.path().join("discharge.dat")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "brave 1.100000 0.141421 3.000000 0.000000");
    assert_eq!(rows[1], "chrome 2.100000 0.141421 ? ?");
    let back: Report = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, r);
    let cdf = std::fs::read_to_string(dir.path().join("current-cdf.dat")).unwrap();
    assert!(cdf.contains("# brave:off"));
}

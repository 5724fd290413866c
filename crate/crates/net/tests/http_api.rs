mod common;

use std::net::{IpAddr, Ipv4Addr};

use common::*;
use powerbench_core::agent::{ApiCall, ApiResult};
use powerbench_core::coordinator::{JobManifest, JobStatus};
use powerbench_net::{unix_now, ClientError};

fn manifest(v: serde_json::Value) -> JobManifest {
    serde_json::from_value(v).unwrap()
}

fn status(e: &ClientError) -> u16 {
    match e {
        ClientError::Remote { status, .. } => *status,
        other => panic!("expected a remote error, got {other:?}"),
    }
}

/// Registers node1 directly, without an agent behind it.
async fn coordinator_with_vp() -> powerbench_net::coordinator::CoordinatorHandle {
    let c = start_coordinator(None).await;
    let localhost = IpAddr::V4(Ipv4Addr::LOCALHOST);
    c.with_state(|s| {
        s.register_vantage_point(vp_manifest("127.0.0.1:1"), "tok-admin", localhost, |_| true, unix_now())
            .unwrap()
    });
    c
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn auth_and_error_statuses() {
    let c = coordinator_with_vp().await;
    let good = manifest(video_manifest(5.0, 1));

    let e = blocking(|| client(&c, "nobody").devices()).unwrap_err();
    assert_eq!((status(&e), e.code()), (401, "Unauthorized"));
    let e = blocking(|| client(&c, "tok-tess").submit(&good)).unwrap_err();
    assert_eq!((status(&e), e.code()), (403, "Unauthorized"));
    let e = blocking(|| client(&c, "tok-alice").register(&vp_manifest("127.0.0.1:1"))).unwrap_err();
    assert_eq!(status(&e), 403);

    let alice = client(&c, "tok-alice");
    let mut bad = good.clone();
    bad.duration_s = -1.0;
    let e = blocking(|| alice.submit(&bad)).unwrap_err();
    assert_eq!((status(&e), e.code()), (400, "InvalidManifest"));
    assert!(e.to_string().contains("duration_s"), "{e}");

    let mut v = video_manifest(5.0, 1);
    v["constraints"]["device_id"] = "pixel9".into();
    let e = blocking(|| alice.submit(&manifest(v))).unwrap_err();
    assert_eq!((status(&e), e.code()), (422, "NoMatchingDevice"));

    let e = blocking(|| alice.job(99)).unwrap_err();
    assert_eq!((status(&e), e.code()), (404, "UnknownJob"));

    // No agent is linked, so the job stays queued.
    let id = blocking(|| alice.submit(&good)).unwrap();
    assert_eq!(blocking(|| alice.job(id)).unwrap().status, JobStatus::Queued);
    let e = blocking(|| alice.artifacts(id)).unwrap_err();
    assert_eq!((status(&e), e.code()), (409, "NotReady"));
    let e = blocking(|| client(&c, "tok-bob").cancel(id)).unwrap_err();
    assert_eq!(status(&e), 403);
    blocking(|| alice.cancel(id)).unwrap();
    assert_eq!(blocking(|| alice.job(id)).unwrap().status, JobStatus::Cancelled);
    let e = blocking(|| alice.cancel(id)).unwrap_err();
    assert_eq!((status(&e), e.code()), (409, "IllegalTransition"));

    // Admin sees every job.
    assert_eq!(blocking(|| client(&c, "tok-admin").job(id)).unwrap().job_id, id);
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn registration_probes_the_endpoint() {
    let c = start_coordinator(None).await;
    let admin = client(&c, "tok-admin");
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = dead.local_addr().unwrap().to_string();
    drop(dead);
    let e = blocking(|| admin.register(&vp_manifest(&endpoint))).unwrap_err();
    assert_eq!((status(&e), e.code()), (502, "Unreachable"));

    let a = start_agent(agent_config(None), false).await;
    let endpoint = a.control_addr().to_string();
    assert_eq!(blocking(|| admin.register(&vp_manifest(&endpoint))).unwrap(), "node1");
    let e = blocking(|| admin.register(&vp_manifest(&endpoint))).unwrap_err();
    assert_eq!((status(&e), e.code()), (409, "DuplicateId"));
    a.shutdown().await;
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn api_proxy_reaches_the_agent() {
    let (c, a) = fleet(None).await;
    let admin = client(&c, "tok-admin");
    let r = blocking(|| admin.api("node1", &ApiCall::ListDevices)).unwrap();
    assert_eq!(
        r,
        ApiResult::Devices {
            device_ids: vec!["j7duo".into()]
        }
    );
    let start = ApiCall::StartMonitor {
        device_id: "j7duo".into(),
        duration_s: 1.0,
    };
    let e = blocking(|| admin.api("node1", &start)).unwrap_err();
    assert_eq!((status(&e), e.code()), (422, "MeterOff"));
    let e = blocking(|| client(&c, "tok-alice").api("node1", &ApiCall::ListDevices)).unwrap_err();
    assert_eq!(status(&e), 403);
    let e = blocking(|| admin.api("elsewhere", &ApiCall::ListDevices)).unwrap_err();
    assert_eq!(status(&e), 404);

    a.shutdown().await;
    let e = blocking(|| admin.api("node1", &ApiCall::ListDevices)).unwrap_err();
    assert_eq!((status(&e), e.code()), (503, "AgentUnavailable"));
    c.shutdown().await;
}

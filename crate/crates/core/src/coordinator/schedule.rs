use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DeviceSpec, JobConstraints};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSnapshot {
    pub spec: DeviceSpec,
    pub busy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpSnapshot {
    pub vp_id: String,
    pub online: bool,
    /// Most recent controller CPU sample.
    pub cpu_pct: Option<f64>,
    pub devices: Vec<DeviceSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetSnapshot {
    pub vps: Vec<VpSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedJob {
    pub job_id: u64,
    pub constraints: JobConstraints,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dispatch {
    pub job_id: u64,
    pub vp_id: String,
    pub device_id: String,
}

/// Assigns queued jobs to idle devices, one job per device.
///
/// Jobs are taken in id order. A job goes to the first idle matching device
/// whose controller passes the job's CPU gate. A job that cannot go this
/// tick reserves every device it matches, so no later job overtakes it.
/// Controllers without telemetry fail any gate.
pub fn schedule(queue: &[QueuedJob], fleet: &FleetSnapshot) -> Vec<Dispatch> {
    let mut jobs: Vec<&QueuedJob> = queue.iter().collect();
    jobs.sort_by_key(|j| j.job_id);
    let mut vps: Vec<&VpSnapshot> = fleet.vps.iter().filter(|v| v.online).collect();
    vps.sort_by(|a, b| a.vp_id.cmp(&b.vp_id));

    let mut held: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut out = Vec::new();
    for job in jobs {
        let c = &job.constraints;
        let mut matched = Vec::new();
        let mut chosen = None;
        for vp in &vps {
            let gate_ok = match c.cpu_gate_pct {
                None => true,
                Some(g) => vp.cpu_pct.is_some_and(|cpu| cpu <= g),
            };
            let mut devices: Vec<&DeviceSnapshot> = vp.devices.iter().collect();
            devices.sort_by(|a, b| a.spec.device_id.cmp(&b.spec.device_id));
            for d in devices {
                if !c.matches(&vp.vp_id, &d.spec) {
                    continue;
                }
                let key = (vp.vp_id.as_str(), d.spec.device_id.as_str());
                matched.push(key);
                if chosen.is_none() && gate_ok && !d.busy && !held.contains(&key) {
                    chosen = Some(key);
                }
            }
        }
        match chosen {
            Some((vp, dev)) => {
                held.insert((vp, dev));
                out.push(Dispatch {
                    job_id: job.job_id,
                    vp_id: vp.to_string(),
                    device_id: dev.to_string(),
                });
            }
            None => held.extend(matched),
        }
    }
    out
}

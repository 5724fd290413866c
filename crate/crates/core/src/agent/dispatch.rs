use serde::{Deserialize, Serialize};

use super::{
    measurement_channel, to_ns, Agent, AgentError, ChannelMode, ChannelRequirements,
    TelemetrySample, TraceRef,
};
use crate::analysis::plot::write_cdf_csv;
use crate::analysis::{
    empirical_cdf_capped, summarize_trace, IntegrationOptions, MeasurementSummary,
};
use crate::coordinator::{ArtifactBundle, ArtifactLevel, JobManifest};
use crate::devicesim::{AutomationCommand, DeviceLogEntry, NetworkProfile};
use crate::hwsim::trace::write_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPoint {
    AfterPrepare,
    DuringScript,
    BeforeStop,
    BeforeFinalize,
}

/// A failure to inject at `point` during `repetition`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub point: FaultPoint,
    pub repetition: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Done,
    Failed { code: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub job_id: u64,
    pub vp_id: String,
    pub device_id: String,
    /// Channel used while measuring; `None` when the script needed none.
    pub channel: Option<ChannelMode>,
    pub traces: Vec<TraceRef>,
    pub summaries: Vec<MeasurementSummary>,
    pub telemetry: Vec<TelemetrySample>,
    pub outcome: Outcome,
}

impl ExecutionRecord {
    pub fn is_done(&self) -> bool {
        self.outcome == Outcome::Done
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub record: ExecutionRecord,
    pub bundle: ArtifactBundle,
}

/// Per-repetition seed; the same `(seed, repetition)` always replays the
/// same run, whatever else differs in the manifest.
pub fn repetition_seed(seed: u64, repetition: u32) -> u64 {
    let mut z = seed ^ (u64::from(repetition) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TELEMETRY_SALT: u64 = 0x7e1e_3e7a;

/// Points kept in each repetition's current CDF artifact.
const BUNDLE_CDF_POINTS: usize = 1000;

impl Agent {
    /// Runs a dispatched job end to end. The device's relay is back on
    /// battery and the meter socket off when this returns, whatever happened.
    pub fn handle_dispatch(
        &mut self,
        job_id: u64,
        manifest: &JobManifest,
        device_id: &str,
    ) -> JobResult {
        self.telemetry
            .restart(self.clock_ns, manifest.seed ^ TELEMETRY_SALT);
        self.telemetry.start_recording();
        self.hw.drain_events();
        let mut record = ExecutionRecord {
            job_id,
            vp_id: self.config.vp_id.clone(),
            device_id: device_id.to_string(),
            channel: None,
            traces: Vec::new(),
            summaries: Vec::new(),
            telemetry: Vec::new(),
            outcome: Outcome::Done,
        };
        let mut bundle = ArtifactBundle::default();
        let mut log = Vec::new();
        let claimed = self.claim(job_id, manifest, device_id);
        let result = match claimed {
            Ok(()) => {
                let r = self.run_job(
                    job_id,
                    manifest,
                    device_id,
                    &mut record,
                    &mut bundle,
                    &mut log,
                );
                self.release(device_id);
                r
            }
            Err(e) => Err(e),
        };
        if let Err(e) = result {
            tracing::warn!(job_id, device_id, error = %e, "job failed");
            record.outcome = Outcome::Failed {
                code: e.code().to_string(),
                reason: e.to_string(),
            };
        }
        if let Some(slot) = self.slots.get_mut(device_id) {
            log.extend(slot.sim.take_log());
        }
        record.telemetry = self.telemetry.stop_recording();
        let events = self.hw.drain_events();
        bundle.push("summary.json", to_json(&record));
        bundle.push("device_log.json", to_json(&log));
        bundle.push("hw_events.json", to_json(&events));
        bundle.push("telemetry.csv", telemetry_csv(&record.telemetry));
        JobResult { record, bundle }
    }

    fn claim(
        &mut self,
        job_id: u64,
        manifest: &JobManifest,
        device_id: &str,
    ) -> Result<(), AgentError> {
        manifest
            .validate()
            .map_err(|e| AgentError::InvalidManifest {
                field: e.field.to_string(),
                reason: e.reason,
            })?;
        if !self.config.meter.accepts(manifest.voltage) {
            return Err(AgentError::VoltageOutOfRange(manifest.voltage));
        }
        let measured = self.measured_device().map(str::to_string);
        let slot = self.slot_mut(device_id)?;
        if let Some(other) = slot.job {
            return Err(AgentError::Busy(format!(
                "{device_id} is running job {other}"
            )));
        }
        if let Some(d) = measured {
            return Err(AgentError::Busy(format!("{d} is being measured")));
        }
        slot.job = Some(job_id);
        slot.connectivity = manifest.constraints.connectivity;
        Ok(())
    }

    fn release(&mut self, device_id: &str) {
        if let Some(id) = self.slots.get(device_id).and_then(|s| s.session) {
            let _ = self.close_session(id);
        }
        self.restore_device(device_id);
        if let Some(slot) = self.slots.get_mut(device_id) {
            slot.job = None;
            slot.connectivity = super::Connectivity::Wifi;
        }
    }

    /// Channel needed while the meter is attached, or `None` if the script
    /// drives itself.
    fn plan_channel(
        &self,
        manifest: &JobManifest,
        device_id: &str,
    ) -> Result<Option<ChannelMode>, AgentError> {
        let spec = &self.slot(device_id)?.spec;
        if manifest.mirroring && !spec.supports_mirroring() {
            return Err(AgentError::ChannelInfeasible(format!(
                "{device_id} cannot run the mirroring tool"
            )));
        }
        let adb = manifest.measured_phase_needs_adb();
        if (adb || manifest.mirroring) && !spec.has_adb() {
            return Err(AgentError::ChannelInfeasible(format!(
                "{device_id} has no debug bridge"
            )));
        }
        if manifest.preloaded && !manifest.mirroring {
            return Ok(None);
        }
        let req = ChannelRequirements {
            connectivity: manifest.constraints.connectivity,
            adb_required: adb || manifest.mirroring,
            mirroring: manifest.mirroring,
            device_rooted: spec.rooted,
        };
        measurement_channel(spec, &req).map(Some)
    }

    fn fault_at(&mut self, point: FaultPoint, repetition: u32) -> Result<(), AgentError> {
        match self.fault {
            Some(f) if f.point == point && f.repetition == repetition => {
                self.fault = None;
                Err(AgentError::Fault(format!(
                    "{point:?} in repetition {repetition}"
                )))
            }
            _ => Ok(()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_job(
        &mut self,
        job_id: u64,
        manifest: &JobManifest,
        device_id: &str,
        record: &mut ExecutionRecord,
        bundle: &mut ArtifactBundle,
        log: &mut Vec<DeviceLogEntry>,
    ) -> Result<(), AgentError> {
        let network = match &manifest.constraints.network_profile {
            Some(name) => self
                .config
                .network_profile(name)
                .cloned()
                .ok_or_else(|| AgentError::UnknownProfile(name.clone()))?,
            None => NetworkProfile::default(),
        };
        record.channel = self.plan_channel(manifest, device_id)?;
        let (setup, measured) = manifest.split_script();
        for rep in 0..manifest.repetitions {
            let seed = repetition_seed(manifest.seed, rep);
            log.extend(self.slot_mut(device_id)?.sim.take_log());
            self.reboot_device(device_id, seed, network.clone())?;
            self.slot_mut(device_id)?
                .sim
                .log_event(format!("job {job_id} repetition {rep}"));
            for cmd in setup {
                self.slot_mut(device_id)?.sim.apply_command(cmd)?;
            }
            if manifest.mirroring {
                self.open_session(device_id, false)?;
            }
            self.advance(self.config.pre_roll_s);

            let token = self.prepare_measurement(device_id, manifest.voltage)?;
            self.fault_at(FaultPoint::AfterPrepare, rep)?;
            self.start_sampling(token, Some(manifest.duration_s), Some(job_id), rep, seed)?;
            let deadline = self.clock_ns + to_ns(manifest.duration_s);
            for (i, cmd) in measured.iter().enumerate() {
                if self.clock_ns >= deadline {
                    break;
                }
                match cmd {
                    AutomationCommand::Wait { s } => {
                        let until = (self.clock_ns + to_ns(*s)).min(deadline);
                        self.advance_to_ns(until);
                    }
                    other => self.slot_mut(device_id)?.sim.apply_command(other)?,
                }
                if i == 0 {
                    self.fault_at(FaultPoint::DuringScript, rep)?;
                }
            }
            self.advance_to_ns(deadline);
            self.fault_at(FaultPoint::BeforeStop, rep)?;
            let trace = self.take_trace()?;
            let device_cpu = std::mem::take(&mut self.last_device_cpu);
            self.fault_at(FaultPoint::BeforeFinalize, rep)?;
            self.finalize_measurement(device_id)?;
            if let Some(id) = self.slot(device_id)?.session {
                self.close_session(id)?;
            }

            let summary = summarize_trace(&trace, IntegrationOptions::default())?;
            let r = self.trace_ref(&trace);
            if manifest.artifacts == ArtifactLevel::Full {
                let mut csv = Vec::new();
                write_csv(&mut csv, &trace.samples).expect("writing to memory");
                bundle.push(format!("traces/rep{rep}.csv"), csv);
                bundle.push(format!("traces/rep{rep}.meta.json"), to_json(&trace.meta));
            }
            let cdf = empirical_cdf_capped(&trace.currents(), BUNDLE_CDF_POINTS)?;
            let mut csv = Vec::new();
            write_cdf_csv(&mut csv, &cdf).expect("writing to memory");
            bundle.push(format!("cdf/rep{rep}.csv"), csv);
            bundle.push(
                format!("device_cpu/rep{rep}.csv"),
                device_cpu_csv(&device_cpu),
            );
            record.traces.push(r);
            record.summaries.push(summary);
        }
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("artifact serializes")
}

fn telemetry_csv(samples: &[TelemetrySample]) -> Vec<u8> {
    let mut out = String::from("t_s,cpu_pct,mem_pct,up_bytes\n");
    for s in samples {
        out.push_str(&format!(
            "{:.3},{:.3},{:.3},{}\n",
            s.t, s.cpu_pct, s.mem_pct, s.up_bytes
        ));
    }
    out.into_bytes()
}

fn device_cpu_csv(samples: &[(f64, f64)]) -> Vec<u8> {
    let mut out = String::from("t_s,cpu_pct\n");
    for (t, cpu) in samples {
        out.push_str(&format!("{t:.3},{cpu:.3}\n"));
    }
    out.into_bytes()
}

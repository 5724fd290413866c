//! Central service: vantage-point registry, job queue, scheduling and
//! artifact storage. Every operation takes the current time explicitly so
//! the whole state machine runs under test without a wall clock.

mod auth;
mod model;
mod schedule;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use auth::{
    Action, Authorizer, Decision, Grant, Principal, Resource, Role, RoleMatrix, TokenEntry,
};
pub use model::{
    is_dns_label, ArtifactBundle, ArtifactFile, ArtifactLevel, Assignment, DeviceSpec, FieldError,
    JobConstraints, JobManifest, JobRecord, JobStatus, MeterSpec, Os, VantagePointManifest,
    VantagePointRecord, VpStatus, MIRRORING_MIN_API_LEVEL,
};
pub use schedule::{schedule, DeviceSnapshot, Dispatch, FleetSnapshot, QueuedJob, VpSnapshot};
pub use store::{JournalEntry, Store, JOURNAL_FILE};

use crate::agent::HealthReport;


pub const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinatorConfig {
    pub heartbeat_interval_s: f64,
    /// Missed heartbeats before a vantage point counts as offline.
    pub missed_heartbeats: u32,
    /// How long RUNNING jobs survive on an offline vantage point.
    pub offline_grace_s: f64,
    pub retention_s: f64,
    pub schedule_period_s: f64,
    pub data_dir: Option<PathBuf>,
    pub tokens: Vec<TokenEntry>,
    /// Port for agent connections.
    pub agent_port: u16,
    /// Port for the experimenter HTTP API.
    pub http_port: u16,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval_s: 10.0,
            missed_heartbeats: 3,
            offline_grace_s: 60.0,
            retention_s: 7.0 * DAY_S,
            schedule_period_s: 5.0,
            data_dir: None,
            tokens: Vec::new(),
            agent_port: 7070,
            http_port: 7080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordError {
    #[error("unauthorized")]
    Unauthorized,
    #[error("vantage point {0} already registered")]
    DuplicateId(String),
    #[error("vantage point endpoint {0} unreachable")]
    Unreachable(String),
    #[error("invalid {field}: {reason}")]
    InvalidManifest { field: String, reason: String },
    #[error("no registered device matches the constraints")]
    NoMatchingDevice,
    #[error("unknown job {0}")]
    UnknownJob(u64),
    #[error("unknown vantage point {0}")]
    UnknownVantagePoint(String),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: JobStatus, to: JobStatus },
    #[error("artifacts not ready")]
    NotReady,
    #[error("artifacts expired")]
    Expired,
    #[error("storage: {0}")]
    Storage(String),
}

impl CoordError {
    pub fn code(&self) -> &'static str {
        match self {
            CoordError::Unauthorized => "Unauthorized",
            CoordError::DuplicateId(_) => "DuplicateId",
            CoordError::Unreachable(_) => "Unreachable",
            CoordError::InvalidManifest { .. } => "InvalidManifest",
            CoordError::NoMatchingDevice => "NoMatchingDevice",
            CoordError::UnknownJob(_) => "UnknownJob",
            CoordError::UnknownVantagePoint(_) => "UnknownVantagePoint",
            CoordError::IllegalTransition { .. } => "IllegalTransition",
            CoordError::NotReady => "NotReady",
            CoordError::Expired => "Expired",
            CoordError::Storage(_) => "StorageError",
        }
    }
}

impl From<std::io::Error> for CoordError {
    fn from(e: std::io::Error) -> Self {
        CoordError::Storage(e.to_string())
    }
}

impl From<FieldError> for CoordError {
    fn from(e: FieldError) -> Self {
        CoordError::InvalidManifest {
            field: e.field.to_string(),
            reason: e.reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceListing {
    pub vp_id: String,
    pub device_id: String,
    pub model: String,
    pub os: Os,
    pub state: DeviceAvailability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceAvailability {
    Idle,
    Busy,
    Offline,
}

/// Changes produced by a liveness sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LivenessChanges {
    pub went_offline: Vec<String>,
    pub failed_jobs: Vec<u64>,
}

#[derive(Debug)]
pub struct Coordinator {
    config: CoordinatorConfig,
    auth: Authorizer,
    vps: BTreeMap<String, VantagePointRecord>,
    offline_since: BTreeMap<String, f64>,
    jobs: BTreeMap<u64, JobRecord>,
    next_job_id: u64,
    store: Option<Store>,
    memory_artifacts: BTreeMap<u64, ArtifactBundle>,
}

impl Coordinator {
    /// Opens the coordinator, replaying the journal when a data directory
    /// is configured. Replayed vantage points get a fresh heartbeat window.
    pub fn open(config: CoordinatorConfig, now: f64) -> Result<Self, CoordError> {
        let auth = Authorizer::new(RoleMatrix::default(), &config.tokens);
        let mut c = Self {
            auth,
            vps: BTreeMap::new(),
            offline_since: BTreeMap::new(),
            jobs: BTreeMap::new(),
            next_job_id: 1,
            store: None,
            memory_artifacts: BTreeMap::new(),
            config,
        };
        if let Some(dir) = c.config.data_dir.clone() {
            let (store, entries) = Store::open(&dir)?;
            for e in entries {
                match e {
                    JournalEntry::VantagePoint { mut record } => {
                        record.last_heartbeat = now;
                        record.status = VpStatus::Online;
                        record.busy_devices.clear();
                        record.controller_cpu_pct = None;
                        c.vps.insert(record.vp_id.clone(), record);
                    }
                    JournalEntry::Job { record } => {
                        c.next_job_id = c.next_job_id.max(record.job_id + 1);
                        c.jobs.insert(record.job_id, record);
                    }
                }
            }
            c.store = Some(store);
        }
        Ok(c)
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn authorizer(&self) -> &Authorizer {
        &self.auth
    }

    pub fn authorize(&self, token: &str, action: Action, resource: Resource<'_>) -> Decision {
        self.auth.authorize(token, action, resource)
    }

    fn require(
        &self,
        token: &str,
        action: Action,
        resource: Resource<'_>,
    ) -> Result<&Principal, CoordError> {
        let p = self.auth.principal(token).ok_or(CoordError::Unauthorized)?;
        match self.auth.matrix.decide(p, action, resource) {
            Decision::Allow => Ok(p),
            Decision::Deny => Err(CoordError::Unauthorized),
        }
    }

    fn journal(&mut self, entry: JournalEntry) -> Result<(), CoordError> {
        if let Some(store) = self.store.as_mut() {
            store.append(&entry)?;
        }
        Ok(())
    }

    fn journal_job(&mut self, job_id: u64) -> Result<(), CoordError> {
        let record = self.jobs[&job_id].clone();
        self.journal(JournalEntry::Job { record })
    }

    pub fn vantage_points(&self) -> impl Iterator<Item = &VantagePointRecord> {
        self.vps.values()
    }

    pub fn vantage_point(&self, vp_id: &str) -> Option<&VantagePointRecord> {
        self.vps.get(vp_id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn job(&self, job_id: u64) -> Option<&JobRecord> {
        self.jobs.get(&job_id)
    }

    /// True when `ip` is on any vantage point's allowlist. Connections from
    /// anywhere else are dropped before they can say HELLO.
    pub fn ip_allowed(&self, ip: IpAddr) -> bool {
        self.vps.values().any(|v| ip_listed(&v.allowlisted_ips, ip))
    }

    /// Adds a vantage point. `probe` checks that its endpoint answers.
    pub fn register_vantage_point(
        &mut self,
        manifest: VantagePointManifest,
        admin_token: &str,
        origin: IpAddr,
        probe: impl FnOnce(&str) -> bool,
        now: f64,
    ) -> Result<String, CoordError> {
        self.require(admin_token, Action::RegisterVantagePoint, Resource::none())?;
        if !ip_listed(&manifest.allowlisted_ips, origin) {
            return Err(CoordError::Unauthorized);
        }
        if !is_dns_label(&manifest.vp_id) {
            return Err(CoordError::InvalidManifest {
                field: "vp_id".into(),
                reason: "must be a DNS label".into(),
            });
        }
        if self.vps.contains_key(&manifest.vp_id) {
            return Err(CoordError::DuplicateId(manifest.vp_id));
        }
        for ip in &manifest.allowlisted_ips {
            if ip.parse::<IpAddr>().is_err() {
                return Err(CoordError::InvalidManifest {
                    field: "allowlisted_ips".into(),
                    reason: format!("{ip} is not an IP address"),
                });
            }
        }
        if !probe(&manifest.endpoint) {
            return Err(CoordError::Unreachable(manifest.endpoint));
        }
        let record = VantagePointRecord {
            vp_id: manifest.vp_id.clone(),
            endpoint: manifest.endpoint,
            allowlisted_ips: manifest.allowlisted_ips,
            devices: manifest.devices,
            meter: manifest.meter,
            agent_token: manifest.agent_token,
            last_heartbeat: now,
            status: VpStatus::Online,
            controller_cpu_pct: None,
            busy_devices: BTreeSet::new(),
        };
        self.journal(JournalEntry::VantagePoint {
            record: record.clone(),
        })?;
        self.vps.insert(record.vp_id.clone(), record);
        Ok(manifest.vp_id)
    }

    /// Checks an agent's HELLO.
    pub fn authenticate_agent(
        &self,
        vp_id: &str,
        token: &str,
        ip: IpAddr,
    ) -> Result<(), CoordError> {
        let vp = self
            .vps
            .get(vp_id)
            .ok_or_else(|| CoordError::UnknownVantagePoint(vp_id.to_string()))?;
        if vp.agent_token != token || !ip_listed(&vp.allowlisted_ips, ip) {
            return Err(CoordError::Unauthorized);
        }
        Ok(())
    }

    pub fn heartbeat(
        &mut self,
        vp_id: &str,
        health: Option<&HealthReport>,
        now: f64,
    ) -> Result<(), CoordError> {
        let vp = self
            .vps
            .get_mut(vp_id)
            .ok_or_else(|| CoordError::UnknownVantagePoint(vp_id.to_string()))?;
        vp.last_heartbeat = now;
        vp.status = VpStatus::Online;
        if let Some(h) = health {
            vp.controller_cpu_pct = Some(h.cpu_pct);
            vp.busy_devices = h.busy_devices().map(str::to_string).collect();
        }
        self.offline_since.remove(vp_id);
        Ok(())
    }

    /// Marks silent vantage points offline and fails their running jobs
    /// once the grace period has passed.
    pub fn check_liveness(&mut self, now: f64) -> Result<LivenessChanges, CoordError> {
        let limit = self.config.heartbeat_interval_s * f64::from(self.config.missed_heartbeats);
        let mut changes = LivenessChanges::default();
        for vp in self.vps.values_mut() {
            if now - vp.last_heartbeat > limit && vp.status == VpStatus::Online {
                vp.status = VpStatus::Offline;
                self.offline_since.insert(vp.vp_id.clone(), now);
                changes.went_offline.push(vp.vp_id.clone());
            }
        }
        let expired: Vec<u64> = self
            .jobs
            .values()
            .filter(|j| j.status == JobStatus::Running)
            .filter(|j| {
                j.assigned.as_ref().is_some_and(|a| {
                    self.offline_since
                        .get(&a.vp_id)
                        .is_some_and(|since| now - since >= self.config.offline_grace_s)
                })
            })
            .map(|j| j.job_id)
            .collect();
        for id in expired {
            let job = self.jobs.get_mut(&id).expect("listed above");
            job.status = JobStatus::Failed;
            job.reason = Some("vantage point went offline".into());
            job.finished_at = Some(now);
            self.journal_job(id)?;
            changes.failed_jobs.push(id);
        }
        Ok(changes)
    }

    fn matching_devices<'a>(
        &'a self,
        c: &'a JobConstraints,
    ) -> impl Iterator<Item = (&'a VantagePointRecord, &'a DeviceSpec)> + 'a {
        self.vps.values().flat_map(move |vp| {
            vp.devices
                .iter()
                .filter(move |d| c.matches(&vp.vp_id, d))
                .map(move |d| (vp, d))
        })
    }

    pub fn submit_job(
        &mut self,
        mut manifest: JobManifest,
        token: &str,
        now: f64,
    ) -> Result<u64, CoordError> {
        let principal = self
            .require(token, Action::Submit, Resource::none())?
            .id
            .clone();
        manifest.validate()?;
        let matching: Vec<_> = self.matching_devices(&manifest.constraints).collect();
        if matching.is_empty() {
            return Err(CoordError::NoMatchingDevice);
        }
        if !matching
            .iter()
            .any(|(vp, _)| vp.meter.accepts(manifest.voltage))
        {
            return Err(CoordError::InvalidManifest {
                field: "voltage".into(),
                reason: format!(
                    "{} V is outside every matching meter's range",
                    manifest.voltage
                ),
            });
        }
        manifest.experimenter = principal;
        let job_id = self.next_job_id;
        self.next_job_id += 1;
        self.jobs.insert(
            job_id,
            JobRecord {
                job_id,
                manifest,
                status: JobStatus::Queued,
                assigned: None,
                reason: None,
                submitted_at: now,
                finished_at: None,
                has_artifacts: false,
                retention_deadline: None,
            },
        );
        self.journal_job(job_id)?;
        Ok(job_id)
    }

    pub fn get_job(&self, job_id: u64, token: &str) -> Result<&JobRecord, CoordError> {
        self.auth.principal(token).ok_or(CoordError::Unauthorized)?;
        let job = self
            .jobs
            .get(&job_id)
            .ok_or(CoordError::UnknownJob(job_id))?;
        self.require(
            token,
            Action::ViewJob,
            Resource::owned_by(&job.manifest.experimenter),
        )?;
        Ok(job)
    }

    pub fn cancel_job(&mut self, job_id: u64, token: &str) -> Result<(), CoordError> {
        self.auth.principal(token).ok_or(CoordError::Unauthorized)?;
        let job = self
            .jobs
            .get(&job_id)
            .ok_or(CoordError::UnknownJob(job_id))?;
        self.require(
            token,
            Action::CancelJob,
            Resource::owned_by(&job.manifest.experimenter),
        )?;
        self.transition(job_id, JobStatus::Cancelled)?;
        self.journal_job(job_id)
    }

    fn transition(&mut self, job_id: u64, to: JobStatus) -> Result<(), CoordError> {
        let job = self
            .jobs
            .get_mut(&job_id)
            .ok_or(CoordError::UnknownJob(job_id))?;
        if !job.status.can_become(to) {
            return Err(CoordError::IllegalTransition {
                from: job.status,
                to,
            });
        }
        job.status = to;
        Ok(())
    }

    pub fn fleet_snapshot(&self) -> FleetSnapshot {
        let running: BTreeSet<(&str, &str)> = self
            .jobs
            .values()
            .filter(|j| j.status == JobStatus::Running)
            .filter_map(|j| j.assigned.as_ref())
            .map(|a| (a.vp_id.as_str(), a.device_id.as_str()))
            .collect();
        FleetSnapshot {
            vps: self
                .vps
                .values()
                .map(|vp| VpSnapshot {
                    vp_id: vp.vp_id.clone(),
                    online: vp.status == VpStatus::Online,
                    cpu_pct: vp.controller_cpu_pct,
                    devices: vp
                        .devices
                        .iter()
                        .map(|d| DeviceSnapshot {
                            spec: d.clone(),
                            busy: running.contains(&(vp.vp_id.as_str(), d.device_id.as_str()))
                                || vp.busy_devices.contains(&d.device_id),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// One scheduling tick. Dispatched jobs move straight to RUNNING so a
    /// device can never be handed out twice.
    pub fn schedule(&mut self, _now: f64) -> Result<Vec<Dispatch>, CoordError> {
        let queue: Vec<QueuedJob> = self
            .jobs
            .values()
            .filter(|j| j.status == JobStatus::Queued)
            .map(|j| QueuedJob {
                job_id: j.job_id,
                constraints: j.manifest.constraints.clone(),
            })
            .collect();
        let dispatches = schedule(&queue, &self.fleet_snapshot());
        for d in &dispatches {
            self.transition(d.job_id, JobStatus::Running)?;
            self.jobs.get_mut(&d.job_id).expect("exists").assigned = Some(Assignment {
                vp_id: d.vp_id.clone(),
                device_id: d.device_id.clone(),
            });
            self.journal_job(d.job_id)?;
        }
        Ok(dispatches)
    }

    /// Puts a dispatched job back in the queue, e.g. when its agent could
    /// not be reached.
    pub fn requeue(&mut self, job_id: u64) -> Result<(), CoordError> {
        let job = self
            .jobs
            .get_mut(&job_id)
            .ok_or(CoordError::UnknownJob(job_id))?;
        if job.status == JobStatus::Running {
            job.status = JobStatus::Queued;
            job.assigned = None;
            self.journal_job(job_id)?;
        }
        Ok(())
    }

    /// Agent-side status report for an assigned job.
    pub fn report_status(
        &mut self,
        vp_id: &str,
        job_id: u64,
        status: JobStatus,
        reason: Option<String>,
        artifacts: Option<ArtifactBundle>,
        now: f64,
    ) -> Result<(), CoordError> {
        let job = self
            .jobs
            .get(&job_id)
            .ok_or(CoordError::UnknownJob(job_id))?;
        if job.assigned.as_ref().map(|a| a.vp_id.as_str()) != Some(vp_id) {
            return Err(CoordError::Unauthorized);
        }
        if status == JobStatus::Running && job.status == JobStatus::Running {
            return Ok(());
        }
        self.transition(job_id, status)?;
        if matches!(status, JobStatus::Done | JobStatus::Failed) {
            let deadline = now + self.config.retention_s;
            let job = self.jobs.get_mut(&job_id).expect("exists");
            job.reason = reason;
            job.finished_at = Some(now);
            if let Some(mut bundle) = artifacts {
                bundle.retention_deadline = Some(deadline);
                job.has_artifacts = true;
                job.retention_deadline = Some(deadline);
                match self.store.as_ref() {
                    Some(store) => store.write_bundle(job_id, &bundle)?,
                    None => {
                        self.memory_artifacts.insert(job_id, bundle);
                    }
                }
            }
        }
        self.journal_job(job_id)
    }

    pub fn fetch_artifacts(
        &self,
        job_id: u64,
        token: &str,
        now: f64,
    ) -> Result<ArtifactBundle, CoordError> {
        self.auth.principal(token).ok_or(CoordError::Unauthorized)?;
        let job = self
            .jobs
            .get(&job_id)
            .ok_or(CoordError::UnknownJob(job_id))?;
        self.require(
            token,
            Action::FetchArtifacts,
            Resource::owned_by(&job.manifest.experimenter),
        )?;
        if !matches!(job.status, JobStatus::Done | JobStatus::Failed) || !job.has_artifacts {
            return Err(CoordError::NotReady);
        }
        if job.retention_deadline.is_some_and(|d| now > d) {
            return Err(CoordError::Expired);
        }
        match self.store.as_ref() {
            Some(store) => Ok(store.read_bundle(job_id)?),
            None => self
                .memory_artifacts
                .get(&job_id)
                .cloned()
                .ok_or(CoordError::NotReady),
        }
    }

    pub fn list_devices(&self, token: &str) -> Result<Vec<DeviceListing>, CoordError> {
        self.require(token, Action::ListDevices, Resource::none())?;
        let snapshot = self.fleet_snapshot();
        Ok(snapshot
            .vps
            .iter()
            .flat_map(|vp| {
                vp.devices.iter().map(move |d| DeviceListing {
                    vp_id: vp.vp_id.clone(),
                    device_id: d.spec.device_id.clone(),
                    model: d.spec.model.clone(),
                    os: d.spec.os,
                    state: if !vp.online {
                        DeviceAvailability::Offline
                    } else if d.busy {
                        DeviceAvailability::Busy
                    } else {
                        DeviceAvailability::Idle
                    },
                })
            })
            .collect())
    }
}

fn ip_listed(list: &[String], ip: IpAddr) -> bool {
    list.iter()
        .filter_map(|s| s.parse::<IpAddr>().ok())
        .any(|a| a == ip || a.to_canonical() == ip.to_canonical())
}

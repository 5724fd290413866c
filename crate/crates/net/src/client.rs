//! Blocking client for the coordinator's experimenter API.

use std::time::Duration;

use powerbench_core::agent::{ApiCall, ApiResult};
use powerbench_core::coordinator::{
    ArtifactBundle, DeviceListing, JobManifest, JobRecord, VantagePointManifest,
};
use powerbench_core::protocol::ApiFailure;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Artifact bundles carry full traces; allow large bodies.
const BODY_LIMIT: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The server answered with an error document.
    #[error("{code}: {message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },
    #[error("cannot reach {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// The server's error code, when there is one.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Remote { code, .. } => code,
            ClientError::Transport(_) => "Unreachable",
            ClientError::Decode(_) => "BadResponse",
        }
    }
}

#[derive(Debug, Deserialize)]
struct Submitted {
    job_id: u64,
}

#[derive(Debug, Deserialize)]
struct Registered {
    vp_id: String,
}

pub struct Client {
    base: String,
    token: String,
    http: ureq::Agent,
}

impl Client {
    /// `endpoint` is `host:port` or a full `http://` URL.
    pub fn new(endpoint: &str, token: &str) -> Self {
        let base = if endpoint.contains("://") {
            endpoint.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", endpoint.trim_end_matches('/'))
        };
        let http = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            base,
            token: token.to_string(),
            http,
        }
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token)
    }

    fn finish<T: DeserializeOwned>(
        &self,
        r: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ClientError> {
        let mut resp = r.map_err(|e| ClientError::Transport(format!("{}: {e}", self.base)))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_vec()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        if status >= 400 {
            return Err(match serde_json::from_slice::<ApiFailure>(&body) {
                Ok(f) => ClientError::Remote {
                    status,
                    code: f.code,
                    message: f.message,
                },
                Err(_) => ClientError::Remote {
                    status,
                    code: format!("Http{status}"),
                    message: String::from_utf8_lossy(&body).into_owned(),
                },
            });
        }
        let body = if body.is_empty() { b"null".to_vec() } else { body };
        serde_json::from_slice(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let r = self
            .http
            .get(format!("{}{path}", self.base))
            .header("Authorization", self.auth())
            .call();
        self.finish(r)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .header("Authorization", self.auth())
            .send_json(body);
        self.finish(r)
    }

    pub fn devices(&self) -> Result<Vec<DeviceListing>, ClientError> {
        self.get("/devices")
    }

    pub fn submit(&self, manifest: &JobManifest) -> Result<u64, ClientError> {
        self.post::<_, Submitted>("/jobs", manifest).map(|s| s.job_id)
    }

    pub fn job(&self, job_id: u64) -> Result<JobRecord, ClientError> {
        self.get(&format!("/jobs/{job_id}"))
    }

    pub fn cancel(&self, job_id: u64) -> Result<(), ClientError> {
        let r = self
            .http
            .delete(format!("{}/jobs/{job_id}", self.base))
            .header("Authorization", self.auth())
            .call();
        self.finish::<serde_json::Value>(r).map(|_| ())
    }

    pub fn artifacts(&self, job_id: u64) -> Result<ArtifactBundle, ClientError> {
        self.get(&format!("/jobs/{job_id}/artifacts"))
    }

    pub fn register(&self, manifest: &VantagePointManifest) -> Result<String, ClientError> {
        self.post::<_, Registered>("/vantage-points", manifest)
            .map(|r| r.vp_id)
    }

    /// One controller API call on a connected vantage point (admin only).
    pub fn api(&self, vp_id: &str, call: &ApiCall) -> Result<ApiResult, ClientError> {
        self.post(&format!("/vantage-points/{vp_id}/api"), call)
    }
}

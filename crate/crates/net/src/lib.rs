//! Network services around the testbed core: the coordinator's agent
//! listener and HTTP API, the agent process with its session endpoints,
//! and a blocking client for experimenters.

pub mod agent;
pub mod client;
pub mod codec;
pub mod coordinator;
pub mod session;

pub use client::{Client, ClientError};

/// Seconds since the Unix epoch.
pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

//! Simulated battery-measurement testbed: hardware and device simulators,
//! the vantage-point agent, the coordinator state machine, mirroring
//! sessions, trace analysis and scenario running.

pub mod agent;
pub mod analysis;
pub mod coordinator;
pub mod devicesim;
pub mod hwsim;
pub mod protocol;
pub mod scenario;
pub mod session;

//! Simulated handset: interprets automation commands, evolves CPU, screen
//! and network activity on a virtual clock, and maps its state to current
//! draw through a [`LoadModel`].

mod command;
mod device;
mod profile;

use thiserror::Error;

pub use command::{AutomationCommand, InputKind, ScrollDirection, KEYCODE_POWER};
pub use device::{Device, DeviceConfig, DeviceLogEntry, DeviceState, ScreenContent};
pub use profile::{
    app_page_load_time, page_load_time, AppKind, AppProfile, LoadModel, NetworkProfile,
    DEFAULT_PAGE_LOAD_CAP_S,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown app {0}")]
    UnknownApp(String),
    #[error("invalid in current state: {0}")]
    InvalidInState(String),
    #[error("screen is off")]
    ScreenOff,
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

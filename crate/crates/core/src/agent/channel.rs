use serde::{Deserialize, Serialize};

/// Transport used to drive a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChannelMode {
    Usb,
    Wifi,
    Bluetooth,
}

/// Network the device under test uses during the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Connectivity {
    #[default]
    Wifi,
    Cellular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelRequirements {
    pub connectivity: Connectivity,
    pub adb_required: bool,
    pub mirroring: bool,
    pub device_rooted: bool,
}

impl ChannelRequirements {
    /// Mirroring runs on top of the debug bridge.
    pub fn needs_adb(&self) -> bool {
        self.adb_required || self.mirroring
    }
}

/// Chooses the automation channel used while a measurement is running.
///
/// USB is never eligible: its bus power flows into the device and corrupts
/// the reading. WiFi is unavailable when the experiment needs the cellular
/// network. Bluetooth keyboard emulation cannot mirror the screen, and
/// debug-bridge commands over Bluetooth need a rooted device. When both
/// WiFi and Bluetooth qualify, WiFi wins.
pub fn select_channel(req: &ChannelRequirements) -> Result<ChannelMode, String> {
    if req.connectivity == Connectivity::Wifi {
        return Ok(ChannelMode::Wifi);
    }
    if req.mirroring {
        return Err("mirroring needs the debug bridge, which is unavailable over Bluetooth".into());
    }
    if req.adb_required && !req.device_rooted {
        return Err("debug bridge over Bluetooth requires a rooted device".into());
    }
    Ok(ChannelMode::Bluetooth)
}

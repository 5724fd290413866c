use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrollDirection {
    Up,
    Down,
}

/// One step of an automation script. Scripts are JSON arrays of these,
/// e.g. `[{"cmd":"launch_app","app":"chrome"},{"cmd":"wait","s":6}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum AutomationCommand {
    LaunchApp {
        app: String,
    },
    /// Load a page; `bytes` defaults to the active app's page size.
    LoadUrl {
        #[serde(default)]
        bytes: Option<u64>,
    },
    Wait {
        s: f64,
    },
    Scroll {
        direction: ScrollDirection,
        count: u32,
    },
    Tap {
        x: u32,
        y: u32,
    },
    Key {
        code: u32,
    },
    CleanState {
        app: String,
    },
    PlayVideo {
        duration_s: f64,
    },
}

impl AutomationCommand {
    /// Commands a Bluetooth keyboard cannot express.
    pub fn requires_adb(&self) -> bool {
        matches!(
            self,
            AutomationCommand::Tap { .. } | AutomationCommand::CleanState { .. }
        )
    }
}

/// Android key code that toggles the screen.
pub const KEYCODE_POWER: u32 = 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    Tap { x: u32, y: u32 },
    Key { code: u32 },
    Scroll { direction: ScrollDirection },
}

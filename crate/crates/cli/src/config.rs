use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

/// Contents of `~/.powerbench.toml`. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub coordinator: Option<String>,
    pub token: Option<String>,
    pub output: Option<OutputFormat>,
}

impl FileConfig {
    /// A missing file is only an error when it was named explicitly.
    pub fn load(path: &Path, explicit: bool) -> Result<Self, String> {
        match std::fs::read_to_string(path) {
            Ok(text) => toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display())),
            Err(e) if !explicit && e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(format!("{}: {e}", path.display())),
        }
    }
}

pub fn default_path() -> Option<PathBuf> {
    std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".powerbench.toml"))
}

/// Resolved client settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub endpoint: String,
    pub token: String,
    pub output: OutputFormat,
}

impl CliConfig {
    /// Flags and environment win over the file.
    pub fn resolve(
        file: &FileConfig,
        endpoint: Option<&str>,
        token: Option<&str>,
        output: Option<OutputFormat>,
    ) -> Result<Self, String> {
        let endpoint = endpoint
            .or(file.coordinator.as_deref())
            .map(str::trim)
            .unwrap_or_default();
        if endpoint.is_empty() {
            return Err(
                "no coordinator endpoint: pass --coordinator, set BL_COORDINATOR or add `coordinator` to ~/.powerbench.toml"
                    .into(),
            );
        }
        Ok(Self {
            endpoint: endpoint.to_string(),
            token: token.or(file.token.as_deref()).unwrap_or_default().to_string(),
            output: output.or(file.output).unwrap_or_default(),
        })
    }
}

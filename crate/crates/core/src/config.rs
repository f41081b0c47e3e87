//! Host configuration files.
//!
//! ```toml
//! name = "my-host"
//! capacity_mips = 16000           # optional
//! watts = [71.8, 135, 156, 176, 198, 219, 243, 269, 297, 318, 374]
//! ```
//!
//! `preset = "dell-r820"` may replace `watts` to start from a bundled curve.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HostModel, PowerCurve, DEFAULT_CAPACITY_MIPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub capacity_mips: Option<f64>,
    #[serde(default)]
    pub watts: Option<PowerCurve>,
}

impl HostConfig {
    pub fn build(&self) -> Result<HostModel> {
        let capacity = self.capacity_mips.unwrap_or(DEFAULT_CAPACITY_MIPS);
        match (&self.preset, &self.watts) {
            (Some(_), Some(_)) => Err(Error::config("watts", "give either `preset` or `watts`, not both")),
            (None, None) => Err(Error::config("watts", "missing: give `watts` or `preset`")),
            (Some(p), None) => {
                let base = HostModel::preset(p)
                    .ok_or_else(|| Error::config("preset", format!("unknown host preset `{p}`")))?;
                let named = HostModel::new(self.name.clone().unwrap_or_else(|| p.clone()), base.curve().clone(), capacity)?;
                Ok(named)
            }
            (None, Some(curve)) => HostModel::new(self.name.clone().unwrap_or_else(|| "custom".into()), curve.clone(), capacity),
        }
    }
}

pub fn parse_host_config(text: &str) -> Result<HostModel> {
    let cfg: HostConfig = toml::from_str(text).map_err(|e| Error::parse("host config", e))?;
    cfg.build()
}

pub fn load_host_config(path: &Path) -> Result<HostModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_host_config(&text)
}

/// A preset name or a path to a host TOML file.
pub fn resolve_host(name_or_path: &str) -> Result<HostModel> {
    match HostModel::preset(name_or_path) {
        Some(h) => Ok(h),
        None if Path::new(name_or_path).exists() => load_host_config(Path::new(name_or_path)),
        None => Err(Error::config(
            "host",
            format!(
                "`{name_or_path}` is neither a preset ({}) nor an existing file",
                HostModel::preset_names().collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

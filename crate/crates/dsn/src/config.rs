//! JSON config files mirroring the training configuration. Absent fields
//! fall back to the defaults, so a config may state only what it changes.

use std::fs;
use std::path::Path;

use dsn_core::learn::TrainingConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// On-disk shape: a full TrainingConfig with every field optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    thresholds: Option<Vec<dsn_core::learn::LayerThresholds>>,
    grid_size: Option<usize>,
    transform_grid: Option<dsn_core::operator::TransformGrid>,
    blur_sigma: Option<f64>,
    max_layers: Option<u32>,
    detector: Option<dsn_core::signal::DetectorConfig>,
    seed: Option<u64>,
    state_threshold: Option<f64>,
    scan_limit: Option<usize>,
    max_path_len: Option<usize>,
}

pub fn load_config(path: &Path) -> Result<TrainingConfig, ConfigError> {
    let data = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let partial: PartialConfig =
        serde_json::from_str(&data).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
    let mut cfg = TrainingConfig::default();
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = partial.$field { cfg.$field = v; })*
        };
    }
    take!(
        thresholds,
        grid_size,
        transform_grid,
        blur_sigma,
        max_layers,
        detector,
        seed,
        state_threshold,
        scan_limit,
        max_path_len
    );
    Ok(cfg)
}

pub fn write_default_config(path: &Path) -> Result<(), ConfigError> {
    let cfg = TrainingConfig::default();
    let json = serde_json::to_string_pretty(&cfg).map_err(|source| ConfigError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, json).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

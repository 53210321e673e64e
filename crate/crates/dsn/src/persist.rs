//! Versioned JSON persistence for symbol networks. Every f64 survives
//! bit-exact (serde_json with float_roundtrip), so load(save(n)) == n holds
//! structurally and numerically.

use std::fs;
use std::path::Path;

use dsn_core::SymbolNetwork;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bump on any incompatible change to the stored layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    version: u32,
    network: SymbolNetwork,
}

#[derive(Debug, Error)]
pub enum PersistError {
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
    #[error("{path}: format version {found}, this build reads {supported}")]
    Version {
        path: String,
        found: u32,
        supported: u32,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path, source: serde_json::Error) -> PersistError {
    PersistError::Json {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_network(network: &SymbolNetwork, path: &Path) -> Result<(), PersistError> {
    let file = NetworkFile {
        version: FORMAT_VERSION,
        network: network.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| json_err(path, e))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn load_network(path: &Path) -> Result<SymbolNetwork, PersistError> {
    let data = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    // Check the version before insisting on the full layout, so a newer
    // file fails with a version message rather than a parse error.
    #[derive(Deserialize)]
    struct VersionOnly {
        version: u32,
    }
    let v: VersionOnly = serde_json::from_str(&data).map_err(|e| json_err(path, e))?;
    if v.version != FORMAT_VERSION {
        return Err(PersistError::Version {
            path: path.display().to_string(),
            found: v.version,
            supported: FORMAT_VERSION,
        });
    }
    let file: NetworkFile = serde_json::from_str(&data).map_err(|e| json_err(path, e))?;
    Ok(file.network)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsn_core::synth;

    #[test]
    fn save_load_is_identity_on_the_shape_library() {
        let net = synth::build_shape_library();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn future_version_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        std::fs::write(&path, r#"{"version": 99, "network": {}}"#).unwrap();
        match load_network(&path) {
            Err(PersistError::Version { found: 99, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reports_the_path() {
        let err = load_network(Path::new("/nonexistent/net.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/net.json"));
    }
}

//! Corpus directories: one PGM per sample plus a JSON sidecar with the
//! ground truth. File names are zero-padded, so directory order equals
//! generation order.

use std::fs;
use std::path::Path;

use dsn_core::synth::SampleTruth;
use dsn_core::Image;
use thiserror::Error;

use crate::pgm::{self, PgmError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error("{path}: {source}")]
    Sidecar {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: sample {index} has no {missing} file")]
    Incomplete {
        path: String,
        index: usize,
        missing: &'static str,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_corpus(dir: &Path, samples: &[(Image, SampleTruth)]) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, (image, truth)) in samples.iter().enumerate() {
        pgm::write_pgm(image, &dir.join(format!("sample_{i:05}.pgm")))?;
        let path = dir.join(format!("sample_{i:05}.json"));
        let json = serde_json::to_string_pretty(truth).map_err(|source| CorpusError::Sidecar {
            path: path.display().to_string(),
            source,
        })?;
        fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Vec<(Image, SampleTruth)>, CorpusError> {
    let mut indices: Vec<usize> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let idx = name.strip_prefix("sample_")?.strip_suffix(".pgm")?;
            idx.parse().ok()
        })
        .collect();
    indices.sort_unstable();
    let mut out = Vec::with_capacity(indices.len());
    for i in indices {
        let image = pgm::read_pgm(&dir.join(format!("sample_{i:05}.pgm")))?;
        let sidecar = dir.join(format!("sample_{i:05}.json"));
        if !sidecar.exists() {
            return Err(CorpusError::Incomplete {
                path: dir.display().to_string(),
                index: i,
                missing: "sidecar",
            });
        }
        let json = fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
        let truth = serde_json::from_str(&json).map_err(|source| CorpusError::Sidecar {
            path: sidecar.display().to_string(),
            source,
        })?;
        out.push((image, truth));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsn_core::synth::{self, CorpusSpec};

    #[test]
    fn corpus_round_trips_through_the_directory() {
        let spec = CorpusSpec {
            per_shape: 1,
            noise: 0.1,
            seed: 4,
            ..CorpusSpec::default()
        };
        let samples = synth::make_corpus(&spec);
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &samples).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(samples.len(), back.len());
        for ((ia, ta), (ib, tb)) in samples.iter().zip(&back) {
            assert_eq!(ta, tb);
            // only 8-bit quantization separates the pixel values
            for (&a, &b) in ia.values.iter().zip(&ib.values) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }

    #[test]
    fn missing_sidecar_is_reported_with_its_index() {
        let samples = synth::make_corpus(&CorpusSpec {
            per_shape: 1,
            shapes: vec![synth::ShapeKind::Circle],
            ..CorpusSpec::default()
        });
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &samples).unwrap();
        std::fs::remove_file(dir.path().join("sample_00000.json")).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(CorpusError::Incomplete { index: 0, .. })
        ));
    }
}

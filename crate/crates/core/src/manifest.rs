//! Dataset manifest: one JSON document describing a set of synthesized
//! hazy/clean samples. Paths are relative to the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageRGB, ScalarField};
use crate::io::{load_field, load_image};
use crate::mcbm::HazeParams;

/// One synthesized sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub clean: String,
    pub depth: String,
    pub hazy: String,
    pub transmission: String,
    pub params: HazeParams,
    /// Derived seed (base seed + sample index); duplicated from params for
    /// quick scanning.
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub base_seed: u64,
    pub samples: Vec<SampleRecord>,
}

/// A sample with its rasters loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub clean: ImageRGB,
    pub depth: ScalarField,
    pub hazy: ImageRGB,
    pub transmission: ScalarField,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        crate::io::atomic_write(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        Ok(manifest)
    }

    /// Every file referenced by a sample, resolved against `base_dir`.
    pub fn referenced_paths(&self, base_dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::with_capacity(self.samples.len() * 4);
        for s in &self.samples {
            out.push(base_dir.join(&s.clean));
            out.push(base_dir.join(&s.depth));
            out.push(base_dir.join(&s.hazy));
            out.push(base_dir.join(&s.transmission));
        }
        out
    }

    /// Check that every referenced file exists; report all misses at once.
    pub fn check_files(&self, base_dir: &Path) -> Result<()> {
        let missing: Vec<PathBuf> = self
            .referenced_paths(base_dir)
            .into_iter()
            .filter(|p| !p.is_file())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingFiles(missing))
        }
    }
}

impl SampleRecord {
    pub fn load(&self, base_dir: &Path) -> Result<LoadedSample> {
        Ok(LoadedSample {
            record: self.clone(),
            clean: load_image(base_dir.join(&self.clean))?,
            depth: load_field(base_dir.join(&self.depth))?,
            hazy: load_image(base_dir.join(&self.hazy))?,
            transmission: load_field(base_dir.join(&self.transmission))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcbm::DegradeSwitches;

    fn record(id: &str) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            clean: format!("clean_{id}.hzf"),
            depth: format!("depth_{id}.hzf"),
            hazy: format!("hazy_{id}.hzf"),
            transmission: format!("trans_{id}.hzf"),
            params: HazeParams {
                beta: 1.0,
                alpha: 0.6,
                light_rgb: [1.0, 1.0, 1.0],
                mcbm_iterations: 4096,
                gaussian_sigma: 15.0,
                seed: 7,
                degrade: DegradeSwitches::all(false),
            },
            seed: 7,
        }
    }

    #[test]
    fn manifest_round_trips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = Manifest {
            base_seed: 7,
            samples: vec![record("0000"), record("0001")],
        };
        manifest.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.samples.len(), 2);
        back.save(&path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn missing_files_are_listed_exhaustively() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            base_seed: 0,
            samples: vec![record("0000")],
        };
        match manifest.check_files(dir.path()) {
            Err(Error::MissingFiles(missing)) => assert_eq!(missing.len(), 4),
            other => panic!("expected MissingFiles, got {other:?}"),
        }
    }
}

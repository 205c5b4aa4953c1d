//! Resumable checkpoints: the full propagation cursor plus the record-file
//! offsets it corresponds to. Resuming truncates the record files to those
//! offsets and continues bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sed_core::integrator::TrajectoryCursor;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint {path}: {source}")]
    Decode { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    /// The run configuration this checkpoint belongs to.
    pub config: RunConfig,
    pub trajectory_index: usize,
    pub cursor: TrajectoryCursor,
    pub samples_bytes: u64,
    pub events_bytes: u64,
    /// Carried so resumed summaries keep the start-of-run audit.
    pub precision_audit_ratio: Option<f64>,
}

pub fn checkpoint_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.checkpoint.json"))
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        // JSON floats use shortest round-trip formatting, so the cursor
        // state survives save/load bit-exactly.
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|source| CheckpointError::Decode { path: path.to_path_buf(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use sed_core::integrator::Trajectory;
    use tempfile::TempDir;

    #[test]
    fn checkpoint_roundtrips_cursor_bits() {
        let cfg = RunConfig::parse(
            "Z = 1\nN = 100\nseed = 3\nfixed_window = [0, 80]\nsteps_per_orbit = 700\nt_max = 20.0\n",
        )
        .unwrap();
        let resolved = cfg.resolve().unwrap();
        let mut trajectory = Trajectory::new(resolved.trajectory_spec(0)).unwrap();
        for _ in 0..500 {
            trajectory.step().unwrap();
        }
        let checkpoint = Checkpoint {
            config: cfg,
            trajectory_index: 0,
            cursor: trajectory.cursor().clone(),
            samples_bytes: 123,
            events_bytes: 45,
            precision_audit_ratio: trajectory.precision_audit_ratio(),
        };
        let dir = TempDir::new().unwrap();
        let path = checkpoint_path(dir.path(), "traj_000");
        checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.cursor, checkpoint.cursor);
        assert_eq!(loaded.samples_bytes, 123);
    }
}

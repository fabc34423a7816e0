//! Versioned JSON checkpoints: parameters plus optimiser state.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::optim::Adam;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Gradient updates completed when this was written.
    pub update: usize,
    pub params: ModelParams,
    pub adam: Adam,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {found} unsupported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
}

impl Checkpoint {
    pub fn new(update: usize, params: ModelParams, adam: Adam) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            update,
            params,
            adam,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let file = fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: ckpt.version,
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;

    fn tiny() -> ModelParams {
        let mut hp = Hyperparams::default();
        hp.n_s = 3;
        hp.n_s_star = 3;
        hp.n_phase = vec![2];
        ModelParams::init(hp, 5)
    }

    #[test]
    fn roundtrip_preserves_every_tensor() {
        let params = tiny();
        let adam = Adam::new(&params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::new(42, params.clone(), adam).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.update, 42);
        let mut a = Vec::new();
        params.clone().visit_mut(|_, t| a.push(t.clone()));
        let mut b = Vec::new();
        back.params.clone().visit_mut(|_, t| b.push(t.clone()));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unknown_version() {
        let params = tiny();
        let adam = Adam::new(&params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ckpt = Checkpoint::new(0, params, adam);
        ckpt.version = 99;
        let file = std::fs::File::create(&path).unwrap();
        serde_json::to_writer(file, &ckpt).unwrap();
        match Checkpoint::load(&path) {
            Err(CheckpointError::Version { found: 99 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }
}

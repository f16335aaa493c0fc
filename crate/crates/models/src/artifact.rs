//! Trained weights on disk: a binary weight file plus a JSON sidecar
//! (`<weights>.json`) and a JSON-lines training log (`<weights>.log.jsonl`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use post_nn::ParamStore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DetectorConfig, LandmarkNetConfig};
use crate::detector::Detector;
use crate::hrnet::LandmarkNet;
use crate::train::EpochRecord;
use crate::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Detector,
    Landmarks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub data_hash: String,
    pub val_loss: f64,
    pub created_at: String,
}

impl Provenance {
    pub fn new(seed: u64, data_hash: String, val_loss: f64) -> Self {
        Self {
            seed,
            data_hash,
            val_loss,
            created_at: chrono::Utc::now().to_rfc3339(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    model_kind: ModelKind,
    config: serde_json::Value,
    seed: u64,
    data_hash: String,
    val_loss: f64,
    created_at: String,
    weights_sha256: String,
    history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
    pub provenance: Provenance,
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn log_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TrainedModel {
    pub fn weights_sha256(&self) -> String {
        sha256_hex(&self.store.to_bytes())
    }

    pub fn detector_config(&self) -> Result<DetectorConfig, ModelError> {
        self.expect_kind(ModelKind::Detector)?;
        let mut c: DetectorConfig = serde_json::from_value(self.config.clone())?;
        c.pretrained_init = None;
        Ok(c)
    }

    pub fn landmark_config(&self) -> Result<LandmarkNetConfig, ModelError> {
        self.expect_kind(ModelKind::Landmarks)?;
        Ok(serde_json::from_value(self.config.clone())?)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<(), ModelError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(ModelError::WrongKind {
                expected: kind,
                found: self.kind,
            })
        }
    }

    /// Rebuilds the detector from the config snapshot and loads the weights.
    pub fn detector(&self) -> Result<Detector, ModelError> {
        let mut d = Detector::new(&self.detector_config()?, 0)?;
        d.store.load_from(self.store.to_bytes().as_slice())?;
        Ok(d)
    }

    pub fn landmark_net(&self) -> Result<LandmarkNet, ModelError> {
        let mut n = LandmarkNet::new(&self.landmark_config()?, 0)?;
        n.store.load_from(self.store.to_bytes().as_slice())?;
        Ok(n)
    }

    pub fn save(&self, weights: impl AsRef<Path>) -> Result<(), ModelError> {
        let weights = weights.as_ref();
        if let Some(dir) = weights.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let bytes = self.store.to_bytes();
        fs::write(weights, &bytes)?;
        let sidecar = Sidecar {
            model_kind: self.kind,
            config: self.config.clone(),
            seed: self.provenance.seed,
            data_hash: self.provenance.data_hash.clone(),
            val_loss: self.provenance.val_loss,
            created_at: self.provenance.created_at.clone(),
            weights_sha256: sha256_hex(&bytes),
            history: self.history.clone(),
        };
        fs::write(sidecar_path(weights), serde_json::to_string_pretty(&sidecar)?)?;
        let mut log = BufWriter::new(fs::File::create(log_path(weights))?);
        for r in &self.history {
            writeln!(log, "{}", serde_json::to_string(r)?)?;
        }
        log.flush()?;
        Ok(())
    }

    pub fn load(weights: impl AsRef<Path>) -> Result<Self, ModelError> {
        let weights = weights.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(weights))?)?;
        let bytes = fs::read(weights)?;
        if sha256_hex(&bytes) != sidecar.weights_sha256 {
            return Err(ModelError::Corrupt(format!("{} does not match its sidecar hash", weights.display())));
        }
        let mut model = Self {
            kind: sidecar.model_kind,
            config: sidecar.config,
            store: ParamStore::new(),
            history: sidecar.history,
            provenance: Provenance {
                seed: sidecar.seed,
                data_hash: sidecar.data_hash,
                val_loss: sidecar.val_loss,
                created_at: sidecar.created_at,
            },
        };
        model.store = match model.kind {
            ModelKind::Detector => Detector::new(&model.detector_config()?, 0)?.store,
            ModelKind::Landmarks => LandmarkNet::new(&model.landmark_config()?, 0)?.store,
        };
        model.store.load_from(bytes.as_slice())?;
        Ok(model)
    }
}

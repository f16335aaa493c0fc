//! Append-only flat-file store of score and evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};

use post_models::artifact::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Score,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub run_id: String,
    pub kind: RunKind,
    pub created_at: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub runs: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let store = Self { root };
        if !store.index_path().exists() {
            store.write_index(&Index::default())?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    pub fn index(&self) -> Result<Index, PipelineError> {
        Ok(serde_json::from_slice(&fs::read(self.index_path())?)?)
    }

    fn write_index(&self, index: &Index) -> Result<(), PipelineError> {
        write_atomic(&self.index_path(), serde_json::to_string_pretty(index)?.as_bytes())?;
        Ok(())
    }

    /// Writes `report` under a new run id and returns the id. Existing
    /// reports are never touched.
    pub fn append<R: Serialize>(&self, kind: RunKind, report: &R) -> Result<String, PipelineError> {
        let bytes = serde_json::to_vec_pretty(report)?;
        let sha = sha256_hex(&bytes);
        let now = chrono::Utc::now();
        let prefix = match kind {
            RunKind::Score => "score",
            RunKind::Eval => "eval",
        };
        let mut index = self.index()?;
        let base = format!("{prefix}-{}-{}", now.format("%Y%m%dT%H%M%S"), &sha[..8]);
        let mut run_id = base.clone();
        let mut n = 1;
        while index.runs.iter().any(|e| e.run_id == run_id) || self.root.join(format!("{run_id}.json")).exists() {
            run_id = format!("{base}-{n}");
            n += 1;
        }
        let file = format!("{run_id}.json");
        let path = self.root.join(&file);
        write_atomic(&path, &bytes)?;
        let mut perms = fs::metadata(&path)?.permissions();
        perms.set_readonly(true);
        fs::set_permissions(&path, perms)?;
        index.runs.push(IndexEntry {
            run_id: run_id.clone(),
            kind,
            created_at: now.to_rfc3339(),
            file,
            sha256: sha,
        });
        self.write_index(&index)?;
        Ok(run_id)
    }

    pub fn get(&self, run_id: &str) -> Result<serde_json::Value, PipelineError> {
        let index = self.index()?;
        let entry = index
            .runs
            .iter()
            .find(|e| e.run_id == run_id)
            .ok_or_else(|| PipelineError::Invalid(format!("unknown run {run_id}")))?;
        Ok(serde_json::from_slice(&fs::read(self.root.join(&entry.file))?)?)
    }

    /// Checks that the index and the directory list the same reports and
    /// that no report changed since it was written.
    pub fn verify(&self) -> Result<(), PipelineError> {
        let index = self.index()?;
        for e in &index.runs {
            let bytes = fs::read(self.root.join(&e.file))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(PipelineError::Invalid(format!("run {} was modified", e.run_id)));
            }
        }
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.ends_with(".json") && name != INDEX_FILE && !index.runs.iter().any(|e| e.file == name) {
                return Err(PipelineError::Invalid(format!("{name} is not in the index")));
            }
        }
        Ok(())
    }
}

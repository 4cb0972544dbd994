//! Run manifest: derived seeds and artifact paths per stage.
//!
//! The manifest is a pure function of the config, so re-running a stage (or
//! the whole pipeline) with the same config reproduces it byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cpbm::rng::derive_seed;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageEntry {
    pub seed: u64,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub stages: BTreeMap<String, StageEntry>,
}

impl Manifest {
    pub fn new(master_seed: u64) -> Self {
        Manifest {
            master_seed,
            stages: BTreeMap::new(),
        }
    }

    /// Register a stage: its seed derives from (master, name, index).
    pub fn stage(&mut self, name: &str, index: u64, file: &str) -> u64 {
        let seed = derive_seed(self.master_seed, name, index);
        self.stages.insert(
            format!("{name}[{index}]"),
            StageEntry {
                seed,
                path: file.to_string(),
            },
        );
        seed
    }

    pub fn seed_of(&self, name: &str, index: u64) -> u64 {
        derive_seed(self.master_seed, name, index)
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir)?;
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::data(format!("manifest serialization: {e}")))?;
        std::fs::write(out_dir.join("manifest.json"), body + "\n")?;
        Ok(())
    }

    pub fn load(out_dir: &Path) -> Result<Manifest, CliError> {
        let path = out_dir.join("manifest.json");
        let content = std::fs::read_to_string(&path).map_err(|e| {
            CliError::data(format!(
                "cannot read {} (run `cpbm simulate` first): {e}",
                path.display()
            ))
        })?;
        serde_json::from_str(&content).map_err(|e| CliError::data(format!("manifest: {e}")))
    }
}

/// Conventional artifact names inside the output directory.
pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const RANKERS: &str = "rankers.json";
    pub const EXAMINATION: &str = "examination.json";
    pub const CLICK_LOG: &str = "clicklog.jsonl";
    pub const HELDOUT_LOG: &str = "heldout_clicklog.jsonl";
    pub const HARVEST: &str = "harvest.jsonl";
    pub const HELDOUT_HARVEST: &str = "heldout_harvest.jsonl";
    pub const EVAL: &str = "eval.csv";
    pub const AVGRANK: &str = "avgrank.csv";

    pub fn model(family: &str) -> String {
        format!("{family}.model.json")
    }

    pub fn curves(family: &str) -> String {
        format!("curves_{family}.csv")
    }

    pub fn sweep(axis: &str) -> String {
        format!("sweep_{axis}.csv")
    }
}

pub fn path_in(out_dir: &Path, file: &str) -> PathBuf {
    out_dir.join(file)
}

//! Experiment configuration: one JSON file drives the whole pipeline.
//!
//! Every section has defaults, so a config file only needs the fields it
//! overrides. Stage seeds are always derived from the master `seed`; seed
//! fields inside nested sections are overwritten.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cpbm::corpus::CorpusConfig;
use cpbm::estimator::TrainConfig;
use cpbm::ltr::IpsTrainConfig;

use crate::CliError;

/// Historic-ranker construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerSpec {
    pub m: usize,
    pub perturbation_scale: f64,
    /// Traffic counts per ranker; cycled/truncated to length `m`.
    pub traffic: Vec<u64>,
}

impl Default for RankerSpec {
    fn default() -> Self {
        RankerSpec {
            m: 2,
            perturbation_scale: 0.5,
            traffic: vec![1, 1],
        }
    }
}

impl RankerSpec {
    pub fn traffic_vector(&self) -> Vec<u64> {
        (0..self.m)
            .map(|i| *self.traffic.get(i % self.traffic.len().max(1)).unwrap_or(&1))
            .collect()
    }
}

/// Click-simulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    /// Context-dependence strength of the examination model.
    pub eta: f64,
    /// Probability of clicking an examined irrelevant result.
    pub eps_minus: f64,
    pub k_max: usize,
    /// Servings in the training click log.
    pub n_servings: u64,
    /// Servings in the held-out (test-split) click log; 0 disables it.
    pub heldout_servings: u64,
    /// Per-ranker assignment probabilities; uniform when empty.
    pub assignment_probs: Vec<f64>,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            eta: 0.5,
            eps_minus: 0.1,
            k_max: 10,
            n_servings: 50_000,
            heldout_servings: 10_000,
            assignment_probs: Vec::new(),
        }
    }
}

impl SimSpec {
    pub fn assignment_probs(&self, m: usize) -> Vec<f64> {
        if self.assignment_probs.is_empty() {
            vec![1.0 / m as f64; m]
        } else {
            self.assignment_probs.clone()
        }
    }
}

/// Sweep axes and repetition counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Training-query (serving) counts for the data-scaling sweep.
    pub n_queries: Vec<u64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Independent runs per cell.
    pub repetitions: u64,
    /// Independent runs per cell for the relevance-model ablation sweep.
    pub zeta_repetitions: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            n_queries: vec![1_000, 5_000, 20_000, 50_000],
            eta: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            zeta: vec![0.0, 0.5, 1.0],
            repetitions: 6,
            zeta_repetitions: 20,
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    /// Output directory for all artifacts.
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub rankers: RankerSpec,
    pub simulation: SimSpec,
    pub pbm: TrainConfig,
    pub cpbm: TrainConfig,
    pub ltr: IpsTrainConfig,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            out_dir: PathBuf::from("cpbm-run"),
            corpus: CorpusConfig {
                n_queries: 6000,
                candidates_per_query: 30,
                context_dim: 10,
                n_features: 30,
                zeta: 1.0,
                sigma: 0.35,
                relevance_rate: 0.3,
                query_noise_share: 0.6,
                filter_no_relevant: true,
                seed: 0,
            },
            rankers: RankerSpec::default(),
            simulation: SimSpec::default(),
            pbm: TrainConfig::default(),
            cpbm: TrainConfig::default(),
            ltr: IpsTrainConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let content = std::fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let de = &mut serde_json::Deserializer::from_str(&content);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::usage(format!(
                "config {}: field `{}`: {}",
                path.display(),
                e.path(),
                e.inner()
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.corpus
            .validate()
            .map_err(|e| CliError::usage(format!("corpus: {e}")))?;
        if self.rankers.m == 0 {
            return Err(CliError::usage("rankers.m must be at least 1"));
        }
        if self.simulation.k_max == 0 || self.simulation.k_max > 32 {
            return Err(CliError::usage("simulation.k_max must lie in 1..=32"));
        }
        if self.simulation.eta.is_nan() || self.simulation.eta < 0.0 {
            return Err(CliError::usage("simulation.eta must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.simulation.eps_minus) {
            return Err(CliError::usage("simulation.eps_minus must lie in [0, 1)"));
        }
        if self.simulation.n_servings == 0 {
            return Err(CliError::usage("simulation.n_servings must be positive"));
        }
        self.pbm
            .validate()
            .map_err(|e| CliError::usage(format!("pbm: {e}")))?;
        self.cpbm
            .validate()
            .map_err(|e| CliError::usage(format!("cpbm: {e}")))?;
        Ok(())
    }
}

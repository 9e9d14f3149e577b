use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::naocore::SurrogateConfig;
use crate::sampler::SamplingKind;
use crate::standalone::StandaloneConfig;
use crate::supernet::TrainHyper;
use crate::taskgen::TaskConfig;

/// Every knob of a search run. Config files must name every field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Optimization rounds.
    pub iterations: usize,
    /// Supernet steps per round.
    pub steps_per_iteration: u64,
    /// Top architectures used as ascent starting points.
    pub seed_archs: usize,
    pub eta: f64,
    pub ascent_steps: usize,
    pub initial_pool_size: usize,
    pub policy: SamplingKind,
    pub num_nodes: usize,
    pub task: TaskConfig,
    pub supernet: TrainHyper,
    pub standalone: StandaloneConfig,
    pub surrogate: SurrogateConfig,
    /// Also train every pool member stand-alone and attach ranking reports.
    pub record_ground_truth: bool,
    pub ground_truth_seed: u64,
    pub master_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            steps_per_iteration: 4000,
            seed_archs: 5,
            eta: 0.1,
            ascent_steps: 10,
            initial_pool_size: 50,
            policy: SamplingKind::Proportional,
            num_nodes: 4,
            task: TaskConfig::default(),
            supernet: TrainHyper::default(),
            standalone: StandaloneConfig::default(),
            surrogate: SurrogateConfig::default(),
            record_ground_truth: false,
            ground_truth_seed: 0,
            master_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.seed_archs == 0 {
            return bad("seed_archs must be at least 1");
        }
        if self.initial_pool_size == 0 {
            return bad("initial_pool_size must be at least 1");
        }
        if self.ascent_steps == 0 {
            return bad("ascent_steps must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive and finite");
        }
        if self.num_nodes == 0 {
            return bad("num_nodes must be at least 1");
        }
        if self.supernet.batch_size == 0 || self.standalone.batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if self.standalone.epochs == 0 {
            return bad("standalone.epochs must be at least 1");
        }
        for (name, v) in [
            ("supernet.lr", self.supernet.lr),
            ("supernet.momentum", self.supernet.momentum),
            ("standalone.lr", self.standalone.lr),
            ("standalone.momentum", self.standalone.momentum),
            ("surrogate.lr", self.surrogate.lr),
            ("surrogate.momentum", self.surrogate.momentum),
            ("surrogate.lambda", self.surrogate.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.surrogate.latent_dim == 0 || self.surrogate.batch_size == 0 || self.surrogate.epochs == 0 {
            return bad("surrogate latent_dim, batch_size and epochs must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every field, first 16 hex digits.
    pub fn config_hash(&self) -> String {
        let blob = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(&blob))[..16].to_string()
    }

    /// Parses and validates a config file. Parse and validation failures
    /// both come back as [`Error::Config`].
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

//! Ground-truth oracle: stand-alone training from scratch, plus a persistent
//! JSON-lines cache of the results.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archspace::{Architecture, SearchSpaceSpec};
use crate::error::{Error, Result};
use crate::network::{self, forward_plain, forward_tape, init_slots, path_slots};
use crate::numerics::{ParamStore, Tape, Tensor2};
use crate::supernet::Supernet;
use crate::taskgen::{Dataset, Split, TaskConfig};
use crate::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandaloneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for StandaloneConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
        }
    }
}

impl StandaloneConfig {
    /// Cache key component: covers the recipe, the task, and the space.
    pub fn config_hash(&self, task: &TaskConfig, spec: &SearchSpaceSpec) -> String {
        let blob = serde_json::to_vec(&(self, task, spec.fingerprint())).expect("serializable");
        hex::encode(Sha256::digest(&blob))[..16].to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScore {
    pub arch: Architecture,
    pub valid_accuracy: f64,
    pub epochs_trained: usize,
    pub seed: u64,
}

/// One architecture with its own private parameters.
#[derive(Clone, Debug)]
pub struct StandaloneModel {
    spec: SearchSpaceSpec,
    arch: Architecture,
    store: ParamStore,
}

impl StandaloneModel {
    pub fn new(spec: &SearchSpaceSpec, arch: &Architecture, seed: u64) -> Result<Self> {
        arch.check(spec)?;
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_slots(&mut store, &path_slots(spec, arch), &mut rng);
        Ok(Self {
            spec: spec.clone(),
            arch: arch.clone(),
            store,
        })
    }

    /// Copies `arch`'s path slots out of a supernet.
    pub fn from_supernet(net: &Supernet, arch: &Architecture) -> Result<Self> {
        let mut model = Self::new(net.spec(), arch, 0)?;
        for (name, _, _) in path_slots(net.spec(), arch) {
            let v = net.store().value(&name)?.clone();
            model.store.insert(name, v);
        }
        Ok(model)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn logits(&self, x: Tensor2) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let out = forward_tape(&mut tape, &self.store, &self.spec, &self.arch, x)?;
        Ok(tape.value(out)?.clone())
    }

    pub fn accuracy(&self, dataset: &Dataset, split: Split) -> Result<f64> {
        let (x, y) = dataset.split_data(split);
        Ok(network::accuracy(&self.logits(x)?, &y))
    }

    fn step(&mut self, x: Tensor2, y: &[usize], lr: f64, momentum: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let logits = forward_tape(&mut tape, &self.store, &self.spec, &self.arch, x)?;
        let loss = tape.softmax_cross_entropy(logits, y)?;
        let value = tape.value(loss)?.get(0, 0);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                tokens: self.arch.tokens().to_vec(),
            });
        }
        tape.backward(loss, &mut self.store)?;
        self.store.sgd_step(lr, momentum);
        Ok(value)
    }
}

/// Trains from scratch and returns the best validation accuracy seen, along
/// with the per-epoch validation curve.
pub fn train_standalone_curve(
    spec: &SearchSpaceSpec,
    arch: &Architecture,
    dataset: &Dataset,
    cfg: &StandaloneConfig,
    seed: u64,
) -> Result<(GroundTruthScore, Vec<f64>)> {
    if cfg.epochs == 0 {
        return Err(Error::Config("stand-alone epochs must be at least 1".into()));
    }
    let mut model = StandaloneModel::new(spec, arch, seed)?;
    let mut rng = SeededRng::seed_from_u64(seed ^ 0x5eed_da7a);
    let mut rows: Vec<usize> = dataset.range(Split::Train).collect();
    let (vx, vy) = dataset.split_data(Split::Valid);
    let batches_per_epoch = rows.len().div_ceil(cfg.batch_size);
    let total = (batches_per_epoch * cfg.epochs) as f64;
    let mut step = 0usize;
    let mut best = 0.0f64;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rows.shuffle(&mut rng);
        for chunk in rows.chunks(cfg.batch_size) {
            let lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total).cos());
            let (x, y) = dataset.batch(chunk);
            model.step(x, &y, lr, cfg.momentum).map_err(|e| match e {
                Error::NonFiniteLoss { tokens, .. } => Error::NonFiniteLoss {
                    step: step as u64,
                    tokens,
                },
                other => other,
            })?;
            step += 1;
        }
        let logits = forward_plain(&model.store, spec, arch, &vx)?;
        let acc = network::accuracy(&logits, &vy);
        best = best.max(acc);
        curve.push(acc);
    }
    Ok((
        GroundTruthScore {
            arch: arch.clone(),
            valid_accuracy: best,
            epochs_trained: cfg.epochs,
            seed,
        },
        curve,
    ))
}

pub fn train_standalone(
    spec: &SearchSpaceSpec,
    arch: &Architecture,
    dataset: &Dataset,
    cfg: &StandaloneConfig,
    seed: u64,
) -> Result<GroundTruthScore> {
    Ok(train_standalone_curve(spec, arch, dataset, cfg, seed)?.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheLine {
    tokens: Vec<usize>,
    seed: u64,
    config_hash: String,
    valid_accuracy: f64,
    epochs_trained: usize,
}

type CacheKey = (Vec<usize>, u64, String);

/// Get-or-compute store of ground-truth scores, persisted as append-only
/// JSON lines. Without a path it only lives in memory.
#[derive(Debug, Default)]
pub struct OracleCache {
    path: Option<PathBuf>,
    entries: HashMap<CacheKey, GroundTruthScore>,
    trainings: usize,
}

impl OracleCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads whatever the file holds; corrupt lines are skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let f = std::fs::File::open(&path)?;
            for (lineno, line) in BufReader::new(f).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(l) => {
                        let score = GroundTruthScore {
                            arch: serde_json::from_value(serde_json::to_value(&l.tokens)?)?,
                            valid_accuracy: l.valid_accuracy,
                            epochs_trained: l.epochs_trained,
                            seed: l.seed,
                        };
                        entries.insert((l.tokens, l.seed, l.config_hash), score);
                    }
                    Err(e) => warn!("{}:{}: skipping corrupt cache line: {e}", path.display(), lineno + 1),
                }
            }
        } else if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        Ok(Self {
            path: Some(path),
            entries,
            trainings: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stand-alone trainings launched through this handle.
    pub fn trainings_launched(&self) -> usize {
        self.trainings
    }

    pub fn get(&self, arch: &Architecture, seed: u64, config_hash: &str) -> Option<&GroundTruthScore> {
        self.entries
            .get(&(arch.tokens().to_vec(), seed, config_hash.to_string()))
    }

    fn insert(&mut self, config_hash: &str, score: GroundTruthScore) -> Result<()> {
        if let Some(path) = &self.path {
            let line = CacheLine {
                tokens: score.arch.tokens().to_vec(),
                seed: score.seed,
                config_hash: config_hash.to_string(),
                valid_accuracy: score.valid_accuracy,
                epochs_trained: score.epochs_trained,
            };
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&line)?)?;
        }
        self.entries
            .insert((score.arch.tokens().to_vec(), score.seed, config_hash.to_string()), score);
        Ok(())
    }

    /// Scores every architecture, training the missing ones on up to
    /// `workers` threads. Results come back in input order.
    pub fn get_or_compute_many(
        &mut self,
        spec: &SearchSpaceSpec,
        archs: &[Architecture],
        dataset: &Dataset,
        task: &TaskConfig,
        cfg: &StandaloneConfig,
        seed: u64,
        workers: usize,
    ) -> Result<Vec<GroundTruthScore>> {
        let hash = cfg.config_hash(task, spec);
        let mut missing: Vec<&Architecture> = Vec::new();
        for a in archs {
            if self.get(a, seed, &hash).is_none() && !missing.contains(&a) {
                missing.push(a);
            }
        }
        if !missing.is_empty() {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let computed: Vec<Result<GroundTruthScore>> = pool.install(|| {
                missing
                    .par_iter()
                    .map(|a| train_standalone(spec, a, dataset, cfg, seed))
                    .collect()
            });
            for score in computed {
                self.trainings += 1;
                self.insert(&hash, score?)?;
            }
        }
        Ok(archs
            .iter()
            .map(|a| self.get(a, seed, &hash).expect("just computed").clone())
            .collect())
    }

    pub fn get_or_compute(
        &mut self,
        spec: &SearchSpaceSpec,
        arch: &Architecture,
        dataset: &Dataset,
        task: &TaskConfig,
        cfg: &StandaloneConfig,
        seed: u64,
    ) -> Result<GroundTruthScore> {
        Ok(self
            .get_or_compute_many(spec, std::slice::from_ref(arch), dataset, task, cfg, seed, 1)?
            .remove(0))
    }
}

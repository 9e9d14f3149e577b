//! Candidate pool and the per-step architecture sampling policies.
//!
//! Proportional sampling draws `x_i` with probability
//! `size(x_i) / Σ_j size(x_j)`, so a supernet trained for `T` steps gives
//! each candidate `T · size(x_i) / Σ_j size(x_j)` steps in expectation.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archspace::{model_size, Architecture, ModelSize, SearchSpaceSpec};
use crate::error::{Error, Result};
use crate::standalone::GroundTruthScore;
use crate::supernet::OneShotScore;

/// The candidate set with cached sizes and optional scores per member.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    spec: SearchSpaceSpec,
    archs: Vec<Architecture>,
    sizes: Vec<ModelSize>,
    cumulative: Vec<u64>,
    index: HashMap<Architecture, usize>,
    one_shot: Vec<Option<OneShotScore>>,
    ground_truth: Vec<Option<GroundTruthScore>>,
}

impl CandidatePool {
    pub fn new(spec: &SearchSpaceSpec) -> Self {
        Self {
            spec: spec.clone(),
            archs: Vec::new(),
            sizes: Vec::new(),
            cumulative: Vec::new(),
            index: HashMap::new(),
            one_shot: Vec::new(),
            ground_truth: Vec::new(),
        }
    }

    /// Builds a pool, failing on duplicates or invalid members.
    pub fn from_archs(spec: &SearchSpaceSpec, archs: impl IntoIterator<Item = Architecture>) -> Result<Self> {
        let mut pool = Self::new(spec);
        for a in archs {
            if !pool.try_insert(a.clone())? {
                return Err(Error::DuplicateArch(a.tokens().to_vec()));
            }
        }
        Ok(pool)
    }

    /// Adds `arch` unless already present; returns whether it was added.
    pub fn try_insert(&mut self, arch: Architecture) -> Result<bool> {
        if self.index.contains_key(&arch) {
            return Ok(false);
        }
        let size = model_size(&arch, &self.spec)?;
        let prev = self.cumulative.last().copied().unwrap_or(0);
        self.cumulative.push(prev + size.0);
        self.sizes.push(size);
        self.index.insert(arch.clone(), self.archs.len());
        self.archs.push(arch);
        self.one_shot.push(None);
        self.ground_truth.push(None);
        Ok(true)
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.archs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archs.is_empty()
    }

    pub fn archs(&self) -> &[Architecture] {
        &self.archs
    }

    pub fn sizes(&self) -> &[ModelSize] {
        &self.sizes
    }

    pub fn contains(&self, arch: &Architecture) -> bool {
        self.index.contains_key(arch)
    }

    pub fn position(&self, arch: &Architecture) -> Option<usize> {
        self.index.get(arch).copied()
    }

    pub fn total_size(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    pub fn one_shot(&self, i: usize) -> Option<&OneShotScore> {
        self.one_shot[i].as_ref()
    }

    pub fn ground_truth(&self, i: usize) -> Option<&GroundTruthScore> {
        self.ground_truth[i].as_ref()
    }

    pub fn set_one_shot(&mut self, score: OneShotScore) -> Result<()> {
        let i = self
            .position(&score.arch)
            .ok_or_else(|| Error::Metric(format!("{} is not in the pool", score.arch)))?;
        self.one_shot[i] = Some(score);
        Ok(())
    }

    pub fn set_ground_truth(&mut self, score: GroundTruthScore) -> Result<()> {
        let i = self
            .position(&score.arch)
            .ok_or_else(|| Error::Metric(format!("{} is not in the pool", score.arch)))?;
        self.ground_truth[i] = Some(score);
        Ok(())
    }

    /// `(arch, one-shot accuracy)` for every scored member, in pool order.
    pub fn scored(&self) -> Vec<(Architecture, f64)> {
        self.archs
            .iter()
            .zip(&self.one_shot)
            .filter_map(|(a, s)| s.as_ref().map(|s| (a.clone(), s.valid_accuracy)))
            .collect()
    }

    /// Proportional-sampling probabilities, in pool order.
    pub fn proportional_probabilities(&self) -> Vec<f64> {
        size_probabilities(&self.sizes)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PoolFile {
            fingerprint: self.spec.fingerprint(),
            entries: self
                .archs
                .iter()
                .enumerate()
                .map(|(i, a)| PoolEntry {
                    tokens: a.clone(),
                    size: self.sizes[i].0,
                    one_shot: self.one_shot[i].clone(),
                    ground_truth: self.ground_truth[i].clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str, spec: &SearchSpaceSpec) -> Result<Self> {
        let file: PoolFile = serde_json::from_str(s)?;
        if file.fingerprint != spec.fingerprint() {
            return Err(Error::InvalidSpace("pool was recorded against a different search space".into()));
        }
        let mut pool = Self::new(spec);
        for e in file.entries {
            e.tokens.check(spec)?;
            if !pool.try_insert(e.tokens.clone())? {
                return Err(Error::DuplicateArch(e.tokens.tokens().to_vec()));
            }
            if let Some(s) = e.one_shot {
                pool.set_one_shot(s)?;
            }
            if let Some(g) = e.ground_truth {
                pool.set_ground_truth(g)?;
            }
        }
        Ok(pool)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    fingerprint: String,
    entries: Vec<PoolEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolEntry {
    tokens: Architecture,
    size: u64,
    one_shot: Option<OneShotScore>,
    ground_truth: Option<GroundTruthScore>,
}

/// `size_i / Σ size_j` from exact integer sizes.
pub fn size_probabilities(sizes: &[ModelSize]) -> Vec<f64> {
    let total: u64 = sizes.iter().map(|s| s.0).sum();
    sizes.iter().map(|s| s.0 as f64 / total as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    Uniform,
    Proportional,
}

impl SamplingKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplingKind::Uniform => "uniform",
            SamplingKind::Proportional => "proportional",
        }
    }

    /// Index of the next architecture to train.
    pub fn sample_index(self, pool: &CandidatePool, rng: &mut impl Rng) -> Result<usize> {
        match self {
            SamplingKind::Uniform => sample_uniform_index(pool, rng),
            SamplingKind::Proportional => sample_proportional_index(pool, rng),
        }
    }
}

pub fn sample_uniform_index(pool: &CandidatePool, rng: &mut impl Rng) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    Ok(rng.random_range(0..pool.len()))
}

pub fn sample_uniform<'p>(pool: &'p CandidatePool, rng: &mut impl Rng) -> Result<&'p Architecture> {
    Ok(&pool.archs[sample_uniform_index(pool, rng)?])
}

/// Inverts the cumulative size table at one uniform integer in `[0, Σ size)`.
pub fn sample_proportional_index(pool: &CandidatePool, rng: &mut impl Rng) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let u = rng.random_range(0..pool.total_size());
    Ok(pool.cumulative.partition_point(|&c| c <= u))
}

pub fn sample_proportional<'p>(pool: &'p CandidatePool, rng: &mut impl Rng) -> Result<&'p Architecture> {
    Ok(&pool.archs[sample_proportional_index(pool, rng)?])
}

/// Expected steps per member after `total_steps` proportional draws.
pub fn expected_steps(pool: &CandidatePool, total_steps: f64) -> Vec<(Architecture, f64)> {
    pool.archs
        .iter()
        .zip(pool.proportional_probabilities())
        .map(|(a, p)| (a.clone(), total_steps * p))
        .collect()
}

/// Deterministic schedule `round(T_base · size / min_size)`. Not used by search.
pub fn naive_steps(pool: &CandidatePool, base_steps: u64) -> Vec<(Architecture, u64)> {
    let min = pool.sizes.iter().map(|s| s.0).min().unwrap_or(1) as f64;
    pool.archs
        .iter()
        .zip(&pool.sizes)
        .map(|(a, s)| (a.clone(), (base_steps as f64 * s.0 as f64 / min).round() as u64))
        .collect()
}

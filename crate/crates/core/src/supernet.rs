//! Weight-sharing supernet.
//!
//! One store holds the stem, the head, and one slot group per
//! `(node, parameterized op)`. Training an architecture runs its sub-path and
//! updates only the slots on that path.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::archspace::{Architecture, SearchSpaceSpec};
use crate::error::{Error, Result};
use crate::network::{self, all_slots, forward_plain, forward_tape, init_slots};
use crate::numerics::{read_tensors, write_tensors, ParamStore, Tape, Tensor2};
use crate::taskgen::{Dataset, Split};
use crate::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneShotScore {
    pub arch: Architecture,
    pub valid_accuracy: f64,
    pub at_step: u64,
}

/// Endless stream of shuffled training minibatches. Each pass over the
/// training split uses a fresh permutation; batches may straddle passes.
#[derive(Clone, Debug)]
pub struct BatchStream {
    rows: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl BatchStream {
    pub fn new(dataset: &Dataset, seed: u64) -> Self {
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut rows: Vec<usize> = dataset.range(Split::Train).collect();
        rows.shuffle(&mut rng);
        Self { rows, pos: 0, rng }
    }

    pub fn next_rows(&mut self, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.rows.len() {
                self.rows.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (batch_size - out.len()).min(self.rows.len() - self.pos);
            out.extend_from_slice(&self.rows[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Steps needed for `epochs` passes over `train_size` rows.
pub fn steps_for_epochs(epochs: f64, train_size: usize, batch_size: usize) -> u64 {
    (epochs * train_size as f64 / batch_size as f64).round() as u64
}

#[derive(Clone, Debug)]
pub struct Supernet {
    spec: SearchSpaceSpec,
    store: ParamStore,
    step_counter: u64,
    per_arch_steps: BTreeMap<Architecture, u64>,
    batch_size: usize,
    train_size: usize,
}

impl Supernet {
    pub fn new(spec: SearchSpaceSpec, train_size: usize, batch_size: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_slots(&mut store, &all_slots(&spec), &mut rng);
        Ok(Self {
            spec,
            store,
            step_counter: 0,
            per_arch_steps: BTreeMap::new(),
            batch_size,
            train_size,
        })
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn per_arch_steps(&self) -> &BTreeMap<Architecture, u64> {
        &self.per_arch_steps
    }

    pub fn steps_of(&self, arch: &Architecture) -> u64 {
        self.per_arch_steps.get(arch).copied().unwrap_or(0)
    }

    /// One SGD step of `arch`'s sub-path on the batch; returns the loss.
    pub fn train_step(
        &mut self,
        arch: &Architecture,
        x: Tensor2,
        y: &[usize],
        lr: f64,
        momentum: f64,
    ) -> Result<f64> {
        arch.check(&self.spec)?;
        let mut tape = Tape::new();
        let logits = forward_tape(&mut tape, &self.store, &self.spec, arch, x)?;
        let loss = tape.softmax_cross_entropy(logits, y)?;
        let value = tape.value(loss)?.get(0, 0);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step_counter,
                tokens: arch.tokens().to_vec(),
            });
        }
        tape.backward(loss, &mut self.store)?;
        let ids = network::path_slots(&self.spec, arch)
            .iter()
            .map(|(name, _, _)| self.store.slot_id(name))
            .collect::<Result<Vec<_>>>()?;
        self.store.sgd_step_slots(&ids, lr, momentum);
        self.step_counter += 1;
        *self.per_arch_steps.entry(arch.clone()).or_default() += 1;
        Ok(value)
    }

    /// One-shot accuracy of `arch` on a whole split with the shared weights.
    pub fn evaluate(&self, arch: &Architecture, dataset: &Dataset, split: Split) -> Result<OneShotScore> {
        arch.check(&self.spec)?;
        let (x, y) = dataset.split_data(split);
        self.evaluate_on(arch, &x, &y)
    }

    pub fn evaluate_on(&self, arch: &Architecture, x: &Tensor2, y: &[usize]) -> Result<OneShotScore> {
        let logits = forward_plain(&self.store, &self.spec, arch, x)?;
        Ok(OneShotScore {
            arch: arch.clone(),
            valid_accuracy: network::accuracy(&logits, y),
            at_step: self.step_counter,
        })
    }

    /// Training progress in passes over the training split.
    pub fn epoch_of(&self) -> f64 {
        self.step_counter as f64 * self.batch_size as f64 / self.train_size as f64
    }

    /// Hash of every slot's bit pattern, keyed by slot name.
    pub fn slot_hashes(&self) -> BTreeMap<String, u64> {
        self.store
            .names()
            .map(|name| {
                let mut h = DefaultHasher::new();
                for v in self.store.value(name).unwrap().data() {
                    v.to_bits().hash(&mut h);
                }
                (name.to_string(), h.finish())
            })
            .collect()
    }

    /// Writes `<stem>.bin` (parameters), `<stem>.momentum.bin` (SGD
    /// velocities) and `<stem>.json` (bookkeeping).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.store.save(stem.with_extension("bin"))?;
        write_tensors(stem.with_extension("momentum.bin"), &self.store.velocities())?;
        let sidecar = Sidecar {
            fingerprint: self.spec.fingerprint(),
            spec: self.spec.clone(),
            step_counter: self.step_counter,
            batch_size: self.batch_size,
            train_size: self.train_size,
            per_arch_steps: self
                .per_arch_steps
                .iter()
                .map(|(a, &s)| (a.clone(), s))
                .collect(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let json_path = stem.with_extension("json");
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(&json_path)?)?;
        if sidecar.fingerprint != sidecar.spec.fingerprint() {
            return Err(Error::Format {
                path: json_path,
                reason: "spec fingerprint mismatch".into(),
            });
        }
        let mut store = ParamStore::load(stem.with_extension("bin"))?;
        let momentum = stem.with_extension("momentum.bin");
        if momentum.exists() {
            for (name, v) in read_tensors(&momentum)? {
                store.set_velocity(&name, v)?;
            }
        }
        for (name, r, c) in all_slots(&sidecar.spec) {
            if store.value(&name)?.shape() != (r, c) {
                return Err(Error::Format {
                    path: stem.with_extension("bin"),
                    reason: format!("slot {name} has wrong shape"),
                });
            }
        }
        Ok(Self {
            spec: sidecar.spec,
            store,
            step_counter: sidecar.step_counter,
            per_arch_steps: sidecar.per_arch_steps.into_iter().collect(),
            batch_size: sidecar.batch_size,
            train_size: sidecar.train_size,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    fingerprint: String,
    spec: SearchSpaceSpec,
    step_counter: u64,
    batch_size: usize,
    train_size: usize,
    per_arch_steps: Vec<(Architecture, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::random_architecture;
    use crate::taskgen::{make_teacher_task, TaskConfig};

    fn setup() -> (SearchSpaceSpec, Dataset) {
        let d = make_teacher_task(&TaskConfig {
            n: 1200,
            ..TaskConfig::default()
        })
        .unwrap();
        (SearchSpaceSpec::with_defaults(d.width(), d.classes()), d)
    }

    fn arch(spec: &SearchSpaceSpec, t: &[usize]) -> Architecture {
        Architecture::new(t.to_vec(), spec).unwrap()
    }

    #[test]
    fn parameter_free_arch_touches_only_stem_and_head() {
        let (spec, d) = setup();
        let mut net = Supernet::new(spec.clone(), d.split_len(Split::Train), 64, 1).unwrap();
        let before = net.slot_hashes();
        let a = arch(&spec, &[0, 0, 1, 0, 2, 1, 0, 0]);
        let mut stream = BatchStream::new(&d, 3);
        let (x, y) = d.batch(&stream.next_rows(64));
        net.train_step(&a, x, &y, 0.05, 0.9).unwrap();
        let after = net.slot_hashes();
        for (name, h) in &before {
            let changed = after[name] != *h;
            assert_eq!(changed, name.starts_with("stem") || name.starts_with("head"), "{name}");
        }
    }

    #[test]
    fn shared_slot_is_seen_by_other_architecture() {
        let (spec, d) = setup();
        let mut net = Supernet::new(spec.clone(), d.split_len(Split::Train), 64, 1).unwrap();
        let a = arch(&spec, &[0, 2, 0, 0, 0, 0, 0, 0]);
        let b = arch(&spec, &[0, 2, 1, 3, 2, 4, 3, 1]);
        let before = net.store().value("node0.op2.w").unwrap().clone();
        let mut stream = BatchStream::new(&d, 3);
        let (x, y) = d.batch(&stream.next_rows(64));
        net.train_step(&a, x.clone(), &y, 0.05, 0.9).unwrap();
        let after = net.store().value("node0.op2.w").unwrap().clone();
        assert_ne!(before, after);
        // b reads exactly the updated tensor at that slot
        let mut tape = Tape::new();
        let _ = forward_tape(&mut tape, net.store(), &spec, &b, x).unwrap();
        assert_eq!(net.store().value("node0.op2.w").unwrap(), &after);
        assert_eq!(net.steps_of(&a), 1);
        assert_eq!(net.steps_of(&b), 0);
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let (spec, d) = setup();
        let mut net = Supernet::new(spec.clone(), d.split_len(Split::Train), 64, 2).unwrap();
        let a = arch(&spec, &[0, 2, 1, 4, 0, 3, 2, 2]);
        let mut stream = BatchStream::new(&d, 4);
        let (x, y) = d.batch(&stream.next_rows(64));
        let first = net.train_step(&a, x.clone(), &y, 0.05, 0.9).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = net.train_step(&a, x.clone(), &y, 0.05, 0.9).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn evaluation_is_pure_and_near_chance_untrained() {
        let (spec, d) = setup();
        let mut accs = Vec::new();
        for seed in 0..8 {
            let net = Supernet::new(spec.clone(), d.split_len(Split::Train), 64, seed).unwrap();
            let mut rng = SeededRng::seed_from_u64(seed);
            let a = random_architecture(&spec, &mut rng);
            let s1 = net.evaluate(&a, &d, Split::Valid).unwrap();
            let s2 = net.evaluate(&a, &d, Split::Valid).unwrap();
            assert_eq!(s1, s2);
            accs.push(s1.valid_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.25).abs() < 0.05, "mean untrained accuracy {mean}");
    }

    #[test]
    fn epoch_accounting() {
        let (spec, d) = setup();
        let train = d.split_len(Split::Train);
        let mut net = Supernet::new(spec.clone(), train, 50, 0).unwrap();
        assert_eq!(net.epoch_of(), 0.0);
        let a = arch(&spec, &[0, 0, 0, 0, 0, 0, 0, 0]);
        let mut stream = BatchStream::new(&d, 0);
        for _ in 0..train / 50 {
            let (x, y) = d.batch(&stream.next_rows(50));
            net.train_step(&a, x, &y, 0.01, 0.0).unwrap();
        }
        assert!((net.epoch_of() - 1.0).abs() < 1e-12);
        assert_eq!(net.per_arch_steps().values().sum::<u64>(), net.step_counter());
    }

    #[test]
    fn batch_stream_covers_each_row_once_per_pass() {
        let (_, d) = setup();
        let mut s = BatchStream::new(&d, 9);
        let n = d.split_len(Split::Train);
        let mut seen = vec![0usize; n];
        for _ in 0..n / 40 {
            for r in s.next_rows(40) {
                seen[r] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (spec, d) = setup();
        let mut net = Supernet::new(spec.clone(), d.split_len(Split::Train), 64, 1).unwrap();
        let a = arch(&spec, &[0, 4, 1, 2, 0, 3, 2, 2]);
        let mut stream = BatchStream::new(&d, 1);
        for _ in 0..3 {
            let (x, y) = d.batch(&stream.next_rows(64));
            net.train_step(&a, x, &y, 0.05, 0.9).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path().join("net")).unwrap();
        let mut back = Supernet::load(dir.path().join("net")).unwrap();
        assert_eq!(back.slot_hashes(), net.slot_hashes());
        assert_eq!(back.per_arch_steps(), net.per_arch_steps());
        assert_eq!(back.step_counter(), 3);
        // momentum survives the roundtrip, so training continues identically
        let (x, y) = d.batch(&stream.next_rows(64));
        net.train_step(&a, x.clone(), &y, 0.05, 0.9).unwrap();
        back.train_step(&a, x, &y, 0.05, 0.9).unwrap();
        assert_eq!(back.slot_hashes(), net.slot_hashes());
    }
}

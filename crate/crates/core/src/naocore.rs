//! Architecture surrogate: encoder, performance predictor and decoder, and
//! gradient ascent on the predicted score in latent space.
//!
//! The encoder averages position-tagged token embeddings and applies one
//! affine + tanh layer. The predictor is a `d → d → 1` perceptron with a
//! sigmoid output. The decoder is one affine map to the concatenated
//! per-position vocabularies, read as independent categoricals.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::archspace::{random_architecture, validate_and_repair, Architecture, SearchSpaceSpec};
use crate::error::{Error, Result};
use crate::numerics::{glorot, ParamStore, Tape, Tensor2, Var};
use crate::sampler::CandidatePool;
use crate::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Weight of the reconstruction loss.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            epochs: 200,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn row(&self) -> Tensor2 {
        Tensor2::from_vec(1, self.0.len(), self.0.clone()).expect("row shape")
    }
}

/// Fewest scored architectures `fit` accepts.
pub const MIN_FIT_ARCHS: usize = 8;
const BACKTRACK_HALVINGS: usize = 8;
const PROPOSAL_RETRIES: usize = 4;
const FALLBACK_DRAWS: usize = 10_000;

#[derive(Clone, Debug)]
pub struct SurrogateModel {
    spec: SearchSpaceSpec,
    cfg: SurrogateConfig,
    store: ParamStore,
    offsets: Vec<usize>,
    segments: Vec<(usize, usize)>,
}

impl SurrogateModel {
    pub fn new(spec: &SearchSpaceSpec, cfg: SurrogateConfig) -> Result<Self> {
        spec.validate()?;
        if cfg.latent_dim == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("surrogate latent_dim and batch_size must be positive".into()));
        }
        let mut segments = Vec::with_capacity(spec.seq_len());
        let mut start = 0;
        for p in 0..spec.seq_len() {
            segments.push((start, spec.vocab_at(p)));
            start += spec.vocab_at(p);
        }
        let vocab = start;
        let d = cfg.latent_dim;
        let mut rng = SeededRng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let embed: Vec<f64> = (0..vocab * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.insert("embed", Tensor2::from_vec(vocab, d, embed)?);
        store.insert("enc.w", glorot(&mut rng, d, d));
        store.insert("enc.b", Tensor2::zeros(1, d));
        store.insert("pred.w1", glorot(&mut rng, d, d));
        store.insert("pred.b1", Tensor2::zeros(1, d));
        store.insert("pred.w2", glorot(&mut rng, d, 1));
        store.insert("pred.b2", Tensor2::zeros(1, 1));
        store.insert("dec.w", glorot(&mut rng, d, vocab));
        store.insert("dec.b", Tensor2::zeros(1, vocab));
        Ok(Self {
            spec: spec.clone(),
            cfg,
            store,
            offsets: segments.iter().map(|s| s.0).collect(),
            segments,
        })
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn embedding_rows(&self, arch: &Architecture) -> Vec<usize> {
        arch.tokens().iter().zip(&self.offsets).map(|(t, o)| o + t).collect()
    }

    fn affine(&self, tape: &mut Tape, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = tape.param(&self.store, w)?;
        let b = tape.param(&self.store, b)?;
        let z = tape.matmul(x, w)?;
        tape.add_bias(z, b)
    }

    fn encode_on(&self, tape: &mut Tape, archs: &[&Architecture]) -> Result<Var> {
        let table = tape.param(&self.store, "embed")?;
        let index = archs.iter().map(|a| self.embedding_rows(a)).collect();
        let pooled = tape.gather_mean(table, index)?;
        let z = self.affine(tape, pooled, "enc.w", "enc.b")?;
        tape.tanh(z)
    }

    fn predict_on(&self, tape: &mut Tape, e: Var) -> Result<Var> {
        let h = self.affine(tape, e, "pred.w1", "pred.b1")?;
        let h = tape.tanh(h)?;
        let z = self.affine(tape, h, "pred.w2", "pred.b2")?;
        tape.sigmoid(z)
    }

    pub fn encode(&self, arch: &Architecture) -> Result<LatentCode> {
        arch.check(&self.spec)?;
        let mut tape = Tape::new();
        let e = self.encode_on(&mut tape, &[arch])?;
        Ok(LatentCode(tape.value(e)?.data().to_vec()))
    }

    pub fn predict(&self, e: &LatentCode) -> Result<f64> {
        Ok(self.predict_with_grad(e)?.0)
    }

    /// Predicted score and its gradient with respect to the code.
    pub fn predict_with_grad(&self, e: &LatentCode) -> Result<(f64, LatentCode)> {
        if e.dim() != self.cfg.latent_dim {
            return Err(Error::WrongLength {
                expected: self.cfg.latent_dim,
                got: e.dim(),
            });
        }
        let mut tape = Tape::new();
        let x = tape.leaf(e.row());
        let p = self.predict_on(&mut tape, x)?;
        let value = tape.value(p)?.get(0, 0);
        // Parameter gradients land in a scratch copy; only the leaf's matter.
        let mut scratch = self.store.clone();
        let grads = tape.backward(p, &mut scratch)?;
        let g = grads
            .get(x)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; e.dim()]);
        Ok((value, LatentCode(g)))
    }

    /// Per-position argmax over that position's vocabulary, then repair.
    pub fn decode(&self, e: &LatentCode) -> Result<Architecture> {
        if e.dim() != self.cfg.latent_dim {
            return Err(Error::WrongLength {
                expected: self.cfg.latent_dim,
                got: e.dim(),
            });
        }
        let logits = e.row().matmul(self.store.value("dec.w")?)?.add_row(self.store.value("dec.b")?)?;
        let row = logits.row(0);
        let tokens: Vec<i64> = self
            .segments
            .iter()
            .map(|&(s, n)| {
                let seg = &row[s..s + n];
                let mut best = 0;
                for (k, v) in seg.iter().enumerate() {
                    if *v > seg[best] {
                        best = k;
                    }
                }
                best as i64
            })
            .collect();
        validate_and_repair(&tokens, &self.spec)
    }

    /// Fraction of token positions recovered by `decode(encode(arch))`.
    pub fn reconstruction_accuracy(&self, archs: &[Architecture]) -> Result<f64> {
        let mut hit = 0usize;
        let mut total = 0usize;
        for a in archs {
            let back = self.decode(&self.encode(a)?)?;
            hit += a.tokens().iter().zip(back.tokens()).filter(|(x, y)| x == y).count();
            total += a.tokens().len();
        }
        Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
    }

    /// Trains on every one-shot-scored member of `pool`.
    pub fn fit(&mut self, pool: &CandidatePool, epochs: usize) -> Result<Vec<f64>> {
        self.fit_pairs(&pool.scored(), epochs)
    }

    /// Minimizes `mse(predict(encode(x)), s̃) + λ·ce(decode(encode(x)), x)`
    /// with `s̃` the scores min-max normalized over `data`. Returns the mean
    /// loss of each epoch.
    pub fn fit_pairs(&mut self, data: &[(Architecture, f64)], epochs: usize) -> Result<Vec<f64>> {
        if data.len() < MIN_FIT_ARCHS {
            return Err(Error::TooFewScores {
                needed: MIN_FIT_ARCHS,
                got: data.len(),
            });
        }
        for (a, s) in data {
            a.check(&self.spec)?;
            if !s.is_finite() {
                return Err(Error::Metric(format!("non-finite score for {a}")));
            }
        }
        let lo = data.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        let hi = data.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
        let targets: Vec<f64> = data
            .iter()
            .map(|d| if hi > lo { (d.1 - lo) / (hi - lo) } else { 0.5 })
            .collect();
        let mut rng = SeededRng::seed_from_u64(self.cfg.seed ^ 0xf17);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.cfg.batch_size) {
                let archs: Vec<&Architecture> = chunk.iter().map(|&i| &data[i].0).collect();
                let y = Tensor2::from_vec(chunk.len(), 1, chunk.iter().map(|&i| targets[i]).collect())?;
                let tokens: Vec<Vec<usize>> = archs.iter().map(|a| a.tokens().to_vec()).collect();
                let mut tape = Tape::new();
                let e = self.encode_on(&mut tape, &archs)?;
                let p = self.predict_on(&mut tape, e)?;
                let pred_loss = tape.mse(p, &y)?;
                let logits = self.affine(&mut tape, e, "dec.w", "dec.b")?;
                let rec = tape.segmented_cross_entropy(logits, &self.segments, &tokens)?;
                let loss = tape.add_scaled(pred_loss, rec, self.cfg.lambda)?;
                total += tape.value(loss)?.get(0, 0) * chunk.len() as f64;
                tape.backward(loss, &mut self.store)?;
                self.store.sgd_step(self.cfg.lr, self.cfg.momentum);
            }
            losses.push(total / data.len() as f64);
        }
        Ok(losses)
    }

    /// Gradient ascent on the predicted score. A step that would lower the
    /// prediction is halved up to eight times; if it still lowers it the
    /// ascent stops there.
    pub fn latent_ascent(&self, e: &LatentCode, eta: f64, steps: usize) -> Result<LatentCode> {
        if steps == 0 || eta.is_nan() || eta <= 0.0 {
            return Err(Error::Config(format!(
                "latent ascent needs steps >= 1 and eta > 0, got steps={steps} eta={eta}"
            )));
        }
        let mut cur = e.clone();
        let (mut score, mut grad) = self.predict_with_grad(&cur)?;
        'outer: for _ in 0..steps {
            let mut step = eta;
            for _ in 0..=BACKTRACK_HALVINGS {
                let next = LatentCode(cur.0.iter().zip(&grad.0).map(|(x, g)| x + step * g).collect());
                let (s, g) = self.predict_with_grad(&next)?;
                if s >= score {
                    cur = next;
                    score = s;
                    grad = g;
                    continue 'outer;
                }
                step *= 0.5;
            }
            break;
        }
        Ok(cur)
    }

    /// One new architecture per seed: encode, ascend, decode. A proposal
    /// already in `pool` or earlier in the batch is retried with doubled
    /// step size up to four times, then replaced by a fresh random one.
    pub fn propose(
        &self,
        seeds: &[Architecture],
        pool: &CandidatePool,
        eta: f64,
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Proposal>> {
        let mut out: Vec<Proposal> = Vec::with_capacity(seeds.len());
        let taken = |a: &Architecture, out: &[Proposal]| pool.contains(a) || out.iter().any(|p| &p.arch == a);
        for seed in seeds {
            let e = self.encode(seed)?;
            let mut found = None;
            let mut step = eta;
            for attempt in 0..=PROPOSAL_RETRIES {
                let a = self.decode(&self.latent_ascent(&e, step, steps)?)?;
                if !taken(&a, &out) {
                    found = Some(Proposal {
                        arch: a,
                        seed: seed.clone(),
                        origin: ProposalOrigin::Ascent { retries: attempt },
                    });
                    break;
                }
                step *= 2.0;
            }
            if found.is_none() {
                for _ in 0..FALLBACK_DRAWS {
                    let a = random_architecture(&self.spec, rng);
                    if !taken(&a, &out) {
                        found = Some(Proposal {
                            arch: a,
                            seed: seed.clone(),
                            origin: ProposalOrigin::Random,
                        });
                        break;
                    }
                }
            }
            // Only an exhausted search space leaves this empty.
            if let Some(p) = found {
                out.push(p);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save(path)
    }

    /// Restores weights written by [`save`](Self::save) into a model built
    /// for `spec` and `cfg`.
    pub fn load(spec: &SearchSpaceSpec, cfg: SurrogateConfig, path: impl AsRef<Path>) -> Result<Self> {
        let mut model = Self::new(spec, cfg)?;
        let loaded = ParamStore::load(path)?;
        let names: Vec<String> = model.store.names().map(String::from).collect();
        for name in names {
            let v = loaded.value(&name)?;
            if v.shape() != model.store.value(&name)?.shape() {
                return Err(Error::ShapeMismatch {
                    op: "surrogate load",
                    left: model.store.value(&name)?.shape(),
                    right: v.shape(),
                });
            }
            *model.store.value_mut(&name)? = v.clone();
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOrigin {
    Ascent { retries: usize },
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub arch: Architecture,
    pub seed: Architecture,
    pub origin: ProposalOrigin,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{model_size, OperationKind};
    use crate::driver::lab::random_pool;
    use crate::metrics::pairwise_accuracy_of;

    fn spec() -> SearchSpaceSpec {
        SearchSpaceSpec::with_defaults(16, 4)
    }

    /// A smooth synthetic score: size plus a bonus for tanh ops.
    fn synthetic(spec: &SearchSpaceSpec, a: &Architecture) -> f64 {
        let size = model_size(a, spec).unwrap().0 as f64 / spec.max_size() as f64;
        let tanh = (0..a.num_nodes())
            .filter(|&i| spec.op_set[a.op_of(i)] == OperationKind::LinearTanh)
            .count() as f64;
        0.5 * size + 0.1 * tanh
    }

    fn scored(n: usize, seed: u64) -> Vec<(Architecture, f64)> {
        let spec = spec();
        let mut rng = SeededRng::seed_from_u64(seed);
        let pool = random_pool(&spec, n, &mut rng).unwrap();
        pool.archs().iter().map(|a| (a.clone(), synthetic(&spec, a))).collect()
    }

    fn random_code(rng: &mut SeededRng, d: usize) -> LatentCode {
        LatentCode((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn encode_is_deterministic_with_fixed_dimension() {
        let m = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        let a = &scored(1, 1)[0].0;
        let e = m.encode(a).unwrap();
        assert_eq!(e.dim(), 32);
        assert_eq!(e, m.encode(a).unwrap());
    }

    #[test]
    fn predict_gradient_matches_finite_differences() {
        let mut m = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        m.fit_pairs(&scored(40, 2), 20).unwrap();
        let mut rng = SeededRng::seed_from_u64(3);
        for _ in 0..5 {
            let e = random_code(&mut rng, 32);
            let (p, g) = m.predict_with_grad(&e).unwrap();
            assert!(p > 0.0 && p < 1.0);
            let h = 1e-6;
            for k in 0..32 {
                let mut plus = e.clone();
                plus.0[k] += h;
                let mut minus = e.clone();
                minus.0[k] -= h;
                let fd = (m.predict(&plus).unwrap() - m.predict(&minus).unwrap()) / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(g.0[k].abs()) + 1e-9;
                assert!((fd - g.0[k]).abs() <= tol, "k={k}: fd {fd} vs {}", g.0[k]);
            }
        }
    }

    #[test]
    fn decode_is_always_valid() {
        let spec = spec();
        let m = SurrogateModel::new(&spec, SurrogateConfig::default()).unwrap();
        let mut rng = SeededRng::seed_from_u64(4);
        for _ in 0..200 {
            let mut e = random_code(&mut rng, 32);
            e.0.iter_mut().for_each(|v| *v *= 50.0);
            m.decode(&e).unwrap().check(&spec).unwrap();
        }
        assert!(m.decode(&LatentCode(vec![0.0; 3])).is_err());
    }

    #[test]
    fn fit_rejects_tiny_pools_and_is_deterministic() {
        let data = scored(20, 5);
        let mut m = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        assert!(matches!(
            m.fit_pairs(&data[..7], 5),
            Err(Error::TooFewScores { needed: 8, got: 7 })
        ));
        let mut a = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        let mut b = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        let la = a.fit_pairs(&data, 30).unwrap();
        assert_eq!(la, b.fit_pairs(&data, 30).unwrap());
        assert!(la.last().unwrap() < la.first().unwrap());
        let mut doubled = data.clone();
        doubled.extend(data.iter().cloned());
        let mut c = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        assert!(c.fit_pairs(&doubled, 5).unwrap().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn reconstruction_needs_the_decoder_loss() {
        let data = scored(256, 6);
        let archs: Vec<Architecture> = data.iter().map(|d| d.0.clone()).collect();
        let mut full = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        full.fit_pairs(&data, 200).unwrap();
        let full_acc = full.reconstruction_accuracy(&archs).unwrap();
        assert!(full_acc >= 0.95, "reconstruction {full_acc}");

        let cfg = SurrogateConfig {
            lambda: 0.0,
            ..SurrogateConfig::default()
        };
        let mut ablated = SurrogateModel::new(&spec(), cfg).unwrap();
        let before = ablated.reconstruction_accuracy(&archs).unwrap();
        ablated.fit_pairs(&data, 200).unwrap();
        let after = ablated.reconstruction_accuracy(&archs).unwrap();
        assert_eq!(ablated.store().value("dec.w").unwrap(), SurrogateModel::new(&spec(), ablated.config().clone()).unwrap().store().value("dec.w").unwrap());
        assert!(after < full_acc - 0.2, "ablated {after} (before {before}) vs full {full_acc}");
    }

    #[test]
    fn codes_separate_single_token_edits() {
        let spec = spec();
        let data = scored(128, 7);
        let mut m = SurrogateModel::new(&spec, SurrogateConfig::default()).unwrap();
        m.fit_pairs(&data, 50).unwrap();
        let mut rng = SeededRng::seed_from_u64(8);
        for (a, _) in data.iter().take(100) {
            let mut t = a.tokens().to_vec();
            let pos = rng.random_range(1..t.len());
            let n = spec.vocab_at(pos);
            if n < 2 {
                continue;
            }
            t[pos] = (t[pos] + rng.random_range(1..n)) % n;
            let b = Architecture::new(t, &spec).unwrap();
            assert_ne!(m.encode(a).unwrap(), m.encode(&b).unwrap());
        }
    }

    #[test]
    fn predictor_ranks_held_out_synthetic_scores() {
        let data = scored(320, 9);
        let (train, test) = data.split_at(256);
        let mut m = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        m.fit_pairs(train, 200).unwrap();
        let pred: Vec<(Architecture, f64)> = test
            .iter()
            .map(|(a, _)| (a.clone(), m.predict(&m.encode(a).unwrap()).unwrap()))
            .collect();
        let acc = pairwise_accuracy_of(&pred, test).unwrap().pairwise_accuracy;
        assert!(acc >= 0.65, "held-out pairwise accuracy {acc}");
    }

    #[test]
    fn latent_ascent_never_lowers_the_prediction() {
        let mut m = SurrogateModel::new(&spec(), SurrogateConfig::default()).unwrap();
        m.fit_pairs(&scored(64, 10), 50).unwrap();
        let mut rng = SeededRng::seed_from_u64(11);
        let (mut before, mut after) = (0.0, 0.0);
        for _ in 0..1000 {
            let e = random_code(&mut rng, 32);
            let p0 = m.predict(&e).unwrap();
            let out = m.latent_ascent(&e, 0.1, 10).unwrap();
            let p1 = m.predict(&out).unwrap();
            assert!(p1 >= p0);
            before += p0;
            after += p1;
        }
        assert!(after > before);
        let e = random_code(&mut rng, 32);
        let tiny = m.latent_ascent(&e, 1e-12, 1).unwrap();
        assert!(tiny.0.iter().zip(&e.0).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(m.latent_ascent(&e, 0.1, 0).is_err());
        assert!(m.latent_ascent(&e, 0.0, 3).is_err());
    }

    #[test]
    fn proposals_are_new_and_distinct() {
        let spec = spec();
        let data = scored(50, 12);
        let pool = CandidatePool::from_archs(&spec, data.iter().map(|d| d.0.clone())).unwrap();
        let mut m = SurrogateModel::new(&spec, SurrogateConfig::default()).unwrap();
        m.fit_pairs(&data, 50).unwrap();
        let seeds: Vec<Architecture> = data.iter().take(4).map(|d| d.0.clone()).collect();
        let mut rng = SeededRng::seed_from_u64(13);
        let props = m.propose(&seeds, &pool, 0.1, 10, &mut rng).unwrap();
        assert_eq!(props.len(), 4);
        for (i, p) in props.iter().enumerate() {
            p.arch.check(&spec).unwrap();
            assert!(!pool.contains(&p.arch));
            assert!(props[..i].iter().all(|q| q.arch != p.arch));
        }
    }

    #[test]
    fn proposals_fall_back_to_random_when_decoding_repeats() {
        let spec = SearchSpaceSpec::new(
            1,
            vec![OperationKind::Identity, OperationKind::LinearRelu, OperationKind::LinearTanh],
            4,
            2,
        );
        let all = spec.enumerate();
        assert_eq!(all.len(), 3);
        let pool = CandidatePool::from_archs(&spec, all[..2].iter().cloned()).unwrap();
        let cfg = SurrogateConfig {
            latent_dim: 4,
            ..SurrogateConfig::default()
        };
        let mut m = SurrogateModel::new(&spec, cfg).unwrap();
        let data: Vec<(Architecture, f64)> = (0..8).map(|i| (all[i % 2].clone(), (i % 2) as f64)).collect();
        m.fit_pairs(&data, 100).unwrap();
        let mut rng = SeededRng::seed_from_u64(14);
        let props = m.propose(&all[..2], &pool, 0.1, 10, &mut rng).unwrap();
        // Only one architecture is left outside the pool.
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].arch, all[2]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = spec();
        let mut m = SurrogateModel::new(&spec, SurrogateConfig::default()).unwrap();
        let data = scored(16, 15);
        m.fit_pairs(&data, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogate.bin");
        m.save(&path).unwrap();
        let back = SurrogateModel::load(&spec, m.config().clone(), &path).unwrap();
        for (a, _) in &data {
            let e = m.encode(a).unwrap();
            assert_eq!(e, back.encode(a).unwrap());
            assert_eq!(m.predict(&e).unwrap(), back.predict(&e).unwrap());
        }
    }
}

//! Ranking-correlation experiments: one-shot scores after a fixed supernet
//! budget compared against stand-alone ground truth.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archspace::{
    random_architecture, random_architecture_with_size, Architecture, ModelSize, SearchSpaceSpec,
    DEFAULT_REJECTION_DRAWS,
};
use crate::error::{Error, Result};
use crate::metrics::{median, pairwise_accuracy_of, RankingReport};
use crate::sampler::{CandidatePool, SamplingKind};
use crate::standalone::{GroundTruthScore, OracleCache, StandaloneConfig};
use crate::supernet::{steps_for_epochs, BatchStream, OneShotScore, Supernet, TrainHyper};
use crate::taskgen::{make_teacher_task, Dataset, Split, TaskConfig};
use crate::SeededRng;

pub const DEFAULT_BUDGETS: [f64; 5] = [5.0, 10.0, 20.0, 30.0, 50.0];
pub const SIMILAR_TOLERANCE: f64 = 0.1;

/// Independent sub-seed for a named stream of a run.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(master.to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `n` distinct random architectures.
pub fn random_pool(spec: &SearchSpaceSpec, n: usize, rng: &mut SeededRng) -> Result<CandidatePool> {
    let mut pool = CandidatePool::new(spec);
    let mut draws = 0usize;
    while pool.len() < n {
        if draws == DEFAULT_REJECTION_DRAWS {
            return Err(Error::Config(format!("could not draw {n} distinct architectures")));
        }
        draws += 1;
        pool.try_insert(random_architecture(spec, rng))?;
    }
    Ok(pool)
}

/// `n` distinct architectures whose sizes lie within `target·(1 ± tolerance)`.
pub fn similar_pool(
    spec: &SearchSpaceSpec,
    n: usize,
    target: ModelSize,
    tolerance: f64,
    rng: &mut SeededRng,
) -> Result<CandidatePool> {
    let mut pool = CandidatePool::new(spec);
    let mut draws = 0usize;
    while pool.len() < n {
        if draws == DEFAULT_REJECTION_DRAWS {
            return Err(Error::Config(format!(
                "could not draw {n} distinct architectures of size {}±{tolerance}",
                target.0
            )));
        }
        draws += 1;
        let arch = random_architecture_with_size(spec, rng, target, tolerance, DEFAULT_REJECTION_DRAWS)
            .map_err(|e| e.context(format!("similar-size pool around {} parameters", target.0)))?;
        pool.try_insert(arch)?;
    }
    Ok(pool)
}

pub fn median_size(pool: &CandidatePool) -> ModelSize {
    let sizes: Vec<f64> = pool.sizes().iter().map(|s| s.0 as f64).collect();
    ModelSize(median(&sizes).round() as u64)
}

/// Trains `steps` supernet steps, each on one architecture drawn from `pool`
/// by `policy`. Returns the mean training loss.
#[allow(clippy::too_many_arguments)]
pub fn train_phase(
    net: &mut Supernet,
    pool: &CandidatePool,
    policy: SamplingKind,
    steps: u64,
    dataset: &Dataset,
    hyper: &TrainHyper,
    sampler: &mut SeededRng,
    batches: &mut BatchStream,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..steps {
        let arch = &pool.archs()[policy.sample_index(pool, sampler)?];
        let rows = batches.next_rows(hyper.batch_size);
        let (x, y) = dataset.batch(&rows);
        total += net.train_step(arch, x, &y, hyper.lr, hyper.momentum)?;
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}

pub fn evaluate_pool(net: &Supernet, pool: &CandidatePool, dataset: &Dataset) -> Result<Vec<OneShotScore>> {
    let (x, y) = dataset.split_data(Split::Valid);
    pool.archs().iter().map(|a| net.evaluate_on(a, &x, &y)).collect()
}

/// Everything shared by the correlation experiments.
#[derive(Clone, Debug)]
pub struct Lab {
    pub spec: SearchSpaceSpec,
    pub task: TaskConfig,
    pub dataset: Dataset,
    pub hyper: TrainHyper,
    pub standalone: StandaloneConfig,
    pub ground_truth_seed: u64,
    pub workers: usize,
}

impl Lab {
    pub fn new(
        task: TaskConfig,
        num_nodes: usize,
        hyper: TrainHyper,
        standalone: StandaloneConfig,
        ground_truth_seed: u64,
        workers: usize,
    ) -> Result<Self> {
        let mut spec = SearchSpaceSpec::with_defaults(task.width, task.classes);
        spec.num_nodes = num_nodes;
        spec.validate()?;
        let dataset = make_teacher_task(&task)?;
        Ok(Self {
            spec,
            task,
            dataset,
            hyper,
            standalone,
            ground_truth_seed,
            workers: workers.max(1),
        })
    }

    pub fn train_size(&self) -> usize {
        self.dataset.split_len(Split::Train)
    }

    pub fn steps_for(&self, epochs: f64) -> u64 {
        steps_for_epochs(epochs, self.train_size(), self.hyper.batch_size)
    }

    pub fn ground_truth(&self, cache: &mut OracleCache, archs: &[Architecture]) -> Result<Vec<GroundTruthScore>> {
        cache.get_or_compute_many(
            &self.spec,
            archs,
            &self.dataset,
            &self.task,
            &self.standalone,
            self.ground_truth_seed,
            self.workers,
        )
    }

    /// The random initial pool of run `seed`; search and the sweeps share it.
    pub fn initial_pool(&self, seed: u64, n: usize) -> Result<CandidatePool> {
        let mut rng = SeededRng::seed_from_u64(derive_seed(seed, "pool"));
        random_pool(&self.spec, n, &mut rng)
    }

    /// Trains a fresh supernet on `pool` and scores the pool after each
    /// cumulative budget in `budgets` (epochs, ascending).
    ///
    /// The learning rate is constant, so stopping at a budget and resuming is
    /// the same trajectory as a fresh supernet trained to each budget with
    /// the same seeds.
    pub fn one_shot_at_budgets(
        &self,
        pool: &CandidatePool,
        policy: SamplingKind,
        budgets: &[f64],
        seed: u64,
    ) -> Result<Vec<(f64, u64, Vec<OneShotScore>)>> {
        if budgets.is_empty() {
            return Err(Error::Config("budget list is empty".into()));
        }
        if budgets.windows(2).any(|w| w[1] < w[0]) || budgets[0] < 0.0 {
            return Err(Error::Config("budgets must be nonnegative and ascending".into()));
        }
        let mut net = Supernet::new(
            self.spec.clone(),
            self.train_size(),
            self.hyper.batch_size,
            derive_seed(seed, "supernet"),
        )?;
        let mut sampler = SeededRng::seed_from_u64(derive_seed(seed, "sampler"));
        let mut batches = BatchStream::new(&self.dataset, derive_seed(seed, "batches"));
        let mut out = Vec::with_capacity(budgets.len());
        for &b in budgets {
            let target = self.steps_for(b);
            let todo = target - net.step_counter();
            train_phase(&mut net, pool, policy, todo, &self.dataset, &self.hyper, &mut sampler, &mut batches)?;
            out.push((b, target, evaluate_pool(&net, pool, &self.dataset)?));
        }
        Ok(out)
    }
}

/// One row of a correlation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub seed: u64,
    pub pool: String,
    pub policy: SamplingKind,
    pub budget_epochs: f64,
    pub steps: u64,
    pub report: RankingReport,
}

pub const SWEEP_CSV_HEADER: &str = "experiment,seed,pool,policy,budget_epochs,steps,pairwise_accuracy,n_pairs,n_ties_skipped";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{},{}\n",
            r.experiment,
            r.seed,
            r.pool,
            r.policy.name(),
            r.budget_epochs,
            r.steps,
            r.report.pairwise_accuracy,
            r.report.n_pairs,
            r.report.n_ties_skipped
        ));
    }
    out
}

/// Median pairwise accuracy of the rows matching `filter`.
pub fn median_accuracy(rows: &[SweepRow], filter: impl Fn(&SweepRow) -> bool) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| filter(r)).map(|r| r.report.pairwise_accuracy).collect();
    median(&v)
}

struct Cell {
    seed: u64,
    pool_name: &'static str,
    pool: CandidatePool,
    policy: SamplingKind,
}

fn run_cells(
    lab: &Lab,
    cache: &mut OracleCache,
    experiment: &str,
    cells: Vec<Cell>,
    budgets: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut all: Vec<Architecture> = Vec::new();
    for c in &cells {
        all.extend(c.pool.archs().iter().cloned());
    }
    let truth: std::collections::BTreeMap<Architecture, f64> = lab
        .ground_truth(cache, &all)?
        .into_iter()
        .map(|g| (g.arch, g.valid_accuracy))
        .collect();
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(lab.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<SweepRow>>> = threads.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let gt: Vec<(Architecture, f64)> = c.pool.archs().iter().map(|a| (a.clone(), truth[a])).collect();
                lab.one_shot_at_budgets(&c.pool, c.policy, budgets, c.seed)?
                    .into_iter()
                    .map(|(b, steps, scores)| {
                        let os: Vec<(Architecture, f64)> =
                            scores.into_iter().map(|s| (s.arch, s.valid_accuracy)).collect();
                        Ok(SweepRow {
                            experiment: experiment.to_string(),
                            seed: c.seed,
                            pool: c.pool_name.to_string(),
                            policy: c.policy,
                            budget_epochs: b,
                            steps,
                            report: pairwise_accuracy_of(&os, &gt)
                                .map_err(|e| e.context(format!("seed {} budget {b}", c.seed)))?,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Pairwise accuracy against budget, one fresh supernet per seed.
pub fn run_budget_sweep(
    lab: &Lab,
    cache: &mut OracleCache,
    seeds: &[u64],
    pool_size: usize,
    budgets: &[f64],
    policy: SamplingKind,
) -> Result<Vec<SweepRow>> {
    let cells = seeds
        .iter()
        .map(|&seed| {
            Ok(Cell {
                seed,
                pool_name: "diverse",
                pool: lab.initial_pool(seed, pool_size)?,
                policy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_cells(lab, cache, "budget", cells, budgets)
}

/// Diverse-size pool against a pool of similar sizes around the diverse
/// pool's median size, both under uniform sampling.
pub fn run_diversity_experiment(
    lab: &Lab,
    cache: &mut OracleCache,
    seeds: &[u64],
    pool_size: usize,
    budget: f64,
    tolerance: f64,
) -> Result<Vec<SweepRow>> {
    let mut cells = Vec::new();
    for &seed in seeds {
        let diverse = lab.initial_pool(seed, pool_size)?;
        let target = median_size(&diverse);
        let mut rng = SeededRng::seed_from_u64(derive_seed(seed, "similar-pool"));
        let similar = similar_pool(&lab.spec, pool_size, target, tolerance, &mut rng)?;
        cells.push(Cell {
            seed,
            pool_name: "diverse",
            pool: diverse,
            policy: SamplingKind::Uniform,
        });
        cells.push(Cell {
            seed,
            pool_name: "similar",
            pool: similar,
            policy: SamplingKind::Uniform,
        });
    }
    run_cells(lab, cache, "diversity", cells, &[budget])
}

/// Uniform against proportional sampling on the same pool, supernet
/// initialization and batch order.
pub fn run_policy_experiment(
    lab: &Lab,
    cache: &mut OracleCache,
    seeds: &[u64],
    pool_size: usize,
    budgets: &[f64],
) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() {
        return Err(Error::Config("budget list is empty".into()));
    }
    let mut cells = Vec::new();
    for &seed in seeds {
        let pool = lab.initial_pool(seed, pool_size)?;
        for policy in [SamplingKind::Uniform, SamplingKind::Proportional] {
            cells.push(Cell {
                seed,
                pool_name: "diverse",
                pool: pool.clone(),
                policy,
            });
        }
    }
    run_cells(lab, cache, "policy", cells, budgets)
}

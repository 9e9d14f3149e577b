//! The balanced search loop: train the supernet on the newest candidates,
//! score them, fit the surrogate on every score so far, and propose new
//! candidates from the current top performers.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::archspace::Architecture;
use crate::driver::config::SearchConfig;
use crate::driver::lab::{derive_seed, evaluate_pool, train_phase, Lab};
use crate::error::{Error, Result};
use crate::metrics::{pairwise_accuracy_of, RankingReport};
use crate::naocore::{Proposal, SurrogateModel};
use crate::sampler::{expected_steps, CandidatePool};
use crate::standalone::{GroundTruthScore, OracleCache};
use crate::supernet::{BatchStream, OneShotScore, Supernet};
use crate::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub evaluated: Vec<OneShotScore>,
    /// Steps each evaluated architecture received in this round.
    pub phase_steps: Vec<(Architecture, u64)>,
    pub expected_steps: Vec<(Architecture, f64)>,
    pub mean_train_loss: f64,
    pub surrogate_losses: Vec<f64>,
    pub seeds: Vec<Architecture>,
    pub proposals: Vec<Proposal>,
    /// The candidate set after this round's proposals were added.
    pub pool: Vec<Architecture>,
    pub ground_truth: Vec<GroundTruthScore>,
    pub ranking: Option<RankingReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub config: SearchConfig,
    pub space_fingerprint: String,
    pub initial_pool: Vec<Architecture>,
    pub iterations: Vec<IterationRecord>,
    /// Every member's latest one-shot score. Scores of earlier members were
    /// measured on earlier supernet states and are not refreshed.
    pub final_scores: Vec<OneShotScore>,
    pub stale_scores: bool,
    pub best: Architecture,
    pub best_one_shot: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTiming {
    pub iteration: usize,
    pub phase: &'static str,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub record: ExperimentRecord,
    pub best: Architecture,
    /// Wall-clock time per phase. Kept out of the record so that records are
    /// reproducible byte for byte.
    pub timings: Vec<PhaseTiming>,
}

pub fn timings_tsv(timings: &[PhaseTiming]) -> String {
    let mut out = String::from("iteration\tphase\tseconds\n");
    for t in timings {
        out.push_str(&format!("{}\t{}\t{:.3}\n", t.iteration, t.phase, t.seconds));
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointState {
    config: SearchConfig,
    next_iteration: usize,
    initial_pool: Vec<Architecture>,
    eval: Vec<Architecture>,
    iterations: Vec<IterationRecord>,
}

struct SearchState {
    next_iteration: usize,
    initial_pool: Vec<Architecture>,
    pool: CandidatePool,
    eval: Vec<Architecture>,
    iterations: Vec<IterationRecord>,
    net: Supernet,
}

fn write_checkpoint(dir: &Path, cfg: &SearchConfig, st: &SearchState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    st.net.save(dir.join("supernet"))?;
    st.pool.save(dir.join("pool.json"))?;
    let state = CheckpointState {
        config: cfg.clone(),
        next_iteration: st.next_iteration,
        initial_pool: st.initial_pool.clone(),
        eval: st.eval.clone(),
        iterations: st.iterations.clone(),
    };
    std::fs::write(dir.join("state.json"), serde_json::to_string_pretty(&state)?)?;
    Ok(())
}

fn lab_for(cfg: &SearchConfig, workers: usize) -> Result<Lab> {
    Lab::new(
        cfg.task.clone(),
        cfg.num_nodes,
        cfg.supernet.clone(),
        cfg.standalone.clone(),
        cfg.ground_truth_seed,
        workers,
    )
}

/// Runs the search from scratch. State is checkpointed into
/// `checkpoint_dir` before every round; a failing round aborts with
/// [`Error::SearchAborted`] naming the round and the checkpoint, from which
/// [`resume_search`] continues.
pub fn run_search(
    cfg: &SearchConfig,
    checkpoint_dir: &Path,
    cache: Option<&mut OracleCache>,
    workers: usize,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let lab = lab_for(cfg, workers)?;
    let pool = lab.initial_pool(cfg.master_seed, cfg.initial_pool_size)?;
    let net = Supernet::new(
        lab.spec.clone(),
        lab.train_size(),
        cfg.supernet.batch_size,
        derive_seed(cfg.master_seed, "supernet"),
    )?;
    let st = SearchState {
        next_iteration: 1,
        initial_pool: pool.archs().to_vec(),
        eval: pool.archs().to_vec(),
        pool,
        iterations: Vec::new(),
        net,
    };
    drive(cfg, &lab, st, checkpoint_dir, cache)
}

/// Continues a search from a checkpoint directory written by [`run_search`].
pub fn resume_search(checkpoint_dir: &Path, cache: Option<&mut OracleCache>, workers: usize) -> Result<SearchOutcome> {
    let state: CheckpointState = serde_json::from_str(&std::fs::read_to_string(checkpoint_dir.join("state.json"))?)?;
    let cfg = state.config;
    cfg.validate()?;
    let lab = lab_for(&cfg, workers)?;
    let pool = CandidatePool::from_json(&std::fs::read_to_string(checkpoint_dir.join("pool.json"))?, &lab.spec)?;
    let net = Supernet::load(checkpoint_dir.join("supernet"))?;
    let st = SearchState {
        next_iteration: state.next_iteration,
        initial_pool: state.initial_pool,
        pool,
        eval: state.eval,
        iterations: state.iterations,
        net,
    };
    drive(&cfg, &lab, st, checkpoint_dir, cache)
}

fn drive(
    cfg: &SearchConfig,
    lab: &Lab,
    mut st: SearchState,
    dir: &Path,
    mut cache: Option<&mut OracleCache>,
) -> Result<SearchOutcome> {
    let mut timings = Vec::new();
    if cfg.record_ground_truth && st.next_iteration == 1 {
        if let Some(cache) = cache.as_deref_mut() {
            for g in lab.ground_truth(cache, &st.initial_pool)? {
                st.pool.set_ground_truth(g)?;
            }
        }
    }
    while st.next_iteration <= cfg.iterations {
        let l = st.next_iteration;
        let abort = |e: Error| Error::SearchAborted {
            iteration: l,
            checkpoint: dir.to_path_buf(),
            source: Box::new(e),
        };
        write_checkpoint(dir, cfg, &st).map_err(abort)?;
        let rec = iteration(cfg, lab, &mut st, l, dir, cache.as_deref_mut(), &mut timings).map_err(abort)?;
        st.iterations.push(rec);
        st.next_iteration += 1;
    }

    let final_scores: Vec<OneShotScore> = (0..st.pool.len()).filter_map(|i| st.pool.one_shot(i).cloned()).collect();
    let mut best: Option<&OneShotScore> = None;
    for s in &final_scores {
        if best.is_none_or(|b| s.valid_accuracy > b.valid_accuracy) {
            best = Some(s);
        }
    }
    let best = best.ok_or(Error::EmptyPool)?.clone();
    let record = ExperimentRecord {
        config_hash: cfg.config_hash(),
        config: cfg.clone(),
        space_fingerprint: lab.spec.fingerprint(),
        initial_pool: st.initial_pool.clone(),
        iterations: st.iterations,
        stale_scores: final_scores.iter().any(|s| s.at_step != st.net.step_counter()),
        final_scores,
        best: best.arch.clone(),
        best_one_shot: best.valid_accuracy,
    };
    Ok(SearchOutcome {
        best: best.arch,
        record,
        timings,
    })
}

fn iteration(
    cfg: &SearchConfig,
    lab: &Lab,
    st: &mut SearchState,
    l: usize,
    dir: &Path,
    cache: Option<&mut OracleCache>,
    timings: &mut Vec<PhaseTiming>,
) -> Result<IterationRecord> {
    let master = cfg.master_seed;
    let mut clock = Instant::now();
    let mut lap = |phase: &'static str, timings: &mut Vec<PhaseTiming>| {
        timings.push(PhaseTiming {
            iteration: l,
            phase,
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };

    let eval_pool = CandidatePool::from_archs(&lab.spec, st.eval.iter().cloned())?;
    let before: BTreeMap<Architecture, u64> = eval_pool.archs().iter().map(|a| (a.clone(), st.net.steps_of(a))).collect();
    let mut sampler = SeededRng::seed_from_u64(derive_seed(master, &format!("sampler-{l}")));
    let mut batches = BatchStream::new(&lab.dataset, derive_seed(master, &format!("batches-{l}")));
    let mean_train_loss = train_phase(
        &mut st.net,
        &eval_pool,
        cfg.policy,
        cfg.steps_per_iteration,
        &lab.dataset,
        &cfg.supernet,
        &mut sampler,
        &mut batches,
    )?;
    let phase_steps = eval_pool
        .archs()
        .iter()
        .map(|a| (a.clone(), st.net.steps_of(a) - before[a]))
        .collect();
    lap("train", timings);

    let evaluated = evaluate_pool(&st.net, &eval_pool, &lab.dataset)?;
    for s in &evaluated {
        st.pool.set_one_shot(s.clone())?;
    }
    lap("evaluate", timings);

    let mut sur_cfg = cfg.surrogate.clone();
    sur_cfg.seed = derive_seed(master ^ cfg.surrogate.seed, &format!("surrogate-{l}"));
    let mut surrogate = SurrogateModel::new(&lab.spec, sur_cfg)?;
    let surrogate_losses = surrogate.fit(&st.pool, cfg.surrogate.epochs)?;
    surrogate.save(dir.join(format!("surrogate-{l}.bin")))?;
    lap("fit", timings);

    let mut ranked = st.pool.scored();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let seeds: Vec<Architecture> = ranked.iter().take(cfg.seed_archs).map(|r| r.0.clone()).collect();
    let mut rng = SeededRng::seed_from_u64(derive_seed(master, &format!("propose-{l}")));
    let proposals = surrogate.propose(&seeds, &st.pool, cfg.eta, cfg.ascent_steps, &mut rng)?;
    st.eval = proposals.iter().map(|p| p.arch.clone()).collect();
    for a in &st.eval {
        st.pool.try_insert(a.clone())?;
    }
    lap("propose", timings);

    let mut ground_truth = Vec::new();
    let mut ranking = None;
    if cfg.record_ground_truth {
        if let Some(cache) = cache {
            ground_truth = lab.ground_truth(cache, eval_pool.archs())?;
            for g in &ground_truth {
                st.pool.set_ground_truth(g.clone())?;
            }
            let mut os = Vec::new();
            let mut gt = Vec::new();
            for i in 0..st.pool.len() {
                if let (Some(o), Some(g)) = (st.pool.one_shot(i), st.pool.ground_truth(i)) {
                    os.push((o.arch.clone(), o.valid_accuracy));
                    gt.push((g.arch.clone(), g.valid_accuracy));
                }
            }
            ranking = pairwise_accuracy_of(&os, &gt).ok();
            lap("ground_truth", timings);
        }
    }
    info!(
        "iteration {l}: trained {} steps, best one-shot {:.4}, {} proposals",
        cfg.steps_per_iteration,
        ranked.first().map(|r| r.1).unwrap_or(f64::NAN),
        proposals.len()
    );

    Ok(IterationRecord {
        iteration: l,
        evaluated,
        phase_steps,
        expected_steps: expected_steps(&eval_pool, cfg.steps_per_iteration as f64),
        mean_train_loss,
        surrogate_losses,
        seeds,
        proposals,
        pool: st.pool.archs().to_vec(),
        ground_truth,
        ranking,
    })
}

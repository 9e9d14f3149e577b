use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bnao::driver::lab::{median_accuracy, DEFAULT_BUDGETS, SIMILAR_TOLERANCE};
use bnao::driver::report::{report, Format, ReportInput};
use bnao::driver::search::{resume_search, run_search, timings_tsv, ExperimentRecord};
use bnao::driver::{run_budget_sweep, run_diversity_experiment, run_policy_experiment, Lab, SearchConfig, SweepRow};
use bnao::error::{Error, Result};
use bnao::metrics::median;
use bnao::sampler::SamplingKind;
use bnao::standalone::OracleCache;

const DEFAULT_CACHE: &str = ".bnao/oracle_cache.jsonl";

#[derive(Parser)]
#[command(name = "bnao", version, about = "Balanced one-shot architecture search on a synthetic task")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the search loop and write record.json to the output directory.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Overrides master_seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Pairwise accuracy against ground truth across training budgets.
    SweepBudget {
        #[command(flatten)]
        common: SweepArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BUDGETS.to_vec())]
        budgets: Vec<f64>,
        #[arg(long, value_enum, default_value = "uniform")]
        policy: Policy,
    },
    /// Diverse-size pool against a pool of similar sizes.
    SweepDiversity {
        #[command(flatten)]
        common: SweepArgs,
        #[arg(long, default_value_t = 5.0)]
        budget: f64,
        #[arg(long, default_value_t = SIMILAR_TOLERANCE)]
        tolerance: f64,
    },
    /// Uniform against size-proportional sampling on paired seeds.
    SweepPolicy {
        #[command(flatten)]
        common: SweepArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BUDGETS.to_vec())]
        budgets: Vec<f64>,
    },
    /// Train the winner of a search record stand-alone.
    RetrainWinner {
        #[arg(long)]
        record: PathBuf,
        /// Also score the initial random pool for comparison.
        #[arg(long)]
        with_pool: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a record or a sweep table as CSV or JSON.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    /// Task and training settings; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pool_size: usize,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Policy {
    Uniform,
    Proportional,
}

impl From<Policy> for SamplingKind {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Uniform => SamplingKind::Uniform,
            Policy::Proportional => SamplingKind::Proportional,
        }
    }
}

fn open_cache() -> Result<OracleCache> {
    let path = std::env::var_os("BNAO_CACHE").map(PathBuf::from).unwrap_or_else(|| DEFAULT_CACHE.into());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    OracleCache::open(path)
}

fn load_config(path: Option<&Path>) -> Result<SearchConfig> {
    match path {
        Some(p) => SearchConfig::from_file(p),
        None => Ok(SearchConfig::default()),
    }
}

fn lab_of(cfg: &SearchConfig, workers: usize) -> Result<Lab> {
    Lab::new(
        cfg.task.clone(),
        cfg.num_nodes,
        cfg.supernet.clone(),
        cfg.standalone.clone(),
        cfg.ground_truth_seed,
        workers,
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_table(out: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let input = ReportInput::Table(rows.to_vec());
    write_json(&out.join("table.json"), &input)?;
    report(&input, Format::Csv, out)?;
    Ok(())
}

fn sweep(common: &SweepArgs, run: impl FnOnce(&Lab, &mut OracleCache) -> Result<Vec<SweepRow>>) -> Result<Vec<SweepRow>> {
    let cfg = load_config(common.config.as_deref())?;
    let lab = lab_of(&cfg, common.workers)?;
    let mut cache = open_cache()?;
    let rows = run(&lab, &mut cache)?;
    write_table(&common.out, &rows)?;
    Ok(rows)
}

#[derive(Serialize)]
struct WinnerReport {
    config_hash: String,
    tokens: Vec<usize>,
    best_one_shot: f64,
    ground_truth: f64,
    initial_pool_median_ground_truth: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Search {
            config,
            seed,
            out,
            workers,
            resume,
        } => {
            let mut cfg = SearchConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            std::fs::create_dir_all(&out)?;
            let ckpt = out.join("checkpoint");
            let mut cache = if cfg.record_ground_truth { Some(open_cache()?) } else { None };
            let outcome = if resume {
                resume_search(&ckpt, cache.as_mut(), workers)?
            } else {
                run_search(&cfg, &ckpt, cache.as_mut(), workers)?
            };
            write_json(&out.join("record.json"), &outcome.record)?;
            std::fs::write(out.join("timings.tsv"), timings_tsv(&outcome.timings))?;
            println!(
                "best {:?} one-shot {:.4}",
                outcome.best.tokens(),
                outcome.record.best_one_shot
            );
        }
        Cmd::SweepBudget { common, budgets, policy } => {
            let rows = sweep(&common, |lab, cache| {
                run_budget_sweep(lab, cache, &common.seeds, common.pool_size, &budgets, policy.into())
            })?;
            for b in &budgets {
                println!("budget {b}: median {:.4}", median_accuracy(&rows, |r| r.budget_epochs == *b));
            }
        }
        Cmd::SweepDiversity {
            common,
            budget,
            tolerance,
        } => {
            let rows = sweep(&common, |lab, cache| {
                run_diversity_experiment(lab, cache, &common.seeds, common.pool_size, budget, tolerance)
            })?;
            for pool in ["diverse", "similar"] {
                println!("{pool}: median {:.4}", median_accuracy(&rows, |r| r.pool == pool));
            }
        }
        Cmd::SweepPolicy { common, budgets } => {
            let rows = sweep(&common, |lab, cache| {
                run_policy_experiment(lab, cache, &common.seeds, common.pool_size, &budgets)
            })?;
            for b in &budgets {
                let u = median_accuracy(&rows, |r| r.budget_epochs == *b && r.policy == SamplingKind::Uniform);
                let p = median_accuracy(&rows, |r| r.budget_epochs == *b && r.policy == SamplingKind::Proportional);
                println!("budget {b}: uniform {u:.4} proportional {p:.4}");
            }
        }
        Cmd::RetrainWinner {
            record,
            with_pool,
            workers,
            out,
        } => {
            let rec: ExperimentRecord = serde_json::from_str(&std::fs::read_to_string(&record)?)?;
            let lab = lab_of(&rec.config, workers)?;
            let mut cache = open_cache()?;
            let gt = lab.ground_truth(&mut cache, std::slice::from_ref(&rec.best))?;
            let pool_median = if with_pool {
                let scores = lab.ground_truth(&mut cache, &rec.initial_pool)?;
                Some(median(&scores.iter().map(|g| g.valid_accuracy).collect::<Vec<_>>()))
            } else {
                None
            };
            let rep = WinnerReport {
                config_hash: rec.config_hash.clone(),
                tokens: rec.best.tokens().to_vec(),
                best_one_shot: rec.best_one_shot,
                ground_truth: gt[0].valid_accuracy,
                initial_pool_median_ground_truth: pool_median,
            };
            match out {
                Some(p) => write_json(&p, &rep)?,
                None => println!("{}", serde_json::to_string_pretty(&rep)?),
            }
        }
        Cmd::Report { input, format, out } => {
            let inp = ReportInput::load(&input)?;
            for p in report(&inp, format, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

//! Acceptance run: every criterion prints one PASS/FAIL line and the binary
//! exits nonzero if any of them fails.
//!
//! Ground-truth scores are cached under the cargo target tmp dir, so a second
//! run only pays for supernet training. `BNAO_ACCEPTANCE_ONLY=3,5` restricts
//! the run to a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use bnao::archspace::{Architecture, SearchSpaceSpec};
use bnao::driver::lab::{
    derive_seed, evaluate_pool, median_accuracy, random_pool, train_phase, DEFAULT_BUDGETS, SIMILAR_TOLERANCE,
};
use bnao::driver::{run_budget_sweep, run_diversity_experiment, run_policy_experiment, run_search, Lab, SearchConfig};
use bnao::metrics::{median, pairwise_accuracy_of};
use bnao::naocore::{LatentCode, SurrogateConfig, SurrogateModel};
use bnao::network::{forward_plain, path_slots};
use bnao::sampler::{expected_steps, sample_proportional_index, CandidatePool, SamplingKind};
use bnao::standalone::{OracleCache, StandaloneConfig, StandaloneModel};
use bnao::supernet::{BatchStream, Supernet, TrainHyper};
use bnao::taskgen::{Split, TaskConfig};
use bnao::SeededRng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const POOL: usize = 50;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

fn default_lab() -> Lab {
    Lab::new(
        TaskConfig::default(),
        4,
        TrainHyper::default(),
        StandaloneConfig::default(),
        0,
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    )
    .unwrap()
}

fn cache_path() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bnao-acceptance-oracle.jsonl")
}

/// Parameter count of an architecture, recomputed from the token layout:
/// stem 16x16+16, head 16x4+4, linear ops 16x16+16, bottleneck 16->8->16.
fn size_by_hand(a: &Architecture) -> f64 {
    let per_op = [0.0, 0.0, 272.0, 272.0, 280.0];
    340.0 + a.tokens().iter().skip(1).step_by(2).map(|&op| per_op[op]).sum::<f64>()
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn c1_sampler() -> Outcome {
    let lab = default_lab();
    let pool = lab.initial_pool(0, POOL)?;
    let total: f64 = pool.archs().iter().map(size_by_hand).sum();
    let p: Vec<f64> = pool.archs().iter().map(|a| size_by_hand(a) / total).collect();

    let draws = 1_000_000usize;
    let mut rng = SeededRng::seed_from_u64(11);
    let mut counts = vec![0u64; pool.len()];
    for _ in 0..draws {
        counts[sample_proportional_index(&pool, &mut rng)?] += 1;
    }
    let l1: f64 = counts.iter().zip(&p).map(|(&c, &q)| (c as f64 / draws as f64 - q).abs()).sum();

    let t = 4000.0;
    let exp = expected_steps(&pool, t);
    let sum_err = (exp.iter().map(|e| e.1).sum::<f64>() - t).abs();
    let exp_ok = exp.iter().zip(&p).all(|(e, &q)| (e.1 - q * t).abs() <= 1e-9 * t);

    // Same pool and seeds as the first training phase of search seed 0.
    let n = 10_000u64;
    let mut net = Supernet::new(lab.spec.clone(), lab.train_size(), lab.hyper.batch_size, derive_seed(0, "supernet"))?;
    let mut sampler = SeededRng::seed_from_u64(derive_seed(0, "sampler-1"));
    let mut batches = BatchStream::new(&lab.dataset, derive_seed(0, "batches-1"));
    train_phase(&mut net, &pool, SamplingKind::Proportional, n, &lab.dataset, &lab.hyper, &mut sampler, &mut batches)?;
    let mut worst = 0.0f64;
    let mut chi2 = 0.0;
    for (a, &q) in pool.archs().iter().zip(&p) {
        let z = (net.steps_of(a) as f64 - n as f64 * q) / (n as f64 * q * (1.0 - q)).sqrt();
        worst = worst.max(z.abs());
        chi2 += z * z;
    }
    Ok(verdict(
        l1 < 0.01 && sum_err <= 1e-9 * t && exp_ok && worst <= 3.0,
        format!("L1 {l1:.5} over 1e6 draws; expected-steps error {sum_err:.2e}; worst per-arch deviation {worst:.2} sigma after 1e4 steps (sum of z^2 {chi2:.1} over {} archs)", pool.len()),
    ))
}

fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += ((x[i] - x[j]) * (y[i] - y[j])).signum();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

fn c2_metric() -> Outcome {
    let spec = SearchSpaceSpec::with_defaults(16, 4);
    let mut rng = SeededRng::seed_from_u64(21);
    let archs = random_pool(&spec, 40, &mut rng)?.archs().to_vec();
    let distinct = |rng: &mut SeededRng, n: usize| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|i| i as f64 + rng.random::<f64>() * 0.5).collect();
        v.shuffle(rng);
        v
    };
    let zip = |s: &[f64]| -> Vec<(Architecture, f64)> { archs.iter().cloned().zip(s.iter().cloned()).collect() };

    let base = distinct(&mut rng, 40);
    let rev: Vec<f64> = base.iter().map(|v| -v).collect();
    let same = pairwise_accuracy_of(&zip(&base), &zip(&base))?.pairwise_accuracy;
    let reversed = pairwise_accuracy_of(&zip(&base), &zip(&rev))?.pairwise_accuracy;

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=40);
        let a = distinct(&mut rng, n);
        let b = distinct(&mut rng, n);
        let acc = pairwise_accuracy_of(&zip(&a)[..n], &zip(&b)[..n])?.pairwise_accuracy;
        worst = worst.max((acc - (kendall_tau(&a, &b) + 1.0) / 2.0).abs());
    }

    let trials = 2000;
    let mut mean = 0.0;
    for _ in 0..trials {
        let a = distinct(&mut rng, 20);
        let b = distinct(&mut rng, 20);
        mean += pairwise_accuracy_of(&zip(&a)[..20], &zip(&b)[..20])?.pairwise_accuracy / trials as f64;
    }
    Ok(verdict(
        same == 1.0 && reversed == 0.0 && worst <= 1e-12 && (mean - 0.5).abs() <= 0.02,
        format!("identical {same}, reversed {reversed}, max |acc - (tau+1)/2| {worst:.1e}, null mean {mean:.4}"),
    ))
}

fn c3_budget(cache: &mut OracleCache) -> Outcome {
    let lab = default_lab();
    let rows = run_budget_sweep(&lab, cache, &SEEDS, POOL, &DEFAULT_BUDGETS, SamplingKind::Uniform)?;
    let med: Vec<f64> = DEFAULT_BUDGETS
        .iter()
        .map(|&b| median_accuracy(&rows, |r| r.budget_epochs == b))
        .collect();
    let gain = med[med.len() - 1] - med[0];
    let monotone = med.windows(2).all(|w| w[1] >= w[0]);
    let trace: Vec<String> = DEFAULT_BUDGETS.iter().zip(&med).map(|(b, m)| format!("{b}:{}", pct(*m))).collect();
    Ok(verdict(
        gain >= 0.10 && monotone,
        format!("uniform medians {} (gain {} points, nondecreasing {monotone})", trace.join(" "), pct(gain)),
    ))
}

fn c4_diversity(cache: &mut OracleCache) -> Outcome {
    let lab = default_lab();
    let rows = run_diversity_experiment(&lab, cache, &SEEDS, POOL, 5.0, SIMILAR_TOLERANCE)?;
    let diverse = median_accuracy(&rows, |r| r.pool == "diverse");
    let similar = median_accuracy(&rows, |r| r.pool == "similar");
    Ok(verdict(
        similar - diverse >= 0.05,
        format!("similar {} vs diverse {} at 5 epochs (margin {} points)", pct(similar), pct(diverse), pct(similar - diverse)),
    ))
}

fn c5_policy(cache: &mut OracleCache) -> Outcome {
    let lab = default_lab();
    let rows = run_policy_experiment(&lab, cache, &SEEDS, POOL, &DEFAULT_BUDGETS)?;
    let mut deltas = Vec::new();
    for &b in &DEFAULT_BUDGETS {
        let u = median_accuracy(&rows, |r| r.budget_epochs == b && r.policy == SamplingKind::Uniform);
        let p = median_accuracy(&rows, |r| r.budget_epochs == b && r.policy == SamplingKind::Proportional);
        deltas.push((b, p - u));
    }
    let first = deltas[0].1;
    let worst = deltas.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let trace: Vec<String> = deltas.iter().map(|(b, d)| format!("{b}:{:+.1}", 100.0 * d)).collect();
    Ok(verdict(
        first >= 0.03 && worst >= -0.01,
        format!("proportional minus uniform by budget {}", trace.join(" ")),
    ))
}

fn c6_supernet() -> Outcome {
    let lab = default_lab();
    let mut rng = SeededRng::seed_from_u64(61);
    let pool = random_pool(&lab.spec, 20, &mut rng)?;
    let mut net = Supernet::new(lab.spec.clone(), lab.train_size(), 64, 62)?;
    let mut batches = BatchStream::new(&lab.dataset, 63);
    let mut sampler = SeededRng::seed_from_u64(64);
    train_phase(&mut net, &pool, SamplingKind::Uniform, 200, &lab.dataset, &lab.hyper, &mut sampler, &mut batches)?;

    let mut leaks = 0usize;
    let mut stale_stem = 0usize;
    for a in pool.archs() {
        let on: BTreeSet<String> = path_slots(&lab.spec, a).into_iter().map(|s| s.0).collect();
        let before = net.slot_hashes();
        let (x, y) = lab.dataset.batch(&batches.next_rows(64));
        net.train_step(a, x, &y, 0.05, 0.9)?;
        let after = net.slot_hashes();
        for (name, h) in &before {
            if after[name] != *h && !on.contains(name) {
                leaks += 1;
            }
        }
        if on.iter().filter(|n| n.starts_with("stem") || n.starts_with("head")).any(|n| after[n] == before[n]) {
            stale_stem += 1;
        }
    }

    let (vx, vy) = lab.dataset.split_data(Split::Valid);
    let mut max_diff = 0.0f64;
    let mut acc_mismatch = 0usize;
    for a in pool.archs() {
        let shared = forward_plain(net.store(), &lab.spec, a, &vx)?;
        let alone = StandaloneModel::from_supernet(&net, a)?;
        let own = alone.logits(vx.clone())?;
        for (u, v) in shared.data().iter().zip(own.data()) {
            max_diff = max_diff.max((u - v).abs());
        }
        if net.evaluate_on(a, &vx, &vy)?.valid_accuracy != alone.accuracy(&lab.dataset, Split::Valid)? {
            acc_mismatch += 1;
        }
    }
    Ok(verdict(
        leaks == 0 && stale_stem == 0 && max_diff <= 1e-9 && acc_mismatch == 0,
        format!("20 archs: {leaks} off-path slot changes, max logit gap after extraction {max_diff:.1e}, {acc_mismatch} accuracy mismatches"),
    ))
}

fn c7_surrogate() -> Outcome {
    let lab = default_lab();
    let mut rng = SeededRng::seed_from_u64(71);
    let pool = random_pool(&lab.spec, 256, &mut rng)?;
    let mut net = Supernet::new(lab.spec.clone(), lab.train_size(), 64, 72)?;
    let mut batches = BatchStream::new(&lab.dataset, 73);
    let mut sampler = SeededRng::seed_from_u64(74);
    train_phase(&mut net, &pool, SamplingKind::Uniform, lab.steps_for(5.0), &lab.dataset, &lab.hyper, &mut sampler, &mut batches)?;
    let mut scored = CandidatePool::from_archs(&lab.spec, pool.archs().iter().cloned())?;
    for s in evaluate_pool(&net, &pool, &lab.dataset)? {
        scored.set_one_shot(s)?;
    }
    let mut model = SurrogateModel::new(&lab.spec, SurrogateConfig::default())?;
    model.fit(&scored, SurrogateConfig::default().epochs)?;
    let recon = model.reconstruction_accuracy(pool.archs())?;

    let d = model.config().latent_dim;
    let code = |rng: &mut SeededRng| LatentCode((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut worst_rel = 0.0f64;
    let mut negligible = 0usize;
    let h = 1e-3;
    for _ in 0..20 {
        let e = code(&mut rng);
        let (_, g) = model.predict_with_grad(&e)?;
        for k in 0..d {
            let at = |t: f64| -> bnao::Result<f64> {
                let mut x = e.clone();
                x.0[k] += t;
                model.predict(&x)
            };
            // Five-point stencil: truncation error O(h^4).
            let fd = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
            let scale = fd.abs().max(g.0[k].abs());
            if scale <= 1e-9 {
                negligible += 1;
            } else {
                worst_rel = worst_rel.max((fd - g.0[k]).abs() / scale);
            }
        }
    }

    let mut decreases = 0usize;
    for _ in 0..1000 {
        let e = code(&mut rng);
        let p0 = model.predict(&e)?;
        let p1 = model.predict(&model.latent_ascent(&e, 0.1, 10)?)?;
        if p1 < p0 {
            decreases += 1;
        }
    }
    Ok(verdict(
        worst_rel <= 1e-4 && recon >= 0.95 && decreases == 0,
        format!("gradient max rel err {worst_rel:.1e} ({negligible} of {} components below 1e-9), reconstruction {} % on 256 archs, {decreases}/1000 ascents lowered the prediction", 20 * d, pct(recon)),
    ))
}

fn c8_search(cache: &mut OracleCache) -> Outcome {
    let lab = default_lab();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bnao-acceptance-search");
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = SearchConfig {
            master_seed: seed,
            ..SearchConfig::default()
        };
        let out = run_search(&cfg, &root.join(format!("seed{seed}")), None, lab.workers)?;
        let init = lab.ground_truth(cache, &out.record.initial_pool)?;
        let init_median = median(&init.iter().map(|g| g.valid_accuracy).collect::<Vec<_>>());
        let best = lab.ground_truth(cache, std::slice::from_ref(&out.best))?[0].valid_accuracy;
        if best >= init_median {
            wins += 1;
        }
        lines.push(format!("{}/{}", pct(best), pct(init_median)));
    }
    Ok(verdict(
        wins >= 4,
        format!("{wins}/5 seeds reach the pool median (winner/median: {})", lines.join(" ")),
    ))
}

fn bnao(args: &[&str], cache: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bnao"))
        .args(args)
        .env("BNAO_CACHE", cache)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("bnao {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let name = e.file_name().to_string_lossy().to_string();
        if name.ends_with(".csv") || name.ends_with(".json") {
            files.insert(name, std::fs::read(e.path()).unwrap());
        }
    }
    files
}

fn c9_determinism() -> Outcome {
    let work = tempfile::tempdir()?;
    let w = work.path();
    let cache = w.join("oracle.jsonl");
    let mut cfg = SearchConfig::default();
    cfg.iterations = 2;
    cfg.steps_per_iteration = 150;
    cfg.initial_pool_size = 12;
    cfg.seed_archs = 3;
    cfg.task.n = 1200;
    cfg.standalone.epochs = 3;
    cfg.surrogate.epochs = 20;
    cfg.record_ground_truth = true;
    let cfg_path = w.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?)?;
    let c = cfg_path.to_str().unwrap();

    let mut compared = 0usize;
    let mut differing = Vec::new();
    for run in ["a", "b"] {
        let d = |s: &str| w.join(run).join(s).to_string_lossy().to_string();
        bnao(&["search", "--config", c, "--seed", "3", "--out", &d("search")], &cache)?;
        let record = d("search/record.json");
        bnao(&["retrain-winner", "--record", &record, "--with-pool", "--out", &d("winner.json")], &cache)?;
        bnao(&["report", "--input", &record, "--format", "csv", "--out", &d("record-csv")], &cache)?;
        bnao(&["report", "--input", &record, "--format", "json", "--out", &d("record-json")], &cache)?;
        let sweep = ["--seeds", "0,1", "--pool-size", "10", "--config", c];
        let mut args = vec!["sweep-budget", "--budgets", "1,2", "--out"];
        let out = d("budget");
        args.push(&out);
        args.extend(sweep);
        bnao(&args, &cache)?;
        let out = d("diversity");
        let mut args = vec!["sweep-diversity", "--budget", "1", "--tolerance", "0.3", "--out", &out];
        args.extend(sweep);
        bnao(&args, &cache)?;
        let out = d("policy");
        let mut args = vec!["sweep-policy", "--budgets", "1,2", "--out", &out];
        args.extend(sweep);
        bnao(&args, &cache)?;
        let table = d("policy/table.json");
        bnao(&["report", "--input", &table, "--format", "csv", "--out", &d("table-csv")], &cache)?;
    }
    let a = w.join("a");
    let b = w.join("b");
    if std::fs::read(a.join("winner.json"))? != std::fs::read(b.join("winner.json"))? {
        differing.push("winner.json".to_string());
    }
    compared += 1;
    for sub in ["search", "record-csv", "record-json", "budget", "diversity", "policy", "table-csv"] {
        let (x, y) = (dir_bytes(&a.join(sub)), dir_bytes(&b.join(sub)));
        if x.is_empty() || x.keys().ne(y.keys()) {
            differing.push(format!("{sub}/ (file set)"));
        }
        for (name, bytes) in &x {
            compared += 1;
            if y.get(name) != Some(bytes) {
                differing.push(format!("{sub}/{name}"));
            }
        }
    }
    Ok(verdict(
        differing.is_empty(),
        format!("{compared} output files from six subcommands compared across two runs, differing: {differing:?}"),
    ))
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("BNAO_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut cache = OracleCache::open(cache_path()).expect("oracle cache");
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut(&mut OracleCache) -> Outcome| {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            return;
        }
        let t = Instant::now();
        let out = f(&mut cache);
        let secs = t.elapsed().as_secs_f64();
        print_line(id, name, &out, secs);
        results.push((id, name, out, secs));
    };
    run(1, "sampler exactness", &mut |_| c1_sampler());
    run(2, "metric exactness", &mut |_| c2_metric());
    run(3, "accuracy grows with budget", &mut c3_budget);
    run(4, "similar sizes rank better than diverse sizes", &mut c4_diversity);
    run(5, "proportional beats uniform sampling", &mut c5_policy);
    run(6, "weight-sharing isolation and extraction", &mut |_| c6_supernet());
    run(7, "surrogate gradient, reconstruction, ascent", &mut |_| c7_surrogate());
    run(8, "search beats the random-pool median", &mut c8_search);
    run(9, "CLI outputs are byte-identical across runs", &mut |_| c9_determinism());

    println!("\nacceptance summary");
    let mut failed = 0;
    for (id, name, out, secs) in &results {
        print_line(*id, name, out, *secs);
        if !matches!(out, Ok(v) if v.pass) {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn print_line(id: usize, name: &str, out: &Outcome, secs: f64) {
    match out {
        Ok(v) => println!(
            "criterion {id} {}: {name}: {} ({secs:.0}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        ),
        Err(e) => println!("criterion {id} FAIL: {name}: error: {e} ({secs:.0}s)"),
    }
}

//! CSV and JSON emission for search records and correlation tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archspace::Architecture;
use crate::driver::lab::{sweep_csv, SweepRow};
use crate::driver::search::ExperimentRecord;
use crate::error::{Error, Result};
use crate::metrics::{summarize, summary_csv, MetricRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Anything the report command knows how to render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportInput {
    Record(Box<ExperimentRecord>),
    Table(Vec<SweepRow>),
}

impl ReportInput {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("neither a search record nor a sweep table: {e}"),
        })
    }
}

fn tokens_str(a: &Architecture) -> String {
    a.tokens().iter().map(|t| t.to_string()).collect::<Vec<_>>().join("-")
}

/// One line per member of the final candidate set.
pub fn record_csv(rec: &ExperimentRecord) -> String {
    let mut added: BTreeMap<&Architecture, usize> = rec.initial_pool.iter().map(|a| (a, 0)).collect();
    let mut gt: BTreeMap<&Architecture, f64> = BTreeMap::new();
    for it in &rec.iterations {
        for p in &it.proposals {
            added.entry(&p.arch).or_insert(it.iteration);
        }
        for g in &it.ground_truth {
            gt.insert(&g.arch, g.valid_accuracy);
        }
    }
    let mut out = String::from("tokens,added_at_iteration,one_shot,scored_at_step,ground_truth,is_best\n");
    for s in &rec.final_scores {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{}\n",
            tokens_str(&s.arch),
            added.get(&s.arch).copied().unwrap_or(0),
            s.valid_accuracy,
            s.at_step,
            gt.get(&s.arch).map(|v| format!("{v:.6}")).unwrap_or_default(),
            s.arch == rec.best
        ));
    }
    out
}

fn table_summary(rows: &[SweepRow]) -> Result<String> {
    let recs: Vec<MetricRecord> = rows
        .iter()
        .map(|r| MetricRecord {
            group: Some(format!("{}/{}/{}/{}", r.experiment, r.pool, r.policy.name(), r.budget_epochs)),
            metric: "pairwise_accuracy".into(),
            value: r.report.pairwise_accuracy,
        })
        .collect();
    Ok(summary_csv(&summarize(&recs)?))
}

/// Writes the rendering of `input` into `out_dir` and returns the files
/// written. Output depends only on the input, so re-running is idempotent.
pub fn report(input: &ReportInput, format: Format, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match (input, format) {
        (ReportInput::Record(rec), Format::Csv) => {
            files.push((out_dir.join("record.csv"), record_csv(rec)));
        }
        (ReportInput::Table(rows), Format::Csv) => {
            files.push((out_dir.join("table.csv"), sweep_csv(rows)));
            files.push((out_dir.join("summary.csv"), table_summary(rows)?));
        }
        (_, Format::Json) => {
            files.push((out_dir.join("report.json"), serde_json::to_string_pretty(input)? + "\n"));
        }
    }
    for (p, body) in &files {
        std::fs::write(p, body).map_err(|e| Error::Context {
            context: format!("writing {}", p.display()),
            source: Box::new(e.into()),
        })?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}

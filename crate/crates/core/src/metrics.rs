//! Ranking agreement between two score systems, and report aggregation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::archspace::Architecture;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub arch: Architecture,
    pub one_shot: f64,
    pub ground_truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub pairwise_accuracy: f64,
    pub n_pairs: usize,
    pub n_ties_skipped: usize,
    pub table: Vec<ScoreRow>,
}

/// Fraction of architecture pairs ordered the same way by both maps.
///
/// Only architectures present in both maps count. A pair tied in either map
/// is excluded from the denominator and reported in `n_ties_skipped`.
pub fn pairwise_accuracy(
    one_shot: &BTreeMap<Architecture, f64>,
    ground_truth: &BTreeMap<Architecture, f64>,
) -> Result<RankingReport> {
    let table: Vec<ScoreRow> = one_shot
        .iter()
        .filter_map(|(a, &s)| {
            ground_truth.get(a).map(|&g| ScoreRow {
                arch: a.clone(),
                one_shot: s,
                ground_truth: g,
            })
        })
        .collect();
    if table.len() < 2 {
        return Err(Error::Metric(format!(
            "pairwise accuracy needs at least 2 architectures scored by both systems, got {}",
            table.len()
        )));
    }
    let (mut concordant, mut counted, mut ties) = (0usize, 0usize, 0usize);
    for i in 0..table.len() {
        for j in i + 1..table.len() {
            let (a, b) = (&table[i], &table[j]);
            let so = a.one_shot.partial_cmp(&b.one_shot);
            let sg = a.ground_truth.partial_cmp(&b.ground_truth);
            match (so, sg) {
                (Some(o), Some(g)) if o != Ordering::Equal && g != Ordering::Equal => {
                    counted += 1;
                    if o == g {
                        concordant += 1;
                    }
                }
                _ => ties += 1,
            }
        }
    }
    if counted == 0 {
        return Err(Error::Metric("every pair is tied; pairwise accuracy undefined".into()));
    }
    Ok(RankingReport {
        pairwise_accuracy: concordant as f64 / counted as f64,
        n_pairs: counted,
        n_ties_skipped: ties,
        table,
    })
}

/// Convenience over parallel slices.
pub fn pairwise_accuracy_of(one_shot: &[(Architecture, f64)], ground_truth: &[(Architecture, f64)]) -> Result<RankingReport> {
    let a: BTreeMap<_, _> = one_shot.iter().cloned().collect();
    let b: BTreeMap<_, _> = ground_truth.iter().cloned().collect();
    pairwise_accuracy(&a, &b)
}

/// One measured value, optionally tagged with a configuration key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub group: Option<String>,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates per `(group, metric)`; records without a group fall into `all`.
pub fn summarize(records: &[MetricRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::Metric("nothing to summarize".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        let g = r.group.clone().unwrap_or_else(|| "all".to_string());
        groups.entry((g, r.metric.clone())).or_default().push(r.value);
    }
    Ok(groups
        .into_iter()
        .map(|((group, metric), vals)| SummaryRow {
            group,
            metric,
            count: vals.len(),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            median: median(&vals),
            min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
            max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("group,metric,count,mean,median,min,max\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.group, r.metric, r.count, r.mean, r.median, r.min, r.max
        ));
    }
    out
}

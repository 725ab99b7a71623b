//! Aggregation of run records across seeds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::run::RunRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub round: usize,
    pub n_labeled: usize,
    pub nll_mean: f64,
    pub nll_min: f64,
    pub nll_max: f64,
    pub nll_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub benchmark: String,
    pub method: String,
    pub n_seeds: usize,
    pub n_labeled: usize,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub nll_min: f64,
    pub nll_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean,
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        std,
    })
}

/// Per-round statistics of the test NLL over records of one method.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<CurveRow>> {
    let first = records.first().ok_or(Error::Empty("run records"))?;
    let n_rounds = first.rounds.len();
    for r in records {
        if r.rounds.len() != n_rounds {
            return Err(Error::Config(format!(
                "mismatched round counts: {} vs {} (seed {})",
                r.rounds.len(),
                n_rounds,
                r.seed
            )));
        }
    }
    (0..n_rounds)
        .map(|i| {
            let vals: Vec<f64> = records.iter().map(|r| r.rounds[i].test_nll).collect();
            let s = summarize(&vals)?;
            Ok(CurveRow {
                round: first.rounds[i].round,
                n_labeled: first.rounds[i].n_labeled,
                nll_mean: s.mean,
                nll_min: s.min,
                nll_max: s.max,
                nll_std: s.std,
            })
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(rows: &[CurveRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Groups records by (benchmark, method) and writes every group's curve,
/// with the group in two trailing columns.
pub fn write_grouped_curves<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["round", "n_labeled", "nll_mean", "nll_min", "nll_max", "nll_std", "benchmark", "method"])?;
    for ((bench, method), group) in group_records(records) {
        for row in aggregate(&group)? {
            out.write_record([
                row.round.to_string(),
                row.n_labeled.to_string(),
                row.nll_mean.to_string(),
                row.nll_min.to_string(),
                row.nll_max.to_string(),
                row.nll_std.to_string(),
                bench.clone(),
                method.clone(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn group_records(records: &[RunRecord]) -> BTreeMap<(String, String), Vec<RunRecord>> {
    let mut groups: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.benchmark.clone(), r.method.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
}

/// Final-round row per method.
pub fn final_table(records: &[RunRecord]) -> Result<Vec<FinalRow>> {
    group_records(records)
        .into_iter()
        .map(|((benchmark, method), group)| {
            let curve = aggregate(&group)?;
            let last = curve.last().ok_or(Error::Empty("rounds"))?;
            Ok(FinalRow {
                benchmark,
                method,
                n_seeds: group.len(),
                n_labeled: last.n_labeled,
                nll_mean: last.nll_mean,
                nll_std: last.nll_std,
                nll_min: last.nll_min,
                nll_max: last.nll_max,
            })
        })
        .collect()
}

/// Reads every `run_*.json` in a directory, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("run_"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
        .collect()
}

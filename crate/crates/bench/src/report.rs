//! Per-task records and their aggregation into table rows.
//!
//! Rows are a pure function of the records: success counts every task, while
//! cost, iteration and time statistics run over successful solves only.
//! Standard deviations are population deviations (zero for one sample).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::BenchResult;

/// CSV columns, in order.
pub const CSV_COLUMNS: [&str; 10] = [
    "method",
    "success_pct",
    "time_mean",
    "time_std",
    "cost_mean",
    "cost_std",
    "iter_mean",
    "iter_std",
    "n_test",
    "seed",
];

/// One method on one test task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub method: String,
    pub success: bool,
    /// Path cost of the returned path, successful or not.
    pub cost: Option<f64>,
    pub iterations: usize,
    /// Solver seconds; machine-dependent.
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_violation: Option<f64>,
    /// Ensemble rows: the winning method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<String>,
    /// Metric rows: index of the chosen IK goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_goal: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub success_pct: f64,
    pub time: Option<Stat>,
    pub cost: Option<Stat>,
    pub iterations: Option<Stat>,
    pub n_test: usize,
    pub seed: u64,
}

/// Aggregates records into one row per method, in `order`.
pub fn aggregate(records: &[TaskRecord], order: &[String], seed: u64) -> Vec<ReportRow> {
    let mut by_method: BTreeMap<&str, Vec<&TaskRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    order
        .iter()
        .map(|m| {
            let recs = by_method.get(m.as_str()).cloned().unwrap_or_default();
            let ok: Vec<&&TaskRecord> = recs.iter().filter(|r| r.success).collect();
            let costs: Vec<f64> = ok.iter().filter_map(|r| r.cost).collect();
            let iters: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
            let times: Vec<f64> = ok.iter().map(|r| r.time).collect();
            ReportRow {
                method: m.clone(),
                success_pct: if recs.is_empty() {
                    0.0
                } else {
                    100.0 * ok.len() as f64 / recs.len() as f64
                },
                time: Stat::of(&times),
                cost: Stat::of(&costs),
                iterations: Stat::of(&iters),
                n_test: recs.len(),
                seed,
            }
        })
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Field values of one row in [`CSV_COLUMNS`] order.
pub fn row_fields(r: &ReportRow, wall_clock: bool) -> Vec<String> {
    let time = if wall_clock { r.time } else { None };
    vec![
        r.method.clone(),
        format!("{:.2}", r.success_pct),
        fmt(time.map(|s| s.mean)),
        fmt(time.map(|s| s.std)),
        fmt(r.cost.map(|s| s.mean)),
        fmt(r.cost.map(|s| s.std)),
        fmt(r.iterations.map(|s| s.mean)),
        fmt(r.iterations.map(|s| s.std)),
        r.n_test.to_string(),
        r.seed.to_string(),
    ]
}

/// Writes `report.csv`. Time columns stay empty unless `wall_clock`, which
/// keeps serial reports byte-identical across runs. `note` becomes a leading
/// `#` comment line.
pub fn write_csv(path: &FsPath, rows: &[ReportRow], wall_clock: bool, note: Option<&str>) -> BenchResult<()> {
    let mut file = BufWriter::new(File::create(path)?);
    if let Some(n) = note {
        writeln!(file, "# {n}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record(row_fields(r, wall_clock))?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &FsPath, items: &[T]) -> BenchResult<()> {
    let mut file = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut file, it)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &FsPath) -> BenchResult<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, success: bool, cost: f64, iterations: usize) -> TaskRecord {
        TaskRecord {
            task: 0,
            method: method.into(),
            success,
            cost: Some(cost),
            iterations,
            time: 0.5,
            termination: None,
            max_violation: None,
            winner: None,
            chosen_goal: None,
            error: None,
        }
    }

    #[test]
    fn failed_solves_only_count_towards_success() {
        let recs = vec![rec("a", true, 1.0, 10), rec("a", true, 3.0, 30), rec("a", false, 100.0, 500), rec("b", false, 2.0, 7)];
        let rows = aggregate(&recs, &["a".into(), "b".into()], 9);
        assert!((rows[0].success_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[0].cost, Some(Stat { mean: 2.0, std: 1.0 }));
        assert_eq!(rows[0].iterations, Some(Stat { mean: 20.0, std: 10.0 }));
        assert_eq!(rows[1].success_pct, 0.0);
        assert_eq!(rows[1].cost, None);
        assert_eq!(rows[1].n_test, 1);
    }

    #[test]
    fn csv_hides_time_without_wall_clock() {
        let dir = tempfile::tempdir().unwrap();
        let rows = aggregate(&[rec("a", true, 1.0, 10)], &["a".into()], 3);
        let p = dir.path().join("r.csv");
        write_csv(&p, &rows, false, None).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "method,success_pct,time_mean,time_std,cost_mean,cost_std,iter_mean,iter_std,n_test,seed\n\
             a,100.00,,,1.000000,0.000000,10.000000,0.000000,1,3\n"
        );
        write_csv(&p, &rows, true, Some("timing is machine-dependent")).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# timing"));
        assert!(text.contains("a,100.00,0.500000,0.000000,"));
    }
}

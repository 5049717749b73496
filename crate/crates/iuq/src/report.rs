//! Table aggregation and rendering (CSV plus aligned text).

use std::path::Path;

use anyhow::Context;
use iuq_core::stats::{aggregate, paired_t_test, SeedGroup, TTestResult};
use iuq_core::types::EvalReport;

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, headers: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.headers.join(","));
        out.push('\n');
        for row in &self.rows {
            let escaped: Vec<String> = row
                .iter()
                .map(|c| {
                    if c.contains(',') || c.contains('"') {
                        format!("\"{}\"", c.replace('"', "\"\""))
                    } else {
                        c.clone()
                    }
                })
                .collect();
            out.push_str(&escaped.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let fmt_row = |cells: &[String]| -> String {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.name));
        out.push_str(&fmt_row(&self.headers));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&fmt_row(row));
            out.push('\n');
        }
        out
    }

    /// Writes `<name>.csv` and `<name>.txt` under `dir/tables/`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let tdir = dir.join("tables");
        std::fs::create_dir_all(&tdir)?;
        std::fs::write(tdir.join(format!("{}.csv", self.name)), self.to_csv())
            .with_context(|| format!("writing table {}", self.name))?;
        std::fs::write(tdir.join(format!("{}.txt", self.name)), self.to_text())?;
        Ok(())
    }
}

pub fn fmt_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.prec$}", prec = digits),
        None => "---".to_string(),
    }
}

/// Mean and sample std of a metric across the given reports.
pub fn metric_stats(reports: &[&EvalReport], metric: impl Fn(&EvalReport) -> Option<f64>) -> Option<(f64, f64)> {
    let vals: Vec<f64> = reports.iter().filter_map(|r| metric(r)).collect();
    if vals.is_empty() {
        return None;
    }
    aggregate(&vals).ok()
}

/// Paired t-test over seeds between two conditions of one metric.
pub fn paired_over_seeds(
    metric_name: &str,
    cond_a: &str,
    cond_b: &str,
    pairs: Vec<(u64, f64, f64)>,
) -> (SeedGroup, Option<TTestResult>, Option<f64>) {
    let group = SeedGroup {
        metric_name: metric_name.to_string(),
        condition_a: cond_a.to_string(),
        condition_b: cond_b.to_string(),
        pairs,
    };
    match paired_t_test(&group) {
        Ok(t) => {
            let delta = t.mean_delta;
            (group, Some(t), Some(delta))
        }
        Err(iuq_core::Error::DegenerateDifferences { mean_delta }) => {
            (group, None, Some(mean_delta))
        }
        Err(_) => (group, None, None),
    }
}

/// Loads a finished experiment directory: its kind and all run reports.
pub fn load_experiment(
    out_dir: &Path,
) -> anyhow::Result<(crate::config::ExperimentKind, Vec<EvalReport>)> {
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("experiment.json"))?)?;
    let kind_name = snap["experiment"]
        .as_str()
        .ok_or_else(|| anyhow::anyhow!("experiment.json missing kind"))?;
    let kind: crate::config::ExperimentKind =
        serde_json::from_value(serde_json::Value::String(kind_name.to_string()))?;
    let results = out_dir.join("results");
    let mut entries: Vec<std::path::PathBuf> = std::fs::read_dir(&results)
        .map_err(|e| anyhow::anyhow!("no results under {}: {e}", results.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    entries.sort();
    let mut reports = Vec::new();
    for p in entries {
        reports.push(EvalReport::load_json(&p).map_err(|e| anyhow::anyhow!("{e}"))?);
    }
    Ok((kind, reports))
}

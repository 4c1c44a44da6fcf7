//! Aggregation of per-seed result rows into mean ± sd tables.

use std::path::Path;

use super::{ExperimentError, ResultRow};

/// Mean and sample standard deviation (`n − 1` denominator; 0 when `n = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    fn over(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.sd)
    }
}

/// One aggregated (config, dataset) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub dataset: String,
    pub runs: usize,
    pub accuracy: Stat,
    pub equalized_accuracy: Stat,
    pub equal_opportunity: Stat,
    pub equalized_odds: Stat,
}

/// Aggregated results, one row per (config label, dataset), in first-seen
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
}

/// Group rows by (label, dataset) and aggregate each metric.
pub fn results_table(rows: &[ResultRow]) -> Result<ResultsTable, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::EmptyRows);
    }
    let mut order: Vec<(String, String)> = Vec::new();
    for row in rows {
        let key = (row.label.clone(), row.dataset.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let table_rows = order
        .into_iter()
        .map(|(label, dataset)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.label == label && r.dataset == dataset)
                .collect();
            let metric = |f: fn(&ResultRow) -> f64| {
                Stat::over(&group.iter().map(|r| f(r)).collect::<Vec<f64>>())
            };
            TableRow {
                runs: group.len(),
                accuracy: metric(|r| r.metrics.accuracy),
                equalized_accuracy: metric(|r| r.metrics.equalized_accuracy),
                equal_opportunity: metric(|r| r.metrics.equal_opportunity),
                equalized_odds: metric(|r| r.metrics.equalized_odds),
                label,
                dataset,
            }
        })
        .collect();
    Ok(ResultsTable { rows: table_rows })
}

impl ResultsTable {
    /// Aligned, human-readable rendering.
    pub fn to_text(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(["config".len()])
            .max()
            .unwrap_or(6);
        let data_w = self
            .rows
            .iter()
            .map(|r| r.dataset.len())
            .chain(["dataset".len()])
            .max()
            .unwrap_or(7);
        let mut out = format!(
            "{:<label_w$}  {:<data_w$}  {:>2}  {:>13}  {:>13}  {:>13}  {:>13}\n",
            "config", "dataset", "n", "acc", "eacc", "eopp", "eodds"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<label_w$}  {:<data_w$}  {:>2}  {:>13}  {:>13}  {:>13}  {:>13}\n",
                r.label,
                r.dataset,
                r.runs,
                r.accuracy.to_string(),
                r.equalized_accuracy.to_string(),
                r.equal_opportunity.to_string(),
                r.equalized_odds.to_string(),
            ));
        }
        out
    }

    /// Machine-readable rendering: one CSV row per cell, means and sds as
    /// separate columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "config,dataset,runs,accuracy_mean,accuracy_sd,\
             equalized_accuracy_mean,equalized_accuracy_sd,\
             equal_opportunity_mean,equal_opportunity_sd,\
             equalized_odds_mean,equalized_odds_sd\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.dataset,
                r.runs,
                r.accuracy.mean,
                r.accuracy.sd,
                r.equalized_accuracy.mean,
                r.equalized_accuracy.sd,
                r.equal_opportunity.mean,
                r.equal_opportunity.sd,
                r.equalized_odds.mean,
                r.equalized_odds.sd,
            ));
        }
        out
    }
}

/// Write the CSV rendering to disk.
pub fn write_results_csv(path: &Path, table: &ResultsTable) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| ExperimentError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, table.to_csv())
        .map_err(|e| ExperimentError::io(path.display().to_string(), e))
}

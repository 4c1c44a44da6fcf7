//! Group confusion statistics and group-fairness metrics.
//!
//! Everything here is a pure function of hard binary predictions, binary
//! targets, and a binary protected-group label. The only stateful artifact
//! is the prediction log, a CSV file that decouples metric computation from
//! training.
//!
//! Metric definitions (all in `[0, 1]`):
//! - equal opportunity: `|TPR_g0 - TPR_g1|`
//! - equalized odds: `(|TPR_g0 - TPR_g1| + |TNR_g0 - TNR_g1|) / 2`
//! - equalized accuracy: `(TPR_g0 + TNR_g0 + TPR_g1 + TNR_g1) / 4`, the
//!   count-free accuracy a balanced test set would measure
//! - standard accuracy: `(TP + TN) / N` over both groups

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Errors from confusion construction and metric evaluation.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: predictions={predictions}, targets={targets}, groups={groups}")]
    LengthMismatch {
        predictions: usize,
        targets: usize,
        groups: usize,
    },
    #[error("non-binary value {value} in {field} at row {index}")]
    NonBinaryValue {
        field: &'static str,
        index: usize,
        value: u8,
    },
    #[error("{rate} undefined for group {group}: no samples with the required target")]
    UndefinedRate { rate: &'static str, group: u8 },
    #[error("corrupt prediction log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Confusion counts for a single protected group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn positives(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    pub fn negatives(&self) -> u64 {
        self.true_neg + self.false_pos
    }
}

/// Per-protected-group TP/FP/TN/FN counts; the sole input to every fairness
/// metric in this module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    /// Counts for samples with protected label 0.
    pub group0: ConfusionCounts,
    /// Counts for samples with protected label 1.
    pub group1: ConfusionCounts,
}

impl GroupConfusion {
    fn group(&self, g: u8) -> &ConfusionCounts {
        if g == 0 {
            &self.group0
        } else {
            &self.group1
        }
    }

    /// True positive rate of group `g`. Errors if the group has no
    /// positive-target samples: a rate on an empty denominator is
    /// meaningless and silently substituting 0 would poison every fairness
    /// number downstream.
    pub fn tpr(&self, g: u8) -> Result<f64, MetricError> {
        let c = self.group(g);
        if c.positives() == 0 {
            return Err(MetricError::UndefinedRate {
                rate: "TPR",
                group: g,
            });
        }
        Ok(c.true_pos as f64 / c.positives() as f64)
    }

    /// True negative rate of group `g`. Errors if the group has no
    /// negative-target samples.
    pub fn tnr(&self, g: u8) -> Result<f64, MetricError> {
        let c = self.group(g);
        if c.negatives() == 0 {
            return Err(MetricError::UndefinedRate {
                rate: "TNR",
                group: g,
            });
        }
        Ok(c.true_neg as f64 / c.negatives() as f64)
    }

    pub fn total(&self) -> u64 {
        self.group0.total() + self.group1.total()
    }
}

/// Tally exact per-group confusion counts.
///
/// All three slices must be the same nonzero length and contain only 0/1.
/// An empty evaluation is a caller bug and is reported as a length mismatch.
pub fn group_confusion(
    predictions: &[u8],
    targets: &[u8],
    groups: &[u8],
) -> Result<GroupConfusion, MetricError> {
    if predictions.is_empty() || predictions.len() != targets.len() || targets.len() != groups.len()
    {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
            groups: groups.len(),
        });
    }
    for (field, values) in [
        ("predictions", predictions),
        ("targets", targets),
        ("groups", groups),
    ] {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(MetricError::NonBinaryValue {
                field,
                index,
                value,
            });
        }
    }

    let mut cm = GroupConfusion::default();
    for i in 0..predictions.len() {
        let c = if groups[i] == 0 {
            &mut cm.group0
        } else {
            &mut cm.group1
        };
        match (targets[i], predictions[i]) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_neg += 1,
            (0, 0) => c.true_neg += 1,
            (0, 1) => c.false_pos += 1,
            _ => unreachable!("values validated above"),
        }
    }
    Ok(cm)
}

/// `|TPR_g0 - TPR_g1|`.
pub fn equal_opportunity(cm: &GroupConfusion) -> Result<f64, MetricError> {
    Ok((cm.tpr(0)? - cm.tpr(1)?).abs())
}

/// `(|TPR_g0 - TPR_g1| + |TNR_g0 - TNR_g1|) / 2`.
pub fn equalized_odds(cm: &GroupConfusion) -> Result<f64, MetricError> {
    let tpr_gap = (cm.tpr(0)? - cm.tpr(1)?).abs();
    let tnr_gap = (cm.tnr(0)? - cm.tnr(1)?).abs();
    Ok(0.5 * (tpr_gap + tnr_gap))
}

/// `(TPR_g0 + TNR_g0 + TPR_g1 + TNR_g1) / 4`.
///
/// Rate-based and therefore invariant to how the evaluation set is skewed
/// across (target, group) cells; equals standard accuracy exactly on a
/// perfectly balanced set.
pub fn equalized_accuracy(cm: &GroupConfusion) -> Result<f64, MetricError> {
    Ok(0.25 * (cm.tpr(0)? + cm.tnr(0)? + cm.tpr(1)? + cm.tnr(1)?))
}

/// `(TP + TN) / N` over both groups.
pub fn standard_accuracy(cm: &GroupConfusion) -> f64 {
    let correct = cm.group0.true_pos + cm.group0.true_neg + cm.group1.true_pos + cm.group1.true_neg;
    correct as f64 / cm.total() as f64
}

/// The four headline numbers for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub equalized_accuracy: f64,
    pub equal_opportunity: f64,
    pub equalized_odds: f64,
}

impl MetricReport {
    pub fn from_confusion(cm: &GroupConfusion) -> Result<Self, MetricError> {
        Ok(Self {
            accuracy: standard_accuracy(cm),
            equalized_accuracy: equalized_accuracy(cm)?,
            equal_opportunity: equal_opportunity(cm)?,
            equalized_odds: equalized_odds(cm)?,
        })
    }

    /// One aligned human-readable row; `header` gives the matching column line.
    pub fn table_row(&self) -> String {
        format!(
            "{:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            self.accuracy, self.equalized_accuracy, self.equal_opportunity, self.equalized_odds
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>8}",
            "acc", "eacc", "eopp", "eodds"
        )
    }
}

// ---------------------------------------------------------------------------
// Prediction log: CSV with columns (sample_id, prediction, target, protected)
// ---------------------------------------------------------------------------

/// One evaluated sample as persisted in a prediction log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub prediction: u8,
    pub target: u8,
    pub protected: u8,
}

pub const PREDICTION_LOG_HEADER: &str = "sample_id,prediction,target,protected";

/// Write records as a prediction log CSV.
pub fn write_prediction_log(path: &Path, records: &[PredictionRecord]) -> Result<(), MetricError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{PREDICTION_LOG_HEADER}")?;
    for r in records {
        writeln!(f, "{},{},{},{}", r.sample_id, r.prediction, r.target, r.protected)?;
    }
    Ok(())
}

/// Read a prediction log CSV, reporting the offending line on corruption.
pub fn read_prediction_log(path: &Path) -> Result<Vec<PredictionRecord>, MetricError> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != PREDICTION_LOG_HEADER {
                return Err(MetricError::CorruptLog {
                    line: lineno,
                    reason: format!("expected header `{PREDICTION_LOG_HEADER}`, got `{line}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(MetricError::CorruptLog {
                line: lineno,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_bit = |s: &str, what: &str| -> Result<u8, MetricError> {
            match s.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(MetricError::CorruptLog {
                    line: lineno,
                    reason: format!("{what} must be 0 or 1, got `{other}`"),
                }),
            }
        };
        records.push(PredictionRecord {
            sample_id: fields[0].to_string(),
            prediction: parse_bit(fields[1], "prediction")?,
            target: parse_bit(fields[2], "target")?,
            protected: parse_bit(fields[3], "protected")?,
        });
    }
    Ok(records)
}

/// Confusion counts straight from log records.
pub fn confusion_from_records(records: &[PredictionRecord]) -> Result<GroupConfusion, MetricError> {
    let predictions: Vec<u8> = records.iter().map(|r| r.prediction).collect();
    let targets: Vec<u8> = records.iter().map(|r| r.target).collect();
    let groups: Vec<u8> = records.iter().map(|r| r.protected).collect();
    group_confusion(&predictions, &targets, &groups)
}

/// A (target, group) cell of a synthetic evaluation: `count` samples of
/// which the first `round(count * correct_rate)` are classified correctly.
#[derive(Debug, Clone, Copy)]
pub struct CellRate {
    pub target: u8,
    pub group: u8,
    pub count: u64,
    pub correct_rate: f64,
}

/// Deterministically materialize prediction records from per-cell
/// correct-classification rates. Used to audit the metrics on classifiers
/// with known group-conditional behavior.
pub fn cell_rate_predictions(cells: &[CellRate], id_prefix: &str) -> Vec<PredictionRecord> {
    let mut records = Vec::new();
    for cell in cells {
        let correct = (cell.count as f64 * cell.correct_rate).round() as u64;
        for i in 0..cell.count {
            let right = i < correct;
            let prediction = if right { cell.target } else { 1 - cell.target };
            records.push(PredictionRecord {
                sample_id: format!("{id_prefix}-t{}g{}-{i}", cell.target, cell.group),
                prediction,
                target: cell.target,
                protected: cell.group,
            });
        }
    }
    records
}

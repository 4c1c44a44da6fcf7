//! JSONL training logs.
//!
//! One JSON object per line, written incrementally during training. Two runs
//! are "log-identical" when their record sequences compare equal, which the
//! digest summarizes as a single hex string.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::losses::LossReport;

/// One representation-phase optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// One downstream-phase optimization step. The adversary and transform
/// objectives exist only when the downstream input runs the learned
/// transform; otherwise they stay absent from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamStepRecord {
    pub epoch: usize,
    pub step: usize,
    pub task: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<f64>,
}

/// Validation-set summary after an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub epoch: usize,
    pub accuracy: f64,
    pub equalized_accuracy: f64,
    pub equal_opportunity: f64,
    pub equalized_odds: f64,
}

/// Incremental JSONL writer for any serializable record type.
pub struct JsonlLogger {
    writer: BufWriter<File>,
    path: PathBuf,
}

impl JsonlLogger {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self {
            writer: BufWriter::new(File::create(path)?),
            path: path.to_path_buf(),
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), TrainError> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Write a full record sequence as one JSONL file.
pub fn write_step_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), TrainError> {
    let mut logger = JsonlLogger::create(path)?;
    for r in records {
        logger.append(r)?;
    }
    Ok(())
}

/// Read a JSONL file back; corrupt lines are reported with their 1-based
/// line number.
pub fn read_step_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TrainError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| TrainError::CorruptLog {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Hex SHA-256 of a log file's bytes.
pub fn log_digest(path: &Path) -> Result<String, TrainError> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<StepRecord> {
        (0..3)
            .map(|i| StepRecord {
                epoch: 0,
                step: i,
                losses: LossReport {
                    recon: 1.5 + i as f64,
                    kl: Some(0.25),
                    tc: None,
                    disc: None,
                    cls_t: None,
                    cls_p: None,
                    adv_t: None,
                    adv_p: None,
                    sensitive: None,
                    total: 1.75 + i as f64,
                },
            })
            .collect()
    }

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/train.jsonl");
        let records = sample_records();
        write_step_records(&path, &records).unwrap();
        let back: Vec<StepRecord> = read_step_records(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn absent_loss_terms_stay_absent_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        write_step_records(&path, &sample_records()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"kl\""));
        assert!(!text.contains("\"tc\""));
        assert!(!text.contains("\"adv_t\""));
    }

    #[test]
    fn corrupt_line_is_pinpointed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        write_step_records(&path, &sample_records()).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"epoch\": \"broken\n");
        std::fs::write(&path, text).unwrap();
        match read_step_records::<StepRecord>(&path) {
            Err(TrainError::CorruptLog { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected CorruptLog, got {other:?}"),
        }
    }

    #[test]
    fn digest_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_step_records(&a, &sample_records()).unwrap();
        write_step_records(&b, &sample_records()).unwrap();
        assert_eq!(log_digest(&a).unwrap(), log_digest(&b).unwrap());
        write_step_records(&b, &sample_records()[..2]).unwrap();
        assert_ne!(log_digest(&a).unwrap(), log_digest(&b).unwrap());
    }
}

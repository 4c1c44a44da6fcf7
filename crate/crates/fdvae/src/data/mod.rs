//! Dataset ingestion and construction: skewed-train/balanced-eval split
//! composition, synthetic biased image generation, attribute-annotated image
//! directories, and batching.
//!
//! - [`compose_split`] — draw exact per-cell counts from a labeled record
//!   pool into disjoint train/validation/test sets.
//! - [`synthetic`] — renderable 64×64 fixtures with a controllable
//!   target/protected label correlation.
//! - [`disk`] — `images/` + `annotations.csv` directory loading.
//! - [`batch`] — seeded, epoch-keyed batch iteration.

mod batch;
mod disk;
mod synthetic;

pub use batch::{BatchStream, LabeledImageBatch};
pub use disk::load_attribute_dataset;
pub use synthetic::{
    generate_synthetic, label_agreement, render_pixels, RenderSpec, Shape, SyntheticSpec,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Errors from dataset loading, generation, and composition.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(
        "cell (target={target}, protected={protected}) needs {needed} records, only {available} available"
    )]
    InsufficientRecords {
        target: u8,
        protected: u8,
        needed: usize,
        available: usize,
    },
    #[error("duplicate record id `{id}`")]
    DuplicateId { id: String },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("unknown attribute `{attribute}`; annotation file provides: {available:?}")]
    UnknownAttribute {
        attribute: String,
        available: Vec<String>,
    },
    #[error("corrupt annotation {path}: line {line}: {reason}")]
    CorruptAnnotation {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("image file missing: {path}")]
    MissingImageFile { path: PathBuf },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("failed to decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

/// Where a record's pixels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordSource {
    /// An image file on disk, loaded and preprocessed on access.
    Disk { path: PathBuf },
    /// A synthetic image, re-rendered deterministically on access.
    Synthetic(RenderSpec),
}

/// One labeled sample. Labels are binary by construction; pixels are
/// materialized lazily via [`ImageDataset::pixels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub target: u8,
    pub protected: u8,
    pub source: RecordSource,
}

/// An immutable, ordered collection of labeled records.
#[derive(Debug, Clone, Default)]
pub struct ImageDataset {
    records: Vec<Record>,
}

impl ImageDataset {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &Record {
        &self.records[index]
    }

    /// CHW pixel data in `[-1, 1]`, length `3·64·64`.
    pub fn pixels(&self, index: usize) -> Result<Vec<f32>, DataError> {
        match &self.records[index].source {
            RecordSource::Disk { path } => disk::load_image_pixels(path),
            RecordSource::Synthetic(spec) => Ok(render_pixels(spec)),
        }
    }

    pub fn target_labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.target).collect()
    }

    pub fn protected_labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.protected).collect()
    }

    /// Count of records in the (target, protected) cell.
    pub fn cell_count(&self, target: u8, protected: u8) -> usize {
        self.records
            .iter()
            .filter(|r| r.target == target && r.protected == protected)
            .count()
    }
}

/// The three disjoint splits of one experiment.
#[derive(Debug, Clone, Default)]
pub struct SplitSet {
    pub train: ImageDataset,
    pub validation: ImageDataset,
    pub test: ImageDataset,
}

/// A target/protected attribute pairing over an annotated dataset, with
/// optional polarity flips (set `invert_*` when the raw 0 label should map
/// to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributePair {
    pub target: String,
    pub protected: String,
    #[serde(default)]
    pub invert_target: bool,
    #[serde(default)]
    pub invert_protected: bool,
}

impl AttributePair {
    pub fn new(target: impl Into<String>, protected: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            protected: protected.into(),
            invert_target: false,
            invert_protected: false,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.target == self.protected {
            return Err(DataError::InvalidSpec(format!(
                "target and protected attribute are both `{}`",
                self.target
            )));
        }
        if self.target.is_empty() || self.protected.is_empty() {
            return Err(DataError::InvalidSpec("attribute names must be non-empty".into()));
        }
        Ok(())
    }
}

/// Record counts per (target, protected) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellCounts {
    /// target = 1, protected = 1
    pub t1_p1: usize,
    /// target = 1, protected = 0
    pub t1_p0: usize,
    /// target = 0, protected = 1
    pub t0_p1: usize,
    /// target = 0, protected = 0
    pub t0_p0: usize,
}

impl CellCounts {
    pub fn uniform(count: usize) -> Self {
        Self {
            t1_p1: count,
            t1_p0: count,
            t0_p1: count,
            t0_p0: count,
        }
    }

    pub fn get(&self, target: u8, protected: u8) -> usize {
        match (target, protected) {
            (1, 1) => self.t1_p1,
            (1, 0) => self.t1_p0,
            (0, 1) => self.t0_p1,
            _ => self.t0_p0,
        }
    }

    pub fn total(&self) -> usize {
        self.t1_p1 + self.t1_p0 + self.t0_p1 + self.t0_p0
    }

    pub fn is_balanced(&self) -> bool {
        self.t1_p1 == self.t1_p0 && self.t1_p0 == self.t0_p1 && self.t0_p1 == self.t0_p0
    }
}

/// Exact per-cell counts for the three splits drawn by [`compose_split`].
///
/// The benchmark composition skews the train set 4:1 toward label agreement
/// while keeping both eval splits balanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub train: CellCounts,
    pub validation: CellCounts,
    pub test: CellCounts,
    pub seed: u64,
}

impl CompositionSpec {
    /// The 10k/2.4k/2.4k benchmark composition: skewed train cells
    /// (4,000 agreeing vs 1,000 disagreeing per target label) and 600
    /// records in every eval cell.
    pub fn skewed_benchmark(seed: u64) -> Self {
        Self {
            train: CellCounts {
                t1_p1: 4000,
                t1_p0: 1000,
                t0_p1: 1000,
                t0_p0: 4000,
            },
            validation: CellCounts::uniform(600),
            test: CellCounts::uniform(600),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !self.validation.is_balanced() {
            return Err(DataError::InvalidSpec(
                "validation cells must be balanced".into(),
            ));
        }
        if !self.test.is_balanced() {
            return Err(DataError::InvalidSpec("test cells must be balanced".into()));
        }
        Ok(())
    }
}

/// Draw disjoint train/validation/test sets with exact per-cell counts.
///
/// Within each (target, protected) cell the pool is ordered by a seeded
/// hash of the record id, so the result is deterministic and independent of
/// the input record order; the three splits take consecutive slices of that
/// order (train, then validation, then test).
pub fn compose_split(records: &[Record], spec: &CompositionSpec) -> Result<SplitSet, DataError> {
    spec.validate()?;

    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(DataError::DuplicateId { id: r.id.clone() });
        }
    }

    let mut cells: BTreeMap<(u8, u8), Vec<&Record>> = BTreeMap::new();
    for r in records {
        cells.entry((r.target, r.protected)).or_default().push(r);
    }

    let mut split = SplitSet::default();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for target in [1u8, 0u8] {
        for protected in [1u8, 0u8] {
            let needed = spec.train.get(target, protected)
                + spec.validation.get(target, protected)
                + spec.test.get(target, protected);
            let mut pool = cells.remove(&(target, protected)).unwrap_or_default();
            if pool.len() < needed {
                return Err(DataError::InsufficientRecords {
                    target,
                    protected,
                    needed,
                    available: pool.len(),
                });
            }
            pool.sort_by_cached_key(|r| (sample_key(spec.seed, &r.id), r.id.clone()));
            let mut it = pool.into_iter();
            train.extend(it.by_ref().take(spec.train.get(target, protected)).cloned());
            validation.extend(
                it.by_ref()
                    .take(spec.validation.get(target, protected))
                    .cloned(),
            );
            test.extend(it.by_ref().take(spec.test.get(target, protected)).cloned());
        }
    }
    split.train = ImageDataset::new(train);
    split.validation = ImageDataset::new(validation);
    split.test = ImageDataset::new(test);
    Ok(split)
}

/// Seeded ordering key: records sort by the hash of (seed, id), giving a
/// reproducible pseudo-random permutation that does not depend on input
/// order.
fn sample_key(seed: u64, id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"/");
    hasher.update(id.as_bytes());
    hasher.finalize().into()
}

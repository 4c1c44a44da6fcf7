//! The experiment configuration schema: parsing, dotted-path overrides,
//! validation, and canonical hashing.
//!
//! Configs are TOML files. Unknown keys anywhere are hard errors, so typos
//! never silently fall back to defaults. The canonical hash is computed
//! from the parsed (typed) config, making it independent of key order or
//! formatting in the source file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AttributePair, CompositionSpec, SyntheticSpec};
use crate::losses::LossWeights;

use super::variants::{DownstreamInput, Variant};
use super::ExperimentError;

/// Schema version this binary reads and writes.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Optimization schedule shared by both training phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    /// Representation-phase epochs.
    #[serde(default = "default_repr_epochs")]
    pub repr_epochs: usize,
    /// Downstream-phase epochs.
    #[serde(default = "default_downstream_epochs")]
    pub downstream_epochs: usize,
    /// Representation-phase learning rate.
    #[serde(default = "default_repr_lr")]
    pub repr_lr: f64,
    /// Downstream-phase learning rate.
    #[serde(default = "default_downstream_lr")]
    pub downstream_lr: f64,
    /// Minibatch size for both phases (≥ 2: shuffling fakes needs pairs).
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// First-moment decay coefficient.
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    /// Second-moment decay coefficient.
    #[serde(default = "default_beta2")]
    pub beta2: f64,
}

fn default_repr_epochs() -> usize {
    120
}
fn default_downstream_epochs() -> usize {
    30
}
fn default_repr_lr() -> f64 {
    1e-4
}
fn default_downstream_lr() -> f64 {
    1e-6
}
fn default_batch_size() -> usize {
    256
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            repr_epochs: default_repr_epochs(),
            downstream_epochs: default_downstream_epochs(),
            repr_lr: default_repr_lr(),
            downstream_lr: default_downstream_lr(),
            batch_size: default_batch_size(),
            optimizer: OptimizerKind::Adam,
            beta1: default_beta1(),
            beta2: default_beta2(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.repr_epochs == 0 || self.downstream_epochs == 0 {
            return Err(ExperimentError::InvalidValue(
                "schedule epochs must be ≥ 1".into(),
            ));
        }
        for (name, lr) in [
            ("repr_lr", self.repr_lr),
            ("downstream_lr", self.downstream_lr),
        ] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(ExperimentError::InvalidValue(format!(
                    "schedule.{name} must be finite and positive, got {lr}"
                )));
            }
        }
        if self.batch_size < 2 {
            return Err(ExperimentError::InvalidValue(format!(
                "schedule.batch_size must be ≥ 2 (subspace shuffling needs at least \
                 2 samples per batch), got {}",
                self.batch_size
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !b.is_finite() || !(0.0..1.0).contains(&b) {
                return Err(ExperimentError::InvalidValue(format!(
                    "schedule.{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

/// Ablation switches. The loss flags matter only for the `fdvae` variant;
/// downstream_input defaults per variant when omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    #[serde(default = "default_true")]
    pub use_cls: bool,
    #[serde(default = "default_true")]
    pub use_adv: bool,
    #[serde(default = "default_true")]
    pub use_mal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream_input: Option<DownstreamInput>,
}

fn default_true() -> bool {
    true
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_cls: true,
            use_adv: true,
            use_mal: true,
            downstream_input: None,
        }
    }
}

/// An on-disk attribute dataset: annotation root plus the attribute pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDatasetConfig {
    /// Directory holding `annotations.csv`, optional `partition.csv`, and
    /// `images/`.
    pub root: PathBuf,
    /// Target attribute column name.
    pub target: String,
    /// Protected attribute column name.
    pub protected: String,
    #[serde(default)]
    pub invert_target: bool,
    #[serde(default)]
    pub invert_protected: bool,
    /// Optional skew/balance recomposition applied after loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionSpec>,
}

impl AttributeDatasetConfig {
    pub fn pair(&self) -> AttributePair {
        AttributePair {
            target: self.target.clone(),
            protected: self.protected.clone(),
            invert_target: self.invert_target,
            invert_protected: self.invert_protected,
        }
    }
}

/// A borrowed view of whichever dataset section the config carries.
#[derive(Debug, Clone, Copy)]
pub enum DatasetRef<'a> {
    Synthetic(&'a SyntheticSpec),
    Attribute(&'a AttributeDatasetConfig),
}

/// One experiment: a variant, its ablation, weights, schedule, dataset, and
/// the seeds to repeat it over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Short human name; used in run-directory names, so restricted to
    /// `[A-Za-z0-9_-]`.
    pub name: String,
    pub variant: Variant,
    /// Seeds to run; one ResultRow per seed.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AttributeDatasetConfig>,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

impl ExperimentConfig {
    /// A ready-to-run synthetic-data template for `variant`, sized for a
    /// desk-scale smoke run. Callers override fields as needed.
    pub fn synthetic_template(variant: Variant) -> Self {
        let weights = match variant {
            Variant::Vae => LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                kl_beta: 1.0,
            },
            Variant::BetaVae => LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                kl_beta: 4.0,
            },
            Variant::FactorVae => LossWeights {
                beta: 0.0,
                gamma: 0.0,
                ..LossWeights::default()
            },
            Variant::FfvaeApprox => LossWeights {
                gamma: 0.0,
                ..LossWeights::default()
            },
            Variant::Fdvae => LossWeights::default(),
        };
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: variant.as_str().replace('_', "-"),
            variant,
            seeds: vec![1, 2, 3],
            weights,
            schedule: TrainSchedule {
                repr_epochs: 20,
                downstream_epochs: 10,
                repr_lr: 1e-3,
                downstream_lr: 1e-3,
                batch_size: 32,
                ..TrainSchedule::default()
            },
            ablation: AblationFlags {
                downstream_input: Some(variant.default_downstream_input()),
                ..AblationFlags::default()
            },
            synthetic: Some(SyntheticSpec {
                train: 1600,
                validation: 400,
                test: 400,
                rho: 0.8,
                seed: 7,
                noise: 0.15,
            }),
            attribute: None,
        }
    }

    /// Parse from TOML text, fill per-variant defaults, and validate.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ExperimentError> {
        let value: toml::Value = text.parse().map_err(|e: toml::de::Error| {
            ExperimentError::ConfigParse {
                path: origin.to_string(),
                reason: e.to_string(),
            }
        })?;
        let mut config = Self::deserialize(value).map_err(|e| ExperimentError::ConfigParse {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        config.resolve_defaults();
        config.validate()?;
        Ok(config)
    }

    /// Load a TOML config file, apply dotted-path overrides in order, and
    /// validate the result. Each override is checked individually so a bad
    /// key is reported by name.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::ConfigParse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let origin = path.display().to_string();
        let mut value: toml::Value =
            text.parse()
                .map_err(|e: toml::de::Error| ExperimentError::ConfigParse {
                    path: origin.clone(),
                    reason: e.to_string(),
                })?;
        // Surface file-level schema problems before blaming any override.
        Self::deserialize(value.clone()).map_err(|e| ExperimentError::ConfigParse {
            path: origin.clone(),
            reason: e.to_string(),
        })?;
        for spec in overrides {
            apply_override(&mut value, spec)?;
            Self::deserialize(value.clone()).map_err(|e| ExperimentError::InvalidOverride {
                key: spec.clone(),
                reason: e.to_string(),
            })?;
        }
        let mut config =
            Self::deserialize(value).map_err(|e| ExperimentError::ConfigParse {
                path: origin,
                reason: e.to_string(),
            })?;
        config.resolve_defaults();
        config.validate()?;
        Ok(config)
    }

    /// Fill fields whose defaults depend on other fields.
    fn resolve_defaults(&mut self) {
        if self.ablation.downstream_input.is_none() {
            self.ablation.downstream_input = Some(self.variant.default_downstream_input());
        }
    }

    /// The resolved downstream input (never `None` after parsing).
    pub fn downstream_input(&self) -> DownstreamInput {
        self.ablation
            .downstream_input
            .unwrap_or_else(|| self.variant.default_downstream_input())
    }

    pub fn dataset(&self) -> Result<DatasetRef<'_>, ExperimentError> {
        match (&self.synthetic, &self.attribute) {
            (Some(s), None) => Ok(DatasetRef::Synthetic(s)),
            (None, Some(a)) => Ok(DatasetRef::Attribute(a)),
            (None, None) => Err(ExperimentError::InvalidValue(
                "config needs a [synthetic] or [attribute] dataset section".into(),
            )),
            (Some(_), Some(_)) => Err(ExperimentError::InvalidValue(
                "config must hold exactly one of [synthetic] and [attribute], not both".into(),
            )),
        }
    }

    /// Short dataset identifier for result rows.
    pub fn dataset_id(&self) -> String {
        match self.dataset() {
            Ok(DatasetRef::Synthetic(s)) => format!("synthetic-rho{}", s.rho),
            Ok(DatasetRef::Attribute(a)) => format!("{}-vs-{}", a.target, a.protected),
            Err(_) => "invalid".into(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ExperimentError::SchemaVersion {
                found: self.schema_version,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(ExperimentError::InvalidValue(format!(
                "name must be non-empty and limited to [A-Za-z0-9_-], got {:?}",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::InvalidValue("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ExperimentError::InvalidValue(
                "seeds must not contain duplicates".into(),
            ));
        }
        self.weights
            .validate()
            .map_err(|e| ExperimentError::InvalidValue(e.to_string()))?;
        self.schedule.validate()?;
        match self.dataset()? {
            DatasetRef::Synthetic(s) => s.validate()?,
            DatasetRef::Attribute(a) => {
                a.pair().validate()?;
                if let Some(comp) = &a.composition {
                    comp.validate()?;
                }
            }
        }
        self.validate_variant_consistency()
    }

    fn validate_variant_consistency(&self) -> Result<(), ExperimentError> {
        let input = self.downstream_input();
        let allowed = self.variant.allowed_downstream_inputs();
        if !allowed.contains(&input) {
            let names: Vec<&str> = allowed.iter().map(|i| i.as_str()).collect();
            return Err(ExperimentError::InconsistentConfig(format!(
                "downstream_input {input} is not valid for variant {}; allowed: {}",
                self.variant,
                names.join(", ")
            )));
        }
        if self.variant == Variant::Fdvae {
            let wants_mal = input != DownstreamInput::ZtOnly;
            if self.ablation.use_mal != wants_mal {
                return Err(ExperimentError::InconsistentConfig(format!(
                    "use_mal={} contradicts downstream_input {input} (the mutual block is {} downstream)",
                    self.ablation.use_mal,
                    if wants_mal { "required" } else { "unused" }
                )));
            }
        }
        if matches!(self.variant, Variant::Vae | Variant::FactorVae)
            && self.weights.kl_beta != 1.0
        {
            return Err(ExperimentError::InconsistentConfig(format!(
                "variant {} keeps the KL term at weight 1; kl_beta={} belongs to beta_vae",
                self.variant, self.weights.kl_beta
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical (typed, re-serialized) config. Stable
    /// across field reordering and formatting in the source file.
    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    /// First 10 hex chars of the canonical hash — enough for directory names.
    pub fn short_hash(&self) -> String {
        self.canonical_hash()[..10].to_string()
    }

    /// `<name>-<hash>`: a human-readable run-family identifier that is
    /// unique per distinct configuration.
    pub fn label(&self) -> String {
        format!("{}-{}", self.name, self.short_hash())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml_string())
    }
}

/// Apply one `dotted.path=value` override to a parsed TOML tree. Values are
/// parsed as TOML (so `true`, `3`, `0.5`, `[1, 2]`, and `"text"` all work);
/// anything unparsable is taken as a bare string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ExperimentError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ExperimentError::InvalidOverride {
        key: spec.to_string(),
        reason: "expected key=value".into(),
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ExperimentError::InvalidOverride {
            key: spec.to_string(),
            reason: "empty key".into(),
        });
    }
    let value = parse_toml_value(raw.trim());
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            return Err(ExperimentError::InvalidOverride {
                key: key.to_string(),
                reason: "empty path segment".into(),
            });
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| ExperimentError::InvalidOverride {
                key: key.to_string(),
                reason: format!(
                    "path segment {:?} traverses a non-table value",
                    segments[..i].join(".")
                ),
            })?;
        if i + 1 == segments.len() {
            table.insert(segment.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last segment");
}

fn parse_toml_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("parsed document has key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

//! Run configuration: one TOML file, versioned by `schema_version`.
//!
//! ```toml
//! schema_version = 1
//! label = "two_moons"
//!
//! [dataset]
//! kind = "two_moons"      # or "blobs", "csv", "binary"
//! rotation_deg = 45.0
//!
//! [stream]
//! query_size = 64
//!
//! [hyper]
//! mode = "crodobo"
//! tau = 0.95
//!
//! [seeds]
//! stream = 0
//! ```
//!
//! Every block and key is optional except `schema_version`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::{AugmentPolicy, WeakAugment};
use crate::data::{BlobParams, TwoMoonsParams};
use crate::engine::{HyperParams, Policies};
use crate::nn::NetworkSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{}", Located(.line, .field, .message))]
    Invalid {
        field: String,
        line: Option<usize>,
        message: String,
    },
    #[error("unsupported schema_version {found} (this build reads {SCHEMA_VERSION})")]
    Schema { found: u32 },
}

struct Located<'a>(&'a Option<usize>, &'a String, &'a String);

impl fmt::Display for Located<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(line) => write!(f, "line {line}: {}: {}", self.1, self.2),
            None => write!(f, "{}: {}", self.1, self.2),
        }
    }
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    TwoMoons(TwoMoonsParams),
    Blobs(BlobParams),
    /// Two CSV files. `label_column` is a header name or a 0-based index.
    Csv {
        source: PathBuf,
        target: PathBuf,
        label_column: String,
        #[serde(default)]
        num_classes: Option<usize>,
    },
    /// Two raw matrix files; the label is stored as a column.
    Binary {
        source: PathBuf,
        target: PathBuf,
        label_column: usize,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::TwoMoons(TwoMoonsParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    #[serde(default = "default_query_size")]
    pub query_size: usize,
}

fn default_query_size() -> usize {
    64
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            query_size: default_query_size(),
        }
    }
}

/// Layer widths and batch-norm constants. Input width and class count come
/// from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_bn_eps")]
    pub batch_norm_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub batch_norm_momentum: f64,
    /// Give learner `k` the init seed `init + k` instead of a shared start.
    #[serde(default)]
    pub distinct_init: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 256]
}
fn default_bn_eps() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
            batch_norm_eps: default_bn_eps(),
            batch_norm_momentum: default_bn_momentum(),
            distinct_init: false,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes,
            batch_norm_eps: self.batch_norm_eps,
            batch_norm_momentum: self.batch_norm_momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Synthetic data generation.
    #[serde(default)]
    pub data: u64,
    #[serde(default = "s1")]
    pub init: u64,
    /// Target stream permutation.
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "s3")]
    pub bootstrap: u64,
    #[serde(default = "s2")]
    pub augment: u64,
}

fn s1() -> u64 {
    1
}
fn s2() -> u64 {
    2
}
fn s3() -> u64 {
    3
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            init: 1,
            stream: 0,
            bootstrap: 3,
            augment: 2,
        }
    }
}

/// Settings used only by the ablation battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    /// Source-only steps before the continual row starts on the stream.
    #[serde(default = "default_continual_warmup")]
    pub continual_warmup_steps: usize,
}

fn default_continual_warmup() -> usize {
    32
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            continual_warmup_steps: default_continual_warmup(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub augment: Policies,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_label() -> String {
    "run".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            label: default_label(),
            dataset: DatasetConfig::default(),
            stream: StreamConfig::default(),
            model: ModelConfig::default(),
            hyper: HyperParams::default(),
            augment: Policies {
                weak: WeakAugment::default(),
                strong: AugmentPolicy::default(),
            },
            seeds: Seeds::default(),
            ablate: AblateConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// 1-based line of `key` inside `[table]` (top level when `table` is empty).
fn find_key_line(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    /// Parses TOML text. Paths inside the dataset block are kept as written.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check(Some(text))?;
        Ok(cfg)
    }

    /// Reads a config file. A `.json` file is taken to be a run manifest and
    /// its embedded config is used. Relative dataset paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            let inner = value.get("config").cloned().unwrap_or(value);
            let cfg: RunConfig = serde_json::from_value(inner).map_err(|e| ConfigError::Parse(e.to_string()))?;
            cfg.check(None)?;
            cfg
        } else {
            Self::from_toml(&text)?
        };
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Csv { source, target, .. } | DatasetConfig::Binary { source, target, .. } => {
                fix(source);
                fix(target);
            }
            _ => {}
        }
    }

    fn check(&self, text: Option<&str>) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema {
                found: self.schema_version,
            });
        }
        self.validate().map_err(|(table, key, message)| ConfigError::Invalid {
            field: if table.is_empty() {
                key.to_string()
            } else {
                format!("{table}.{key}")
            },
            line: text.and_then(|t| find_key_line(t, table, key)),
            message,
        })
    }

    /// Returns `(table, key, message)` for the first invalid value.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        if let Err((key, m)) = self.hyper.validate() {
            return Err(("hyper", key, m));
        }
        if self.stream.query_size < 2 {
            return Err((
                "stream",
                "query_size",
                format!("query_size must be >= 2, got {}", self.stream.query_size),
            ));
        }
        if self.model.hidden_dims.contains(&0) {
            return Err(("model", "hidden_dims", "hidden layer widths must be >= 1".into()));
        }
        if !(self.model.batch_norm_eps > 0.0) {
            return Err(("model", "batch_norm_eps", "batch_norm_eps must be > 0".into()));
        }
        if !(self.model.batch_norm_momentum > 0.0 && self.model.batch_norm_momentum < 1.0) {
            return Err((
                "model",
                "batch_norm_momentum",
                format!(
                    "batch_norm_momentum = {} is outside the valid range (0, 1)",
                    self.model.batch_norm_momentum
                ),
            ));
        }
        if let Err(m) = self.augment.strong.validate() {
            return Err(("augment.strong", "ops", m));
        }
        match &self.dataset {
            DatasetConfig::TwoMoons(p) => {
                if p.n_source < 2 || p.n_target < 2 {
                    return Err(("dataset", "n_source", "two_moons needs n_source, n_target >= 2".into()));
                }
                if !(p.noise_sd >= 0.0) {
                    return Err(("dataset", "noise_sd", format!("noise_sd must be >= 0, got {}", p.noise_sd)));
                }
            }
            DatasetConfig::Blobs(p) => {
                if p.num_classes < 2 {
                    return Err(("dataset", "num_classes", "blobs need num_classes >= 2".into()));
                }
                if p.class_imbalance.iter().any(|&w| !(w > 0.0)) {
                    return Err(("dataset", "class_imbalance", "class weights must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Hash of everything that shapes a run except the stream seed, label and
    /// output directory. Runs that differ only in stream order share it.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.seeds.stream = 0;
        c.label.clear();
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.hyper.tau, 0.95);
        assert_eq!(cfg.hyper.lambda, 0.4);
        assert_eq!(cfg.stream.query_size, 64);
    }

    #[test]
    fn bad_tau_names_field_range_and_line() {
        let text = "schema_version = 1\n\n[hyper]\nmode = \"crodobo\"\ntau = 1.5\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.line(), Some(5));
        let msg = err.to_string();
        assert!(
            msg.contains("hyper.tau") && msg.contains("(0, 1]") && msg.starts_with("line 5"),
            "{msg}"
        );
    }

    #[test]
    fn parse_errors_carry_a_line() {
        let err = RunConfig::from_toml("schema_version = 1\n[hyper]\ntau = \"high\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = RunConfig::from_toml("schema_version = 1\n[hyper]\ntua = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("tua"), "{err}");
    }

    #[test]
    fn schema_version_is_required_and_checked() {
        assert!(RunConfig::from_toml("[hyper]\ntau = 0.5\n").is_err());
        assert!(matches!(
            RunConfig::from_toml("schema_version = 9\n"),
            Err(ConfigError::Schema { found: 9 })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.dataset = DatasetConfig::Blobs(BlobParams {
            num_classes: 4,
            n_per_class: 50,
            dim: 3,
            mean_shift: 1.0,
            cov_scale: 1.5,
            class_imbalance: vec![0.7, 0.1, 0.1, 0.1],
        });
        cfg.hyper.mode = crate::engine::RunMode::Single;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn fingerprint_ignores_only_stream_seed_and_label() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seeds.stream = 7;
        b.label = "other".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seeds.bootstrap = 7;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "schema_version = 1\n[dataset]\nkind = \"csv\"\nsource = \"s.csv\"\ntarget = \"/abs/t.csv\"\nlabel_column = \"label\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        match cfg.dataset {
            DatasetConfig::Csv { source, target, .. } => {
                assert_eq!(source, dir.path().join("s.csv"));
                assert_eq!(target, PathBuf::from("/abs/t.csv"));
            }
            other => panic!("{other:?}"),
        }
    }
}

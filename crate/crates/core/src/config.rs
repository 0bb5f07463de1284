//! Declarative experiment files (`.cfg`, TOML syntax).
//!
//! ```toml
//! [experiment]
//! name = "desk-general-s8"
//! scheme = "general"     # or "adjacent"
//! n = 8
//! m = 5
//! seed = 1
//! out_dir = "runs/desk-general-s8"
//!
//! [data]
//! train_size = 200000
//! val_size = 10000
//! test_size = 10000
//!
//! [model]
//! d_model = 128
//! n_heads = 4
//! n_layers = 2
//!
//! [train]
//! learning_rate = 3e-4
//! ```
//!
//! The only environment input is `SYMWORD_OUT_DIR`, which replaces
//! `experiment.out_dir` when set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{DataGenConfig, Split, WindowMode, DEFAULT_MIN_PART};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NormPlacement};
use crate::tokenizer::{SchemeKind, TokenScheme};
use crate::trainer::TrainConfig;

pub const OUT_DIR_ENV: &str = "SYMWORD_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub scheme: SchemeKind,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    #[serde(default = "default_min_part")]
    pub min_part: usize,
    #[serde(default)]
    pub windows: WindowMode,
}

fn default_min_part() -> usize {
    DEFAULT_MIN_PART
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub norm: NormPlacement,
    #[serde(default = "default_true")]
    pub final_norm: bool,
    #[serde(default = "default_eps")]
    pub ln_eps: f64,
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

impl ExperimentConfig {
    /// Parses a config file, applies `section.key=value` overrides and the
    /// output-directory environment override, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides, std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
    }

    pub fn parse(text: &str, overrides: &[String], out_dir: Option<PathBuf>) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ExperimentConfig = value.try_into()?;
        if let Some(dir) = out_dir {
            cfg.experiment.out_dir = dir;
        }
        cfg.train.seed = cfg.experiment.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scheme(&self) -> Result<TokenScheme> {
        TokenScheme::new(self.experiment.scheme, self.experiment.n)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(
            self.scheme()?,
            self.model.d_model,
            self.model.n_heads,
            self.model.n_layers,
        );
        cfg.norm = self.model.norm;
        cfg.final_norm = self.model.final_norm;
        cfg.ln_eps = self.model.ln_eps;
        Ok(cfg)
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.data.train_size,
            Split::Validation => self.data.val_size,
            Split::Test => self.data.test_size,
        }
    }

    pub fn data_config(&self, split: Split) -> Result<DataGenConfig> {
        let mut cfg = DataGenConfig::new(
            self.scheme()?,
            self.experiment.m,
            self.split_size(split),
            self.experiment.seed,
            split,
        );
        cfg.min_part = self.data.min_part;
        cfg.windows = self.data.windows;
        Ok(cfg)
    }

    pub fn dataset_path(&self, split: Split) -> PathBuf {
        let file = match split {
            Split::Train => "train.bin",
            Split::Validation => "val.bin",
            Split::Test => "test.bin",
        };
        self.experiment.out_dir.join(file)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        for split in [Split::Train, Split::Validation, Split::Test] {
            self.data_config(split)?.validate()?;
        }
        self.train.validate()
    }
}

/// Applies one `section.key=value` override. Values are read as TOML
/// scalars; anything that does not parse is taken as a string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut keys: Vec<&str> = path.trim().split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {spec:?}")))?;
    let mut node = root;
    for k in keys {
        node = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{path} does not name a table entry")))?
            .entry(k)
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("{path} does not name a table entry")))?
        .insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[experiment]
name = "t"
scheme = "adjacent"
n = 8
m = 6
seed = 4
out_dir = "runs/t"

[data]
train_size = 100
val_size = 10
test_size = 10

[model]
d_model = 32
n_heads = 4
n_layers = 1
norm = "pre"

[train]
learning_rate = 1e-3
"#;

    #[test]
    fn parses_and_derives() {
        let cfg = ExperimentConfig::parse(SAMPLE, &[], None).unwrap();
        assert_eq!(cfg.model_config().unwrap().context_len, 28 + 8 + 1);
        assert_eq!(cfg.train.seed, 4);
        assert_eq!(cfg.train.weight_decay, 0.05);
        assert_eq!(cfg.data.min_part, 3);
        assert_eq!(cfg.dataset_path(Split::Validation), Path::new("runs/t/val.bin"));
    }

    #[test]
    fn overrides_and_out_dir() {
        let cfg = ExperimentConfig::parse(
            SAMPLE,
            &["train.max_epochs=7".into(), "experiment.name=other".into(), "model.norm=post".into()],
            Some("/tmp/x".into()),
        )
        .unwrap();
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.experiment.name, "other");
        assert_eq!(cfg.model.norm, NormPlacement::Post);
        assert_eq!(cfg.experiment.out_dir, Path::new("/tmp/x"));
    }

    #[test]
    fn rejects_inconsistent_files() {
        assert!(ExperimentConfig::parse(SAMPLE, &["experiment.m=9".into()], None).is_err());
        assert!(ExperimentConfig::parse(SAMPLE, &["model.n_heads=5".into()], None).is_err());
        assert!(ExperimentConfig::parse(SAMPLE, &["model.bogus=1".into()], None).is_err());
        assert!(ExperimentConfig::parse(SAMPLE, &["nokey".into()], None).is_err());
    }
}

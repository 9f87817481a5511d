//! Experiment configuration: a flat TOML file merged with command-line
//! overrides, resolved against the protocol defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use csr_core::dataset::NoiseProfile;
use csr_core::selective::{coverage_grid, RejectorKind};
use csr_core::{Family, Hyperparams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const DEFAULT_SYNTH_ROWS: usize = 2000;

/// Where the rows of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        target: String,
    },
    /// A fresh synthetic draw per seed, seeded with the experiment seed.
    Synth {
        profile: NoiseProfile,
        n: usize,
    },
}

impl DataSource {
    /// Label used for the `dataset` column of every output.
    pub fn dataset_name(&self) -> String {
        match self {
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
            DataSource::Synth { profile, .. } => profile.to_string(),
        }
    }
}

/// Fully resolved and validated experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub fractions: [f64; 3],
    pub alpha: f64,
    pub family: Family,
    pub hyperparams: BTreeMap<String, String>,
    pub rejectors: Vec<RejectorKind>,
    pub k: usize,
    pub grid_step: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Protocol defaults for `source`, seed 0, writing into `out`.
    pub fn new(source: DataSource, out: impl Into<PathBuf>) -> Self {
        Self {
            source,
            fractions: DEFAULT_FRACTIONS,
            alpha: DEFAULT_ALPHA,
            family: Family::Linear,
            hyperparams: BTreeMap::new(),
            rejectors: vec![RejectorKind::Csr, RejectorKind::KnnVariance],
            k: DEFAULT_K,
            grid_step: DEFAULT_GRID_STEP,
            seeds: vec![0],
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|f| f.is_nan() || *f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "fractions must be positive and sum to 1, got {:?}",
                self.fractions
            )));
        }
        if self.k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        coverage_grid(self.grid_step)?;
        self.model_hyperparams()?;
        if self.rejectors.is_empty() {
            return Err(CliError::Config("at least one rejector is required".into()));
        }
        if has_duplicates(&self.rejectors) {
            return Err(CliError::Config("rejectors must not repeat".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if has_duplicates(&self.seeds) {
            return Err(CliError::Config("seeds must not repeat".into()));
        }
        if let DataSource::Synth { n, .. } = self.source {
            if n == 0 {
                return Err(CliError::Config("synth_n must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn model_hyperparams(&self) -> Result<Hyperparams> {
        Ok(Hyperparams::from_map(&self.hyperparams)?)
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        Ok(coverage_grid(self.grid_step)?)
    }
}

fn has_duplicates<T: Ord + Clone>(items: &[T]) -> bool {
    let mut sorted = items.to_vec();
    sorted.sort();
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// A value that may be written as a comma-separated string or as a list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ListOrString<T> {
    List(Vec<T>),
    Text(String),
}

/// Optional settings from one layer (file or flags). Later layers win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub synth: Option<String>,
    pub synth_n: Option<usize>,
    pub alpha: Option<f64>,
    pub model: Option<String>,
    pub rejectors: Option<ListOrString<String>>,
    pub k: Option<usize>,
    pub seeds: Option<ListOrString<u64>>,
    pub grid_step: Option<f64>,
    pub fractions: Option<[f64; 3]>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, toml::Value>,
}

impl ConfigLayer {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_owned()))
    }

    /// Overlays `other` on `self`; set fields of `other` take precedence and
    /// hyperparameter tables are merged key by key.
    pub fn merge(mut self, other: ConfigLayer) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            data, target, synth, synth_n, alpha, model, rejectors, k, seeds, grid_step, fractions,
            out
        );
        self.hyperparams.extend(other.hyperparams);
        self
    }

    pub fn resolve(self) -> Result<ExperimentConfig> {
        let source = match (self.data, self.synth) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage(
                    "--data and --synth are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Usage(
                    "one of --data or --synth is required".into(),
                ))
            }
            (Some(path), None) => {
                let target = self
                    .target
                    .ok_or_else(|| CliError::Usage("--target is required with --data".into()))?;
                DataSource::Csv { path, target }
            }
            (None, Some(profile)) => DataSource::Synth {
                profile: profile.parse().map_err(CliError::Config)?,
                n: self.synth_n.unwrap_or(DEFAULT_SYNTH_ROWS),
            },
        };
        let out = self
            .out
            .ok_or_else(|| CliError::Usage("--out is required".into()))?;
        let mut config = ExperimentConfig::new(source, out);
        if let Some(v) = self.fractions {
            config.fractions = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.model {
            config.family = v.parse().map_err(CliError::Config)?;
        }
        if let Some(v) = self.rejectors {
            config.rejectors = parse_rejectors(v)?;
        }
        if let Some(v) = self.k {
            config.k = v;
        }
        if let Some(v) = self.grid_step {
            config.grid_step = v;
        }
        if let Some(v) = self.seeds {
            config.seeds = match v {
                ListOrString::List(list) => list,
                ListOrString::Text(text) => parse_seeds(&text)?,
            };
        }
        config.hyperparams = self
            .hyperparams
            .into_iter()
            .map(|(k, v)| toml_scalar(&k, v).map(|s| (k, s)))
            .collect::<Result<_>>()?;
        config.validate()?;
        Ok(config)
    }
}

fn toml_scalar(key: &str, value: toml::Value) -> Result<String> {
    match value {
        toml::Value::String(s) => Ok(s),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(CliError::Config(format!(
            "hyperparameter `{key}` must be a scalar, got {}",
            other.type_str()
        ))),
    }
}

fn parse_rejectors(value: ListOrString<String>) -> Result<Vec<RejectorKind>> {
    let names: Vec<String> = match value {
        ListOrString::List(list) => list,
        ListOrString::Text(text) => text.split(',').map(str::to_owned).collect(),
    };
    names
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(CliError::Config))
        .collect()
}

/// Parses `3`, `0,4,7`, `0..5` (exclusive) or `0..=4` (inclusive).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Config(format!("invalid seed list `{text}`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..=") {
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo >= hi {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    text.split(',').map(num).collect()
}

/// Parses a `key=value` hyperparameter override.
pub fn parse_key_value(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected key=value, got `{text}`")))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_layer() -> ConfigLayer {
        ConfigLayer {
            synth: Some("homoscedastic".into()),
            out: Some("out".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_follow_protocol() {
        let c = synth_layer().resolve().unwrap();
        assert_eq!(c.fractions, [0.7, 0.1, 0.2]);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.k, 10);
        assert_eq!(c.grid_step, 0.05);
        assert_eq!(
            c.rejectors,
            vec![RejectorKind::Csr, RejectorKind::KnnVariance]
        );
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(
            c.source,
            DataSource::Synth {
                profile: NoiseProfile::Homoscedastic,
                n: DEFAULT_SYNTH_ROWS
            }
        );
    }

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("5, 1,9").unwrap(), vec![5, 1, 9]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn file_then_flags() {
        let file = ConfigLayer::from_toml_str(
            r#"
            synth = "heteroscedastic-step"
            synth_n = 500
            alpha = 0.1
            model = "gbt"
            rejectors = ["knn_variance"]
            seeds = "0..4"
            out = "a"

            [hyperparams]
            n_trees = 20
            learning_rate = 0.2
            "#,
        )
        .unwrap();
        let flags = ConfigLayer {
            alpha: Some(0.2),
            out: Some("b".into()),
            hyperparams: [("n_trees".to_string(), toml::Value::Integer(5))].into(),
            ..Default::default()
        };
        let c = file.merge(flags).resolve().unwrap();
        assert_eq!(c.alpha, 0.2);
        assert_eq!(c.out, PathBuf::from("b"));
        assert_eq!(c.family, Family::Gbt);
        assert_eq!(c.rejectors, vec![RejectorKind::KnnVariance]);
        assert_eq!(c.seeds, vec![0, 1, 2, 3]);
        assert_eq!(c.hyperparams["n_trees"], "5");
        assert_eq!(c.hyperparams["learning_rate"], "0.2");
        assert_eq!(c.model_hyperparams().unwrap().gbt.n_trees, 5);
    }

    #[test]
    fn rejects_invalid_settings() {
        let cases = [
            ConfigLayer {
                alpha: Some(1.0),
                ..synth_layer()
            },
            ConfigLayer {
                k: Some(0),
                ..synth_layer()
            },
            ConfigLayer {
                grid_step: Some(0.0),
                ..synth_layer()
            },
            ConfigLayer {
                fractions: Some([0.5, 0.5, 0.5]),
                ..synth_layer()
            },
            ConfigLayer {
                rejectors: Some(ListOrString::Text("csr,csr".into())),
                ..synth_layer()
            },
            ConfigLayer {
                model: Some("forest".into()),
                ..synth_layer()
            },
            ConfigLayer {
                synth: Some("wavy".into()),
                ..synth_layer()
            },
        ];
        for layer in cases {
            assert_eq!(
                layer.clone().resolve().unwrap_err().exit_code(),
                1,
                "{layer:?}"
            );
        }
        let unknown_hp = ConfigLayer {
            hyperparams: [("depth".to_string(), toml::Value::Integer(3))].into(),
            ..synth_layer()
        };
        assert!(unknown_hp.resolve().is_err());
        assert!(ConfigLayer::from_toml_str("colour = 1").is_err());
    }

    #[test]
    fn source_must_be_unambiguous() {
        let both = ConfigLayer {
            data: Some("d.csv".into()),
            target: Some("y".into()),
            ..synth_layer()
        };
        assert!(matches!(both.resolve(), Err(CliError::Usage(_))));
        let no_target = ConfigLayer {
            data: Some("d.csv".into()),
            out: Some("o".into()),
            ..Default::default()
        };
        assert!(matches!(no_target.resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn dataset_names() {
        let csv = DataSource::Csv {
            path: "dir/communities.csv".into(),
            target: "y".into(),
        };
        assert_eq!(csv.dataset_name(), "communities");
        let synth = DataSource::Synth {
            profile: NoiseProfile::HeteroscedasticStep,
            n: 10,
        };
        assert_eq!(synth.dataset_name(), "heteroscedastic-step");
    }
}

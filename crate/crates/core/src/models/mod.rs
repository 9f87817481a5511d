//! Trainable regressors: point (conditional mean) models, lower/upper
//! quantile pairs, and the kNN estimator used by the variance rejector.

pub mod gbt;
pub mod knn;
pub mod linear;
pub mod pinball;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CsrError, Result};
use crate::scalar::Scalar;
use gbt::{GbtConfig, GbtLoss, GbtModel};
use linear::{LinearConfig, LinearModel};
use pinball::QuantileLevel;

pub const MODEL_SCHEMA: &str = "csr.model.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Gbt,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::Gbt => "gbt",
        })
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Family::Linear),
            "gbt" => Ok(Family::Gbt),
            other => Err(format!(
                "unknown model family `{other}` (expected linear or gbt)"
            )),
        }
    }
}

/// Training budgets for both families.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub linear: LinearConfig,
    pub gbt: GbtConfig,
}

impl Hyperparams {
    /// Overrides defaults from flat `key = value` pairs. Recognized keys:
    /// `epochs`, `step`, `n_trees`, `max_depth`, `learning_rate`,
    /// `subsample`, `min_samples_leaf`, `seed`.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut hp = Self::default();
        for (key, value) in map {
            hp.set(key, value)?;
        }
        Ok(hp)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| CsrError::BadHyperparameter {
                    key: key.to_owned(),
                    reason: format!("cannot parse `{value}`"),
                })
        }
        match key {
            "epochs" => self.linear.epochs = parse(key, value)?,
            "step" => self.linear.step = parse(key, value)?,
            "n_trees" => self.gbt.n_trees = parse(key, value)?,
            "max_depth" => self.gbt.max_depth = parse(key, value)?,
            "learning_rate" => self.gbt.learning_rate = parse(key, value)?,
            "subsample" => self.gbt.subsample = parse(key, value)?,
            "min_samples_leaf" => self.gbt.min_samples_leaf = parse(key, value)?,
            "seed" => self.gbt.seed = parse(key, value)?,
            _ => {
                return Err(CsrError::BadHyperparameter {
                    key: key.to_owned(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gbt.seed = seed;
        self
    }
}

/// A fitted regressor of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Predictor<S = f64> {
    Linear(LinearModel<S>),
    Gbt(GbtModel<S>),
}

impl<S: Scalar> Predictor<S> {
    fn predict_unchecked(&self, x: &[S]) -> S {
        match self {
            Predictor::Linear(m) => m.predict_row(x),
            Predictor::Gbt(m) => m.predict_row(x),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Predictor::Linear(_) => Family::Linear,
            Predictor::Gbt(_) => Family::Gbt,
        }
    }
}

fn check_dim(expected: usize, x: &[impl Sized]) -> Result<()> {
    if x.len() != expected {
        return Err(CsrError::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

/// Mean-regression model whose predictions every rejector gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointModel<S = f64> {
    pub n_features: usize,
    pub predictor: Predictor<S>,
}

impl<S: Scalar> PointModel<S> {
    pub fn family(&self) -> Family {
        self.predictor.family()
    }

    pub fn predict(&self, x: &[S]) -> Result<S> {
        check_dim(self.n_features, x)?;
        Ok(self.predictor.predict_unchecked(x))
    }

    pub fn predict_all(&self, data: &Dataset<S>) -> Result<Vec<S>> {
        data.rows().map(|r| self.predict(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        to_document("point", self)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        from_document("point", json)
    }
}

/// Lower (tau = alpha/2) and upper (tau = 1 - alpha/2) quantile regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePairModel<S = f64> {
    pub alpha: S,
    pub n_features: usize,
    pub lower_tau: QuantileLevel<S>,
    pub upper_tau: QuantileLevel<S>,
    pub lower: Predictor<S>,
    pub upper: Predictor<S>,
}

impl<S: Scalar> QuantilePairModel<S> {
    pub fn family(&self) -> Family {
        self.lower.family()
    }

    pub fn predict_lower(&self, x: &[S]) -> Result<S> {
        check_dim(self.n_features, x)?;
        Ok(self.lower.predict_unchecked(x))
    }

    pub fn predict_upper(&self, x: &[S]) -> Result<S> {
        check_dim(self.n_features, x)?;
        Ok(self.upper.predict_unchecked(x))
    }

    /// Raw `(f_l(x), f_u(x))`, possibly crossed.
    pub fn predict_raw(&self, x: &[S]) -> Result<(S, S)> {
        check_dim(self.n_features, x)?;
        Ok((
            self.lower.predict_unchecked(x),
            self.upper.predict_unchecked(x),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        to_document("quantile_pair", self)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        from_document("quantile_pair", json)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument<T> {
    schema: String,
    kind: String,
    model: T,
}

fn to_document<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelDocument {
        schema: MODEL_SCHEMA.to_owned(),
        kind: kind.to_owned(),
        model,
    })?)
}

fn from_document<T: serde::de::DeserializeOwned>(kind: &str, json: &str) -> Result<T> {
    let doc: ModelDocument<T> = serde_json::from_str(json)?;
    if doc.schema != MODEL_SCHEMA {
        return Err(CsrError::Schema {
            expected: MODEL_SCHEMA.into(),
            found: doc.schema,
        });
    }
    if doc.kind != kind {
        return Err(CsrError::Schema {
            expected: format!("{MODEL_SCHEMA}/{kind}"),
            found: format!("{}/{}", doc.schema, doc.kind),
        });
    }
    Ok(doc.model)
}

pub(crate) fn check_alpha<S: Scalar>(alpha: S) -> Result<()> {
    if alpha > S::zero() && alpha < S::one() {
        Ok(())
    } else {
        Err(CsrError::BadAlpha(alpha.as_f64()))
    }
}

fn train_quantile<S: Scalar>(
    train: &Dataset<S>,
    tau: QuantileLevel<S>,
    family: Family,
    hp: &Hyperparams,
) -> Result<Predictor<S>> {
    Ok(match family {
        Family::Linear => Predictor::Linear(linear::fit_quantile(train, tau, &hp.linear)?),
        Family::Gbt => Predictor::Gbt(gbt::fit(
            train,
            GbtLoss::Pinball(tau.tau().as_f64()),
            &hp.gbt,
        )?),
    })
}

pub fn train_quantile_pair<S: Scalar>(
    train: &Dataset<S>,
    alpha: S,
    family: Family,
    hp: &Hyperparams,
) -> Result<QuantilePairModel<S>> {
    check_alpha(alpha)?;
    if train.is_empty() {
        return Err(CsrError::Empty("training set"));
    }
    let half = alpha / S::lit(2.0);
    let lower_tau = QuantileLevel::new(half)?;
    let upper_tau = QuantileLevel::new(S::one() - half)?;
    Ok(QuantilePairModel {
        alpha,
        n_features: train.n_features(),
        lower_tau,
        upper_tau,
        lower: train_quantile(train, lower_tau, family, hp)?,
        upper: train_quantile(train, upper_tau, family, hp)?,
    })
}

pub fn train_point_model<S: Scalar>(
    train: &Dataset<S>,
    family: Family,
    hp: &Hyperparams,
) -> Result<PointModel<S>> {
    let predictor = match family {
        Family::Linear => Predictor::Linear(linear::fit_least_squares(train)?),
        Family::Gbt => Predictor::Gbt(gbt::fit(train, GbtLoss::Squared, &hp.gbt)?),
    };
    Ok(PointModel {
        n_features: train.n_features(),
        predictor,
    })
}

//! JSON config schema: the model spec file (keys `model`, `change_time`,
//! `statistic`) plus the experiment settings consumed by the CLI.
//!
//! All pmfs and kernels are plain arrays of decimals; kernels are row-major
//! arrays of rows. See the README for the full schema.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AffineStatistic, ChangeTimeLaw, Feature, ObservationModel, Statistic};

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<nalgebra::DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Config(format!("{what}: empty matrix")));
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Config(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(nalgebra::DMatrix::from_row_slice(n, rows[0].len(), &flat))
}

pub(crate) fn matrix_to_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Observation-model section of a spec file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    IidGaussian { pre_mean: f64, pre_var: f64, post_mean: f64, post_var: f64 },
    IidDiscrete { pmf0: Vec<f64>, pmf1: Vec<f64> },
    FiniteMarkov { p0: Vec<Vec<f64>>, p1: Vec<Vec<f64>> },
    Pomdp {
        kernel: Vec<Vec<f64>>,
        x0: Vec<usize>,
        obs_map: Vec<usize>,
        #[serde(default)]
        init: Option<usize>,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<ObservationModel> {
        match self {
            ModelSpec::IidGaussian { pre_mean, pre_var, post_mean, post_var } => {
                ObservationModel::iid_gaussian(*pre_mean, *pre_var, *post_mean, *post_var)
            }
            ModelSpec::IidDiscrete { pmf0, pmf1 } => {
                ObservationModel::iid_discrete(pmf0.clone(), pmf1.clone())
            }
            ModelSpec::FiniteMarkov { p0, p1 } => ObservationModel::finite_markov(
                rows_to_matrix(p0, "model.p0")?,
                rows_to_matrix(p1, "model.p1")?,
            ),
            ModelSpec::Pomdp { kernel, x0, obs_map, init } => {
                let init = init.unwrap_or_else(|| x0.first().copied().unwrap_or(0));
                ObservationModel::pomdp(
                    rows_to_matrix(kernel, "model.kernel")?,
                    x0.clone(),
                    obs_map.clone(),
                    init,
                )
            }
        }
    }

    pub fn from_model(model: &ObservationModel) -> Self {
        match model {
            ObservationModel::IidGaussian { pre_mean, pre_var, post_mean, post_var } => {
                ModelSpec::IidGaussian {
                    pre_mean: *pre_mean,
                    pre_var: *pre_var,
                    post_mean: *post_mean,
                    post_var: *post_var,
                }
            }
            ObservationModel::IidDiscrete { pmf0, pmf1 } => {
                ModelSpec::IidDiscrete { pmf0: pmf0.clone(), pmf1: pmf1.clone() }
            }
            ObservationModel::FiniteMarkov { p0, p1, .. } => ModelSpec::FiniteMarkov {
                p0: matrix_to_rows(p0),
                p1: matrix_to_rows(p1),
            },
            ObservationModel::Pomdp { kernel, x0, obs_map, init } => ModelSpec::Pomdp {
                kernel: matrix_to_rows(kernel),
                x0: x0.clone(),
                obs_map: obs_map.clone(),
                init: Some(*init),
            },
        }
    }
}

/// One basis statistic in a file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSpec {
    Constant,
    LabelTable { values: Vec<f64> },
    PairTable { values: Vec<Vec<f64>> },
    Monomial { degree: u32 },
}

impl FeatureSpec {
    pub fn build(&self) -> Result<Feature> {
        Ok(match self {
            FeatureSpec::Constant => Feature::Constant,
            FeatureSpec::LabelTable { values } => Feature::LabelTable(values.clone()),
            FeatureSpec::PairTable { values } => {
                Feature::PairTable(rows_to_matrix(values, "feature.values")?)
            }
            FeatureSpec::Monomial { degree } => Feature::Monomial(*degree),
        })
    }
}

/// Statistic section of a spec file. `llr` derives the exact likelihood
/// ratio from the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StatisticSpec {
    Llr,
    Table { values: Vec<f64> },
    PairTable { values: Vec<Vec<f64>> },
    Quadratic { a2: f64, a1: f64, a0: f64 },
    Affine { theta: Vec<f64>, features: Vec<FeatureSpec>, v: Vec<f64> },
}

impl StatisticSpec {
    pub fn build(&self, model: &ObservationModel) -> Result<Statistic> {
        match self {
            StatisticSpec::Llr => model.llr(),
            StatisticSpec::Table { values } => Ok(Statistic::Table(values.clone())),
            StatisticSpec::PairTable { values } => Ok(Statistic::PairTable(rows_to_matrix(
                values,
                "statistic.values",
            )?)),
            StatisticSpec::Quadratic { a2, a1, a0 } => {
                Ok(Statistic::Quadratic { a2: *a2, a1: *a1, a0: *a0 })
            }
            StatisticSpec::Affine { theta, features, v } => {
                if theta.len() != features.len() || theta.len() != v.len() {
                    return Err(Error::Config(
                        "statistic.affine: theta, features, v must have equal length".into(),
                    ));
                }
                let features = features.iter().map(|f| f.build()).collect::<Result<Vec<_>>>()?;
                Ok(Statistic::Affine(AffineStatistic {
                    theta: theta.clone(),
                    features,
                    v: v.clone(),
                }))
            }
        }
    }
}

/// Function-class section used by the optimize pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub features: Vec<FeatureSpec>,
    pub v: Vec<f64>,
}

/// Which cost estimator a sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Plain,
    Hitting,
    ExactDp,
}

fn default_kappas() -> Vec<f64> {
    vec![2.0, 10.0, 50.0, 100.0]
}

fn default_replications() -> usize {
    10_000
}

fn default_horizon_multiplier() -> f64 {
    10.0
}

/// Full experiment configuration: the model-spec triple plus harness
/// settings. Every harness field has a default so a bare model spec file is
/// a valid config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub change_time: ChangeTimeLaw,
    pub statistic: StatisticSpec,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<f64>,
    /// Threshold grid; when absent the sweep derives one from the
    /// leading-order threshold rule.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Simulation horizon is `change_time + ceil(multiplier * H / m1)`.
    #[serde(default = "default_horizon_multiplier")]
    pub horizon_multiplier: f64,
    #[serde(default)]
    pub estimator: EstimatorKind,
    /// Sample the hitting-time estimator under the positive-drift tilt.
    #[serde(default)]
    pub use_tilting: bool,
    /// Lattice denominator for the exact DP oracle; auto-detected when absent.
    #[serde(default)]
    pub lattice_denominator: Option<u32>,
    /// Function class for the optimize pipeline.
    #[serde(default)]
    pub class: Option<ClassSpec>,
    /// Scaled window for the most-likely-path emission.
    #[serde(default)]
    pub path_window: Option<f64>,
    /// Steps of the survival curve emitted by the pomdp pipeline.
    #[serde(default)]
    pub survival_horizon: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.change_time.validate()?;
        if self.replications < 1 {
            return Err(Error::Config("replications: must be >= 1".into()));
        }
        if let Some(ts) = &self.thresholds {
            if ts.iter().any(|&t| t <= 0.0) {
                return Err(Error::Config("thresholds: must be positive".into()));
            }
            if ts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("thresholds: must be sorted ascending".into()));
            }
        }
        if self.horizon_multiplier <= 0.0 {
            return Err(Error::Config("horizon_multiplier: must be positive".into()));
        }
        Ok(())
    }

    /// Materialize the model, change-time law, and statistic.
    pub fn build_parts(&self) -> Result<(ObservationModel, ChangeTimeLaw, Statistic)> {
        let model = self.model.build()?;
        let stat = self.statistic.build(&model)?;
        Ok((model, self.change_time.clone(), stat))
    }
}

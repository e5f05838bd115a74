//! The locked statistical analysis plan and its on-disk representation.
//!
//! A SAP file is a flat TOML document holding every pre-specified choice:
//! estimand, candidate learner lists, cross-validation scheme, variance kind,
//! seed, outcome bounds, and (for real-data analyses) the CSV column mapping
//! under a `[data]` table.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::CsvSchema;
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerSpec};

/// Target estimand: difference or ratio of counterfactual arm means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "RR")]
    Rr,
}

impl Estimand {
    /// Value of the effect under no treatment difference.
    pub fn null_value(&self) -> f64 {
        match self {
            Estimand::Ate => 0.0,
            Estimand::Rr => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// Influence-curve variance estimated on the full data.
    #[default]
    Standard,
    /// Variance from the stored cross-validated influence-curve estimates.
    CrossValidated,
}

/// Requested fold scheme. `Auto` becomes leave-one-unit-out for 40 or fewer
/// independent units and 10-fold otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CvFolds {
    #[default]
    Auto,
    LeaveOneUnitOut,
    VFold(u32),
}

impl Serialize for CvFolds {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CvFolds::Auto => serializer.serialize_str("auto"),
            CvFolds::LeaveOneUnitOut => serializer.serialize_str("loo"),
            CvFolds::VFold(v) => serializer.serialize_u32(*v),
        }
    }
}

impl<'de> Deserialize<'de> for CvFolds {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(CvFolds::VFold(v)),
            Raw::Word(w) => match w.as_str() {
                "auto" => Ok(CvFolds::Auto),
                "loo" | "leave_one_unit_out" => Ok(CvFolds::LeaveOneUnitOut),
                other => Err(serde::de::Error::custom(format!(
                    "cv_folds must be an integer, \"loo\", or \"auto\" (got \"{other}\")"
                ))),
            },
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_alpha() -> f64 {
    0.05
}

/// Every pre-specified analysis choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapConfig {
    pub estimand: Estimand,
    pub or_candidates: Vec<LearnerKind>,
    pub ps_candidates: Vec<LearnerKind>,
    #[serde(default)]
    pub cv_folds: CvFolds,
    #[serde(default = "default_true")]
    pub stratify_by_arm: bool,
    #[serde(default)]
    pub variance: VarianceKind,
    pub seed: u64,
    #[serde(default)]
    pub outcome_bounds: Option<(f64, f64)>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl SapConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.or_candidates.contains(&LearnerKind::Unadjusted) {
            return Err(Error::Config(
                "the unadjusted estimator must be included as a candidate for the outcome \
                 regression"
                    .into(),
            ));
        }
        if !self.ps_candidates.contains(&LearnerKind::Unadjusted) {
            return Err(Error::Config(
                "the unadjusted estimator must be included as a candidate for the propensity \
                 score"
                    .into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let CvFolds::VFold(v) = self.cv_folds {
            if v < 2 {
                return Err(Error::Config(format!("cv_folds must be at least 2, got {v}")));
            }
        }
        if let Some((lo, hi)) = self.outcome_bounds {
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                return Err(Error::Config(format!(
                    "outcome_bounds ({lo}, {hi}) must satisfy lower < upper"
                )));
            }
            if self.estimand == Estimand::Rr && lo != 0.0 {
                return Err(Error::Config(
                    "relative risk requires outcome bounds with a zero lower bound".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn or_specs(&self) -> Vec<LearnerSpec> {
        self.or_candidates.iter().cloned().map(LearnerSpec::outcome).collect()
    }

    pub fn ps_specs(&self) -> Vec<LearnerSpec> {
        self.ps_candidates.iter().cloned().map(LearnerSpec::pscore).collect()
    }

    /// Scale a dataset according to the configured bounds and estimand.
    pub fn scale_dataset(&self, data: &crate::data::TrialDataset) -> Result<crate::data::ScaledTrial> {
        let ys = data.outcomes();
        let min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bounds = self.bounds_for_scaling(min, max)?;
        crate::data::scale_outcome(data, bounds)
    }

    /// Effective outcome bounds for a relative-risk analysis: the lower bound
    /// is pinned at zero so the ratio survives rescaling.
    pub fn bounds_for_scaling(&self, observed_min: f64, observed_max: f64) -> Result<Option<(f64, f64)>> {
        match (self.estimand, self.outcome_bounds) {
            (_, Some(b)) => Ok(Some(b)),
            (Estimand::Rr, None) => {
                let binary = observed_min >= 0.0
                    && observed_max <= 1.0
                    && observed_min != observed_max;
                if observed_min < 0.0 {
                    return Err(Error::Config(
                        "relative risk requires a nonnegative outcome".into(),
                    ));
                }
                // Binary outcomes keep their identity scale; continuous ones
                // anchor the lower bound at zero.
                if binary {
                    Ok(None)
                } else {
                    Ok(Some((0.0, observed_max)))
                }
            }
            (Estimand::Ate, None) => Ok(None),
        }
    }
}

/// SAP plus the CSV column mapping for a real-data analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(flatten)]
    pub sap: SapConfig,
    pub data: CsvSchema,
}

pub fn parse_sap_config(text: &str) -> Result<SapConfig> {
    let config: SapConfig =
        toml::from_str(text).map_err(|e| Error::Parse(format!("SAP config: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn parse_analysis_config(text: &str) -> Result<AnalysisConfig> {
    let config: AnalysisConfig =
        toml::from_str(text).map_err(|e| Error::Parse(format!("analysis config: {e}")))?;
    config.sap.validate()?;
    Ok(config)
}

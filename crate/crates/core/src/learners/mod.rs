//! Candidate estimators for the outcome regression and the propensity score.
//!
//! Every candidate is declarative (a [`LearnerSpec`]) and fits into the same
//! [`FittedLearner`] shape so the selector can treat them uniformly. Fitting
//! never aborts: a candidate whose underlying fit fails degrades to the
//! unadjusted estimator with the `fallback` flag set.

pub mod lasso;
pub mod mars;
pub mod stepwise;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::glm::{self, clip_unit, expit, DesignMatrix};

/// Propensity predictions are clamped into `[PS_CLIP, 1 - PS_CLIP]` so the
/// inverse-propensity weights stay bounded.
pub const PS_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerRole {
    OutcomeRegression,
    PropensityScore,
}

/// Which estimator to fit. The text grammar used in config files maps
/// one-to-one onto these variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LearnerKind {
    /// Outcome role: logistic regression on intercept + arm only (arm-specific
    /// means). Propensity role: the empirical arm proportion.
    Unadjusted,
    /// Working GLM adjusting for exactly one named covariate.
    GlmOneCovariate(String),
    /// Working GLM with all covariates as main terms.
    GlmMainTerms,
    /// Forward stepwise selection on AIC, optionally over pairwise
    /// interactions.
    Stepwise { interactions: bool },
    /// L1-penalized logistic regression tuned by internal cross-validation.
    Lasso,
    /// Degree-1 regression splines with GCV pruning, optionally after
    /// correlation screening.
    Mars { screening: bool },
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unadjusted => write!(f, "unadjusted"),
            Self::GlmOneCovariate(name) => write!(f, "glm({name})"),
            Self::GlmMainTerms => write!(f, "glm(main_terms)"),
            Self::Stepwise { interactions: false } => write!(f, "stepwise"),
            Self::Stepwise { interactions: true } => write!(f, "stepwise_int"),
            Self::Lasso => write!(f, "lasso"),
            Self::Mars { screening: false } => write!(f, "mars"),
            Self::Mars { screening: true } => write!(f, "mars_screen"),
        }
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "unadjusted" => Ok(Self::Unadjusted),
            "stepwise" => Ok(Self::Stepwise { interactions: false }),
            "stepwise_int" => Ok(Self::Stepwise { interactions: true }),
            "lasso" => Ok(Self::Lasso),
            "mars" => Ok(Self::Mars { screening: false }),
            "mars_screen" => Ok(Self::Mars { screening: true }),
            other => {
                if let Some(inner) = other.strip_prefix("glm(").and_then(|r| r.strip_suffix(')')) {
                    let inner = inner.trim();
                    if inner.is_empty() {
                        return Err(Error::Config("glm(...) needs a covariate name".into()));
                    }
                    if inner == "main_terms" {
                        Ok(Self::GlmMainTerms)
                    } else {
                        Ok(Self::GlmOneCovariate(inner.to_string()))
                    }
                } else {
                    Err(Error::Config(format!(
                        "unknown learner `{other}`; expected one of unadjusted, glm(NAME), \
                         glm(main_terms), stepwise, stepwise_int, lasso, mars, mars_screen"
                    )))
                }
            }
        }
    }
}

impl Serialize for LearnerKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LearnerKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A candidate estimator together with the role it plays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub role: LearnerRole,
}

impl LearnerSpec {
    pub fn outcome(kind: LearnerKind) -> Self {
        Self { kind, role: LearnerRole::OutcomeRegression }
    }

    pub fn pscore(kind: LearnerKind) -> Self {
        Self { kind, role: LearnerRole::PropensityScore }
    }

    pub fn is_unadjusted(&self) -> bool {
        self.kind == LearnerKind::Unadjusted
    }
}

/// Model term of a fitted linear predictor over the covariate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ModelTerm {
    Main(usize),
    Interaction(usize, usize),
}

impl ModelTerm {
    pub(crate) fn eval(&self, covs: &[f64]) -> f64 {
        match *self {
            ModelTerm::Main(i) => covs[i],
            ModelTerm::Interaction(i, j) => covs[i] * covs[j],
        }
    }
}

/// Fitted logistic-link linear model over (arm, covariates).
#[derive(Debug, Clone)]
pub(crate) struct LinearModel {
    pub intercept: f64,
    pub arm_coef: f64,
    pub terms: Vec<(ModelTerm, f64)>,
}

impl LinearModel {
    fn linear_predictor(&self, arm: f64, covs: &[f64]) -> f64 {
        let mut e = self.intercept + self.arm_coef * arm;
        for (term, coef) in &self.terms {
            if *coef != 0.0 {
                e += coef * term.eval(covs);
            }
        }
        e
    }
}

#[derive(Debug, Clone)]
pub(crate) enum FittedModel {
    /// Arm-specific outcome means.
    ArmMeans { p1: f64, p0: f64 },
    /// Constant propensity (empirical treated share).
    Constant { p: f64 },
    Linear(LinearModel),
    Mars(mars::MarsModel),
}

/// A fitted candidate. Predictions are pure functions of (arm, covariates),
/// so counterfactual predictions come from the same path as observed ones.
#[derive(Debug, Clone)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    /// Set when the requested fit failed and the unadjusted fit was used.
    pub fallback: bool,
    pub(crate) model: FittedModel,
}

impl FittedLearner {
    /// Expected outcome on the scaled [0, 1] scale under the given arm.
    pub fn predict_outcome(&self, arm: u8, covs: &[f64]) -> f64 {
        debug_assert_eq!(self.spec.role, LearnerRole::OutcomeRegression);
        match &self.model {
            FittedModel::ArmMeans { p1, p0 } => {
                if arm == 1 {
                    *p1
                } else {
                    *p0
                }
            }
            FittedModel::Constant { p } => *p,
            FittedModel::Linear(m) => clip_unit(expit(m.linear_predictor(arm as f64, covs))),
            FittedModel::Mars(m) => clip_unit(m.predict(arm as f64, covs)),
        }
    }

    /// Names of the fitted model's covariate terms, in the order they were
    /// added. Unadjusted fits have none.
    pub fn term_names(&self, covariate_names: &[String]) -> Vec<String> {
        let cov = |i: usize| covariate_names[i].clone();
        match &self.model {
            FittedModel::ArmMeans { .. } | FittedModel::Constant { .. } => vec![],
            FittedModel::Linear(m) => m
                .terms
                .iter()
                .map(|(t, _)| match *t {
                    ModelTerm::Main(i) => cov(i),
                    ModelTerm::Interaction(i, j) => format!("{}:{}", cov(i), cov(j)),
                })
                .collect(),
            FittedModel::Mars(m) => m
                .terms
                .iter()
                .filter_map(|t| t.describe(covariate_names))
                .collect(),
        }
    }

    /// Probability of assignment to arm 1 given covariates.
    pub fn predict_pscore(&self, covs: &[f64]) -> f64 {
        debug_assert_eq!(self.spec.role, LearnerRole::PropensityScore);
        let raw = match &self.model {
            FittedModel::Constant { p } => *p,
            FittedModel::ArmMeans { p1, .. } => *p1,
            FittedModel::Linear(m) => expit(m.linear_predictor(0.0, covs)),
            FittedModel::Mars(m) => m.predict(0.0, covs),
        };
        raw.clamp(PS_CLIP, 1.0 - PS_CLIP)
    }
}

fn check_both_arms(data: &TrialDataset) -> Result<()> {
    let n1 = data.units.iter().filter(|u| u.arm == 1).count();
    if n1 == 0 || n1 == data.n_units() {
        return Err(Error::Data("both arms must be present to fit a learner".into()));
    }
    Ok(())
}

/// Arm-specific outcome means, clipped inside (0, 1). This is exactly the
/// fitted value of the logistic regression on intercept + arm.
fn arm_means(data: &TrialDataset) -> FittedModel {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for u in &data.units {
        sums[u.arm as usize] += u.outcome;
        counts[u.arm as usize] += 1;
    }
    let mean = |a: usize| clip_unit(sums[a] / counts[a].max(1) as f64);
    FittedModel::ArmMeans { p1: mean(1), p0: mean(0) }
}

fn empirical_share(data: &TrialDataset) -> FittedModel {
    let n1 = data.units.iter().filter(|u| u.arm == 1).count();
    let p = (n1 as f64 / data.n_units() as f64).clamp(PS_CLIP, 1.0 - PS_CLIP);
    FittedModel::Constant { p }
}

/// Build a design matrix over the given terms; the arm indicator is prepended
/// for outcome-regression designs.
pub(crate) fn build_design(
    data: &TrialDataset,
    terms: &[ModelTerm],
    include_arm: bool,
) -> DesignMatrix {
    let mut names = Vec::new();
    if include_arm {
        names.push("arm".to_string());
    }
    for t in terms {
        match t {
            ModelTerm::Main(i) => names.push(data.covariate_names[*i].clone()),
            ModelTerm::Interaction(i, j) => names.push(format!(
                "{}:{}",
                data.covariate_names[*i], data.covariate_names[*j]
            )),
        }
    }
    let rows: Vec<Vec<f64>> = data
        .units
        .iter()
        .map(|u| {
            let mut row = Vec::with_capacity(names.len());
            if include_arm {
                row.push(u.arm as f64);
            }
            for t in terms {
                row.push(t.eval(&u.covariates));
            }
            row
        })
        .collect();
    DesignMatrix::from_rows(names, &rows).expect("validated dataset yields a valid design")
}

/// Fit a logistic working model for either role; `None` when IRLS does not
/// converge (callers fall back).
pub(crate) fn fit_linear_terms(
    data: &TrialDataset,
    terms: &[ModelTerm],
    role: LearnerRole,
) -> Result<Option<LinearModel>> {
    let include_arm = role == LearnerRole::OutcomeRegression;
    let x = build_design(data, terms, include_arm);
    let y: Vec<f64> = match role {
        LearnerRole::OutcomeRegression => data.outcomes(),
        LearnerRole::PropensityScore => data.units.iter().map(|u| u.arm as f64).collect(),
    };
    let fit = glm::fit_logistic(&x, &y, None, None, true)?;
    if !fit.converged {
        return Ok(None);
    }
    let mut idx = 1; // coefficient 0 is the intercept
    let arm_coef = if include_arm {
        let c = fit.coefficients[idx];
        idx += 1;
        c
    } else {
        0.0
    };
    let term_coefs = terms
        .iter()
        .map(|t| {
            let c = fit.coefficients[idx];
            idx += 1;
            (*t, c)
        })
        .collect();
    Ok(Some(LinearModel { intercept: fit.coefficients[0], arm_coef, terms: term_coefs }))
}

fn resolve_one_covariate(data: &TrialDataset, name: &str) -> Result<usize> {
    data.covariate_index(name)
        .ok_or_else(|| Error::Config(format!("unknown covariate `{name}` in learner spec")))
}

/// Fit a candidate estimator of E(Y | A, W) on the scaled dataset. The arm
/// indicator is always a predictor and is never screened or penalized away.
pub fn fit_outcome_learner(
    spec: &LearnerSpec,
    data: &TrialDataset,
    seed: u64,
) -> Result<FittedLearner> {
    if spec.role != LearnerRole::OutcomeRegression {
        return Err(Error::Config("fit_outcome_learner needs an outcome_regression spec".into()));
    }
    check_both_arms(data)?;
    let fitted = |model: FittedModel, fallback: bool| FittedLearner {
        spec: spec.clone(),
        fallback,
        model,
    };
    let fallback = || fitted(arm_means(data), true);

    let model = match &spec.kind {
        LearnerKind::Unadjusted => Some(arm_means(data)),
        LearnerKind::GlmOneCovariate(name) => {
            let idx = resolve_one_covariate(data, name)?;
            fit_linear_terms(data, &[ModelTerm::Main(idx)], spec.role)?.map(FittedModel::Linear)
        }
        LearnerKind::GlmMainTerms => {
            let terms: Vec<ModelTerm> =
                (0..data.covariate_names.len()).map(ModelTerm::Main).collect();
            fit_linear_terms(data, &terms, spec.role)?.map(FittedModel::Linear)
        }
        LearnerKind::Stepwise { interactions } => {
            stepwise::fit(data, spec.role, *interactions)?.map(FittedModel::Linear)
        }
        LearnerKind::Lasso => lasso::fit(data, spec.role, seed)?.map(FittedModel::Linear),
        LearnerKind::Mars { screening } => {
            mars::fit(data, spec.role, *screening)?.map(FittedModel::Mars)
        }
    };
    Ok(match model {
        Some(m) => fitted(m, false),
        None => fallback(),
    })
}

/// Fit a candidate estimator of P(A = 1 | W). Predictions are clamped into
/// `[PS_CLIP, 1 - PS_CLIP]`.
pub fn fit_pscore_learner(
    spec: &LearnerSpec,
    data: &TrialDataset,
    seed: u64,
) -> Result<FittedLearner> {
    if spec.role != LearnerRole::PropensityScore {
        return Err(Error::Config("fit_pscore_learner needs a propensity_score spec".into()));
    }
    check_both_arms(data)?;
    let fitted = |model: FittedModel, fallback: bool| FittedLearner {
        spec: spec.clone(),
        fallback,
        model,
    };
    let fallback = || fitted(empirical_share(data), true);

    let model = match &spec.kind {
        LearnerKind::Unadjusted => Some(empirical_share(data)),
        LearnerKind::GlmOneCovariate(name) => {
            let idx = resolve_one_covariate(data, name)?;
            fit_linear_terms(data, &[ModelTerm::Main(idx)], spec.role)?.map(FittedModel::Linear)
        }
        LearnerKind::GlmMainTerms => {
            let terms: Vec<ModelTerm> =
                (0..data.covariate_names.len()).map(ModelTerm::Main).collect();
            fit_linear_terms(data, &terms, spec.role)?.map(FittedModel::Linear)
        }
        LearnerKind::Stepwise { interactions } => {
            stepwise::fit(data, spec.role, *interactions)?.map(FittedModel::Linear)
        }
        LearnerKind::Lasso => lasso::fit(data, spec.role, seed)?.map(FittedModel::Linear),
        LearnerKind::Mars { screening } => {
            mars::fit(data, spec.role, *screening)?.map(FittedModel::Mars)
        }
    };
    Ok(match model {
        Some(m) => fitted(m, false),
        None => fallback(),
    })
}

/// Propensity predictions for every row of a dataset.
pub fn pscore_predictions(learner: &FittedLearner, data: &TrialDataset) -> Vec<f64> {
    data.units.iter().map(|u| learner.predict_pscore(&u.covariates)).collect()
}

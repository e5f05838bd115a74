//! Covariate-adjusted effect estimation for randomized trials.
//!
//! This crate estimates marginal treatment effects with targeted maximum
//! likelihood estimation (TMLE) and selects its adjustment strategy by
//! adaptive pre-specification: a cross-validated, fully seeded search over
//! pre-declared candidate estimators of the outcome regression and the
//! propensity score, minimizing an influence-curve-based variance estimate.
//! The selected pair can never score worse than the unadjusted contrast,
//! which is always a candidate.
//!
//! The crate also ships a Monte-Carlo harness (parametric data-generating
//! processes and treatment-blind permutation checks) and a CLI (`aptmle`)
//! that produces time-stamped, byte-reproducible analysis reports.

pub mod config;
pub mod data;
pub mod error;
pub mod glm;
pub mod learners;
pub mod report;
pub mod rng;
pub mod select;
pub mod sim;
pub mod tmle;

pub use config::{AnalysisConfig, CvFolds, Estimand, SapConfig, VarianceKind};
pub use data::{
    load_csv, scale_outcome, unscale_effect, CsvSchema, OutcomeScale, ScaleKind, ScaledTrial,
    TrialDataset, Unit,
};
pub use error::{Error, Result};
pub use learners::{
    fit_outcome_learner, fit_pscore_learner, FittedLearner, LearnerKind, LearnerRole, LearnerSpec,
};
pub use report::{analyze, permtest, simulate, AnalysisReport, PermReport, SimReport};
pub use select::{
    make_folds, precision_gain, run_adaptive_prespec, CandidateScore, CvKind, CvScheme, CvUnit,
    FoldAssignment, Selection,
};
pub use sim::{
    run_parametric_sim, run_permutation_check, sample_size_savings, DgpSpec, PermutationResult,
    SimResult,
};
pub use tmle::{
    cluster_aggregate, influence_curve, initial_predictions, point_estimates, run_tmle, target,
    wald_inference, CleverCovariates, Fluctuation, TargetedEstimate,
};

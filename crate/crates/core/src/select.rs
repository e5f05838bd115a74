//! Cross-validated selection of the outcome-regression and propensity-score
//! estimators.
//!
//! Candidates are scored by the mean of squared validation-fold influence
//! curves (an influence-curve-based variance estimate of the candidate's
//! targeted estimator). Selection is two-stage: first the outcome regression
//! against a fixed unadjusted propensity baseline, then the propensity score
//! given the selected outcome regression. The unadjusted estimator is always
//! in both candidate lists, so the selected pair can never score worse than
//! the unadjusted analysis. Folds respect the independent unit: all members
//! of a cluster share a fold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CvFolds, Estimand, SapConfig, VarianceKind};
use crate::data::{IndependentUnits, ScaledTrial, TrialDataset};
use crate::error::{Error, Result};
use crate::glm::{clip_unit, expit, logit};
use crate::learners::{
    fit_outcome_learner, fit_pscore_learner, pscore_predictions, LearnerKind, LearnerSpec,
};
use crate::rng::child_seed;
use crate::tmle::{
    apply_cv_variance, initial_predictions, run_tmle, target, TargetedEstimate,
};

const STREAM_FOLD_OR: u64 = 0x11;
const STREAM_FOLD_PS: u64 = 0x13;

/// Threshold under which leave-one-unit-out replaces 10-fold by default.
const LOO_DEFAULT_MAX_UNITS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CvUnit {
    Individual,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CvKind {
    VFold(u32),
    LeaveOneUnitOut,
}

/// Resolved cross-validation scheme for a concrete dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CvScheme {
    pub kind: CvKind,
    pub stratify_by_arm: bool,
    pub unit: CvUnit,
}

impl CvScheme {
    /// Resolve the configured scheme against the dataset: clustered data make
    /// the cluster the fold unit, and `Auto` picks leave-one-unit-out for 40
    /// or fewer independent units, 10-fold otherwise.
    pub fn resolve(config: &SapConfig, data: &TrialDataset) -> Result<CvScheme> {
        let unit = if data.has_clusters { CvUnit::Cluster } else { CvUnit::Individual };
        let n_indep = data.independent_units(unit == CvUnit::Cluster).len();
        let kind = match config.cv_folds {
            CvFolds::Auto => {
                if n_indep <= LOO_DEFAULT_MAX_UNITS {
                    CvKind::LeaveOneUnitOut
                } else {
                    CvKind::VFold(10)
                }
            }
            CvFolds::LeaveOneUnitOut => CvKind::LeaveOneUnitOut,
            CvFolds::VFold(v) => CvKind::VFold(v),
        };
        if let CvKind::VFold(v) = kind {
            if (v as usize) > n_indep {
                return Err(Error::Config(format!(
                    "{v} folds requested but only {n_indep} independent units are available"
                )));
            }
        }
        Ok(CvScheme { kind, stratify_by_arm: config.stratify_by_arm, unit })
    }
}

/// Fold index per independent unit.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub fold_of_unit: Vec<usize>,
    pub v_effective: usize,
}

/// Deal independent units into folds: a seeded shuffle within each arm,
/// dealt round-robin (stratified), or one fold per unit for
/// leave-one-unit-out. Every fold's training complement must contain both
/// arms.
pub fn make_folds(
    data: &TrialDataset,
    scheme: &CvScheme,
    seed: u64,
) -> Result<FoldAssignment> {
    let units = data.independent_units(scheme.unit == CvUnit::Cluster);
    let u = units.len();
    if u < 2 {
        return Err(Error::Data("need at least 2 independent units".into()));
    }
    let arms_known = units.arm.iter().all(|a| a.is_some());
    if arms_known {
        for arm in [0u8, 1u8] {
            let count = units.arm.iter().filter(|a| **a == Some(arm)).count();
            if count < 2 {
                return Err(Error::Data(format!(
                    "fewer than 2 independent units in arm {arm}"
                )));
            }
        }
    }

    let assignment = match scheme.kind {
        CvKind::LeaveOneUnitOut => {
            FoldAssignment { fold_of_unit: (0..u).collect(), v_effective: u }
        }
        CvKind::VFold(v) => {
            let v = v as usize;
            if v < 2 {
                return Err(Error::Config("need at least 2 folds".into()));
            }
            if v > u {
                return Err(Error::Config(format!(
                    "{v} folds requested but only {u} independent units are available"
                )));
            }
            let mut fold_of_unit = vec![0usize; u];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if scheme.stratify_by_arm && arms_known {
                for arm in [1u8, 0u8] {
                    let mut idx: Vec<usize> =
                        (0..u).filter(|&i| units.arm[i] == Some(arm)).collect();
                    idx.shuffle(&mut rng);
                    for (k, &unit) in idx.iter().enumerate() {
                        fold_of_unit[unit] = k % v;
                    }
                }
            } else {
                let mut idx: Vec<usize> = (0..u).collect();
                idx.shuffle(&mut rng);
                for (k, &unit) in idx.iter().enumerate() {
                    fold_of_unit[unit] = k % v;
                }
            }
            FoldAssignment { fold_of_unit, v_effective: v }
        }
    };

    for fold in 0..assignment.v_effective {
        let mut has = [false, false];
        for (ui, rows) in units.members.iter().enumerate() {
            if assignment.fold_of_unit[ui] != fold {
                for &r in rows {
                    has[data.units[r].arm as usize] = true;
                }
            }
        }
        if !(has[0] && has[1]) {
            return Err(Error::Data(format!(
                "fold {fold} lacks arm support in its training complement; reduce the number of \
                 folds"
            )));
        }
    }
    Ok(assignment)
}

/// One candidate's cross-validated score.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub spec: LearnerSpec,
    /// Mean of squared validation influence-curve values over the independent
    /// units (the selection loss).
    pub cv_variance: f64,
    /// Validation influence-curve values per fold, at the independent-unit
    /// level.
    #[serde(skip)]
    pub per_fold_ic: Vec<Vec<f64>>,
    /// Folds in which the candidate's fit fell back to unadjusted.
    pub fallback_count: usize,
}

/// Score one (outcome, propensity) candidate pair across the folds: fit both
/// learners and run the targeting step on each training split, then evaluate
/// influence-curve values for the validation units using the training-fitted
/// components (centered with the training point estimates).
fn score_pair(
    or_spec: &LearnerSpec,
    ps_spec: &LearnerSpec,
    data: &TrialDataset,
    units: &IndependentUnits,
    folds: &FoldAssignment,
    estimand: Estimand,
    seed: u64,
) -> Result<(f64, Vec<Vec<f64>>, usize)> {
    let j_total = units.len() as f64;
    let n_total = data.n_units() as f64;
    let mut per_fold_ic: Vec<Vec<f64>> = Vec::with_capacity(folds.v_effective);
    let mut fallback_count = 0usize;
    let mut sum_sq = 0.0f64;

    for fold in 0..folds.v_effective {
        let mut train_rows = Vec::new();
        let mut val_units = Vec::new();
        for (ui, rows) in units.members.iter().enumerate() {
            if folds.fold_of_unit[ui] == fold {
                val_units.push(ui);
            } else {
                train_rows.extend_from_slice(rows);
            }
        }
        let train = data.subset(&train_rows);
        let fold_seed = child_seed(seed, fold as u64);
        let or = fit_outcome_learner(or_spec, &train, child_seed(fold_seed, STREAM_FOLD_OR))?;
        let ps = fit_pscore_learner(ps_spec, &train, child_seed(fold_seed, STREAM_FOLD_PS))?;
        fallback_count += usize::from(or.fallback) + usize::from(ps.fallback);

        let (pred_a, pred1, pred0) = initial_predictions(&or, &train);
        let g_train = pscore_predictions(&ps, &train);
        let (fluct, targ1_tr, targ0_tr) = target(&pred_a, &pred1, &pred0, &g_train, &train)?;
        let n_train = train.n_units() as f64;
        let psi1_train = targ1_tr.iter().sum::<f64>() / n_train;
        let psi0_train = targ0_tr.iter().sum::<f64>() / n_train;

        let mut fold_ics = Vec::with_capacity(val_units.len());
        for &ui in &val_units {
            let mut unit_sum = 0.0f64;
            for &r in &units.members[ui] {
                let u = &data.units[r];
                let p1 = or.predict_outcome(1, &u.covariates);
                let p0 = or.predict_outcome(0, &u.covariates);
                let g = ps.predict_pscore(&u.covariates);
                let t1 = expit(logit(clip_unit(p1)) + fluct.eps1 / g);
                let t0 = expit(logit(clip_unit(p0)) + fluct.eps0 / (1.0 - g));
                let h1 = if u.arm == 1 { 1.0 / g } else { 0.0 };
                let h0 = if u.arm == 0 { 1.0 / (1.0 - g) } else { 0.0 };
                let ic1 = h1 * (u.outcome - t1) + t1 - psi1_train;
                let ic0 = h0 * (u.outcome - t0) + t0 - psi0_train;
                unit_sum += match estimand {
                    Estimand::Ate => ic1 - ic0,
                    Estimand::Rr => ic1 / psi1_train - ic0 / psi0_train,
                };
            }
            let unit_ic = (j_total / n_total) * unit_sum;
            sum_sq += unit_ic * unit_ic;
            fold_ics.push(unit_ic);
        }
        per_fold_ic.push(fold_ics);
    }

    Ok((sum_sq / j_total, per_fold_ic, fallback_count))
}

/// Argmin with ties broken toward unadjusted first, then earlier position.
fn argmin_score(scores: &[CandidateScore]) -> usize {
    let min = scores.iter().map(|s| s.cv_variance).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> =
        (0..scores.len()).filter(|&i| scores[i].cv_variance == min).collect();
    tied.iter()
        .copied()
        .find(|&i| scores[i].spec.is_unadjusted())
        .unwrap_or(tied[0])
}

/// Stage 1: score every outcome-regression candidate against the unadjusted
/// propensity baseline and return the argmin.
pub fn select_outcome_regression(
    candidates: &[LearnerSpec],
    data: &TrialDataset,
    units: &IndependentUnits,
    folds: &FoldAssignment,
    config: &SapConfig,
) -> Result<(usize, Vec<CandidateScore>)> {
    let baseline_ps = LearnerSpec::pscore(LearnerKind::Unadjusted);
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let (cv_variance, per_fold_ic, fallback_count) = score_pair(
            cand,
            &baseline_ps,
            data,
            units,
            folds,
            config.estimand,
            config.seed,
        )?;
        scores.push(CandidateScore { spec: cand.clone(), cv_variance, per_fold_ic, fallback_count });
    }
    Ok((argmin_score(&scores), scores))
}

/// Stage 2: with the selected outcome regression fixed, score every
/// propensity candidate (full targeting per fold) and return the argmin.
pub fn select_pscore(
    or_spec: &LearnerSpec,
    candidates: &[LearnerSpec],
    data: &TrialDataset,
    units: &IndependentUnits,
    folds: &FoldAssignment,
    config: &SapConfig,
) -> Result<(usize, Vec<CandidateScore>)> {
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let (cv_variance, per_fold_ic, fallback_count) =
            score_pair(or_spec, cand, data, units, folds, config.estimand, config.seed)?;
        scores.push(CandidateScore { spec: cand.clone(), cv_variance, per_fold_ic, fallback_count });
    }
    Ok((argmin_score(&scores), scores))
}

/// Selected pair, full score tables, and the final targeted estimate.
#[derive(Debug, Clone)]
pub struct Selection {
    pub or_spec: LearnerSpec,
    pub ps_spec: LearnerSpec,
    pub or_scores: Vec<CandidateScore>,
    pub ps_scores: Vec<CandidateScore>,
    pub final_estimate: TargetedEstimate,
    pub variance_kind_used: VarianceKind,
    pub scheme: CvScheme,
    pub v_effective: usize,
}

/// The full two-stage selection followed by the final targeted analysis on
/// the complete data. The whole procedure is a pure function of
/// (config, data): identical seeds give identical score tables.
pub fn run_adaptive_prespec(config: &SapConfig, scaled: &ScaledTrial) -> Result<Selection> {
    config.validate()?;
    let data = &scaled.data;
    let scheme = CvScheme::resolve(config, data)?;
    let units = data.independent_units(scheme.unit == CvUnit::Cluster);
    let folds = make_folds(data, &scheme, config.seed)?;

    let or_candidates = config.or_specs();
    let (or_idx, or_scores) =
        select_outcome_regression(&or_candidates, data, &units, &folds, config)?;
    let or_spec = or_candidates[or_idx].clone();

    let ps_candidates = config.ps_specs();
    let (ps_idx, ps_scores) =
        select_pscore(&or_spec, &ps_candidates, data, &units, &folds, config)?;
    let ps_spec = ps_candidates[ps_idx].clone();

    let mut final_estimate = run_tmle(&or_spec, &ps_spec, config, scaled)?;
    if config.variance == VarianceKind::CrossValidated {
        let range = match scaled.scale.kind {
            crate::data::ScaleKind::Binary => 1.0,
            crate::data::ScaleKind::BoundedContinuous => scaled.scale.range(),
        };
        apply_cv_variance(
            &mut final_estimate,
            ps_scores[ps_idx].cv_variance,
            units.len(),
            config.alpha,
            range,
        );
    }

    Ok(Selection {
        or_spec,
        ps_spec,
        or_scores,
        ps_scores,
        final_estimate,
        variance_kind_used: config.variance,
        scheme,
        v_effective: folds.v_effective,
    })
}

/// Estimated variance of the unadjusted estimator divided by that of the
/// selected one.
pub fn precision_gain(
    est_unadjusted: &TargetedEstimate,
    est_selected: &TargetedEstimate,
) -> Result<f64> {
    if est_unadjusted.estimand != est_selected.estimand {
        return Err(Error::Config("precision gain needs a common estimand".into()));
    }
    let var_sel = crate::tmle::effect_variance(est_selected);
    if var_sel == 0.0 {
        return Err(Error::Estimation("selected estimator has zero variance".into()));
    }
    Ok(crate::tmle::effect_variance(est_unadjusted) / var_sel)
}

//! Targeted maximum likelihood estimation of marginal effects.
//!
//! Given a fitted outcome learner and propensity learner, the engine runs the
//! targeting sequence: initial counterfactual predictions, a two-dimensional
//! clever-covariate fluctuation (intercept-free logistic regression of the
//! outcome on the inverse-propensity arm indicators, with the logit of the
//! initial predictions as offset), targeted predictions, point estimates by
//! standardization, influence-curve inference with delta-method handling of
//! the relative effect on the log scale, and cluster-level aggregation when
//! the data are clustered.
//!
//! Targeting both arm means jointly through (h0, h1) yields absolute and
//! relative effects from a single update. When the outcome model already
//! contains an intercept and an arm main term and the propensity is the
//! empirical arm share, the fluctuation coefficients are zero and the
//! targeted estimate reduces to the unadjusted contrast.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{Estimand, SapConfig};
use crate::data::{unscale_effect, ScaledTrial, TrialDataset};
use crate::error::{Error, Result};
use crate::glm::{self, clip_unit, expit, logit, DesignMatrix};
use crate::learners::{
    fit_outcome_learner, fit_pscore_learner, pscore_predictions, FittedLearner, LearnerSpec,
};
use crate::rng::child_seed;

pub(crate) const STREAM_OR_FIT: u64 = 0x01;
pub(crate) const STREAM_PS_FIT: u64 = 0x02;

/// Inverse-propensity arm indicators used as fluctuation regressors.
#[derive(Debug, Clone)]
pub struct CleverCovariates {
    /// `1{A=1} / g` per unit.
    pub h1: Vec<f64>,
    /// `1{A=0} / (1 - g)` per unit.
    pub h0: Vec<f64>,
    pub pscore: Vec<f64>,
}

impl CleverCovariates {
    pub fn from_pscore(arms: &[u8], pscore: &[f64]) -> Self {
        let h1 = arms
            .iter()
            .zip(pscore)
            .map(|(&a, &g)| if a == 1 { 1.0 / g } else { 0.0 })
            .collect();
        let h0 = arms
            .iter()
            .zip(pscore)
            .map(|(&a, &g)| if a == 0 { 1.0 / (1.0 - g) } else { 0.0 })
            .collect();
        Self { h1, h0, pscore: pscore.to_vec() }
    }
}

/// Fitted fluctuation coefficients.
#[derive(Debug, Clone, Copy)]
pub struct Fluctuation {
    pub eps0: f64,
    pub eps1: f64,
    /// False when the fluctuation regression failed and the update was
    /// skipped (the estimate degrades to plain standardization).
    pub converged: bool,
}

/// A targeted estimate with influence-curve inference attached.
#[derive(Debug, Clone)]
pub struct TargetedEstimate {
    pub estimand: Estimand,
    /// Mean targeted prediction under arm 1 / arm 0.
    pub psi1: f64,
    pub psi0: f64,
    pub effect_abs: f64,
    pub effect_rel: f64,
    /// Effect on the estimand's reporting scale (difference or ratio).
    pub effect: f64,
    /// Standard error on the inference scale (log scale for ratios).
    pub se: f64,
    pub ci: (f64, f64),
    /// Per-unit influence curve.
    pub ic: Vec<f64>,
    /// Cluster-aggregated influence curve, when the data are clustered.
    pub ic_cluster: Option<Vec<f64>>,
    pub n_independent_units: usize,
    /// Whether the estimate has been mapped back to the natural outcome scale.
    pub natural_scale: bool,
    pub or_spec: LearnerSpec,
    pub ps_spec: LearnerSpec,
    pub or_fallback: bool,
    pub ps_fallback: bool,
    pub fluctuation: Fluctuation,
    pub seed: u64,
}

/// Initial predictions under the observed arm and both counterfactual arms.
/// The observed-arm prediction is the row-wise selection of the two
/// counterfactual vectors, exactly.
pub fn initial_predictions(
    or_learner: &FittedLearner,
    data: &TrialDataset,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = data.n_units();
    let mut pred_a = Vec::with_capacity(n);
    let mut pred1 = Vec::with_capacity(n);
    let mut pred0 = Vec::with_capacity(n);
    for u in &data.units {
        let p1 = or_learner.predict_outcome(1, &u.covariates);
        let p0 = or_learner.predict_outcome(0, &u.covariates);
        pred_a.push(if u.arm == 1 { p1 } else { p0 });
        pred1.push(p1);
        pred0.push(p0);
    }
    (pred_a, pred1, pred0)
}

/// Fluctuation step: intercept-free logistic regression of the outcome on
/// (h0, h1) with logit of the initial predictions as offset, then targeted
/// counterfactual predictions. A non-convergent fluctuation degrades to
/// eps = (0, 0) with `converged = false`.
pub fn target(
    pred_a: &[f64],
    pred1: &[f64],
    pred0: &[f64],
    pscore: &[f64],
    data: &TrialDataset,
) -> Result<(Fluctuation, Vec<f64>, Vec<f64>)> {
    let n = data.n_units();
    if pred_a.len() != n || pred1.len() != n || pred0.len() != n || pscore.len() != n {
        return Err(Error::Estimation("prediction vectors must match the dataset".into()));
    }
    let arms = data.arms();
    let clever = CleverCovariates::from_pscore(&arms, pscore);
    let offset: Vec<f64> = pred_a.iter().map(|&p| logit(clip_unit(p))).collect();
    let rows: Vec<Vec<f64>> =
        (0..n).map(|i| vec![clever.h0[i], clever.h1[i]]).collect();
    let design = DesignMatrix::from_rows(vec!["h0".into(), "h1".into()], &rows)?;
    let y = data.outcomes();
    let fit = glm::fit_logistic(&design, &y, Some(&offset), None, false)?;
    let fluctuation = if fit.converged {
        Fluctuation { eps0: fit.coefficients[0], eps1: fit.coefficients[1], converged: true }
    } else {
        Fluctuation { eps0: 0.0, eps1: 0.0, converged: false }
    };
    let targ1: Vec<f64> = (0..n)
        .map(|i| expit(logit(clip_unit(pred1[i])) + fluctuation.eps1 / pscore[i]))
        .collect();
    let targ0: Vec<f64> = (0..n)
        .map(|i| expit(logit(clip_unit(pred0[i])) + fluctuation.eps0 / (1.0 - pscore[i])))
        .collect();
    Ok((fluctuation, targ1, targ0))
}

/// Standardize the targeted predictions over the covariate distribution.
pub fn point_estimates(
    targ1: &[f64],
    targ0: &[f64],
    estimand: Estimand,
) -> Result<(f64, f64, f64)> {
    let n = targ1.len() as f64;
    let psi1 = targ1.iter().sum::<f64>() / n;
    let psi0 = targ0.iter().sum::<f64>() / n;
    let effect = match estimand {
        Estimand::Ate => psi1 - psi0,
        Estimand::Rr => {
            if psi0 < 1e-12 {
                return Err(Error::Estimation(
                    "relative effect undefined: control mean is zero".into(),
                ));
            }
            psi1 / psi0
        }
    };
    Ok((psi1, psi0, effect))
}

/// Influence curve of the effect estimate. For the relative effect the curve
/// is on the log scale (delta method).
pub fn influence_curve(
    data: &TrialDataset,
    targ1: &[f64],
    targ0: &[f64],
    pscore: &[f64],
    psi1: f64,
    psi0: f64,
    estimand: Estimand,
) -> Result<Vec<f64>> {
    if estimand == Estimand::Rr && (psi1 <= 0.0 || psi0 <= 0.0) {
        return Err(Error::Estimation("relative effect needs positive arm means".into()));
    }
    let arms = data.arms();
    let clever = CleverCovariates::from_pscore(&arms, pscore);
    let y = data.outcomes();
    let ic = (0..data.n_units())
        .map(|i| {
            let ic1 = clever.h1[i] * (y[i] - targ1[i]) + targ1[i] - psi1;
            let ic0 = clever.h0[i] * (y[i] - targ0[i]) + targ0[i] - psi0;
            match estimand {
                Estimand::Ate => ic1 - ic0,
                Estimand::Rr => ic1 / psi1 - ic0 / psi0,
            }
        })
        .collect();
    Ok(ic)
}

/// Aggregate per-unit influence-curve values within clusters. Each cluster's
/// value is `(J / n) * sum of member values`, which keeps individuals equally
/// weighted while making the cluster the independent unit.
pub fn cluster_aggregate(ic: &[f64], data: &TrialDataset) -> Result<Vec<f64>> {
    if !data.has_clusters {
        return Err(Error::Data("cluster aggregation requires cluster ids".into()));
    }
    if ic.len() != data.n_units() {
        return Err(Error::Estimation("influence vector length mismatch".into()));
    }
    let units = data.independent_units(true);
    if data.cluster_randomized {
        for (rows, arm) in units.members.iter().zip(&units.arm) {
            if arm.is_none() {
                let key = &data.units[rows[0]].cluster_id;
                return Err(Error::Data(format!(
                    "cluster {:?} has units in both arms under a cluster-randomized design",
                    key
                )));
            }
        }
    }
    let j = units.len() as f64;
    let n = data.n_units() as f64;
    Ok(units
        .members
        .iter()
        .map(|rows| (j / n) * rows.iter().map(|&r| ic[r]).sum::<f64>())
        .collect())
}

pub(crate) fn z_quantile(alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(1.0 - alpha / 2.0)
}

/// Wald inference from the influence curve of the independent units:
/// `se = sqrt(Var(ic) / n)` with the (n-1)-denominator sample variance. When
/// `relative` is set, `psi` is on the log scale and the estimate and interval
/// are exponentiated back.
pub fn wald_inference(
    psi: f64,
    ic: &[f64],
    n_units: usize,
    alpha: f64,
    relative: bool,
) -> Result<(f64, f64, (f64, f64))> {
    if n_units < 2 {
        return Err(Error::Estimation("need at least 2 independent units for inference".into()));
    }
    if ic.len() != n_units {
        return Err(Error::Estimation(format!(
            "influence vector has {} entries for {} independent units",
            ic.len(),
            n_units
        )));
    }
    let n = n_units as f64;
    let mean = ic.iter().sum::<f64>() / n;
    let var = ic.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = z_quantile(alpha);
    let (lo, hi) = (psi - z * se, psi + z * se);
    if relative {
        Ok((psi.exp(), se, (lo.exp(), hi.exp())))
    } else {
        Ok((psi, se, (lo, hi)))
    }
}

/// Run the full targeting sequence for one (outcome, propensity) candidate
/// pair and return the estimate on the natural outcome scale.
pub fn run_tmle(
    or_spec: &LearnerSpec,
    ps_spec: &LearnerSpec,
    config: &SapConfig,
    scaled: &ScaledTrial,
) -> Result<TargetedEstimate> {
    let data = &scaled.data;
    let or = fit_outcome_learner(or_spec, data, child_seed(config.seed, STREAM_OR_FIT))?;
    let ps = fit_pscore_learner(ps_spec, data, child_seed(config.seed, STREAM_PS_FIT))?;
    let estimate = run_tmle_fitted(&or, &ps, config, scaled)?;
    Ok(estimate)
}

/// As [`run_tmle`], but with already-fitted learners.
pub fn run_tmle_fitted(
    or: &FittedLearner,
    ps: &FittedLearner,
    config: &SapConfig,
    scaled: &ScaledTrial,
) -> Result<TargetedEstimate> {
    let data = &scaled.data;
    let (pred_a, pred1, pred0) = initial_predictions(or, data);
    let g = pscore_predictions(ps, data);
    let (fluctuation, targ1, targ0) = target(&pred_a, &pred1, &pred0, &g, data)?;
    let (psi1, psi0, _) = point_estimates(&targ1, &targ0, config.estimand)?;
    let ic = influence_curve(data, &targ1, &targ0, &g, psi1, psi0, config.estimand)?;

    let (ic_indep, ic_cluster, n_independent) = if data.has_clusters {
        let c = cluster_aggregate(&ic, data)?;
        let j = c.len();
        (c.clone(), Some(c), j)
    } else {
        (ic.clone(), None, data.n_units())
    };

    let (psi_infer, relative) = match config.estimand {
        Estimand::Ate => (psi1 - psi0, false),
        Estimand::Rr => ((psi1 / psi0).ln(), true),
    };
    let (effect, se, ci) =
        wald_inference(psi_infer, &ic_indep, n_independent, config.alpha, relative)?;

    let scaled_estimate = TargetedEstimate {
        estimand: config.estimand,
        psi1,
        psi0,
        effect_abs: psi1 - psi0,
        effect_rel: psi1 / psi0,
        effect,
        se,
        ci,
        ic,
        ic_cluster,
        n_independent_units: n_independent,
        natural_scale: false,
        or_spec: or.spec.clone(),
        ps_spec: ps.spec.clone(),
        or_fallback: or.fallback,
        ps_fallback: ps.fallback,
        fluctuation,
        seed: config.seed,
    };
    unscale_effect(&scaled_estimate, &scaled.scale, config.estimand)
}

/// Replace the variance piece of an estimate with a cross-validated variance
/// of the influence curve (on the scaled outcome), mapping to the natural
/// scale consistently with the estimate.
pub(crate) fn apply_cv_variance(
    estimate: &mut TargetedEstimate,
    cv_variance_scaled: f64,
    n_independent: usize,
    alpha: f64,
    scale_range: f64,
) {
    let se_scaled = (cv_variance_scaled / n_independent as f64).sqrt();
    let z = z_quantile(alpha);
    match estimate.estimand {
        Estimand::Ate => {
            let se = se_scaled * scale_range;
            estimate.se = se;
            estimate.ci = (estimate.effect - z * se, estimate.effect + z * se);
        }
        Estimand::Rr => {
            // Log-scale quantity; invariant to outcome rescaling.
            let log_effect = estimate.effect.ln();
            estimate.se = se_scaled;
            estimate.ci =
                ((log_effect - z * se_scaled).exp(), (log_effect + z * se_scaled).exp());
        }
    }
}

pub(crate) fn effect_variance(estimate: &TargetedEstimate) -> f64 {
    estimate.se * estimate.se
}

//! Forward stepwise selection on AIC.
//!
//! Starts from the mandatory base model (intercept + arm for the outcome
//! regression, intercept only for the propensity score) and greedily adds the
//! candidate term that lowers AIC the most, stopping when no addition helps.
//! Candidate terms are covariate main effects, plus pairwise interactions when
//! requested; an interaction becomes eligible once both of its main effects
//! are in the model. Ties break toward the earlier candidate in covariate
//! order, so the search is fully deterministic.

use crate::data::TrialDataset;
use crate::error::Result;
use crate::glm;
use crate::learners::{build_design, LearnerRole, LinearModel, ModelTerm};

fn fit_aic(
    data: &TrialDataset,
    terms: &[ModelTerm],
    role: LearnerRole,
) -> Result<Option<(LinearModel, f64)>> {
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
    let aic = fit.aic();
    let mut idx = 1;
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
    Ok(Some((
        LinearModel { intercept: fit.coefficients[0], arm_coef, terms: term_coefs },
        aic,
    )))
}

/// Run the forward search. `None` when even the base model fails to fit.
pub(crate) fn fit(
    data: &TrialDataset,
    role: LearnerRole,
    interactions: bool,
) -> Result<Option<LinearModel>> {
    let p = data.covariate_names.len();
    let mut pool: Vec<ModelTerm> = (0..p).map(ModelTerm::Main).collect();
    if interactions {
        for i in 0..p {
            for j in (i + 1)..p {
                pool.push(ModelTerm::Interaction(i, j));
            }
        }
    }

    let Some((mut best_model, mut best_aic)) = fit_aic(data, &[], role)? else {
        return Ok(None);
    };
    let mut included: Vec<ModelTerm> = Vec::new();

    loop {
        let mut improvement: Option<(LinearModel, f64, ModelTerm)> = None;
        for cand in &pool {
            if included.contains(cand) {
                continue;
            }
            if let ModelTerm::Interaction(i, j) = cand {
                let has = |k: usize| included.contains(&ModelTerm::Main(k));
                if !has(*i) || !has(*j) {
                    continue;
                }
            }
            let mut trial = included.clone();
            trial.push(*cand);
            let Some((model, aic)) = fit_aic(data, &trial, role)? else { continue };
            let current_best = improvement.as_ref().map_or(best_aic, |(_, a, _)| *a);
            if aic < current_best {
                improvement = Some((model, aic, *cand));
            }
        }
        match improvement {
            Some((model, aic, term)) => {
                included.push(term);
                best_model = model;
                best_aic = aic;
            }
            None => break,
        }
    }
    Ok(Some(best_model))
}

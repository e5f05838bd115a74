//! Degree-1 regression splines (reflected hinge pairs) with GCV pruning.
//!
//! The forward pass greedily adds the hinge pair `max(0, x - t)`,
//! `max(0, t - x)` (knots at observed values) that most reduces the residual
//! sum of squares, up to 21 basis terms. The backward pass prunes terms by
//! generalized cross-validation with penalty 2 per knot. The basis is fitted
//! to the scaled outcome by least squares; the arm indicator enters as a
//! linear term and is never removed. Optional screening keeps only covariates
//! whose outcome correlation is significant at p < 0.10.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::TrialDataset;
use crate::error::Result;
use crate::glm::solve_sym_alias;
use crate::learners::LearnerRole;

const MAX_TERMS: usize = 21;
const GCV_PENALTY: f64 = 2.0;
const SCREEN_ALPHA: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum MarsTerm {
    Intercept,
    Arm,
    /// max(0, x[cov] - knot)
    HingePos { cov: usize, knot: f64 },
    /// max(0, knot - x[cov])
    HingeNeg { cov: usize, knot: f64 },
}

impl MarsTerm {
    fn eval(&self, arm: f64, covs: &[f64]) -> f64 {
        match *self {
            MarsTerm::Intercept => 1.0,
            MarsTerm::Arm => arm,
            MarsTerm::HingePos { cov, knot } => (covs[cov] - knot).max(0.0),
            MarsTerm::HingeNeg { cov, knot } => (knot - covs[cov]).max(0.0),
        }
    }

    fn knot_key(&self) -> Option<(usize, u64)> {
        match *self {
            MarsTerm::HingePos { cov, knot } | MarsTerm::HingeNeg { cov, knot } => {
                Some((cov, knot.to_bits()))
            }
            _ => None,
        }
    }

    pub(crate) fn describe(&self, covariate_names: &[String]) -> Option<String> {
        match *self {
            MarsTerm::Intercept | MarsTerm::Arm => None,
            MarsTerm::HingePos { cov, knot } => {
                Some(format!("h({}-{knot:.4})", covariate_names[cov]))
            }
            MarsTerm::HingeNeg { cov, knot } => {
                Some(format!("h({knot:.4}-{})", covariate_names[cov]))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MarsModel {
    pub terms: Vec<MarsTerm>,
    pub coefs: Vec<f64>,
}

impl MarsModel {
    /// Raw basis prediction (identity link); callers clip to their range.
    pub fn predict(&self, arm: f64, covs: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefs)
            .map(|(t, c)| c * t.eval(arm, covs))
            .sum()
    }

    /// Knots present in the fitted basis for one covariate.
    #[cfg(test)]
    pub fn knots_for(&self, cov: usize) -> Vec<f64> {
        self.terms
            .iter()
            .filter_map(|t| match *t {
                MarsTerm::HingePos { cov: c, knot } | MarsTerm::HingeNeg { cov: c, knot }
                    if c == cov =>
                {
                    Some(knot)
                }
                _ => None,
            })
            .collect()
    }
}

fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let p = cols.len();
    let n = y.len();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for j in 0..p {
        for k in j..p {
            let s: f64 = (0..n).map(|i| cols[j][i] * cols[k][i]).sum();
            a[j][k] = s;
            a[k][j] = s;
        }
        b[j] = (0..n).map(|i| cols[j][i] * y[i]).sum();
    }
    let mut aliased = vec![false; p];
    let coefs = solve_sym_alias(&mut a, &mut b, &mut aliased, false);
    let mut rss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p).map(|j| coefs[j] * cols[j][i]).sum();
        let r = y[i] - fitted;
        rss += r * r;
    }
    (coefs, rss)
}

fn column_has_variation(col: &[f64]) -> bool {
    col.iter().any(|&v| v != col[0])
}

/// Two-sided p-value of the Pearson correlation between x and y.
fn correlation_p_value(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if n < 3.0 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2.0;
    let t = r * (df / (1.0 - r * r).max(1e-12)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

pub(crate) fn fit(
    data: &TrialDataset,
    role: LearnerRole,
    screening: bool,
) -> Result<Option<MarsModel>> {
    let n = data.n_units();
    let include_arm = role == LearnerRole::OutcomeRegression;
    let y: Vec<f64> = match role {
        LearnerRole::OutcomeRegression => data.outcomes(),
        LearnerRole::PropensityScore => data.units.iter().map(|u| u.arm as f64).collect(),
    };
    let arm_col: Vec<f64> = data.units.iter().map(|u| u.arm as f64).collect();
    let p = data.covariate_names.len();

    let mut kept: Vec<usize> = (0..p).collect();
    if screening {
        kept.retain(|&j| {
            let x: Vec<f64> = data.units.iter().map(|u| u.covariates[j]).collect();
            matches!(correlation_p_value(&x, &y), Some(pv) if pv < SCREEN_ALPHA)
        });
    }

    let mut terms = vec![MarsTerm::Intercept];
    if include_arm {
        terms.push(MarsTerm::Arm);
    }
    let eval_col = |term: &MarsTerm| -> Vec<f64> {
        data.units
            .iter()
            .enumerate()
            .map(|(i, u)| term.eval(arm_col[i], &u.covariates))
            .collect()
    };
    let mut cols: Vec<Vec<f64>> = terms.iter().map(eval_col).collect();

    let (_, mut rss) = least_squares(&cols, &y);
    let ymean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ymean) * (v - ymean)).sum();
    let min_gain = 1e-10 * tss.max(1e-12);

    // Candidate knots: the observed values of each kept covariate.
    let knot_sets: Vec<(usize, Vec<f64>)> = kept
        .iter()
        .map(|&j| {
            let mut vals: Vec<f64> = data.units.iter().map(|u| u.covariates[j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            (j, vals)
        })
        .collect();

    // Forward pass.
    loop {
        if terms.len() >= MAX_TERMS {
            break;
        }
        let mut best: Option<(f64, Vec<MarsTerm>, Vec<Vec<f64>>)> = None;
        for (cov, knots) in &knot_sets {
            for &t in knots {
                let mut new_terms = Vec::new();
                let mut new_cols = Vec::new();
                for cand in [
                    MarsTerm::HingePos { cov: *cov, knot: t },
                    MarsTerm::HingeNeg { cov: *cov, knot: t },
                ] {
                    if terms.contains(&cand) {
                        continue;
                    }
                    let col = eval_col(&cand);
                    if column_has_variation(&col) {
                        new_terms.push(cand);
                        new_cols.push(col);
                    }
                }
                if new_terms.is_empty() || terms.len() + new_terms.len() > MAX_TERMS {
                    continue;
                }
                let mut trial = cols.clone();
                trial.extend(new_cols.iter().cloned());
                let (_, trial_rss) = least_squares(&trial, &y);
                if best.as_ref().is_none_or(|(r, _, _)| trial_rss < *r) {
                    best = Some((trial_rss, new_terms, new_cols));
                }
            }
        }
        match best {
            Some((best_rss, new_terms, new_cols)) if rss - best_rss > min_gain => {
                terms.extend(new_terms);
                cols.extend(new_cols);
                rss = best_rss;
            }
            _ => break,
        }
    }

    // Backward pruning by GCV; intercept and arm are not removable.
    let gcv = |active: &[usize]| -> (f64, f64) {
        let sub: Vec<Vec<f64>> = active.iter().map(|&i| cols[i].clone()).collect();
        let (_, rss) = least_squares(&sub, &y);
        let m = active.len() as f64;
        let knots: std::collections::BTreeSet<(usize, u64)> =
            active.iter().filter_map(|&i| terms[i].knot_key()).collect();
        let eff = m + GCV_PENALTY * knots.len() as f64;
        let denom = 1.0 - eff / n as f64;
        let g = if denom <= 0.0 { f64::INFINITY } else { (rss / n as f64) / (denom * denom) };
        (g, rss)
    };

    let mut active: Vec<usize> = (0..terms.len()).collect();
    let (mut best_gcv, _) = gcv(&active);
    let mut best_active = active.clone();
    loop {
        let removable: Vec<usize> = active
            .iter()
            .cloned()
            .filter(|&i| terms[i].knot_key().is_some())
            .collect();
        if removable.is_empty() {
            break;
        }
        let mut step_best: Option<(f64, usize)> = None;
        for &drop in &removable {
            let trial: Vec<usize> = active.iter().cloned().filter(|&i| i != drop).collect();
            let (g, _) = gcv(&trial);
            if step_best.is_none_or(|(bg, _)| g < bg) {
                step_best = Some((g, drop));
            }
        }
        let (g, drop) = step_best.expect("removable set non-empty");
        active.retain(|&i| i != drop);
        if g < best_gcv {
            best_gcv = g;
            best_active = active.clone();
        }
    }

    let final_terms: Vec<MarsTerm> = best_active.iter().map(|&i| terms[i]).collect();
    let final_cols: Vec<Vec<f64>> = best_active.iter().map(|&i| cols[i].clone()).collect();
    let (coefs, _) = least_squares(&final_cols, &y);
    Ok(Some(MarsModel { terms: final_terms, coefs }))
}

//! Weighted logistic regression fitted by iteratively reweighted least squares.
//!
//! This is the numerical core used by every candidate learner and by the
//! fluctuation step of the targeting engine. It supports offsets, prior
//! weights, and fractional responses in [0, 1] (quasi-binomial deviance), and
//! it drops aliased columns instead of failing so that collinear working
//! models never abort a pre-specified analysis.

use crate::error::{Error, Result};

/// Predicted probabilities are kept inside `[PRED_CLIP, 1 - PRED_CLIP]` so
/// downstream logits stay finite.
pub const PRED_CLIP: f64 = 1e-6;

const SCORE_TOL: f64 = 1e-8;
const RELAXED_SCORE_TOL: f64 = 1e-6;
const DEV_REL_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const ALIAS_TOL: f64 = 1e-10;
/// Linear predictors beyond this magnitude are numerically saturated; a small
/// score at such values indicates separation rather than an interior maximum.
const ETA_LIMIT: f64 = 30.0;

/// Inverse logit.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log odds. The argument must lie strictly inside (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Clamp a probability into the clipped unit interval.
#[inline]
pub fn clip_unit(p: f64) -> f64 {
    p.clamp(PRED_CLIP, 1.0 - PRED_CLIP)
}

/// Dense row-major design matrix with named columns.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn from_rows(column_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = column_names.len();
        let n = rows.len();
        let mut values = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Data(format!(
                    "design row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite design entry in row {i}")));
                }
                values.push(v);
            }
        }
        Ok(Self { n, p, values, column_names })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }
}

/// Result of a logistic fit.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Coefficients, including the intercept first when one was requested.
    /// Aliased (dropped) columns have coefficient 0.
    pub coefficients: Vec<f64>,
    pub column_names: Vec<String>,
    pub has_intercept: bool,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Marks columns dropped for numerical dependence on earlier columns.
    pub aliased: Vec<bool>,
    /// Per-iteration deviance, for diagnostics.
    pub deviance_trace: Vec<f64>,
}

impl GlmFit {
    /// Number of estimated (non-aliased) coefficients.
    pub fn n_estimated(&self) -> usize {
        self.aliased.iter().filter(|a| !**a).count()
    }

    /// Deviance plus twice the number of estimated parameters.
    pub fn aic(&self) -> f64 {
        self.deviance + 2.0 * self.n_estimated() as f64
    }
}

/// Quasi-binomial deviance for responses in [0, 1].
pub fn binomial_deviance(y: &[f64], mu: &[f64], weights: &[f64]) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let m = mu[i].clamp(1e-12, 1.0 - 1e-12);
        let yi = y[i];
        let mut d = 0.0;
        if yi > 0.0 {
            d += yi * (yi / m).ln();
        }
        if yi < 1.0 {
            d += (1.0 - yi) * ((1.0 - yi) / (1.0 - m)).ln();
        }
        dev += 2.0 * w * d;
    }
    dev
}

/// Solve the symmetric positive semi-definite system `a x = b` in place,
/// dropping aliased coordinates (pivot collapses relative to the original
/// diagonal). When `lock` is set, existing alias marks are kept instead of
/// re-detected; a pivot that still collapses is marked regardless.
#[allow(clippy::needless_range_loop)]
pub(crate) fn solve_sym_alias(
    a: &mut [Vec<f64>],
    b: &mut [f64],
    aliased: &mut [bool],
    lock: bool,
) -> Vec<f64> {
    let p = b.len();
    let orig_diag: Vec<f64> = (0..p).map(|j| a[j][j]).collect();
    for j in 0..p {
        if lock && aliased[j] {
            continue;
        }
        let piv = a[j][j];
        let degenerate = orig_diag[j] <= 0.0 || piv <= ALIAS_TOL * orig_diag[j];
        if degenerate {
            aliased[j] = true;
            continue;
        }
        for k in (j + 1)..p {
            if lock && aliased[k] {
                continue;
            }
            let f = a[k][j] / piv;
            if f != 0.0 {
                for m in j..p {
                    a[k][m] -= f * a[j][m];
                }
                b[k] -= f * b[j];
            }
        }
    }
    let mut x = vec![0.0; p];
    for j in (0..p).rev() {
        if aliased[j] {
            continue;
        }
        let mut s = b[j];
        for (m, xm) in x.iter().enumerate().take(p).skip(j + 1) {
            if !aliased[m] {
                s -= a[j][m] * xm;
            }
        }
        x[j] = s / a[j][j];
    }
    x
}

/// Maximize the binomial log-likelihood of `y` with linear predictor
/// `offset + X beta` (plus an intercept when requested) by IRLS with
/// step-halving. Fractional responses are allowed.
///
/// Rank-deficient systems drop aliased columns (coefficient fixed at 0).
/// Separated or otherwise divergent fits come back with `converged = false`;
/// callers decide how to degrade.
#[allow(clippy::needless_range_loop)]
pub fn fit_logistic(
    x: &DesignMatrix,
    y: &[f64],
    offset: Option<&[f64]>,
    weights: Option<&[f64]>,
    intercept: bool,
) -> Result<GlmFit> {
    let n = x.n_rows();
    let ic = intercept as usize;
    let p = x.n_cols() + ic;
    if p == 0 {
        return Err(Error::Estimation("empty design: no columns and no intercept".into()));
    }
    if y.len() != n {
        return Err(Error::Estimation(format!(
            "response length {} does not match {} design rows",
            y.len(),
            n
        )));
    }
    for (i, &yi) in y.iter().enumerate() {
        if !yi.is_finite() || !(0.0..=1.0).contains(&yi) {
            return Err(Error::Estimation(format!("response {yi} outside [0,1] at row {i}")));
        }
    }
    let off: Vec<f64> = match offset {
        Some(o) => {
            if o.len() != n {
                return Err(Error::Estimation("offset length mismatch".into()));
            }
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Estimation("non-finite offset".into()));
            }
            o.to_vec()
        }
        None => vec![0.0; n],
    };
    let w: Vec<f64> = match weights {
        Some(wv) => {
            if wv.len() != n {
                return Err(Error::Estimation("weight length mismatch".into()));
            }
            if wv.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Estimation("weights must be finite and nonnegative".into()));
            }
            wv.to_vec()
        }
        None => vec![1.0; n],
    };

    let aug = |i: usize, j: usize| -> f64 {
        if intercept && j == 0 {
            1.0
        } else {
            x.get(i, j - ic)
        }
    };

    let mut column_names = Vec::with_capacity(p);
    if intercept {
        column_names.push("(Intercept)".to_string());
    }
    column_names.extend(x.column_names().iter().cloned());

    let mut beta = vec![0.0; p];
    let mut eta = off.clone();
    let mut mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mut dev = binomial_deviance(y, &mu, &w);
    let mut trace = vec![dev];
    let mut aliased = vec![false; p];
    let mut alias_locked = false;
    let mut converged = false;
    let mut iterations = 0;

    let max_abs_eta = |eta: &[f64]| eta.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let score_of = |mu: &[f64]| -> Vec<f64> {
        let mut score = vec![0.0; p];
        for i in 0..n {
            let r = w[i] * (y[i] - mu[i]);
            if r != 0.0 {
                for (j, s) in score.iter_mut().enumerate() {
                    *s += aug(i, j) * r;
                }
            }
        }
        score
    };

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let score = score_of(&mu);
        let max_score = score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if max_score < SCORE_TOL {
            converged = max_abs_eta(&eta) <= ETA_LIMIT;
            break;
        }

        // Weighted normal equations for the Newton step.
        let mut a = vec![vec![0.0; p]; p];
        for i in 0..n {
            let wi = w[i] * (mu[i] * (1.0 - mu[i])).max(1e-10);
            if wi == 0.0 {
                continue;
            }
            for j in 0..p {
                let xj = aug(i, j);
                if xj == 0.0 {
                    continue;
                }
                let wxj = wi * xj;
                for k in j..p {
                    a[j][k] += wxj * aug(i, k);
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                a[j][k] = a[k][j];
            }
        }
        let mut rhs = score.clone();
        let delta = solve_sym_alias(&mut a, &mut rhs, &mut aliased, alias_locked);
        alias_locked = true;

        // Step-halving keeps the deviance non-increasing.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let beta_c: Vec<f64> =
                beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let eta_c: Vec<f64> = (0..n)
                .map(|i| {
                    let mut e = off[i];
                    for (j, bc) in beta_c.iter().enumerate() {
                        if *bc != 0.0 {
                            e += aug(i, j) * bc;
                        }
                    }
                    e
                })
                .collect();
            let mu_c: Vec<f64> = eta_c.iter().map(|&e| expit(e)).collect();
            let dev_c = binomial_deviance(y, &mu_c, &w);
            if dev_c.is_finite() && dev_c <= dev + 1e-12 * (dev.abs() + 1.0) {
                accepted = Some((beta_c, eta_c, mu_c, dev_c));
                break;
            }
            step *= 0.5;
        }
        let Some((beta_c, eta_c, mu_c, dev_c)) = accepted else {
            // No step decreases the deviance: stalled away from a solution.
            converged = false;
            break;
        };
        let rel_change = (dev - dev_c).abs() / (dev_c.abs() + 0.1);
        beta = beta_c;
        eta = eta_c;
        mu = mu_c;
        dev = dev_c;
        trace.push(dev);
        if rel_change < DEV_REL_TOL {
            let s = score_of(&mu);
            let ms = s.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            converged = ms < RELAXED_SCORE_TOL && max_abs_eta(&eta) <= ETA_LIMIT;
            break;
        }
    }

    Ok(GlmFit {
        coefficients: beta,
        column_names,
        has_intercept: intercept,
        converged,
        iterations,
        deviance: dev,
        aliased,
        deviance_trace: trace,
    })
}

/// Predicted probabilities `expit(offset + X beta)`, clipped into the unit
/// interval away from 0 and 1.
pub fn predict_response(fit: &GlmFit, x: &DesignMatrix, offset: Option<&[f64]>) -> Result<Vec<f64>> {
    let ic = fit.has_intercept as usize;
    if x.n_cols() + ic != fit.coefficients.len() {
        return Err(Error::Estimation(format!(
            "design has {} columns but fit expects {}",
            x.n_cols(),
            fit.coefficients.len() - ic
        )));
    }
    let n = x.n_rows();
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::Estimation("offset length mismatch".into()));
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = offset.map_or(0.0, |o| o[i]);
        if fit.has_intercept {
            e += fit.coefficients[0];
        }
        for j in 0..x.n_cols() {
            let b = fit.coefficients[j + ic];
            if b != 0.0 {
                e += b * x.get(i, j);
            }
        }
        out.push(clip_unit(expit(e)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn design(names: &[&str], rows: &[Vec<f64>]) -> DesignMatrix {
        DesignMatrix::from_rows(names.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn intercept_only_matches_closed_form() {
        let x = design(&[], &vec![vec![]; 8]);
        let y = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let fit = fit_logistic(&x, &y, None, None, true).unwrap();
        assert!(fit.converged);
        let expected = logit(0.25);
        assert!((fit.coefficients[0] - expected).abs() < 1e-8, "{}", fit.coefficients[0]);
    }

    #[test]
    fn offset_shifts_intercept() {
        let x = design(&[], &vec![vec![]; 8]);
        let y = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let off = vec![0.7; 8];
        let fit = fit_logistic(&x, &y, Some(&off), None, true).unwrap();
        assert!((fit.coefficients[0] - (logit(0.25) - 0.7)).abs() < 1e-8);
    }

    #[test]
    fn perfect_separation_is_flagged() {
        let rows: Vec<Vec<f64>> = (-10..=10)
            .filter(|v| *v != 0)
            .map(|v| vec![v as f64 / 4.0])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        let x = design(&["x"], &rows);
        let fit = fit_logistic(&x, &y, None, None, true).unwrap();
        assert!(!fit.converged);
        assert!(fit.iterations <= MAX_ITER);
    }

    #[test]
    fn duplicate_column_is_aliased() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| {
            let v = (i as f64 - 10.0) / 5.0;
            vec![v, v]
        }).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let x = design(&["x", "x_copy"], &rows);
        let fit = fit_logistic(&x, &y, None, None, true).unwrap();
        assert!(fit.converged);
        assert!(fit.aliased[2]);
        assert_eq!(fit.coefficients[2], 0.0);
    }

    #[test]
    fn constant_column_aliased_against_intercept() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 6.0, 1.0]).collect();
        let y: Vec<f64> = (0..12).map(|i| if i >= 4 { 1.0 } else { 0.0 }).collect();
        let x = design(&["x", "const"], &rows);
        let fit = fit_logistic(&x, &y, None, None, true).unwrap();
        assert!(fit.aliased[2]);
        assert_eq!(fit.coefficients[2], 0.0);
    }

    #[test]
    fn score_equations_hold_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 150;
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| vec![rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>()]).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.5 + rng.gen::<f64>()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p = expit(-0.3 + 0.8 * r[0] - 0.5 * r[1]);
                if rng.gen::<f64>() < p { 1.0 } else { 0.0 }
            })
            .collect();
        let x = design(&["a", "b"], &rows);
        let fit = fit_logistic(&x, &y, None, Some(&w), true).unwrap();
        assert!(fit.converged);
        // Sum_i w_i x_ij (y_i - p_i) == 0 for each column.
        let mut score = vec![0.0; 3];
        for i in 0..n {
            let e = fit.coefficients[0]
                + fit.coefficients[1] * x.get(i, 0)
                + fit.coefficients[2] * x.get(i, 1);
            let p = expit(e);
            let r = w[i] * (y[i] - p);
            score[0] += r;
            score[1] += r * x.get(i, 0);
            score[2] += r * x.get(i, 1);
        }
        for s in score {
            assert!(s.abs() < 1e-6, "score residual {s}");
        }
    }

    /// Independent oracle: dampened two-parameter Newton iteration coded
    /// directly from the log-likelihood, seeded from a coarse grid search.
    fn newton_oracle(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let loglik = |b0: f64, b1: f64| -> f64 {
            xs.iter()
                .zip(ys)
                .map(|(&x, &y)| {
                    let e = b0 + b1 * x;
                    y * e - (1.0 + e.exp()).ln()
                })
                .sum()
        };
        let mut best = (0.0, 0.0, f64::NEG_INFINITY);
        for i in -20..=20 {
            for j in -20..=20 {
                let (b0, b1) = (i as f64 * 0.2, j as f64 * 0.2);
                let ll = loglik(b0, b1);
                if ll > best.2 {
                    best = (b0, b1, ll);
                }
            }
        }
        let (mut b0, mut b1) = (best.0, best.1);
        for _ in 0..200 {
            let (mut g0, mut g1) = (0.0, 0.0);
            let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
            for (&x, &y) in xs.iter().zip(ys) {
                let p = expit(b0 + b1 * x);
                let r = y - p;
                let v = p * (1.0 - p);
                g0 += r;
                g1 += r * x;
                h00 += v;
                h01 += v * x;
                h11 += v * x * x;
            }
            let det = h00 * h11 - h01 * h01;
            if det.abs() < 1e-14 {
                break;
            }
            let s0 = (h11 * g0 - h01 * g1) / det;
            let s1 = (h00 * g1 - h01 * g0) / det;
            b0 += s0;
            b1 += s1;
            if s0.abs().max(s1.abs()) < 1e-13 {
                break;
            }
        }
        (b0, b1)
    }

    #[test]
    fn recovers_coefficients_against_newton_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let p = expit(-0.5 + 1.2 * x);
                if rng.gen::<f64>() < p { 1.0 } else { 0.0 }
            })
            .collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let fit = fit_logistic(&design(&["x"], &rows), &ys, None, None, true).unwrap();
        assert!(fit.converged);
        let (b0, b1) = newton_oracle(&xs, &ys);
        assert!((fit.coefficients[0] - b0).abs() < 1e-6, "{} vs {}", fit.coefficients[0], b0);
        assert!((fit.coefficients[1] - b1).abs() < 1e-6, "{} vs {}", fit.coefficients[1], b1);
    }

    #[test]
    fn deviance_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 80;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>() * 3.0]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if rng.gen::<f64>() < expit(1.5 - r[0]) { 1.0 } else { 0.0 })
            .collect();
        let fit = fit_logistic(&design(&["x"], &rows), &y, None, None, true).unwrap();
        for pair in fit.deviance_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * (pair[0].abs() + 1.0));
        }
    }

    #[test]
    fn permuting_rows_leaves_coefficients_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>() * 2.0]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if rng.gen::<f64>() < expit(0.4 * r[0] - 0.6 * r[1]) { 1.0 } else { 0.0 })
            .collect();
        let fit = fit_logistic(&design(&["a", "b"], &rows), &y, None, None, true).unwrap();

        let perm: Vec<usize> = {
            let mut idx: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(77));
            idx
        };
        let rows_p: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let y_p: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let fit_p = fit_logistic(&design(&["a", "b"], &rows_p), &y_p, None, None, true).unwrap();
        for (c1, c2) in fit.coefficients.iter().zip(&fit_p.coefficients) {
            assert!((c1 - c2).abs() < 1e-10);
        }
    }

    #[test]
    fn predictions_with_zero_coefficients_are_half() {
        let x = design(&["x"], &[vec![0.3], vec![-1.2], vec![4.0]]);
        let fit = GlmFit {
            coefficients: vec![0.0, 0.0],
            column_names: vec!["(Intercept)".into(), "x".into()],
            has_intercept: true,
            converged: true,
            iterations: 0,
            deviance: 0.0,
            aliased: vec![false, false],
            deviance_trace: vec![],
        };
        let p = predict_response(&fit, &x, None).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn predictions_stay_strictly_inside_unit_interval() {
        let x = design(&["x"], &[vec![100.0], vec![-100.0]]);
        let fit = GlmFit {
            coefficients: vec![0.0, 5.0],
            column_names: vec!["(Intercept)".into(), "x".into()],
            has_intercept: true,
            converged: true,
            iterations: 0,
            deviance: 0.0,
            aliased: vec![false, false],
            deviance_trace: vec![],
        };
        let p = predict_response(&fit, &x, None).unwrap();
        assert_eq!(p[0], 1.0 - PRED_CLIP);
        assert_eq!(p[1], PRED_CLIP);
    }

    #[test]
    fn fractional_responses_are_accepted() {
        let x = design(&[], &vec![vec![]; 5]);
        let y = vec![0.2, 0.4, 0.6, 0.35, 0.45];
        let fit = fit_logistic(&x, &y, None, None, true).unwrap();
        assert!(fit.converged);
        let mean = y.iter().sum::<f64>() / 5.0;
        assert!((expit(fit.coefficients[0]) - mean).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let x = design(&["x"], &[vec![1.0], vec![2.0]]);
        let err = fit_logistic(&x, &[0.5], None, None, true);
        assert!(err.is_err());
    }
}

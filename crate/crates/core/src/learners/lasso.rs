//! L1-penalized logistic regression by cyclic coordinate descent.
//!
//! Covariates are standardized and penalized; the intercept (and the arm
//! indicator, for the outcome role) stay unpenalized. The penalty moves along
//! a 50-point log-spaced path from `lambda_max` (smallest penalty zeroing all
//! covariates) down to `0.001 * lambda_max`, and the returned fit uses the
//! path point minimizing 5-fold cross-validated deviance. Inner folds are
//! derived deterministically from the run seed. Coefficients are reported on
//! the original covariate scale.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TrialDataset;
use crate::error::Result;
use crate::glm::{self, expit};
use crate::learners::{build_design, LearnerRole, LinearModel, ModelTerm};

const N_LAMBDA: usize = 50;
const LAMBDA_MIN_RATIO: f64 = 0.001;
const INNER_FOLDS: usize = 5;
const MAX_OUTER: usize = 50;
const MAX_SWEEPS: usize = 500;
const SWEEP_TOL: f64 = 1e-9;
const OUTER_TOL: f64 = 1e-8;

/// Soft-thresholding operator S(z, t) = sign(z) * max(|z| - t, 0).
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// One cyclic pass of coordinate descent over the penalized columns of a
/// weighted least-squares problem
/// `(1/2n) sum_i w_i (r_i + x_i' beta_old ... )^2 + lambda * |beta|_1`,
/// expressed through the running residual `r_i = z_i - eta_i`.
/// Returns the largest absolute coefficient change of the pass.
pub fn cd_sweep(
    cols: &[Vec<f64>],
    weights: &[f64],
    residual: &mut [f64],
    beta: &mut [f64],
    lambda: f64,
) -> f64 {
    let n = residual.len() as f64;
    let mut max_delta = 0.0f64;
    for (j, col) in cols.iter().enumerate() {
        let mut rho = 0.0;
        let mut denom = 0.0;
        for i in 0..residual.len() {
            let wx = weights[i] * col[i];
            rho += wx * residual[i];
            denom += wx * col[i];
        }
        rho = rho / n + denom / n * beta[j];
        denom /= n;
        if denom <= 1e-12 {
            continue;
        }
        let new = soft_threshold(rho, lambda) / denom;
        let delta = new - beta[j];
        if delta != 0.0 {
            for i in 0..residual.len() {
                residual[i] -= delta * col[i];
            }
            max_delta = max_delta.max(delta.abs());
            beta[j] = new;
        }
    }
    max_delta
}

/// Coefficients on the standardized scale for one penalized fit.
#[derive(Clone, Debug)]
struct PathPoint {
    b0: f64,
    b_arm: f64,
    b_cov: Vec<f64>,
}

struct Problem<'a> {
    y: &'a [f64],
    arm: Option<&'a [f64]>,
    cols: &'a [Vec<f64>],
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn eta(&self, point: &PathPoint) -> Vec<f64> {
        let n = self.n();
        let mut eta = vec![point.b0; n];
        if let Some(a) = self.arm {
            for i in 0..n {
                eta[i] += point.b_arm * a[i];
            }
        }
        for (j, col) in self.cols.iter().enumerate() {
            let b = point.b_cov[j];
            if b != 0.0 {
                for i in 0..n {
                    eta[i] += b * col[i];
                }
            }
        }
        eta
    }

    /// Penalized IRLS: quadratic approximation around the current point, then
    /// cyclic coordinate descent on the working least-squares problem.
    fn solve(&self, lambda: f64, warm: &PathPoint) -> Option<PathPoint> {
        let n = self.n();
        let mut point = warm.clone();
        for _ in 0..MAX_OUTER {
            let start = point.clone();
            let eta = self.eta(&point);
            let mut w = vec![0.0; n];
            let mut z = vec![0.0; n];
            for i in 0..n {
                let mu = expit(eta[i]);
                let wi = (mu * (1.0 - mu)).max(1e-5);
                w[i] = wi;
                z[i] = eta[i] + (self.y[i] - mu) / wi;
            }
            let mut residual: Vec<f64> = (0..n).map(|i| z[i] - eta[i]).collect();
            for _ in 0..MAX_SWEEPS {
                let mut max_delta = 0.0f64;
                // Unpenalized intercept.
                let sw: f64 = w.iter().sum();
                let swr: f64 = (0..n).map(|i| w[i] * residual[i]).sum();
                let d0 = swr / sw;
                if d0 != 0.0 {
                    point.b0 += d0;
                    for r in residual.iter_mut() {
                        *r -= d0;
                    }
                    max_delta = max_delta.max(d0.abs());
                }
                // Unpenalized arm indicator.
                if let Some(a) = self.arm {
                    let swa: f64 = (0..n).map(|i| w[i] * a[i] * a[i]).sum();
                    if swa > 1e-12 {
                        let swar: f64 = (0..n).map(|i| w[i] * a[i] * residual[i]).sum();
                        let da = swar / swa;
                        if da != 0.0 {
                            point.b_arm += da;
                            for i in 0..n {
                                residual[i] -= da * a[i];
                            }
                            max_delta = max_delta.max(da.abs());
                        }
                    }
                }
                max_delta =
                    max_delta.max(cd_sweep(self.cols, &w, &mut residual, &mut point.b_cov, lambda));
                if max_delta < SWEEP_TOL {
                    break;
                }
            }
            if !point.b0.is_finite()
                || !point.b_arm.is_finite()
                || point.b_cov.iter().any(|b| !b.is_finite())
            {
                return None;
            }
            // Converged when the whole quadratic-approximation step barely
            // moved the coefficients.
            let outer_delta = (point.b0 - start.b0)
                .abs()
                .max((point.b_arm - start.b_arm).abs())
                .max(
                    point
                        .b_cov
                        .iter()
                        .zip(&start.b_cov)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max),
                );
            if outer_delta < OUTER_TOL {
                break;
            }
        }
        Some(point)
    }

    /// Fit the penalty path with warm starts. When `head` is given (the
    /// unpenalized base solution), it is used as the exact fit at the first
    /// path point: by construction of `lambda_max` every penalized
    /// coefficient is zero there.
    fn fit_path(&self, lambdas: &[f64], head: Option<&PathPoint>) -> Option<Vec<PathPoint>> {
        let mut out = Vec::with_capacity(lambdas.len());
        let mut warm = PathPoint { b0: 0.0, b_arm: 0.0, b_cov: vec![0.0; self.cols.len()] };
        for (k, &lambda) in lambdas.iter().enumerate() {
            if k == 0 {
                if let Some(h) = head {
                    warm = h.clone();
                    out.push(warm.clone());
                    continue;
                }
            }
            warm = self.solve(lambda, &warm)?;
            out.push(warm.clone());
        }
        Some(out)
    }
}

/// Stratified row folds (by arm), dealt round-robin after a seeded shuffle.
fn row_folds(arms: &[u8], v: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; arms.len()];
    for arm in [1u8, 0u8] {
        let mut rows: Vec<usize> =
            (0..arms.len()).filter(|&i| arms[i] == arm).collect();
        rows.shuffle(&mut rng);
        for (k, &row) in rows.iter().enumerate() {
            fold[row] = k % v;
        }
    }
    fold
}

pub(crate) fn fit(
    data: &TrialDataset,
    role: LearnerRole,
    seed: u64,
) -> Result<Option<LinearModel>> {
    let n = data.n_units();
    let p = data.covariate_names.len();
    let include_arm = role == LearnerRole::OutcomeRegression;
    let y: Vec<f64> = match role {
        LearnerRole::OutcomeRegression => data.outcomes(),
        LearnerRole::PropensityScore => data.units.iter().map(|u| u.arm as f64).collect(),
    };
    let arm_col: Vec<f64> = data.units.iter().map(|u| u.arm as f64).collect();

    // Too little data for an inner split, or nothing to penalize: fall back to
    // the unpenalized base model.
    if p == 0 || n < 2 * INNER_FOLDS {
        return crate::learners::fit_linear_terms(data, &[], role);
    }

    // Standardize covariates; zero-variance columns carry no information and
    // are left out of the penalized set.
    let mut active: Vec<usize> = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..p {
        let raw: Vec<f64> = data.units.iter().map(|u| u.covariates[j]).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            active.push(j);
            means.push(mean);
            sds.push(sd);
            cols.push(raw.iter().map(|v| (v - mean) / sd).collect());
        }
    }
    if active.is_empty() {
        return crate::learners::fit_linear_terms(data, &[], role);
    }

    // lambda_max comes from the score of the unpenalized base model: it is the
    // smallest penalty at which every covariate coefficient is exactly zero.
    let base_design = build_design(data, &[], include_arm);
    let base = glm::fit_logistic(&base_design, &y, None, None, true)?;
    if !base.converged {
        return Ok(None);
    }
    let mu0 = glm::predict_response(&base, &base_design, None)?;
    let lambda_max = cols
        .iter()
        .map(|col| {
            let s: f64 = col.iter().zip(y.iter().zip(&mu0)).map(|(x, (yi, m))| x * (yi - m)).sum();
            (s / n as f64).abs()
        })
        .fold(0.0f64, f64::max);
    if lambda_max <= 1e-12 {
        return crate::learners::fit_linear_terms(data, &[], role);
    }
    let lambdas: Vec<f64> = (0..N_LAMBDA)
        .map(|k| lambda_max * LAMBDA_MIN_RATIO.powf(k as f64 / (N_LAMBDA - 1) as f64))
        .collect();

    // Inner cross-validation over the path.
    let arms = data.arms();
    let fold_of = row_folds(&arms, INNER_FOLDS, seed);
    let mut cv_dev = vec![0.0f64; N_LAMBDA];
    for v in 0..INNER_FOLDS {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != v).collect();
        let val: Vec<usize> = (0..n).filter(|&i| fold_of[i] == v).collect();
        if val.is_empty() || train.is_empty() {
            continue;
        }
        let y_tr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let arm_tr: Vec<f64> = train.iter().map(|&i| arm_col[i]).collect();
        let cols_tr: Vec<Vec<f64>> =
            cols.iter().map(|c| train.iter().map(|&i| c[i]).collect()).collect();
        let problem = Problem {
            y: &y_tr,
            arm: include_arm.then_some(arm_tr.as_slice()),
            cols: &cols_tr,
        };
        let Some(path) = problem.fit_path(&lambdas, None) else { return Ok(None) };
        for (k, point) in path.iter().enumerate() {
            let mut dev = 0.0;
            for &i in &val {
                let mut e = point.b0;
                if include_arm {
                    e += point.b_arm * arm_col[i];
                }
                for (j, col) in cols.iter().enumerate() {
                    e += point.b_cov[j] * col[i];
                }
                let mu = expit(e).clamp(1e-12, 1.0 - 1e-12);
                let yi = y[i];
                if yi > 0.0 {
                    dev += 2.0 * yi * (yi / mu).ln();
                }
                if yi < 1.0 {
                    dev += 2.0 * (1.0 - yi) * ((1.0 - yi) / (1.0 - mu)).ln();
                }
            }
            cv_dev[k] += dev;
        }
    }
    // Ties break toward the larger penalty (sparser model).
    let mut best_k = 0;
    for k in 1..N_LAMBDA {
        if cv_dev[k] < cv_dev[best_k] {
            best_k = k;
        }
    }

    let problem = Problem {
        y: &y,
        arm: include_arm.then_some(arm_col.as_slice()),
        cols: &cols,
    };
    let base_point = PathPoint {
        b0: base.coefficients[0],
        b_arm: if include_arm { base.coefficients[1] } else { 0.0 },
        b_cov: vec![0.0; cols.len()],
    };
    let Some(path) = problem.fit_path(&lambdas[..=best_k], Some(&base_point)) else {
        return Ok(None);
    };
    let chosen = &path[best_k];

    // Back to the original covariate scale.
    let mut intercept = chosen.b0;
    let mut terms = Vec::new();
    for (slot, &j) in active.iter().enumerate() {
        let b_std = chosen.b_cov[slot];
        if b_std != 0.0 {
            let b = b_std / sds[slot];
            intercept -= b * means[slot];
            terms.push((ModelTerm::Main(j), b));
        }
    }
    Ok(Some(LinearModel { intercept, arm_coef: chosen.b_arm, terms }))
}

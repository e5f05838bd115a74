//! Monte-Carlo verification harness: parametric data-generating processes,
//! treatment-blind permutation checks, and estimator-comparison metrics.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::config::{Estimand, SapConfig};
use crate::data::{TrialDataset, Unit};
use crate::error::{Error, Result};
use crate::glm::expit;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::rng::child_seed;
use crate::select::run_adaptive_prespec;
use crate::tmle::run_tmle;

/// Draws used to evaluate counterfactual means when no closed form exists.
const TRUTH_DRAWS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CovDist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl CovDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CovDist::Uniform { low, high } => low + (high - low) * rng.gen::<f64>(),
            CovDist::Normal { mean, sd } => {
                // Box-Muller keeps the draw count per unit fixed.
                let u1 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
                let u2 = rng.gen::<f64>();
                mean + sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            }
            CovDist::Bernoulli { p } => {
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            CovDist::Uniform { low, high } => 0.5 * (low + high),
            CovDist::Normal { mean, .. } => mean,
            CovDist::Bernoulli { p } => p,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateGen {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovDist,
    /// Main-effect coefficient in the outcome linear predictor.
    #[serde(default)]
    pub coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionTerm {
    CovCov { a: String, b: String, coef: f64 },
    ArmCov { a: String, coef: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Bernoulli outcome through the inverse-logit of the linear predictor.
    Binary,
    /// Identity link plus uniform noise on `[-noise_half_width, +noise_half_width]`.
    Continuous,
}

/// A parametric trial-generating process with a known true effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    #[serde(default)]
    pub n_clusters: Option<usize>,
    /// SD of a normal cluster-level shift added to the linear predictor.
    #[serde(default)]
    pub cluster_effect_sd: f64,
    pub randomization_probability: f64,
    pub outcome: OutcomeKind,
    #[serde(default)]
    pub noise_half_width: f64,
    pub intercept: f64,
    pub arm_coef: f64,
    #[serde(default)]
    pub covariates: Vec<CovariateGen>,
    #[serde(default)]
    pub interactions: Vec<InteractionTerm>,
    /// Known true effect, when supplied externally; otherwise derived once
    /// per simulation run (closed form or a 1e7-draw evaluation).
    #[serde(default)]
    pub true_effect: Option<f64>,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.randomization_probability > 0.0 && self.randomization_probability < 1.0) {
            return Err(Error::Config("randomization probability must lie in (0, 1)".into()));
        }
        if self.n_units < 4 {
            return Err(Error::Config("need at least 4 units".into()));
        }
        if let Some(c) = self.n_clusters {
            if c < 4 || c > self.n_units {
                return Err(Error::Config(format!(
                    "n_clusters ({c}) must lie in [4, n_units]"
                )));
            }
        }
        if self.outcome == OutcomeKind::Continuous && self.noise_half_width < 0.0 {
            return Err(Error::Config("noise_half_width must be nonnegative".into()));
        }
        for term in &self.interactions {
            let (a, b) = match term {
                InteractionTerm::CovCov { a, b, .. } => (a.as_str(), Some(b.as_str())),
                InteractionTerm::ArmCov { a, .. } => (a.as_str(), None),
            };
            for name in [Some(a), b].into_iter().flatten() {
                if !self.covariates.iter().any(|c| c.name == name) {
                    return Err(Error::Config(format!(
                        "interaction references unknown covariate `{name}`"
                    )));
                }
            }
        }
        Ok(())
    }

    fn cov_index(&self, name: &str) -> usize {
        self.covariates.iter().position(|c| c.name == name).expect("validated")
    }

    fn linear_predictor(&self, arm: f64, covs: &[f64]) -> f64 {
        let mut lp = self.intercept + self.arm_coef * arm;
        for (gen, w) in self.covariates.iter().zip(covs) {
            lp += gen.coef * w;
        }
        for term in &self.interactions {
            match term {
                InteractionTerm::CovCov { a, b, coef } => {
                    lp += coef * covs[self.cov_index(a)] * covs[self.cov_index(b)];
                }
                InteractionTerm::ArmCov { a, coef } => {
                    lp += coef * arm * covs[self.cov_index(a)];
                }
            }
        }
        lp
    }

    /// Generate one trial. Arm draws are retried until both arms hold at
    /// least two units, so every generated dataset is analyzable.
    pub fn generate(&self, seed: u64) -> Result<TrialDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n_units;

        let cluster_of: Option<Vec<usize>> =
            self.n_clusters.map(|c| (0..n).map(|i| i % c).collect());

        let arms: Vec<u8> = {
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > 1000 {
                    return Err(Error::Estimation(
                        "could not draw arms with both groups populated".into(),
                    ));
                }
                let drawn: Vec<u8> = match (&cluster_of, self.n_clusters) {
                    (Some(cluster_of), Some(c)) => {
                        let cluster_arm: Vec<u8> = (0..c)
                            .map(|_| u8::from(rng.gen::<f64>() < self.randomization_probability))
                            .collect();
                        cluster_of.iter().map(|&cl| cluster_arm[cl]).collect()
                    }
                    _ => (0..n)
                        .map(|_| u8::from(rng.gen::<f64>() < self.randomization_probability))
                        .collect(),
                };
                let n1: usize = drawn.iter().map(|&a| a as usize).sum();
                if n1 >= 2 && n - n1 >= 2 {
                    break drawn;
                }
            }
        };

        let cluster_shift: Vec<f64> = match (&cluster_of, self.cluster_effect_sd) {
            (Some(_), sd) if sd > 0.0 => {
                let c = self.n_clusters.unwrap();
                (0..c)
                    .map(|_| CovDist::Normal { mean: 0.0, sd }.sample(&mut rng))
                    .collect()
            }
            _ => Vec::new(),
        };

        let units: Vec<Unit> = (0..n)
            .map(|i| {
                let covs: Vec<f64> =
                    self.covariates.iter().map(|c| c.dist.sample(&mut rng)).collect();
                let mut lp = self.linear_predictor(arms[i] as f64, &covs);
                if let Some(cluster_of) = &cluster_of {
                    if !cluster_shift.is_empty() {
                        lp += cluster_shift[cluster_of[i]];
                    }
                }
                let outcome = match self.outcome {
                    OutcomeKind::Binary => {
                        if rng.gen::<f64>() < expit(lp) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    OutcomeKind::Continuous => {
                        lp + self.noise_half_width * (2.0 * rng.gen::<f64>() - 1.0)
                    }
                };
                Unit {
                    id: format!("u{i}"),
                    cluster_id: cluster_of.as_ref().map(|c| format!("c{}", c[i])),
                    arm: arms[i],
                    outcome,
                    covariates: covs,
                }
            })
            .collect();

        TrialDataset::new(units, self.covariates.iter().map(|c| c.name.clone()).collect())
    }

    /// Counterfactual outcome means (psi1, psi0): closed form under the
    /// identity link, a large fixed-seed Monte-Carlo evaluation otherwise.
    pub fn counterfactual_means(&self) -> (f64, f64) {
        match self.outcome {
            OutcomeKind::Continuous => {
                let mean_covs: Vec<f64> = self.covariates.iter().map(|c| c.dist.mean()).collect();
                let mut psi = [0.0f64; 2];
                for (a, slot) in [(1.0, 0usize), (0.0, 1usize)] {
                    let mut lp = self.intercept + self.arm_coef * a;
                    for (gen, m) in self.covariates.iter().zip(&mean_covs) {
                        lp += gen.coef * m;
                    }
                    for term in &self.interactions {
                        match term {
                            // Covariates are drawn independently.
                            InteractionTerm::CovCov { a: ca, b, coef } => {
                                lp += coef
                                    * mean_covs[self.cov_index(ca)]
                                    * mean_covs[self.cov_index(b)];
                            }
                            InteractionTerm::ArmCov { a: ca, coef } => {
                                lp += coef * a * mean_covs[self.cov_index(ca)];
                            }
                        }
                    }
                    psi[slot] = lp;
                }
                (psi[0], psi[1])
            }
            OutcomeKind::Binary => {
                let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE_5EED);
                let mut sum1 = 0.0f64;
                let mut sum0 = 0.0f64;
                let sd = self.cluster_effect_sd;
                for _ in 0..TRUTH_DRAWS {
                    let covs: Vec<f64> =
                        self.covariates.iter().map(|c| c.dist.sample(&mut rng)).collect();
                    let shift = if self.n_clusters.is_some() && sd > 0.0 {
                        CovDist::Normal { mean: 0.0, sd }.sample(&mut rng)
                    } else {
                        0.0
                    };
                    sum1 += expit(self.linear_predictor(1.0, &covs) + shift);
                    sum0 += expit(self.linear_predictor(0.0, &covs) + shift);
                }
                (sum1 / TRUTH_DRAWS as f64, sum0 / TRUTH_DRAWS as f64)
            }
        }
    }

    /// True effect for the estimand, with the derivation method recorded.
    pub fn resolve_true_effect(&self, estimand: Estimand) -> Result<(f64, String)> {
        if let Some(v) = self.true_effect {
            return Ok((v, "specified".into()));
        }
        let (psi1, psi0) = self.counterfactual_means();
        match estimand {
            Estimand::Ate => {
                let method = match self.outcome {
                    OutcomeKind::Continuous => "analytic",
                    OutcomeKind::Binary => "monte_carlo_1e7",
                };
                Ok((psi1 - psi0, method.into()))
            }
            Estimand::Rr => {
                if psi0 <= 0.0 {
                    return Err(Error::Config("true control mean is not positive".into()));
                }
                let method = match self.outcome {
                    OutcomeKind::Continuous => "analytic",
                    OutcomeKind::Binary => "monte_carlo_1e7",
                };
                Ok((psi1 / psi0, method.into()))
            }
        }
    }
}

pub fn parse_dgp_config(text: &str) -> Result<DgpSpec> {
    let dgp: DgpSpec = toml::from_str(text).map_err(|e| Error::Parse(format!("DGP config: {e}")))?;
    dgp.validate()?;
    Ok(dgp)
}

/// Replicate-level metrics for one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorMetrics {
    /// Mean estimate minus the truth (log scale for relative estimands).
    pub mean_bias: f64,
    pub empirical_variance: f64,
    pub mean_estimated_variance: f64,
    pub mse: f64,
    pub ci_coverage: f64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub reps: usize,
    pub completed: usize,
    pub failures: usize,
    pub true_effect: f64,
    pub true_effect_method: String,
    pub unadjusted: EstimatorMetrics,
    pub adaptive: EstimatorMetrics,
    /// Empirical variance of the unadjusted estimates over that of the
    /// adaptive ones.
    pub relative_precision: f64,
    /// `1 - MSE(adaptive) / MSE(unadjusted)`.
    pub sample_size_savings: f64,
    pub master_seed: u64,
    pub seed_derivation: String,
}

struct ReplicateRecord {
    estimate: f64,
    estimated_variance: f64,
    covered: bool,
    rejected: bool,
}

fn summarize(records: &[ReplicateRecord], truth: f64) -> EstimatorMetrics {
    let r = records.len() as f64;
    let mean_est = records.iter().map(|x| x.estimate).sum::<f64>() / r;
    let empirical_variance =
        records.iter().map(|x| (x.estimate - mean_est).powi(2)).sum::<f64>() / r;
    let mse = records.iter().map(|x| (x.estimate - truth).powi(2)).sum::<f64>() / r;
    EstimatorMetrics {
        mean_bias: mean_est - truth,
        empirical_variance,
        mean_estimated_variance: records.iter().map(|x| x.estimated_variance).sum::<f64>() / r,
        mse,
        ci_coverage: records.iter().filter(|x| x.covered).count() as f64 / r,
        rejection_rate: records.iter().filter(|x| x.rejected).count() as f64 / r,
    }
}

fn record_estimate(
    estimate: &crate::tmle::TargetedEstimate,
    estimand: Estimand,
    truth_natural: f64,
) -> ReplicateRecord {
    let est_infer = match estimand {
        Estimand::Ate => estimate.effect,
        Estimand::Rr => estimate.effect.ln(),
    };
    let null = estimand.null_value();
    ReplicateRecord {
        estimate: est_infer,
        estimated_variance: estimate.se * estimate.se,
        covered: estimate.ci.0 <= truth_natural && truth_natural <= estimate.ci.1,
        rejected: estimate.ci.0 > null || estimate.ci.1 < null,
    }
}

/// Run the full analysis (unadjusted and adaptive) on `reps` simulated
/// trials, each with a deterministically derived child seed, and aggregate
/// against the true effect. Replicate failures are counted, not fatal.
pub fn run_parametric_sim(
    dgp: &DgpSpec,
    config: &SapConfig,
    reps: usize,
    seed: u64,
) -> Result<SimResult> {
    if reps == 0 {
        return Err(Error::Config("need at least 1 replicate".into()));
    }
    dgp.validate()?;
    config.validate()?;
    let (truth, method) = dgp.resolve_true_effect(config.estimand)?;
    let truth_infer = match config.estimand {
        Estimand::Ate => truth,
        Estimand::Rr => truth.ln(),
    };

    let unadj_or = LearnerSpec::outcome(LearnerKind::Unadjusted);
    let unadj_ps = LearnerSpec::pscore(LearnerKind::Unadjusted);

    let mut unadj_records = Vec::with_capacity(reps);
    let mut adaptive_records = Vec::with_capacity(reps);
    let mut failures = 0usize;
    for rep in 0..reps {
        let rep_seed = child_seed(seed, rep as u64);
        let mut rep_config = config.clone();
        rep_config.seed = rep_seed;
        let outcome: Result<(ReplicateRecord, ReplicateRecord)> = (|| {
            let data = dgp.generate(rep_seed)?;
            let scaled = rep_config.scale_dataset(&data)?;
            let unadj = run_tmle(&unadj_or, &unadj_ps, &rep_config, &scaled)?;
            let selection = run_adaptive_prespec(&rep_config, &scaled)?;
            Ok((
                record_estimate(&unadj, config.estimand, truth),
                record_estimate(&selection.final_estimate, config.estimand, truth),
            ))
        })();
        match outcome {
            Ok((u, a)) => {
                unadj_records.push(u);
                adaptive_records.push(a);
            }
            Err(_) => failures += 1,
        }
    }
    if unadj_records.is_empty() {
        return Err(Error::Estimation("every replicate failed".into()));
    }

    let unadjusted = summarize(&unadj_records, truth_infer);
    let adaptive = summarize(&adaptive_records, truth_infer);
    let relative_precision = if adaptive.empirical_variance > 0.0 {
        unadjusted.empirical_variance / adaptive.empirical_variance
    } else {
        f64::INFINITY
    };
    let savings = sample_size_savings(adaptive.mse, unadjusted.mse)?;
    Ok(SimResult {
        reps,
        completed: unadj_records.len(),
        failures,
        true_effect: truth,
        true_effect_method: method,
        unadjusted,
        adaptive,
        relative_precision,
        sample_size_savings: savings,
        master_seed: seed,
        seed_derivation: "splitmix64(master, replicate_index)".into(),
    })
}

/// `1 - MSE(adjusted) / MSE(unadjusted)`: the fraction of sample size the
/// adjusted analysis saves at equal power.
pub fn sample_size_savings(mse_adjusted: f64, mse_unadjusted: f64) -> Result<f64> {
    if mse_unadjusted <= 0.0 {
        return Err(Error::Estimation("unadjusted MSE must be positive".into()));
    }
    if mse_adjusted < 0.0 {
        return Err(Error::Estimation("adjusted MSE must be nonnegative".into()));
    }
    Ok(1.0 - mse_adjusted / mse_unadjusted)
}

#[derive(Debug, Clone, Serialize)]
pub struct PermutationResult {
    pub requested_reps: usize,
    pub permutations_run: usize,
    /// True when every distinct arm assignment was enumerated instead of
    /// sampling.
    pub exhaustive: bool,
    /// True when labels were permuted between clusters (the randomized unit).
    pub cluster_level: bool,
    pub rejections: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    /// Exact (Clopper-Pearson) 95% interval for the rejection rate.
    pub rate_ci95: (f64, f64),
    pub null_value: f64,
    pub master_seed: u64,
}

fn n_choose_k_capped(n: usize, k: usize, cap: u128) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        c = match c.checked_mul((n - k + i) as u128) {
            Some(v) => v / i as u128,
            None => return cap.saturating_add(1),
        };
        if c > cap {
            return cap.saturating_add(1);
        }
    }
    c
}

/// Visit every k-subset of {0..n-1} in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if idx[i] != n - k + i {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            return;
        }
    }
}

fn clopper_pearson(x: usize, n: usize, alpha: f64) -> (f64, f64) {
    let lo = if x == 0 {
        0.0
    } else {
        Beta::new(x as f64, (n - x + 1) as f64)
            .expect("valid shape")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if x == n {
        1.0
    } else {
        Beta::new((x + 1) as f64, (n - x) as f64)
            .expect("valid shape")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Permute arm labels across the randomization units (clusters move as
/// blocks), run the full adaptive analysis on each permuted dataset, and
/// report how often the null is rejected. With fewer distinct assignments
/// than requested replicates, all assignments are enumerated exactly.
pub fn run_permutation_check(
    data: &TrialDataset,
    config: &SapConfig,
    reps: usize,
    seed: u64,
) -> Result<PermutationResult> {
    if reps == 0 {
        return Err(Error::Config("need at least 1 permutation".into()));
    }
    config.validate()?;
    let cluster_level = data.has_clusters && data.cluster_randomized;
    let units = data.independent_units(cluster_level);
    let unit_arms: Vec<u8> = units
        .arm
        .iter()
        .map(|a| a.ok_or_else(|| Error::Data("randomization unit spans both arms".into())))
        .collect::<Result<_>>()?;
    let u = unit_arms.len();
    let n1 = unit_arms.iter().filter(|&&a| a == 1).count();

    let total = n_choose_k_capped(u, n1, reps as u128);
    let exhaustive = total <= reps as u128;

    let mut assignments: Vec<Vec<u8>> = Vec::new();
    if exhaustive {
        for_each_combination(u, n1, |treated| {
            let mut arms = vec![0u8; u];
            for &i in treated {
                arms[i] = 1;
            }
            assignments.push(arms);
        });
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arms = unit_arms.clone();
        for _ in 0..reps {
            arms.shuffle(&mut rng);
            assignments.push(arms.clone());
        }
    }

    let mut rejections = 0usize;
    let mut failures = 0usize;
    let mut run = 0usize;
    let null = config.estimand.null_value();
    for (k, assignment) in assignments.iter().enumerate() {
        let mut permuted_units = data.units.clone();
        for (ui, rows) in units.members.iter().enumerate() {
            for &r in rows {
                permuted_units[r].arm = assignment[ui];
            }
        }
        let outcome: Result<bool> = (|| {
            let permuted =
                TrialDataset::new(permuted_units, data.covariate_names.clone())?;
            let scaled = config.scale_dataset(&permuted)?;
            let mut cfg = config.clone();
            cfg.seed = child_seed(seed, k as u64);
            let sel = run_adaptive_prespec(&cfg, &scaled)?;
            let ci = sel.final_estimate.ci;
            Ok(ci.0 > null || ci.1 < null)
        })();
        match outcome {
            Ok(rejected) => {
                run += 1;
                if rejected {
                    rejections += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    if run == 0 {
        return Err(Error::Estimation("every permutation failed".into()));
    }
    let rate = rejections as f64 / run as f64;
    Ok(PermutationResult {
        requested_reps: reps,
        permutations_run: run,
        exhaustive,
        cluster_level,
        rejections,
        failures,
        rejection_rate: rate,
        rate_ci95: clopper_pearson(rejections, run, 0.05),
        null_value: null,
        master_seed: seed,
    })
}

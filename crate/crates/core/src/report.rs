//! Time-stamped, reproducible analysis reports.
//!
//! A report echoes the full effective configuration and a content hash of the
//! input data, so re-running with the echoed config and the same file
//! reproduces every number bitwise. Reports are written in two forms: a
//! structured JSON document and a human-readable text summary. The timestamp
//! is the only field that differs between identical runs.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{AnalysisConfig, SapConfig};
use crate::data::load_csv;
use crate::error::Result;
use crate::learners::{LearnerKind, LearnerSpec};
use crate::select::{precision_gain, run_adaptive_prespec, CvUnit, Selection};
use crate::sim::{run_parametric_sim, run_permutation_check, DgpSpec, PermutationResult, SimResult};
use crate::tmle::{run_tmle, TargetedEstimate};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn timestamp_now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializable summary of a targeted estimate.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub effect: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub psi1: f64,
    pub psi0: f64,
    pub effect_abs: f64,
    pub effect_rel: f64,
    pub n_independent_units: usize,
    pub or_spec: String,
    pub ps_spec: String,
    pub or_fallback: bool,
    pub ps_fallback: bool,
    pub eps0: f64,
    pub eps1: f64,
    pub fluctuation_converged: bool,
}

impl From<&TargetedEstimate> for EstimateReport {
    fn from(est: &TargetedEstimate) -> Self {
        EstimateReport {
            estimand: format!("{:?}", est.estimand).to_uppercase(),
            effect: est.effect,
            se: est.se,
            ci_lower: est.ci.0,
            ci_upper: est.ci.1,
            psi1: est.psi1,
            psi0: est.psi0,
            effect_abs: est.effect_abs,
            effect_rel: est.effect_rel,
            n_independent_units: est.n_independent_units,
            or_spec: est.or_spec.kind.to_string(),
            ps_spec: est.ps_spec.kind.to_string(),
            or_fallback: est.or_fallback,
            ps_fallback: est.ps_fallback,
            eps0: est.fluctuation.eps0,
            eps1: est.fluctuation.eps1,
            fluctuation_converged: est.fluctuation.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreRow {
    pub spec: String,
    pub cv_variance: f64,
    pub fallback_count: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub or_selected: String,
    pub ps_selected: String,
    pub or_scores: Vec<ScoreRow>,
    pub ps_scores: Vec<ScoreRow>,
    pub cv_unit: String,
    pub cv_folds_effective: usize,
    pub variance_kind: String,
}

impl SelectionReport {
    fn from_selection(sel: &Selection) -> Self {
        let rows = |scores: &[crate::select::CandidateScore], chosen: &LearnerSpec| {
            scores
                .iter()
                .map(|s| ScoreRow {
                    spec: s.spec.kind.to_string(),
                    cv_variance: s.cv_variance,
                    fallback_count: s.fallback_count,
                    selected: s.spec == *chosen,
                })
                .collect()
        };
        SelectionReport {
            or_selected: sel.or_spec.kind.to_string(),
            ps_selected: sel.ps_spec.kind.to_string(),
            or_scores: rows(&sel.or_scores, &sel.or_spec),
            ps_scores: rows(&sel.ps_scores, &sel.ps_spec),
            cv_unit: match sel.scheme.unit {
                CvUnit::Individual => "individual".into(),
                CvUnit::Cluster => "cluster".into(),
            },
            cv_folds_effective: sel.v_effective,
            variance_kind: format!("{:?}", sel.variance_kind_used).to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub timestamp_utc: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub seed_overridden: bool,
    pub data_fingerprint_sha256: String,
    pub n_units: usize,
    pub n_independent_units: usize,
    pub config: AnalysisConfig,
    pub selection: SelectionReport,
    pub final_estimate: EstimateReport,
    pub unadjusted_estimate: EstimateReport,
    /// Estimated variance of the unadjusted estimator over that of the
    /// selected TMLE.
    pub precision_gain: f64,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(&mut out, "Adaptive pre-specified TMLE analysis".into());
        push(&mut out, "====================================".into());
        push(&mut out, format!("generated:        {}", self.timestamp_utc));
        push(&mut out, format!("tool version:     {}", self.tool_version));
        push(&mut out, format!("seed:             {}{}", self.master_seed,
            if self.seed_overridden { " (command-line override)" } else { "" }));
        push(&mut out, format!("data sha256:      {}", self.data_fingerprint_sha256));
        push(&mut out, format!(
            "units:            {} ({} independent)",
            self.n_units, self.n_independent_units
        ));
        push(&mut out, format!(
            "cross-validation: {} folds over {} units, {} variance",
            self.selection.cv_folds_effective, self.selection.cv_unit,
            self.selection.variance_kind
        ));
        push(&mut out, String::new());
        push(&mut out, "Candidate scores (cross-validated IC variance)".into());
        push(&mut out, "  outcome regression:".into());
        for row in &self.selection.or_scores {
            push(&mut out, format!(
                "    {:<18} {:>14.8e}{}{}",
                row.spec,
                row.cv_variance,
                if row.selected { "  <- selected" } else { "" },
                if row.fallback_count > 0 {
                    format!("  ({} fold fallbacks)", row.fallback_count)
                } else {
                    String::new()
                }
            ));
        }
        push(&mut out, "  propensity score:".into());
        for row in &self.selection.ps_scores {
            push(&mut out, format!(
                "    {:<18} {:>14.8e}{}{}",
                row.spec,
                row.cv_variance,
                if row.selected { "  <- selected" } else { "" },
                if row.fallback_count > 0 {
                    format!("  ({} fold fallbacks)", row.fallback_count)
                } else {
                    String::new()
                }
            ));
        }
        push(&mut out, String::new());
        let fe = &self.final_estimate;
        push(&mut out, format!(
            "Final estimate ({}, natural scale)", fe.estimand
        ));
        push(&mut out, format!(
            "  effect {:.6}  se {:.6}  95% CI ({:.6}, {:.6})",
            fe.effect, fe.se, fe.ci_lower, fe.ci_upper
        ));
        push(&mut out, format!(
            "  arm means: psi1 {:.6}  psi0 {:.6}  (eps0 {:.3e}, eps1 {:.3e}{})",
            fe.psi1,
            fe.psi0,
            fe.eps0,
            fe.eps1,
            if fe.fluctuation_converged { "" } else { "; fluctuation skipped" }
        ));
        let ue = &self.unadjusted_estimate;
        push(&mut out, format!(
            "Unadjusted comparison: effect {:.6}  se {:.6}  95% CI ({:.6}, {:.6})",
            ue.effect, ue.se, ue.ci_lower, ue.ci_upper
        ));
        push(&mut out, format!("Precision gain vs unadjusted: {:.4}", self.precision_gain));
        out
    }
}

/// Run the full pre-specified analysis for a config/data pair.
pub fn analyze(
    config: &AnalysisConfig,
    data_path: &Path,
    seed_override: Option<u64>,
) -> Result<AnalysisReport> {
    let mut effective = config.clone();
    let seed_overridden = seed_override.is_some();
    if let Some(seed) = seed_override {
        effective.sap.seed = seed;
    }
    effective.sap.validate()?;

    let bytes = std::fs::read(data_path)?;
    let fingerprint = sha256_hex(&bytes);
    let data = load_csv(data_path, &effective.data)?;
    let scaled = effective.sap.scale_dataset(&data)?;

    let selection = run_adaptive_prespec(&effective.sap, &scaled)?;
    let unadjusted = run_tmle(
        &LearnerSpec::outcome(LearnerKind::Unadjusted),
        &LearnerSpec::pscore(LearnerKind::Unadjusted),
        &effective.sap,
        &scaled,
    )?;
    let gain = precision_gain(&unadjusted, &selection.final_estimate)?;

    Ok(AnalysisReport {
        timestamp_utc: timestamp_now(),
        tool_version: TOOL_VERSION.into(),
        master_seed: effective.sap.seed,
        seed_overridden,
        data_fingerprint_sha256: fingerprint,
        n_units: data.n_units(),
        n_independent_units: selection.final_estimate.n_independent_units,
        config: effective,
        selection: SelectionReport::from_selection(&selection),
        final_estimate: EstimateReport::from(&selection.final_estimate),
        unadjusted_estimate: EstimateReport::from(&unadjusted),
        precision_gain: gain,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub timestamp_utc: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub seed_overridden: bool,
    pub config: SapConfig,
    pub dgp: DgpSpec,
    pub result: SimResult,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let r = &self.result;
        let mut out = String::new();
        out.push_str("Monte-Carlo simulation report\n");
        out.push_str("=============================\n");
        out.push_str(&format!("generated:    {}\n", self.timestamp_utc));
        out.push_str(&format!("tool version: {}\n", self.tool_version));
        out.push_str(&format!("seed:         {}\n", self.master_seed));
        out.push_str(&format!(
            "replicates:   {} requested, {} completed, {} failed\n",
            r.reps, r.completed, r.failures
        ));
        out.push_str(&format!(
            "true effect:  {:.6} ({})\n\n",
            r.true_effect, r.true_effect_method
        ));
        for (name, m) in [("unadjusted", &r.unadjusted), ("adaptive TMLE", &r.adaptive)] {
            out.push_str(&format!("{name}:\n"));
            out.push_str(&format!("  mean bias           {:+.6e}\n", m.mean_bias));
            out.push_str(&format!("  empirical variance  {:.6e}\n", m.empirical_variance));
            out.push_str(&format!("  mean est. variance  {:.6e}\n", m.mean_estimated_variance));
            out.push_str(&format!("  mse                 {:.6e}\n", m.mse));
            out.push_str(&format!("  95% CI coverage     {:.4}\n", m.ci_coverage));
            out.push_str(&format!("  rejection rate      {:.4}\n", m.rejection_rate));
        }
        out.push_str(&format!("\nrelative precision (unadjusted var / adaptive var): {:.4}\n",
            r.relative_precision));
        out.push_str(&format!("sample size savings (1 - mse ratio): {:.4}\n", r.sample_size_savings));
        out
    }
}

/// Run `run_parametric_sim` and wrap it in a time-stamped report.
pub fn simulate(
    dgp: &DgpSpec,
    config: &SapConfig,
    reps: usize,
    seed_override: Option<u64>,
) -> Result<SimReport> {
    let mut sap = config.clone();
    let seed_overridden = seed_override.is_some();
    if let Some(seed) = seed_override {
        sap.seed = seed;
    }
    let result = run_parametric_sim(dgp, &sap, reps, sap.seed)?;
    Ok(SimReport {
        timestamp_utc: timestamp_now(),
        tool_version: TOOL_VERSION.into(),
        master_seed: sap.seed,
        seed_overridden,
        config: sap,
        dgp: dgp.clone(),
        result,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PermReport {
    pub timestamp_utc: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub seed_overridden: bool,
    pub data_fingerprint_sha256: String,
    pub config: AnalysisConfig,
    pub result: PermutationResult,
}

impl PermReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let r = &self.result;
        let mut out = String::new();
        out.push_str("Treatment-blind permutation check\n");
        out.push_str("=================================\n");
        out.push_str(&format!("generated:    {}\n", self.timestamp_utc));
        out.push_str(&format!("tool version: {}\n", self.tool_version));
        out.push_str(&format!("seed:         {}\n", self.master_seed));
        out.push_str(&format!("data sha256:  {}\n", self.data_fingerprint_sha256));
        out.push_str(&format!(
            "permutations: {} run{}{}\n",
            r.permutations_run,
            if r.exhaustive { " (exhaustive enumeration of all assignments)" } else { "" },
            if r.cluster_level { ", labels permuted between clusters" } else { "" }
        ));
        out.push_str(&format!(
            "rejections:   {} of {} -> rate {:.4}, exact 95% CI ({:.4}, {:.4})\n",
            r.rejections, r.permutations_run, r.rejection_rate, r.rate_ci95.0, r.rate_ci95.1
        ));
        out
    }
}

/// Run the permutation check for a config/data pair.
pub fn permtest(
    config: &AnalysisConfig,
    data_path: &Path,
    reps: usize,
    seed_override: Option<u64>,
) -> Result<PermReport> {
    let mut effective = config.clone();
    let seed_overridden = seed_override.is_some();
    if let Some(seed) = seed_override {
        effective.sap.seed = seed;
    }
    let bytes = std::fs::read(data_path)?;
    let fingerprint = sha256_hex(&bytes);
    let data = load_csv(data_path, &effective.data)?;
    let result = run_permutation_check(&data, &effective.sap, reps, effective.sap.seed)?;
    Ok(PermReport {
        timestamp_utc: timestamp_now(),
        tool_version: TOOL_VERSION.into(),
        master_seed: effective.sap.seed,
        seed_overridden,
        data_fingerprint_sha256: fingerprint,
        config: effective,
        result,
    })
}

/// Write the JSON and text forms next to each other: `<stem>.json` and
/// `<stem>.txt`.
pub fn write_report_files(out_stem: &Path, json: &str, text: &str) -> Result<(PathBuf, PathBuf)> {
    let stem = out_stem.to_string_lossy().to_string();
    let json_path = PathBuf::from(format!("{stem}.json"));
    let txt_path = PathBuf::from(format!("{stem}.txt"));
    if let Some(parent) = json_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&json_path, json)?;
    std::fs::write(&txt_path, text)?;
    Ok((json_path, txt_path))
}

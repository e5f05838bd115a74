//! Trial data ingestion, validation, covariate encoding, and outcome scaling.
//!
//! Outcomes are carried on the natural scale at ingestion and mapped onto the
//! unit interval for estimation; effect estimates are mapped back at the end.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use crate::config::Estimand;
use crate::error::{Error, Result};
use crate::tmle::TargetedEstimate;

/// Scaled outcomes are clamped this far inside [0, 1] so later logits of
/// predictions stay finite.
pub const OUTCOME_CLIP: f64 = 1e-6;

/// One randomized participant (or one aggregated record).
#[derive(Debug, Clone)]
pub struct Unit {
    pub id: String,
    pub cluster_id: Option<String>,
    /// Trial arm indicator, 0 or 1.
    pub arm: u8,
    pub outcome: f64,
    /// Covariate values, aligned with `TrialDataset::covariate_names`.
    pub covariates: Vec<f64>,
}

/// Validated trial dataset.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    pub units: Vec<Unit>,
    pub covariate_names: Vec<String>,
    pub has_clusters: bool,
    /// True when every cluster sits entirely in one arm, i.e. randomization
    /// happened at the cluster level. Derived from the data.
    pub cluster_randomized: bool,
}

impl TrialDataset {
    pub fn new(units: Vec<Unit>, covariate_names: Vec<String>) -> Result<Self> {
        let mut counts = [0usize; 2];
        let mut ids = HashSet::new();
        let mut with_cluster = 0usize;
        for u in &units {
            if u.arm > 1 {
                return Err(Error::Data(format!("arm value {} not in {{0,1}}", u.arm)));
            }
            counts[u.arm as usize] += 1;
            if !u.outcome.is_finite() {
                return Err(Error::Data(format!("non-finite outcome for unit {}", u.id)));
            }
            if u.covariates.len() != covariate_names.len() {
                return Err(Error::Data(format!(
                    "unit {} has {} covariates, expected {}",
                    u.id,
                    u.covariates.len(),
                    covariate_names.len()
                )));
            }
            if u.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite covariate for unit {}", u.id)));
            }
            if !ids.insert(u.id.clone()) {
                return Err(Error::Data(format!("duplicate unit id {}", u.id)));
            }
            if u.cluster_id.is_some() {
                with_cluster += 1;
            }
        }
        for arm in [0u8, 1u8] {
            if counts[arm as usize] == 0 {
                return Err(Error::Data(format!("arm {arm} is empty")));
            }
            if counts[arm as usize] < 2 {
                return Err(Error::Data(format!("fewer than 2 units in arm {arm}")));
            }
        }
        if with_cluster != 0 && with_cluster != units.len() {
            return Err(Error::Data(
                "cluster ids must be present on every unit or on none".into(),
            ));
        }
        let has_clusters = with_cluster == units.len() && !units.is_empty();
        let cluster_randomized = has_clusters && clusters_are_arm_pure(&units);
        Ok(Self { units, covariate_names, has_clusters, cluster_randomized })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn arms(&self) -> Vec<u8> {
        self.units.iter().map(|u| u.arm).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.outcome).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Select a subset of rows, preserving order. Structural invariants are
    /// kept by construction; per-arm minimum counts are not re-checked because
    /// training splits may legitimately hold a single unit of an arm.
    pub fn subset(&self, rows: &[usize]) -> TrialDataset {
        let units: Vec<Unit> = rows.iter().map(|&i| self.units[i].clone()).collect();
        let has_clusters = self.has_clusters;
        let cluster_randomized = has_clusters && clusters_are_arm_pure(&units);
        TrialDataset {
            units,
            covariate_names: self.covariate_names.clone(),
            has_clusters,
            cluster_randomized,
        }
    }

    /// Group rows into independent units: clusters when requested (and
    /// present), otherwise one unit per row. Key order follows first
    /// appearance in the data.
    pub fn independent_units(&self, by_cluster: bool) -> IndependentUnits {
        if by_cluster && self.has_clusters {
            let mut keys = Vec::new();
            let mut members: Vec<Vec<usize>> = Vec::new();
            let mut index: BTreeMap<String, usize> = BTreeMap::new();
            for (i, u) in self.units.iter().enumerate() {
                let cid = u.cluster_id.clone().expect("has_clusters checked");
                let slot = *index.entry(cid.clone()).or_insert_with(|| {
                    keys.push(cid);
                    members.push(Vec::new());
                    keys.len() - 1
                });
                members[slot].push(i);
            }
            let arm = members
                .iter()
                .map(|rows| {
                    let first = self.units[rows[0]].arm;
                    if rows.iter().all(|&r| self.units[r].arm == first) {
                        Some(first)
                    } else {
                        None
                    }
                })
                .collect();
            IndependentUnits { keys, members, arm }
        } else {
            IndependentUnits {
                keys: self.units.iter().map(|u| u.id.clone()).collect(),
                members: (0..self.units.len()).map(|i| vec![i]).collect(),
                arm: self.units.iter().map(|u| Some(u.arm)).collect(),
            }
        }
    }
}

fn clusters_are_arm_pure(units: &[Unit]) -> bool {
    let mut arm_of: BTreeMap<&str, u8> = BTreeMap::new();
    for u in units {
        let Some(cid) = u.cluster_id.as_deref() else { return false };
        match arm_of.get(cid) {
            Some(&a) if a != u.arm => return false,
            Some(_) => {}
            None => {
                arm_of.insert(cid, u.arm);
            }
        }
    }
    true
}

/// Rows grouped by independent unit (individual or cluster).
#[derive(Debug, Clone)]
pub struct IndependentUnits {
    pub keys: Vec<String>,
    pub members: Vec<Vec<usize>>,
    /// Arm shared by all members, when they agree (always for individuals and
    /// for cluster-randomized designs).
    pub arm: Vec<Option<u8>>,
}

impl IndependentUnits {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Binary,
    BoundedContinuous,
}

/// Affine map between the natural outcome scale and [0, 1].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OutcomeScale {
    pub lower: f64,
    pub upper: f64,
    pub kind: ScaleKind,
}

impl OutcomeScale {
    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn to_natural(&self, scaled: f64) -> f64 {
        match self.kind {
            ScaleKind::Binary => scaled,
            ScaleKind::BoundedContinuous => self.lower + self.range() * scaled,
        }
    }
}

/// A dataset whose outcomes live on [0, 1], together with the scale that maps
/// them back.
#[derive(Debug, Clone)]
pub struct ScaledTrial {
    pub data: TrialDataset,
    pub scale: OutcomeScale,
}

/// Map outcomes onto the unit interval. Binary outcomes pass through
/// unchanged; bounded continuous outcomes are shifted and scaled by the given
/// bounds (observed min/max when omitted) and clamped just inside [0, 1].
pub fn scale_outcome(data: &TrialDataset, bounds: Option<(f64, f64)>) -> Result<ScaledTrial> {
    let ys = data.outcomes();
    let all_binary = ys.iter().all(|&y| y == 0.0 || y == 1.0);
    if all_binary && bounds.is_none_or(|b| b == (0.0, 1.0)) {
        return Ok(ScaledTrial {
            data: data.clone(),
            scale: OutcomeScale { lower: 0.0, upper: 1.0, kind: ScaleKind::Binary },
        });
    }
    let obs_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let obs_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lower, upper) = bounds.unwrap_or((obs_min, obs_max));
    if upper == lower {
        return Err(Error::Data("constant outcome: cannot scale a degenerate range".into()));
    }
    if upper < lower {
        return Err(Error::Config(format!("outcome bounds ({lower}, {upper}) are reversed")));
    }
    if obs_min < lower || obs_max > upper {
        return Err(Error::Data(format!(
            "observed outcomes [{obs_min}, {obs_max}] fall outside bounds ({lower}, {upper})"
        )));
    }
    let range = upper - lower;
    let mut scaled = data.clone();
    for u in &mut scaled.units {
        let s = (u.outcome - lower) / range;
        u.outcome = s.clamp(OUTCOME_CLIP, 1.0 - OUTCOME_CLIP);
    }
    Ok(ScaledTrial {
        data: scaled,
        scale: OutcomeScale { lower, upper, kind: ScaleKind::BoundedContinuous },
    })
}

/// Map an estimate computed on the scaled outcome back to the natural scale.
///
/// Absolute effects and their uncertainty scale by the outcome range; arm
/// means shift as well. Relative effects require a zero lower bound, under
/// which the ratio is invariant.
pub fn unscale_effect(
    estimate: &TargetedEstimate,
    scale: &OutcomeScale,
    estimand: Estimand,
) -> Result<TargetedEstimate> {
    let mut out = estimate.clone();
    out.natural_scale = true;
    if scale.kind == ScaleKind::Binary {
        return Ok(out);
    }
    if estimand == Estimand::Rr && scale.lower != 0.0 {
        return Err(Error::Config(
            "relative risk requires a zero lower outcome bound".into(),
        ));
    }
    let range = scale.range();
    out.psi1 = scale.to_natural(estimate.psi1);
    out.psi0 = scale.to_natural(estimate.psi0);
    out.effect_abs = estimate.effect_abs * range;
    out.effect_rel = if out.psi0.abs() > 1e-300 { out.psi1 / out.psi0 } else { f64::NAN };
    match estimand {
        Estimand::Ate => {
            out.effect = estimate.effect * range;
            out.se = estimate.se * range;
            out.ci = (estimate.ci.0 * range, estimate.ci.1 * range);
            for v in &mut out.ic {
                *v *= range;
            }
            if let Some(icc) = &mut out.ic_cluster {
                for v in icc {
                    *v *= range;
                }
            }
        }
        // Log-scale standard error and the ratio itself are unchanged by a
        // positive rescaling with zero lower bound.
        Estimand::Rr => {}
    }
    Ok(out)
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub arm: String,
    pub outcome: String,
    #[serde(default)]
    pub cluster: Option<String>,
    pub covariates: Vec<String>,
    /// Subset of `covariates` to one-hot encode (reference level dropped,
    /// levels ordered lexicographically).
    #[serde(default)]
    pub categorical: Vec<String>,
}

/// Load and validate a trial dataset from a CSV file.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TrialDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("reading header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };

    let id_col = col(&schema.id)?;
    let arm_col = col(&schema.arm)?;
    let outcome_col = col(&schema.outcome)?;
    let cluster_col = match &schema.cluster {
        Some(c) => Some(col(c)?),
        None => None,
    };
    for c in &schema.categorical {
        if !schema.covariates.contains(c) {
            return Err(Error::Config(format!(
                "categorical column `{c}` is not listed among covariates"
            )));
        }
    }
    let cov_cols: Vec<(String, usize, bool)> = schema
        .covariates
        .iter()
        .map(|name| {
            col(name).map(|idx| (name.clone(), idx, schema.categorical.contains(name)))
        })
        .collect::<Result<_>>()?;

    struct RawRow {
        id: String,
        cluster: Option<String>,
        arm: u8,
        outcome: f64,
        numeric: Vec<f64>,
        categorical: Vec<String>,
    }

    let mut rows: Vec<RawRow> = Vec::new();
    let mut levels: Vec<BTreeSet<String>> =
        vec![BTreeSet::new(); cov_cols.iter().filter(|c| c.2).count()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        let field = |idx: usize| -> Result<&str> {
            let v = record.get(idx).unwrap_or("");
            if v.is_empty() {
                Err(Error::Data(format!(
                    "row {}: missing value in column `{}`",
                    line + 2,
                    headers.get(idx).unwrap_or("?")
                )))
            } else {
                Ok(v)
            }
        };

        let arm_raw = field(arm_col)?;
        let arm = match arm_raw.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => v as u8,
            _ => return Err(Error::Data(format!("arm value `{arm_raw}` not in {{0,1}}"))),
        };
        let outcome_raw = field(outcome_col)?;
        let outcome = outcome_raw
            .parse::<f64>()
            .map_err(|_| Error::Data(format!("non-numeric outcome `{outcome_raw}`")))?;
        if !outcome.is_finite() {
            return Err(Error::Data(format!("non-finite outcome `{outcome_raw}`")));
        }
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        let mut cat_idx = 0usize;
        for (name, idx, is_cat) in &cov_cols {
            let raw = field(*idx)?;
            if *is_cat {
                levels[cat_idx].insert(raw.to_string());
                categorical.push(raw.to_string());
                cat_idx += 1;
            } else {
                let v = raw.parse::<f64>().map_err(|_| {
                    Error::Data(format!("non-numeric covariate `{raw}` in column `{name}`"))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite covariate in column `{name}`")));
                }
                numeric.push(v);
            }
        }
        rows.push(RawRow {
            id: field(id_col)?.to_string(),
            cluster: cluster_col.map(|c| field(c).map(|s| s.to_string())).transpose()?,
            arm,
            outcome,
            numeric,
            categorical,
        });
    }

    // Expand categoricals into indicator columns, reference level dropped.
    let mut names: Vec<String> = Vec::new();
    let mut cat_slot = 0usize;
    let mut encoders: Vec<CovEncoder> = Vec::new();
    for (name, _, is_cat) in &cov_cols {
        if *is_cat {
            let lv: Vec<String> = levels[cat_slot].iter().cloned().collect();
            for level in lv.iter().skip(1) {
                names.push(format!("{name}={level}"));
            }
            encoders.push(CovEncoder::Categorical { slot: cat_slot, levels: lv });
            cat_slot += 1;
        } else {
            names.push(name.clone());
            encoders.push(CovEncoder::Numeric);
        }
    }

    let units: Vec<Unit> = rows
        .into_iter()
        .map(|r| {
            let mut covs = Vec::with_capacity(names.len());
            let mut num_idx = 0usize;
            let mut cat_idx = 0usize;
            for enc in &encoders {
                match enc {
                    CovEncoder::Numeric => {
                        covs.push(r.numeric[num_idx]);
                        num_idx += 1;
                    }
                    CovEncoder::Categorical { levels, .. } => {
                        let value = &r.categorical[cat_idx];
                        for level in levels.iter().skip(1) {
                            covs.push(if value == level { 1.0 } else { 0.0 });
                        }
                        cat_idx += 1;
                    }
                }
            }
            Unit { id: r.id, cluster_id: r.cluster, arm: r.arm, outcome: r.outcome, covariates: covs }
        })
        .collect();

    TrialDataset::new(units, names)
}

enum CovEncoder {
    Numeric,
    Categorical { #[allow(dead_code)] slot: usize, levels: Vec<String> },
}

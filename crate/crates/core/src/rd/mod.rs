//! Sharp regression-discontinuity estimation inside a linear mixed model:
//! design construction, effect estimation, placebo anchors and the
//! end-of-window variant.

mod output;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{compute_forcing, Anchor, ForcedVisit, InterventionSchedule, Variable, VisitRecord};
use crate::lmm::{fit_lmm, Criterion, DesignMatrix, Estimate, Grouping, MixedFit};

pub use output::{EffectCell, EffectRow, EffectSummary, EffectTable};

pub const INTERCEPT: &str = "(Intercept)";
pub const TREATMENT: &str = "A";
pub const MISSING_PHYSICIAN: &str = "(missing)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyForm {
    LinearShared,
    LinearSeparate,
    Quadratic,
}

impl PolyForm {
    pub const ALL: [PolyForm; 3] = [PolyForm::LinearShared, PolyForm::LinearSeparate, PolyForm::Quadratic];

    pub fn as_str(self) -> &'static str {
        match self {
            PolyForm::LinearShared => "linear_shared",
            PolyForm::LinearSeparate => "linear_separate",
            PolyForm::Quadratic => "quadratic",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PolyForm::LinearShared => "Linear - same slopes",
            PolyForm::LinearSeparate => "Linear - different slopes",
            PolyForm::Quadratic => "Quadratic",
        }
    }

    /// Polynomial column names, treatment column last.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PolyForm::LinearShared => &["S", TREATMENT],
            PolyForm::LinearSeparate => &["S:(1-A)", "S:A", TREATMENT],
            PolyForm::Quadratic => &["S:(1-A)", "S^2:(1-A)", "S:A", "S^2:A", TREATMENT],
        }
    }

    /// Values of [`PolyForm::columns`]; every term except `A` vanishes at `s = 0`.
    pub fn values(self, s: f64, a: bool) -> Vec<f64> {
        let t = if a { 1.0 } else { 0.0 };
        match self {
            PolyForm::LinearShared => vec![s, t],
            PolyForm::LinearSeparate => vec![s * (1.0 - t), s * t, t],
            PolyForm::Quadratic => vec![s * (1.0 - t), s * s * (1.0 - t), s * t, s * s * t, t],
        }
    }
}

impl fmt::Display for PolyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolyForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolyForm::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Argument(format!("unknown polynomial form {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    LinearProbability,
}

impl Transform {
    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Log => "log",
            Transform::LinearProbability => "linear_probability",
        }
    }

    /// Multiplier from model units to reported units.
    pub fn report_scale(self) -> f64 {
        match self {
            Transform::LinearProbability => 100.0,
            _ => 1.0,
        }
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Transform::Identity),
            "log" => Ok(Transform::Log),
            "linear_probability" | "lp" => Ok(Transform::LinearProbability),
            other => Err(Error::Argument(format!("unknown transform {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Groupings {
    Day,
    DayPhysician,
}

/// Model specification for one RD fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RdSpec {
    pub outcome: Variable,
    pub bandwidth: f64,
    pub form: PolyForm,
    pub covariates: Vec<Variable>,
    pub groupings: Groupings,
    pub transform: Transform,
    pub anchor: Anchor,
    pub criterion: Criterion,
}

impl Default for RdSpec {
    fn default() -> Self {
        Self {
            outcome: Variable::TimeToDispo,
            bandwidth: 1.0,
            form: PolyForm::LinearShared,
            covariates: Variable::default_covariates(),
            groupings: Groupings::Day,
            transform: Transform::Identity,
            anchor: Anchor::WindowStart,
            criterion: Criterion::Reml,
        }
    }
}

impl RdSpec {
    pub fn for_outcome(outcome: Variable) -> Self {
        Self {
            outcome,
            transform: if outcome.is_binary() {
                Transform::LinearProbability
            } else {
                Transform::Identity
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Argument(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if self.transform == Transform::Log && self.outcome.is_binary() {
            return Err(Error::Argument(format!(
                "log transform is not defined for binary outcome {}",
                self.outcome
            )));
        }
        if self.covariates.contains(&self.outcome) {
            return Err(Error::Argument(format!("{} is both outcome and covariate", self.outcome)));
        }
        Ok(())
    }
}

/// Analysis rows and fixed-effect columns before conversion to a design.
#[derive(Debug, Clone)]
pub(crate) struct Parts {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Indices into the input table.
    pub used: Vec<usize>,
    pub n_left: usize,
    pub n_right: usize,
    pub n_in_bandwidth: usize,
    pub n_missing: usize,
    pub n_nonpositive: usize,
    pub days: Vec<String>,
    pub physicians: Vec<String>,
}

impl Parts {
    pub fn push_column(&mut self, name: impl Into<String>, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows.len());
        self.names.push(name.into());
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(*v);
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn groupings(&self, which: Groupings) -> Vec<Grouping> {
        let mut g = vec![Grouping::new("day", &self.days)];
        if which == Groupings::DayPhysician {
            g.push(Grouping::new("physician", &self.physicians));
        }
        g
    }

    pub fn design(&self, which: Groupings, protected: &[&str], allow_zero: Vec<String>) -> Result<DesignMatrix> {
        Ok(
            DesignMatrix::from_rows(self.names.clone(), &self.rows, self.y.clone(), self.groupings(which))?
                .with_protected(protected)
                .with_allowed_zero(allow_zero),
        )
    }
}

fn outcome_value(v: &VisitRecord, spec: &RdSpec) -> Option<f64> {
    v.value(spec.outcome)
}

/// Rows within the bandwidth that carry the outcome, covariates and every
/// variable in `required`; columns `[1, polynomial…, A, covariates…]`.
pub(crate) fn base_parts(table: &[ForcedVisit], spec: &RdSpec, required: &[Variable]) -> Result<Parts> {
    spec.validate()?;
    let cols = spec.form.columns();
    let mut names: Vec<String> = std::iter::once(INTERCEPT)
        .chain(cols.iter().copied())
        .map(String::from)
        .collect();
    names.extend(spec.covariates.iter().map(|c| c.as_str().to_string()));
    let mut parts = Parts {
        names,
        rows: vec![],
        y: vec![],
        used: vec![],
        n_left: 0,
        n_right: 0,
        n_in_bandwidth: 0,
        n_missing: 0,
        n_nonpositive: 0,
        days: vec![],
        physicians: vec![],
    };
    for (i, r) in table.iter().enumerate() {
        if r.s.abs() > spec.bandwidth {
            continue;
        }
        parts.n_in_bandwidth += 1;
        let Some(mut y) = outcome_value(&r.visit, spec) else {
            parts.n_missing += 1;
            continue;
        };
        let covs: Option<Vec<f64>> = spec.covariates.iter().map(|c| r.visit.value(*c)).collect();
        let Some(covs) = covs else {
            parts.n_missing += 1;
            continue;
        };
        if required.iter().any(|v| r.visit.value(*v).is_none()) {
            parts.n_missing += 1;
            continue;
        }
        if spec.transform == Transform::Log {
            if y <= 0.0 {
                parts.n_nonpositive += 1;
                continue;
            }
            y = y.ln();
        }
        let mut row = Vec::with_capacity(parts.names.len());
        row.push(1.0);
        row.extend(spec.form.values(r.s, r.a));
        row.extend(covs);
        parts.rows.push(row);
        parts.y.push(y);
        parts.used.push(i);
        if r.is_right() {
            parts.n_right += 1;
        } else {
            parts.n_left += 1;
        }
        parts.days.push(r.visit.day_key().to_string());
        parts
            .physicians
            .push(r.visit.physician_id.clone().unwrap_or_else(|| MISSING_PHYSICIAN.into()));
    }
    if parts.n_left == 0 {
        return Err(Error::EmptySide { side: "left" });
    }
    if parts.n_right == 0 {
        return Err(Error::EmptySide { side: "right" });
    }
    Ok(parts)
}

/// Mixed-model design for the RD specification.
pub fn build_design(table: &[ForcedVisit], spec: &RdSpec) -> Result<DesignMatrix> {
    base_parts(table, spec, &[])?.design(spec.groupings, &[TREATMENT], vec![])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentChange {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// RD effect estimate in reporting units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdEstimate {
    pub outcome: Variable,
    pub anchor: String,
    pub bandwidth: f64,
    pub form: PolyForm,
    pub transform: Transform,
    /// Treated-minus-control effect at the cutoff.
    pub gamma: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub z: f64,
    pub p: f64,
    pub n_left: usize,
    pub n_right: usize,
    /// Rows inside the bandwidth not used (missing values or `y <= 0` under log).
    pub n_excluded: usize,
    /// Right-minus-left jump at the cutoff.
    pub raw_jump: f64,
    /// Whether `gamma` is the negated raw jump (end-of-window anchor).
    pub sign_flipped: bool,
    pub percent_change: Option<PercentChange>,
    /// Fitted linear-probability values outside `(0, 1)`.
    pub lp_out_of_range: Option<usize>,
    pub warnings: Vec<String>,
    pub fit: MixedFit,
}

impl RdEstimate {
    pub fn n_used(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn summary(&self) -> EffectSummary {
        EffectSummary {
            estimate: self.gamma,
            lo: self.ci95.0,
            hi: self.ci95.1,
            se: self.se,
            p: self.p,
            n_left: self.n_left,
            n_right: self.n_right,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci95.0 <= truth && truth <= self.ci95.1
    }
}

/// `(e^γ − 1)·100`.
pub fn percent_change(gamma_log: f64) -> f64 {
    gamma_log.exp_m1() * 100.0
}

fn table_anchor(table: &[ForcedVisit]) -> Result<Anchor> {
    let Some(first) = table.first() else {
        return Err(Error::EmptySide { side: "left" });
    };
    if table.iter().any(|r| r.anchor != first.anchor) {
        return Err(Error::Argument("table mixes forcing anchors".into()));
    }
    Ok(first.anchor)
}

pub(crate) fn finish_estimate(
    fit: MixedFit,
    parts: &Parts,
    spec: &RdSpec,
    anchor: Anchor,
    mut warnings: Vec<String>,
) -> Result<RdEstimate> {
    let scale = spec.transform.report_scale();
    let raw = Estimate {
        estimate: fit.coef(TREATMENT)?,
        se: fit.se(TREATMENT)?,
    };
    let est = raw.scaled(scale);
    let ci95 = est.ci(0.95)?;
    let sign_flipped = anchor == Anchor::WindowEnd;
    let percent = (spec.transform == Transform::Log).then(|| {
        let (lo, hi) = raw.ci(0.95).expect("valid level");
        PercentChange {
            estimate: percent_change(raw.estimate),
            lo: percent_change(lo),
            hi: percent_change(hi),
        }
    });
    let lp_out = (spec.transform == Transform::LinearProbability).then(|| {
        parts
            .rows
            .iter()
            .filter(|row| {
                let yhat: f64 = fit
                    .names
                    .iter()
                    .zip(&fit.beta)
                    .map(|(n, b)| row[parts.names.iter().position(|m| m == n).expect("fit column")] * b)
                    .sum();
                !(yhat > 0.0 && yhat < 1.0)
            })
            .count()
    });
    if let Some(k) = lp_out.filter(|&k| k > 0) {
        warnings.push(format!("{k} fitted probabilities fall outside (0, 1)"));
    }
    if parts.n_nonpositive > 0 {
        warnings.push(format!(
            "{} rows with non-positive outcome excluded before log transform",
            parts.n_nonpositive
        ));
    }
    warnings.extend(fit.warnings.iter().cloned());
    Ok(RdEstimate {
        outcome: spec.outcome,
        anchor: anchor.label(),
        bandwidth: spec.bandwidth,
        form: spec.form,
        transform: spec.transform,
        gamma: est.estimate,
        se: est.se,
        ci95,
        z: est.z(),
        p: est.p_value(),
        n_left: parts.n_left,
        n_right: parts.n_right,
        n_excluded: parts.n_missing + parts.n_nonpositive,
        raw_jump: if sign_flipped { -est.estimate } else { est.estimate },
        sign_flipped,
        percent_change: percent,
        lp_out_of_range: lp_out,
        warnings,
        fit,
    })
}

/// Fits the RD mixed model; `gamma` is the coefficient of `A`.
pub fn estimate_effect(table: &[ForcedVisit], spec: &RdSpec) -> Result<RdEstimate> {
    let anchor = table_anchor(table)?;
    let parts = base_parts(table, spec, &[])?;
    let design = parts.design(spec.groupings, &[TREATMENT], vec![])?;
    let fit = fit_lmm(&design, spec.criterion)?;
    finish_estimate(fit, &parts, spec, anchor, vec![])
}

/// End-of-window RD; `gamma` stays treated-minus-control so the raw
/// right-minus-left jump is its negation.
pub fn end_window_effect(table: &[ForcedVisit], spec: &RdSpec) -> Result<RdEstimate> {
    if table_anchor(table)? != Anchor::WindowEnd {
        return Err(Error::Argument("end-of-window estimation needs forcing anchored at the window end".into()));
    }
    estimate_effect(
        table,
        &RdSpec {
            anchor: Anchor::WindowEnd,
            ..spec.clone()
        },
    )
}

/// One anchor of a placebo scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub anchor: String,
    pub estimate: Option<RdEstimate>,
    pub error: Option<String>,
}

/// Shift-change anchors probed by default.
pub fn default_placebo_anchors() -> Vec<Anchor> {
    ["7am", "4pm", "3pm", "12pm", "11pm", "8am"]
        .iter()
        .map(|s| s.parse().expect("valid clock literal"))
        .collect()
}

/// Re-runs the RD with forcing centered at each anchor; failures are
/// recorded per anchor and do not stop the scan.
pub fn placebo_scan(
    visits: &[VisitRecord],
    schedule: &InterventionSchedule,
    spec: &RdSpec,
    anchors: &[Anchor],
) -> Vec<PlaceboResult> {
    anchors
        .par_iter()
        .map(|&anchor| {
            let run = || -> Result<RdEstimate> {
                let forced = compute_forcing(visits, schedule, anchor)?;
                estimate_effect(&forced, &RdSpec { anchor, ..spec.clone() })
            };
            match run() {
                Ok(e) => PlaceboResult {
                    anchor: anchor.label(),
                    estimate: Some(e),
                    error: None,
                },
                Err(e) => PlaceboResult {
                    anchor: anchor.label(),
                    estimate: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

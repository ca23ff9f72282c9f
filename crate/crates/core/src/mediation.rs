//! Natural direct and indirect effects from a mediator model and an
//! outcome model fitted on the same rows.
//!
//! The mediator model is `M ~ 1 + S + A + X` and the outcome model adds
//! `M` as a regressor. The direct effect is the outcome model's `A`
//! coefficient and the indirect effect is the product of the mediator
//! model's `A` coefficient with the outcome model's `M` coefficient.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ForcedVisit, Variable};
use crate::lmm::{fit_lmm, lincomb, Estimate, MixedFit};
use crate::moderation::{indicator, moderator_labels, ModeratorSpec};
use crate::rd::{base_parts, Parts, PolyForm, RdSpec, Transform, TREATMENT};
use crate::report::format_estimate;

/// Seeded Monte-Carlo interval for the indirect effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub draws: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            draws: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationSpec {
    pub mediator: Variable,
    /// Outcome, bandwidth, covariates and grouping; the form is always
    /// linear with a shared slope.
    pub rd: RdSpec,
    #[serde(default)]
    pub by_level: Option<ModeratorSpec>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarlo>,
}

impl MediationSpec {
    pub fn new(mediator: Variable, outcome: Variable) -> Self {
        Self {
            mediator,
            rd: RdSpec::for_outcome(outcome),
            by_level: None,
            monte_carlo: None,
        }
    }

    fn rd_spec(&self) -> Result<RdSpec> {
        if !matches!(self.mediator, Variable::TimeToFirstOrder | Variable::TimeToRoomed) {
            return Err(Error::Argument(format!(
                "{} is not a supported mediator",
                self.mediator
            )));
        }
        if self.mediator == self.rd.outcome {
            return Err(Error::Argument("mediator and outcome must differ".into()));
        }
        if self.rd.transform == Transform::Log {
            return Err(Error::Argument("mediation needs an untransformed outcome".into()));
        }
        if self.rd.covariates.contains(&self.mediator) {
            return Err(Error::Argument("the mediator cannot also be a covariate".into()));
        }
        Ok(RdSpec {
            form: PolyForm::LinearShared,
            ..self.rd.clone()
        })
    }
}

/// Direct and indirect effects for one group of visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationResult {
    pub mediator: Variable,
    pub outcome: Variable,
    /// `All` or a moderator level.
    pub group: String,
    /// Effect of treatment on the mediator.
    pub gamma_prime: Estimate,
    /// Effect of the mediator on the outcome, per mediator unit.
    pub mu: Estimate,
    pub nde: Estimate,
    pub nde_ci95: (f64, f64),
    /// `gamma_prime · mu` with a delta-method standard error.
    pub nie: Estimate,
    pub nie_ci95: (f64, f64),
    pub nie_mc_ci95: Option<(f64, f64)>,
    pub n_used: usize,
    /// Rows in the bandwidth lacking the mediator, the outcome or a covariate.
    pub n_excluded: usize,
    pub warnings: Vec<String>,
}

/// Delta-method SE of a product of two independent estimates.
pub fn product_se(gamma_prime: Estimate, mu: Estimate) -> f64 {
    (mu.estimate.powi(2) * gamma_prime.se.powi(2) + gamma_prime.estimate.powi(2) * mu.se.powi(2)).sqrt()
}

/// Percentile interval of `γ′·μ` with both factors drawn from their normal
/// approximations.
pub fn product_mc_ci(gamma_prime: Estimate, mu: Estimate, mc: MonteCarlo) -> Result<(f64, f64)> {
    if mc.draws < 100 {
        return Err(Error::Argument("Monte-Carlo interval needs at least 100 draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let mut draws: Vec<f64> = (0..mc.draws)
        .map(|_| {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            (gamma_prime.estimate + gamma_prime.se * z1) * (mu.estimate + mu.se * z2)
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let q = |p: f64| crate::frame::tertile::quantile_sorted(&draws, p);
    Ok((q(0.025), q(0.975)))
}

struct Fitted {
    mediator_fit: MixedFit,
    outcome_fit: MixedFit,
    n_used: usize,
    n_excluded: usize,
    warnings: Vec<String>,
}

fn mediator_column(table: &[ForcedVisit], parts: &Parts, mediator: Variable) -> Vec<f64> {
    parts
        .used
        .iter()
        .map(|&i| table[i].visit.value(mediator).expect("required variable"))
        .collect()
}

/// Fits both models; `extra` adds columns to both and `outcome_extra`
/// to the outcome model only.
fn fit_pair(
    table: &[ForcedVisit],
    spec: &RdSpec,
    mediator: Variable,
    labels: Option<(&ModeratorSpec, &[String])>,
) -> Result<Fitted> {
    let mut parts = base_parts(table, spec, &[mediator])?;
    let m = mediator_column(table, &parts, mediator);
    let first = m[0];
    if m.iter().all(|&v| v == first) {
        return Err(Error::Unidentifiable(format!(
            "{mediator} is constant on the analysis rows, so its effect on the outcome is not identified"
        )));
    }
    let a = parts.column(TREATMENT).expect("treatment column");
    let mut allow = Vec::new();
    let mut outcome_only = Vec::new();
    if let Some((ms, labels)) = labels {
        for level in &ms.levels[1..] {
            let name = ms.main_column(level);
            parts.push_column(name.clone(), &indicator(labels, level));
            allow.push(name);
        }
        for level in &ms.levels[1..] {
            let name = ms.interaction_column(level);
            let col: Vec<f64> = indicator(labels, level).iter().zip(&a).map(|(x, t)| x * t).collect();
            parts.push_column(name.clone(), &col);
            allow.push(name);
        }
        for level in &ms.levels[1..] {
            let col: Vec<f64> = indicator(labels, level).iter().zip(&m).map(|(x, v)| x * v).collect();
            outcome_only.push((mediator_interaction(mediator, ms, level), col));
        }
    }
    let mut mediator_parts = parts.clone();
    mediator_parts.y = m.clone();
    let mediator_fit = fit_lmm(
        &mediator_parts.design(spec.groupings, &[TREATMENT], allow.clone())?,
        spec.criterion,
    )?;

    let m_name = mediator.as_str();
    parts.push_column(m_name, &m);
    for (name, col) in outcome_only {
        parts.push_column(name.clone(), &col);
        allow.push(name);
    }
    let outcome_fit = fit_lmm(
        &parts.design(spec.groupings, &[TREATMENT, m_name], allow)?,
        spec.criterion,
    )
    .map_err(|e| match e {
        Error::Estimability { dropped, .. } if dropped.iter().any(|d| d == m_name) => Error::Unidentifiable(
            format!("{mediator} is collinear with the other regressors"),
        ),
        other => other,
    })?;
    let mut warnings = mediator_fit.warnings.clone();
    warnings.extend(outcome_fit.warnings.iter().cloned());
    Ok(Fitted {
        n_used: parts.rows.len(),
        n_excluded: parts.n_missing + parts.n_nonpositive,
        mediator_fit,
        outcome_fit,
        warnings,
    })
}

fn mediator_interaction(mediator: Variable, ms: &ModeratorSpec, level: &str) -> String {
    format!("{}:{}[{}]", mediator.as_str(), ms.name, level)
}

#[allow(clippy::too_many_arguments)]
fn compose(
    spec: &MediationSpec,
    group: String,
    gamma_prime: Estimate,
    mu: Estimate,
    nde: Estimate,
    n_used: usize,
    n_excluded: usize,
    warnings: Vec<String>,
) -> Result<MediationResult> {
    let scale = spec.rd.transform.report_scale();
    let mu = mu.scaled(scale);
    let nde = nde.scaled(scale);
    let nie = Estimate {
        estimate: gamma_prime.estimate * mu.estimate,
        se: product_se(gamma_prime, mu),
    };
    let nie_mc_ci95 = spec
        .monte_carlo
        .map(|mc| product_mc_ci(gamma_prime, mu, mc))
        .transpose()?;
    Ok(MediationResult {
        mediator: spec.mediator,
        outcome: spec.rd.outcome,
        group,
        gamma_prime,
        mu,
        nde_ci95: nde.ci(0.95)?,
        nde,
        nie_ci95: nie.ci(0.95)?,
        nie,
        nie_mc_ci95,
        n_used,
        n_excluded,
        warnings,
    })
}

fn coef(fit: &MixedFit, name: &str) -> Result<Estimate> {
    Ok(Estimate {
        estimate: fit.coef(name)?,
        se: fit.se(name)?,
    })
}

/// Direct and indirect effects over all visits in the bandwidth.
pub fn mediate(table: &[ForcedVisit], spec: &MediationSpec) -> Result<MediationResult> {
    let rd = spec.rd_spec()?;
    let f = fit_pair(table, &rd, spec.mediator, None)?;
    compose(
        spec,
        "All".into(),
        coef(&f.mediator_fit, TREATMENT)?,
        coef(&f.outcome_fit, spec.mediator.as_str())?,
        coef(&f.outcome_fit, TREATMENT)?,
        f.n_used,
        f.n_excluded,
        f.warnings,
    )
}

/// Per-level effects from models with moderator mains, moderator by `A`
/// and (outcome model only) moderator by mediator terms. Levels without
/// estimable interactions are skipped with a warning.
pub fn mediate_by_level(table: &[ForcedVisit], spec: &MediationSpec) -> Result<Vec<MediationResult>> {
    let ms = spec
        .by_level
        .as_ref()
        .ok_or_else(|| Error::Argument("mediation by level needs a moderator".into()))?;
    let rd = spec.rd_spec()?;
    let parts = base_parts(table, &rd, &[spec.mediator])?;
    let (labels, _) = moderator_labels(table, &parts, ms)?;
    let f = fit_pair(table, &rd, spec.mediator, Some((ms, &labels)))?;
    let m_name = spec.mediator.as_str();
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (k, level) in ms.levels.iter().enumerate() {
        let n = labels.iter().filter(|l| *l == level).count();
        let (gp, mu, nde) = if k == 0 {
            (
                coef(&f.mediator_fit, TREATMENT)?,
                coef(&f.outcome_fit, m_name)?,
                coef(&f.outcome_fit, TREATMENT)?,
            )
        } else {
            let a_col = ms.interaction_column(level);
            let m_col = mediator_interaction(spec.mediator, ms, level);
            if !(f.mediator_fit.has(&a_col) && f.outcome_fit.has(&a_col) && f.outcome_fit.has(&m_col)) {
                skipped.push(format!("level {level} of {} is not estimable and was skipped", ms.name));
                continue;
            }
            (
                lincomb(&f.mediator_fit, &[(TREATMENT, 1.0), (&a_col, 1.0)])?,
                lincomb(&f.outcome_fit, &[(m_name, 1.0), (&m_col, 1.0)])?,
                lincomb(&f.outcome_fit, &[(TREATMENT, 1.0), (&a_col, 1.0)])?,
            )
        };
        out.push(compose(spec, level.clone(), gp, mu, nde, n, 0, vec![])?);
    }
    if let Some(first) = out.first_mut() {
        first.warnings = f.warnings.clone();
        first.warnings.extend(skipped);
        // exclusions are a property of the shared fit, so report them once
        first.n_excluded = f.n_excluded;
    }
    Ok(out)
}

/// Rows of direct and indirect effects per mediator and group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MediationTable {
    pub rows: Vec<MediationResult>,
}

impl MediationTable {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["mediator", "group", "direct effect (95% CI)", "indirect effect (95% CI)"])?;
        for r in &self.rows {
            w.write_record([
                r.mediator.as_str(),
                r.group.as_str(),
                &format_estimate(r.nde.estimate, r.nde_ci95),
                &format_estimate(r.nie.estimate, r.nie_ci95),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

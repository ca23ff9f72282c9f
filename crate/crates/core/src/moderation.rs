//! Effect modification: per-level effects and joint Wald tests for
//! moderators entered one at a time or all together.

use std::io::Write;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::tertile::{fit_tertile_boundaries, Tertile};
use crate::frame::{ForcedVisit, VisitRecord};
use crate::lmm::{fit_lmm, lincomb, wald_test, Estimate, MixedFit, WaldTest};
use crate::rd::{base_parts, Parts, RdSpec, TREATMENT};
use crate::report::{format_estimate, format_p};

const WEEKDAYS: [&str; 7] = [
    "Sunday",
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeratorSource {
    CongestionTertile,
    WorkloadTertile,
    DayOfWeek,
    /// Whether the arrival date falls after the first schedule change.
    RegimeFlag,
}

impl ModeratorSource {
    pub const ALL: [ModeratorSource; 4] = [
        ModeratorSource::CongestionTertile,
        ModeratorSource::DayOfWeek,
        ModeratorSource::WorkloadTertile,
        ModeratorSource::RegimeFlag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModeratorSource::CongestionTertile => "congestion",
            ModeratorSource::WorkloadTertile => "workload",
            ModeratorSource::DayOfWeek => "day_of_week",
            ModeratorSource::RegimeFlag => "regime",
        }
    }

    /// Levels in reporting order, reference first.
    pub fn default_levels(self) -> Vec<String> {
        let v: Vec<&str> = match self {
            ModeratorSource::CongestionTertile | ModeratorSource::WorkloadTertile => {
                Tertile::ALL.iter().map(|t| t.label()).collect()
            }
            ModeratorSource::DayOfWeek => WEEKDAYS.to_vec(),
            ModeratorSource::RegimeFlag => vec!["Before", "After"],
        };
        v.into_iter().map(String::from).collect()
    }

    fn is_tertile(self) -> bool {
        matches!(self, ModeratorSource::CongestionTertile | ModeratorSource::WorkloadTertile)
    }

    fn raw_value(self, v: &VisitRecord) -> f64 {
        match self {
            ModeratorSource::CongestionTertile => f64::from(v.congestion),
            ModeratorSource::WorkloadTertile => v.workload,
            _ => f64::NAN,
        }
    }

    /// Level label of a visit; tertile sources need boundaries.
    pub fn level_of(self, v: &VisitRecord, regime: usize, boundaries: Option<(f64, f64)>) -> String {
        match self {
            ModeratorSource::CongestionTertile | ModeratorSource::WorkloadTertile => {
                let b = boundaries.expect("tertile moderator needs boundaries");
                Tertile::classify(self.raw_value(v), b).label().to_string()
            }
            ModeratorSource::DayOfWeek => {
                WEEKDAYS[v.arrival.weekday().num_days_from_sunday() as usize].to_string()
            }
            ModeratorSource::RegimeFlag => if regime == 0 { "Before" } else { "After" }.to_string(),
        }
    }
}

impl FromStr for ModeratorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "congestion" | "congestion_tertile" => Ok(ModeratorSource::CongestionTertile),
            "workload" | "workload_tertile" => Ok(ModeratorSource::WorkloadTertile),
            "day_of_week" | "dow" => Ok(ModeratorSource::DayOfWeek),
            "regime" | "regime_flag" => Ok(ModeratorSource::RegimeFlag),
            other => Err(Error::Argument(format!("unknown moderator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorSpec {
    pub name: String,
    pub source: ModeratorSource,
    /// Ordered levels; the first is the reference.
    pub levels: Vec<String>,
    /// Tertile cut points; fitted on the analysis rows when absent.
    #[serde(default)]
    pub boundaries: Option<(f64, f64)>,
}

impl ModeratorSpec {
    pub fn new(source: ModeratorSource) -> Self {
        Self {
            name: source.name().to_string(),
            source,
            levels: source.default_levels(),
            boundaries: None,
        }
    }

    /// Same moderator with `level` moved to the reference position.
    pub fn with_reference(mut self, level: &str) -> Result<Self> {
        let i = self
            .levels
            .iter()
            .position(|l| l == level)
            .ok_or_else(|| Error::Argument(format!("{} has no level {level}", self.name)))?;
        let l = self.levels.remove(i);
        self.levels.insert(0, l);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::Argument(format!("moderator {} needs at least two levels", self.name)));
        }
        Ok(())
    }

    pub(crate) fn main_column(&self, level: &str) -> String {
        format!("{}[{}]", self.name, level)
    }

    pub(crate) fn interaction_column(&self, level: &str) -> String {
        format!("{}:{}[{}]", TREATMENT, self.name, level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEffect {
    pub level: String,
    pub n: usize,
    pub estimate: Option<Estimate>,
    pub ci95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTerm {
    pub level: String,
    pub estimate: Option<Estimate>,
    pub ci95: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationResult {
    pub moderator: String,
    pub reference: String,
    pub boundaries: Option<(f64, f64)>,
    pub base_gamma: Estimate,
    pub per_level: Vec<LevelEffect>,
    pub interactions: Vec<InteractionTerm>,
    /// Joint test that all estimable interactions are zero.
    pub joint: Option<WaldTest>,
    pub warnings: Vec<String>,
}

/// Results of one fit holding several moderators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationSet {
    pub results: Vec<ModerationResult>,
    pub fit: MixedFit,
    pub warnings: Vec<String>,
}

/// Labels of each moderator for the analysis rows, plus boundaries used.
pub(crate) fn moderator_labels(
    table: &[ForcedVisit],
    parts: &Parts,
    m: &ModeratorSpec,
) -> Result<(Vec<String>, Option<(f64, f64)>)> {
    m.validate()?;
    let rows: Vec<&ForcedVisit> = parts.used.iter().map(|&i| &table[i]).collect();
    let boundaries = if m.source.is_tertile() {
        Some(match m.boundaries {
            Some(b) => b,
            None => {
                let vals: Vec<f64> = rows.iter().map(|r| m.source.raw_value(&r.visit)).collect();
                fit_tertile_boundaries(&vals)?
            }
        })
    } else {
        None
    };
    let labels: Vec<String> = rows
        .iter()
        .map(|r| m.source.level_of(&r.visit, r.regime, boundaries))
        .collect();
    if let Some(bad) = labels.iter().find(|l| !m.levels.contains(l)) {
        return Err(Error::Data(format!("moderator {} has undeclared level {bad}", m.name)));
    }
    Ok((labels, boundaries))
}

pub(crate) fn indicator(labels: &[String], level: &str) -> Vec<f64> {
    labels.iter().map(|l| if l == level { 1.0 } else { 0.0 }).collect()
}

fn moderated(table: &[ForcedVisit], spec: &RdSpec, mods: &[ModeratorSpec]) -> Result<ModerationSet> {
    if mods.is_empty() {
        return Err(Error::Argument("at least one moderator is required".into()));
    }
    let mut parts = base_parts(table, spec, &[])?;
    let a = parts.column(TREATMENT).expect("treatment column");
    let mut labelled = Vec::with_capacity(mods.len());
    for m in mods {
        labelled.push(moderator_labels(table, &parts, m)?);
    }
    let mut allow = Vec::new();
    for (m, (labels, _)) in mods.iter().zip(&labelled) {
        for level in &m.levels[1..] {
            let name = m.main_column(level);
            parts.push_column(name.clone(), &indicator(labels, level));
            allow.push(name);
        }
    }
    for (m, (labels, _)) in mods.iter().zip(&labelled) {
        for level in &m.levels[1..] {
            let name = m.interaction_column(level);
            let col: Vec<f64> = indicator(labels, level).iter().zip(&a).map(|(x, t)| x * t).collect();
            parts.push_column(name.clone(), &col);
            allow.push(name);
        }
    }
    let design = parts.design(spec.groupings, &[TREATMENT], allow)?;
    let fit = fit_lmm(&design, spec.criterion)?;
    let scale = spec.transform.report_scale();
    let base_gamma = Estimate {
        estimate: fit.coef(TREATMENT)?,
        se: fit.se(TREATMENT)?,
    }
    .scaled(scale);

    let mut results = Vec::with_capacity(mods.len());
    for (m, (labels, boundaries)) in mods.iter().zip(&labelled) {
        let mut warnings = Vec::new();
        let mut per_level = Vec::new();
        let mut interactions = Vec::new();
        let mut present = Vec::new();
        for (k, level) in m.levels.iter().enumerate() {
            let n = labels.iter().filter(|l| *l == level).count();
            if k == 0 {
                per_level.push(LevelEffect {
                    level: level.clone(),
                    n,
                    estimate: Some(base_gamma),
                    ci95: Some(base_gamma.ci(0.95)?),
                });
                continue;
            }
            let col = m.interaction_column(level);
            if fit.has(&col) {
                let inter = lincomb(&fit, &[(&col, 1.0)])?.scaled(scale);
                let eff = lincomb(&fit, &[(TREATMENT, 1.0), (&col, 1.0)])?.scaled(scale);
                interactions.push(InteractionTerm {
                    level: level.clone(),
                    estimate: Some(inter),
                    ci95: Some(inter.ci(0.95)?),
                });
                per_level.push(LevelEffect {
                    level: level.clone(),
                    n,
                    estimate: Some(eff),
                    ci95: Some(eff.ci(0.95)?),
                });
                present.push(col);
            } else {
                warnings.push(format!(
                    "interaction for {} level {level} is not estimable and was dropped",
                    m.name
                ));
                interactions.push(InteractionTerm {
                    level: level.clone(),
                    estimate: None,
                    ci95: None,
                });
                per_level.push(LevelEffect {
                    level: level.clone(),
                    n,
                    estimate: None,
                    ci95: None,
                });
            }
        }
        let joint = if present.is_empty() {
            warnings.push(format!("no estimable interactions for {}", m.name));
            None
        } else {
            let names: Vec<&str> = present.iter().map(String::as_str).collect();
            Some(wald_test(&fit, &names)?)
        };
        results.push(ModerationResult {
            moderator: m.name.clone(),
            reference: m.levels[0].clone(),
            boundaries: *boundaries,
            base_gamma,
            per_level,
            interactions,
            joint,
            warnings,
        });
    }
    Ok(ModerationSet {
        results,
        warnings: fit.warnings.clone(),
        fit,
    })
}

/// RD model augmented with one moderator's level indicators and their
/// interactions with `A`.
pub fn moderate_one(table: &[ForcedVisit], spec: &RdSpec, moderator: &ModeratorSpec) -> Result<ModerationResult> {
    let mut set = moderated(table, spec, std::slice::from_ref(moderator))?;
    let mut r = set.results.remove(0);
    r.warnings.extend(set.warnings);
    Ok(r)
}

/// All moderators' mains and `A` interactions in a single fit.
pub fn moderate_full(table: &[ForcedVisit], spec: &RdSpec, moderators: &[ModeratorSpec]) -> Result<ModerationSet> {
    moderated(table, spec, moderators)
}

/// Interaction table with one column pair per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationTable {
    pub outcomes: Vec<String>,
    /// `results[o]` lists the moderators for outcome `o`, in a common order.
    pub results: Vec<Vec<ModerationResult>>,
}

impl ModerationTable {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["moderator".to_string(), "level".to_string()];
        for o in &self.outcomes {
            header.push(format!("{o} interaction (95% CI)"));
            header.push(format!("{o} joint P"));
        }
        w.write_record(&header)?;
        let Some(first) = self.results.first() else {
            w.flush()?;
            return Ok(());
        };
        for (mi, m) in first.iter().enumerate() {
            for (li, term) in m.interactions.iter().enumerate() {
                let mut rec = vec![m.moderator.clone(), term.level.clone()];
                for per_outcome in &self.results {
                    let r = &per_outcome[mi];
                    let t = &r.interactions[li];
                    rec.push(match (t.estimate, t.ci95) {
                        (Some(e), Some(ci)) => format_estimate(e.estimate, ci),
                        _ => "NA".into(),
                    });
                    rec.push(if li == 0 {
                        r.joint.map(|j| format_p(j.p)).unwrap_or_else(|| "NA".into())
                    } else {
                        String::new()
                    });
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-level effects, one line per outcome, moderator and level.
    pub fn write_levels_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["outcome", "moderator", "level", "n", "estimate", "lo", "hi"])?;
        for (o, results) in self.outcomes.iter().zip(&self.results) {
            for r in results {
                for l in &r.per_level {
                    let (e, lo, hi) = match (l.estimate, l.ci95) {
                        (Some(e), Some((lo, hi))) => (e.estimate.to_string(), lo.to_string(), hi.to_string()),
                        _ => (String::new(), String::new(), String::new()),
                    };
                    w.write_record([o, &r.moderator, &l.level, &l.n.to_string(), &e, &lo, &hi])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_reordering() {
        let m = ModeratorSpec::new(ModeratorSource::DayOfWeek);
        assert_eq!(m.levels[0], "Sunday");
        let m = m.with_reference("Tuesday").unwrap();
        assert_eq!(m.levels[0], "Tuesday");
        assert_eq!(m.levels.len(), 7);
        assert!(ModeratorSpec::new(ModeratorSource::RegimeFlag).with_reference("Never").is_err());
    }

    #[test]
    fn one_level_is_rejected() {
        let mut m = ModeratorSpec::new(ModeratorSource::RegimeFlag);
        m.levels.truncate(1);
        assert!(m.validate().is_err());
    }

    #[test]
    fn column_names() {
        let m = ModeratorSpec::new(ModeratorSource::CongestionTertile);
        assert_eq!(m.main_column("High"), "congestion[High]");
        assert_eq!(m.interaction_column("High"), "A:congestion[High]");
        assert_eq!("dow".parse::<ModeratorSource>().unwrap(), ModeratorSource::DayOfWeek);
    }
}

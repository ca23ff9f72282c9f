use serde::{Deserialize, Serialize};

use super::records::{ArrivalMode, Complaint, VisitRecord, VisitTable};

/// A single exclusion predicate. A visit matching the predicate is removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ExclusionRule {
    /// Transferred in from another hospital or hospice.
    Transfer,
    /// Chief complaint recorded as a procedure.
    ProcedureComplaint,
    /// Younger than `years`.
    MinAge { years: f64 },
    /// Arrived other than by walking through registration.
    NonWalkIn,
    MissingTimeToDispo,
    MissingDisposition,
}

impl ExclusionRule {
    pub fn name(&self) -> String {
        match self {
            ExclusionRule::Transfer => "transfer".into(),
            ExclusionRule::ProcedureComplaint => "procedure_complaint".into(),
            ExclusionRule::MinAge { years } => format!("age_below_{years}"),
            ExclusionRule::NonWalkIn => "non_walk_in".into(),
            ExclusionRule::MissingTimeToDispo => "missing_time_to_dispo".into(),
            ExclusionRule::MissingDisposition => "missing_disposition".into(),
        }
    }

    pub fn excludes(&self, v: &VisitRecord) -> bool {
        match self {
            ExclusionRule::Transfer => v.transfer_flag,
            ExclusionRule::ProcedureComplaint => v.complaint == Complaint::Procedure,
            ExclusionRule::MinAge { years } => v.age < *years,
            ExclusionRule::NonWalkIn => v.arrival_mode != ArrivalMode::WalkIn,
            ExclusionRule::MissingTimeToDispo => v.time_to_dispo.is_none(),
            ExclusionRule::MissingDisposition => v.admitted.is_none(),
        }
    }
}

/// Ordered exclusion predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionConfig {
    pub rules: Vec<ExclusionRule>,
}

impl Default for ExclusionConfig {
    /// The study's sequential pipeline.
    fn default() -> Self {
        Self {
            rules: vec![
                ExclusionRule::Transfer,
                ExclusionRule::ProcedureComplaint,
                ExclusionRule::MinAge { years: 18.0 },
                ExclusionRule::NonWalkIn,
                ExclusionRule::MissingTimeToDispo,
                ExclusionRule::MissingDisposition,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerStep {
    pub rule: String,
    pub removed: usize,
    pub remaining: usize,
}

/// Counts removed at each sequential step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionLedger {
    pub input: usize,
    pub steps: Vec<LedgerStep>,
    pub output: usize,
}

impl ExclusionLedger {
    pub fn total_removed(&self) -> usize {
        self.steps.iter().map(|s| s.removed).sum()
    }
}

/// Applies rules in order; a visit is charged to the first rule it matches.
pub fn apply_exclusions(table: VisitTable, rules: &ExclusionConfig) -> (VisitTable, ExclusionLedger) {
    let input = table.len();
    let mut kept = table;
    let mut steps = Vec::with_capacity(rules.rules.len());
    for rule in &rules.rules {
        let before = kept.len();
        kept.retain(|v| !rule.excludes(v));
        steps.push(LedgerStep {
            rule: rule.name(),
            removed: before - kept.len(),
            remaining: kept.len(),
        });
    }
    let output = kept.len();
    (
        kept,
        ExclusionLedger {
            input,
            steps,
            output,
        },
    )
}

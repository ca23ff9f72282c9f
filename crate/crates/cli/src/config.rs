use std::path::PathBuf;

use rdmix::cv::CvGrid;
use rdmix::frame::exclusions::ExclusionConfig;
use rdmix::frame::{Anchor, InterventionSchedule, Variable};
use rdmix::lmm::Criterion;
use rdmix::moderation::{ModeratorSource, ModeratorSpec};
use rdmix::rd::{default_placebo_anchors, Groupings, PolyForm, RdSpec, Transform};
use rdmix::sim::Scenario;
use rdmix::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a command needs. Loaded from `--config` when given, then
/// overridden by flags; the effective value is hashed into every sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub schedule: InterventionSchedule,
    pub exclusions: ExclusionConfig,
    /// Empty means the command's default outcome set.
    pub outcomes: Vec<Variable>,
    pub bandwidth: f64,
    pub form: PolyForm,
    /// `None` picks linear probability for binary outcomes, identity otherwise.
    pub transform: Option<Transform>,
    pub anchor: Anchor,
    pub covariates: Vec<Variable>,
    pub criterion: Criterion,
    pub grid: CvGrid,
    pub moderators: Vec<ModeratorSpec>,
    pub mediators: Vec<Variable>,
    pub mediation_outcome: Variable,
    pub mediation_by: Option<ModeratorSpec>,
    pub monte_carlo_draws: Option<usize>,
    pub placebo_anchors: Vec<Anchor>,
    pub histogram_widths: Vec<f64>,
    pub bin_width: f64,
    pub density_delta: f64,
    pub balance_covariates: Vec<Variable>,
    pub preset: String,
    /// Overrides `preset` when present.
    pub scenario: Option<Scenario>,
    pub n_days: Option<usize>,
    /// Root seed; simulation falls back to the scenario's own seed.
    pub seed: Option<u64>,
    /// Output directory; kept out of the serialized form so the config hash
    /// does not depend on where artifacts land.
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tertile = |s| ModeratorSpec::new(s);
        Self {
            inputs: vec![],
            schedule: InterventionSchedule::study_default(),
            exclusions: ExclusionConfig::default(),
            outcomes: vec![],
            bandwidth: 1.0,
            form: PolyForm::LinearShared,
            transform: None,
            anchor: Anchor::WindowStart,
            covariates: Variable::default_covariates(),
            criterion: Criterion::Reml,
            grid: CvGrid::default(),
            moderators: vec![
                tertile(ModeratorSource::CongestionTertile),
                tertile(ModeratorSource::DayOfWeek),
                tertile(ModeratorSource::WorkloadTertile),
                tertile(ModeratorSource::RegimeFlag),
            ],
            mediators: vec![Variable::TimeToFirstOrder, Variable::TimeToRoomed],
            mediation_outcome: Variable::TimeToDispo,
            mediation_by: Some(ModeratorSpec::new(ModeratorSource::CongestionTertile)),
            monte_carlo_draws: None,
            placebo_anchors: default_placebo_anchors(),
            histogram_widths: rdmix::diagnostics::DEFAULT_HISTOGRAM_WIDTHS.to_vec(),
            bin_width: 0.25,
            density_delta: 0.5,
            balance_covariates: Variable::default_covariates(),
            preset: "paper_like".into(),
            scenario: None,
            n_days: None,
            seed: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn outcomes_or(&self, default: &[Variable]) -> Vec<Variable> {
        if self.outcomes.is_empty() {
            default.to_vec()
        } else {
            self.outcomes.clone()
        }
    }

    pub fn spec_for(&self, outcome: Variable) -> RdSpec {
        let base = RdSpec::for_outcome(outcome);
        RdSpec {
            outcome,
            bandwidth: self.bandwidth,
            form: self.form,
            covariates: self.covariates.iter().copied().filter(|c| *c != outcome).collect(),
            groupings: Groupings::Day,
            transform: self.transform.unwrap_or(base.transform),
            anchor: self.anchor,
            criterion: self.criterion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::Argument(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        for p in &self.inputs {
            if !p.is_file() {
                return Err(Error::Argument(format!("input {} does not exist", p.display())));
            }
        }
        self.grid.validate()?;
        for m in &self.moderators {
            m.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = RunConfig::default();
        c.inputs = vec![PathBuf::from("visits.csv")];
        c.outcomes = vec![Variable::Admitted];
        c.transform = Some(Transform::LinearProbability);
        c.anchor = "7am".parse().unwrap();
        c.bandwidth = 0.1 + 0.2;
        c.scenario = Some(rdmix::sim::preset("heterogeneous").unwrap());
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = Some(2);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"bandwidth": 0.5, "outcomes": ["time_to_roomed"]}"#).unwrap();
        assert_eq!(c.bandwidth, 0.5);
        assert_eq!(c.moderators.len(), 4);
        assert!(RunConfig::from_json(r#"{"bandwidth": "wide"}"#).is_err());
    }

    #[test]
    fn spec_defaults_by_outcome_type() {
        let c = RunConfig::default();
        assert_eq!(c.spec_for(Variable::Admitted).transform, Transform::LinearProbability);
        assert_eq!(c.spec_for(Variable::TimeToDispo).transform, Transform::Identity);
        assert!(!c.spec_for(Variable::Age).covariates.contains(&Variable::Age));
    }
}

//! Synthetic visit tables with known potential outcomes.
//!
//! Each day draws its arrivals from a piecewise-constant hourly Poisson
//! rate, then covariates, operational context and potential outcomes for
//! both treatment states. Noise is shared across the two states, so
//! individual effects differ only through the injected effect terms.
//! Every day has its own random substream, which keeps generation
//! reproducible when days are produced in parallel.

mod presets;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::forcing::assign;
use crate::frame::records::{ArrivalMode, Complaint, Insurance, Race, Sex};
use crate::frame::{Anchor, InterventionSchedule, Variable, VisitRecord, VisitTable};
use crate::moderation::ModeratorSource;

pub use presets::{preset, PRESET_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    /// `1{V < clamp(η, 0, 1)}` with `V ~ U(0, 1)` shared across states.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    /// `exp(η + ε)`: effects act multiplicatively.
    Log,
}

/// Additive effect offset for visits in one moderator level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectModifier {
    pub source: ModeratorSource,
    pub level: String,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateEffects {
    pub age: f64,
    pub female: f64,
    pub white: f64,
    pub abdominal_pain: f64,
    pub congestion: f64,
}

/// Mediator entering an outcome's linear predictor with coefficient `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediatorLink {
    pub mediator: Variable,
    pub mu: f64,
}

/// Linear predictor `η^a = α + ψS + ψ₁S·a + (γ + offsets)·a + βX
/// + Σ μ M^a + λU + b_day + b_physician`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub kind: OutcomeKind,
    pub link: Link,
    pub intercept: f64,
    /// Slope per hour of the forcing variable measured from the window start.
    pub slope: f64,
    /// Extra slope on the treated side.
    #[serde(default)]
    pub slope_treated: f64,
    /// Direct effect of treatment.
    pub effect: f64,
    #[serde(default)]
    pub interactions: Vec<EffectModifier>,
    #[serde(default)]
    pub covariate_effects: CovariateEffects,
    #[serde(default)]
    pub mediators: Vec<MediatorLink>,
    #[serde(default)]
    pub confounder_loading: f64,
    pub day_sd: f64,
    #[serde(default)]
    pub physician_sd: f64,
    pub noise_sd: f64,
    #[serde(default)]
    pub missing_rate: f64,
}

impl OutcomeModel {
    pub fn continuous(intercept: f64, effect: f64, day_sd: f64, noise_sd: f64) -> Self {
        Self {
            kind: OutcomeKind::Continuous,
            link: Link::Identity,
            intercept,
            slope: 0.0,
            slope_treated: 0.0,
            effect,
            interactions: vec![],
            covariate_effects: CovariateEffects::default(),
            mediators: vec![],
            confounder_loading: 0.0,
            day_sd,
            physician_sd: 0.0,
            noise_sd,
            missing_rate: 0.0,
        }
    }

    pub fn binary(base: f64, effect: f64, day_sd: f64) -> Self {
        Self {
            kind: OutcomeKind::Binary,
            noise_sd: 0.0,
            ..Self::continuous(base, effect, day_sd, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub time_to_first_order: OutcomeModel,
    pub time_to_roomed: OutcomeModel,
    pub time_to_dispo: OutcomeModel,
    pub admitted: OutcomeModel,
    pub revisit_30d: OutcomeModel,
}

/// Generation order; mediators precede the outcomes that use them.
const OUTCOME_ORDER: [Variable; 5] = [
    Variable::TimeToFirstOrder,
    Variable::TimeToRoomed,
    Variable::TimeToDispo,
    Variable::Admitted,
    Variable::Revisit30d,
];

impl Outcomes {
    pub fn get(&self, v: Variable) -> Option<&OutcomeModel> {
        match v {
            Variable::TimeToFirstOrder => Some(&self.time_to_first_order),
            Variable::TimeToRoomed => Some(&self.time_to_roomed),
            Variable::TimeToDispo => Some(&self.time_to_dispo),
            Variable::Admitted => Some(&self.admitted),
            Variable::Revisit30d => Some(&self.revisit_30d),
            _ => None,
        }
    }

    pub fn get_mut(&mut self, v: Variable) -> Option<&mut OutcomeModel> {
        match v {
            Variable::TimeToFirstOrder => Some(&mut self.time_to_first_order),
            Variable::TimeToRoomed => Some(&mut self.time_to_roomed),
            Variable::TimeToDispo => Some(&mut self.time_to_dispo),
            Variable::Admitted => Some(&mut self.admitted),
            Variable::Revisit30d => Some(&mut self.revisit_30d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    /// Added to the age of treated visits (a balance-check violation).
    #[serde(default)]
    pub age_jump: f64,
    pub p_female: f64,
    pub race: Vec<(Race, f64)>,
    pub insurance: Vec<(Insurance, f64)>,
    pub complaint: Vec<(Complaint, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationsModel {
    pub congestion_mean: f64,
    pub congestion_day_sd: f64,
    pub congestion_visit_sd: f64,
    pub congestion_min: f64,
    pub congestion_max: f64,
    pub providers_min: u32,
    pub providers_max: u32,
    /// Workload is `congestion / providers^exponent`.
    pub workload_exponent: f64,
    pub n_physicians: usize,
    pub physicians_per_day: usize,
    /// Cut points defining the true congestion and workload tertiles.
    pub congestion_tertiles: (f64, f64),
    pub workload_tertiles: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confounder {
    pub sd: f64,
}

/// Arrivals in `[-window, 0)` hours before the window start move forward
/// by `window` hours with probability `fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manipulation {
    pub fraction: f64,
    pub window_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Expected arrivals in each clock hour.
    pub rate_fn: Vec<f64>,
    pub schedule: InterventionSchedule,
    pub covariates: CovariateModel,
    pub operations: OperationsModel,
    pub outcomes: Outcomes,
    #[serde(default)]
    pub confounder: Option<Confounder>,
    #[serde(default)]
    pub manipulation: Option<Manipulation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub y0: f64,
    pub y1: f64,
}

impl Potential {
    pub fn at(&self, a: bool) -> f64 {
        if a {
            self.y1
        } else {
            self.y0
        }
    }
}

/// Ground truth for one generated visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub visit_id: String,
    /// Hours from the window start.
    pub s: f64,
    pub a: bool,
    pub u: f64,
    pub time_to_first_order: Potential,
    pub time_to_roomed: Potential,
    pub time_to_dispo: Potential,
    pub admitted: Potential,
    pub revisit_30d: Potential,
}

impl TruthRecord {
    pub fn potential(&self, v: Variable) -> Option<&Potential> {
        match v {
            Variable::TimeToFirstOrder => Some(&self.time_to_first_order),
            Variable::TimeToRoomed => Some(&self.time_to_roomed),
            Variable::TimeToDispo => Some(&self.time_to_dispo),
            Variable::Admitted => Some(&self.admitted),
            Variable::Revisit30d => Some(&self.revisit_30d),
            _ => None,
        }
    }

    fn potential_mut(&mut self, v: Variable) -> &mut Potential {
        match v {
            Variable::TimeToFirstOrder => &mut self.time_to_first_order,
            Variable::TimeToRoomed => &mut self.time_to_roomed,
            Variable::TimeToDispo => &mut self.time_to_dispo,
            Variable::Admitted => &mut self.admitted,
            Variable::Revisit30d => &mut self.revisit_30d,
            _ => unreachable!("not a generated outcome"),
        }
    }
}

pub type TruthTable = Vec<TruthRecord>;

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub visits: VisitTable,
    pub truth: TruthTable,
    pub warnings: Vec<String>,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")))
    }
}

fn check_sd(name: &str, sd: f64) -> Result<()> {
    if sd >= 0.0 && sd.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} must be a finite non-negative SD, got {sd}")))
    }
}

fn check_weights<T>(name: &str, w: &[(T, f64)]) -> Result<()> {
    if w.is_empty() || w.iter().any(|(_, p)| !(*p >= 0.0)) || w.iter().map(|(_, p)| p).sum::<f64>() <= 0.0 {
        return Err(Error::Argument(format!("{name} needs non-negative weights with a positive total")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate_fn.len() != 24 {
            return Err(Error::Argument(format!(
                "rate function needs 24 hourly values, got {}",
                self.rate_fn.len()
            )));
        }
        if self.rate_fn.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Argument("arrival rates must be finite and non-negative".into()));
        }
        self.schedule.lookup(self.start_date)?;
        let c = &self.covariates;
        check_sd("age_sd", c.age_sd)?;
        if c.age_min > c.age_max {
            return Err(Error::Argument("age_min exceeds age_max".into()));
        }
        check_prob("p_female", c.p_female)?;
        check_weights("race", &c.race)?;
        check_weights("insurance", &c.insurance)?;
        check_weights("complaint", &c.complaint)?;
        let o = &self.operations;
        check_sd("congestion_day_sd", o.congestion_day_sd)?;
        check_sd("congestion_visit_sd", o.congestion_visit_sd)?;
        if o.providers_min == 0 || o.providers_min > o.providers_max {
            return Err(Error::Argument("provider range must be positive and ordered".into()));
        }
        if o.physicians_per_day == 0 || o.physicians_per_day > o.n_physicians {
            return Err(Error::Argument("physicians_per_day must lie in 1..=n_physicians".into()));
        }
        for (k, v) in OUTCOME_ORDER.iter().enumerate() {
            let m = self.outcomes.get(*v).expect("generated outcome");
            check_sd(&format!("{v} day_sd"), m.day_sd)?;
            check_sd(&format!("{v} physician_sd"), m.physician_sd)?;
            check_sd(&format!("{v} noise_sd"), m.noise_sd)?;
            check_prob(&format!("{v} missing_rate"), m.missing_rate)?;
            for link in &m.mediators {
                let pos = OUTCOME_ORDER.iter().position(|x| *x == link.mediator);
                if !matches!(pos, Some(p) if p < k) || link.mediator.is_binary() {
                    return Err(Error::Argument(format!(
                        "{v} cannot use {} as a mediator",
                        link.mediator
                    )));
                }
            }
            if m.link == Link::Log && (m.kind == OutcomeKind::Binary || !m.mediators.is_empty()) {
                return Err(Error::Argument(format!(
                    "{v}: log link applies to continuous outcomes without mediators"
                )));
            }
        }
        if let Some(cf) = self.confounder {
            check_sd("confounder sd", cf.sd)?;
        }
        if let Some(mp) = self.manipulation {
            check_prob("manipulation fraction", mp.fraction)?;
            if !(mp.window_hours > 0.0 && mp.window_hours < 12.0) {
                return Err(Error::Argument("manipulation window must lie in (0, 12) hours".into()));
            }
        }
        Ok(())
    }

    /// Total effect of treatment on `outcome` through all paths, in model
    /// units, ignoring moderator offsets and assuming an identity link.
    pub fn total_effect(&self, outcome: Variable) -> f64 {
        let Some(m) = self.outcomes.get(outcome) else {
            return 0.0;
        };
        m.effect
            + m.mediators
                .iter()
                .map(|l| l.mu * self.total_effect(l.mediator))
                .sum::<f64>()
    }

    /// Indirect effect of treatment on `outcome` through `mediator`.
    pub fn indirect_effect(&self, outcome: Variable, mediator: Variable) -> f64 {
        self.outcomes
            .get(outcome)
            .map(|m| {
                m.mediators
                    .iter()
                    .filter(|l| l.mediator == mediator)
                    .map(|l| l.mu * self.total_effect(mediator))
                    .sum()
            })
            .unwrap_or(0.0)
    }

    /// Injected total effects in reporting units (minutes, percentage points).
    pub fn effects(&self) -> Vec<(Variable, f64)> {
        [
            Variable::TimeToRoomed,
            Variable::TimeToDispo,
            Variable::Admitted,
            Variable::Revisit30d,
        ]
        .iter()
        .map(|&v| {
            let scale = if v.is_binary() { 100.0 } else { 1.0 };
            (v, scale * self.total_effect(v))
        })
        .collect()
    }

    /// Expected arrivals per day.
    pub fn daily_rate(&self) -> f64 {
        self.rate_fn.iter().sum()
    }

    /// Expected arrivals in clock hours `[from, to)`, wrapping midnight.
    pub fn expected_arrivals(&self, from_hour: f64, to_hour: f64) -> f64 {
        let mut total = 0.0;
        let mut t = from_hour;
        while t < to_hour - 1e-12 {
            let h = t.floor();
            let next = (h + 1.0).min(to_hour);
            total += self.rate_fn[(h.rem_euclid(24.0)) as usize] * (next - t);
            t = next;
        }
        total
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, weights: &[(T, f64)]) -> T {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(v, w) in weights {
        if x < w {
            return v;
        }
        x -= w;
    }
    weights.last().expect("non-empty weights").0
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sd * z
}

/// Draws that do not depend on the treatment state.
struct Unit {
    s_secs: i64,
    regime: usize,
    age: f64,
    female: bool,
    white: bool,
    abdominal_pain: bool,
    congestion: u32,
    workload: f64,
    weekday: chrono::Weekday,
    u: f64,
}

impl Unit {
    fn level(&self, source: ModeratorSource, ops: &OperationsModel) -> String {
        use crate::frame::tertile::Tertile;
        match source {
            ModeratorSource::CongestionTertile => {
                Tertile::classify(f64::from(self.congestion), ops.congestion_tertiles)
                    .label()
                    .to_string()
            }
            ModeratorSource::WorkloadTertile => Tertile::classify(self.workload, ops.workload_tertiles)
                .label()
                .to_string(),
            ModeratorSource::DayOfWeek => {
                ModeratorSource::DayOfWeek.default_levels()[self.weekday.num_days_from_sunday() as usize].clone()
            }
            ModeratorSource::RegimeFlag => if self.regime == 0 { "Before" } else { "After" }.to_string(),
        }
    }
}

struct DayContext<'a> {
    scn: &'a Scenario,
    date: NaiveDate,
    regime_idx: usize,
    regime: &'a crate::frame::Regime,
    physician_effects: &'a [Vec<f64>],
}

fn gen_day(ctx: &DayContext<'_>, day: usize) -> Result<Vec<(VisitRecord, TruthRecord)>> {
    let scn = ctx.scn;
    let ops = &scn.operations;
    let cov = &scn.covariates;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    rng.set_stream(day as u64 + 1);

    let congestion_level = ops.congestion_mean + normal(&mut rng, ops.congestion_day_sd);
    let day_effects: Vec<f64> = OUTCOME_ORDER
        .iter()
        .map(|v| normal(&mut rng, scn.outcomes.get(*v).expect("outcome").day_sd))
        .collect();
    let on_duty: Vec<usize> = sample_indices(&mut rng, ops.n_physicians, ops.physicians_per_day).into_vec();

    let mut arrivals: Vec<i64> = Vec::new();
    let within_hour = Uniform::new(0i64, 3600).expect("valid range");
    for (h, &rate) in scn.rate_fn.iter().enumerate() {
        if rate <= 0.0 {
            continue;
        }
        let k = Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize;
        for _ in 0..k {
            arrivals.push(h as i64 * 3600 + within_hour.sample(&mut rng));
        }
    }
    arrivals.sort_unstable();

    let mut out = Vec::with_capacity(arrivals.len());
    for (k, &clock0) in arrivals.iter().enumerate() {
        // draws made for every visit, in a fixed order
        let age_raw = cov.age_mean + normal(&mut rng, cov.age_sd);
        let female = rng.random::<f64>() < cov.p_female;
        let race = pick(&mut rng, &cov.race);
        let insurance = pick(&mut rng, &cov.insurance);
        let complaint = pick(&mut rng, &cov.complaint);
        let congestion_raw = congestion_level + normal(&mut rng, ops.congestion_visit_sd);
        let providers = rng.random_range(ops.providers_min..=ops.providers_max);
        let physician = on_duty[rng.random_range(0..on_duty.len())];
        let u = scn.confounder.map_or(0.0, |c| normal(&mut rng, c.sd));
        let noises: Vec<f64> = OUTCOME_ORDER
            .iter()
            .map(|v| {
                let m = scn.outcomes.get(*v).expect("outcome");
                match m.kind {
                    OutcomeKind::Continuous => normal(&mut rng, m.noise_sd),
                    OutcomeKind::Binary => rng.random::<f64>(),
                }
            })
            .collect();
        let missing: Vec<bool> = OUTCOME_ORDER
            .iter()
            .map(|v| rng.random::<f64>() < scn.outcomes.get(*v).expect("outcome").missing_rate)
            .collect();
        let manip_draw = rng.random::<f64>();

        let mut clock = clock0;
        let (mut s_secs, _) = assign(clock, ctx.regime, Anchor::WindowStart);
        if let Some(mp) = scn.manipulation {
            let w = (mp.window_hours * 3600.0).round() as i64;
            if (-w..0).contains(&s_secs) && manip_draw < mp.fraction {
                clock += w;
                s_secs += w;
            }
        }
        let (_, a) = assign(clock, ctx.regime, Anchor::WindowStart);
        let s = s_secs as f64 / 3600.0;
        let age = (age_raw + if a { cov.age_jump } else { 0.0 }).clamp(cov.age_min, cov.age_max);
        let congestion = congestion_raw
            .round()
            .clamp(ops.congestion_min, ops.congestion_max) as u32;
        let workload = f64::from(congestion) / f64::from(providers).powf(ops.workload_exponent);
        let unit = Unit {
            s_secs,
            regime: ctx.regime_idx,
            age,
            female,
            white: race == Race::White,
            abdominal_pain: complaint == Complaint::AbdominalPain,
            congestion,
            workload,
            weekday: chrono::Datelike::weekday(&ctx.date),
            u,
        };

        let mut truth = TruthRecord {
            visit_id: format!("d{day:04}-{k:04}"),
            s,
            a,
            u,
            time_to_first_order: Potential { y0: 0.0, y1: 0.0 },
            time_to_roomed: Potential { y0: 0.0, y1: 0.0 },
            time_to_dispo: Potential { y0: 0.0, y1: 0.0 },
            admitted: Potential { y0: 0.0, y1: 0.0 },
            revisit_30d: Potential { y0: 0.0, y1: 0.0 },
        };
        for (j, var) in OUTCOME_ORDER.iter().enumerate() {
            let m = scn.outcomes.get(*var).expect("outcome");
            let mut values = [0.0; 2];
            for (ai, value) in values.iter_mut().enumerate() {
                let treated = ai == 1;
                *value = outcome_value(m, &unit, treated, &truth, day_effects[j], ctx.physician_effects[j][physician], noises[j], ops);
            }
            *truth.potential_mut(*var) = Potential {
                y0: values[0],
                y1: values[1],
            };
        }

        let secs = unit.s_secs;
        debug_assert!(secs.abs() <= 12 * 3600);
        let arrival = NaiveDateTime::new(ctx.date, NaiveTime::MIN) + Duration::seconds(clock.rem_euclid(86_400));
        let observe = |v: Variable, j: usize| -> Option<f64> {
            (!missing[j]).then(|| truth.potential(v).expect("outcome").at(a))
        };
        let visit = VisitRecord {
            visit_id: truth.visit_id.clone(),
            arrival,
            physician_id: Some(format!("P{physician:02}")),
            age,
            sex: if female { Sex::Female } else { Sex::Male },
            race,
            insurance,
            complaint,
            congestion,
            workload,
            time_to_roomed: observe(Variable::TimeToRoomed, 1),
            time_to_dispo: observe(Variable::TimeToDispo, 2),
            admitted: observe(Variable::Admitted, 3).map(|v| v == 1.0),
            revisit_30d: observe(Variable::Revisit30d, 4).map(|v| v == 1.0),
            arrival_mode: ArrivalMode::WalkIn,
            transfer_flag: false,
            first_order_time: observe(Variable::TimeToFirstOrder, 0),
        };
        out.push((visit, truth));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn outcome_value(
    m: &OutcomeModel,
    unit: &Unit,
    treated: bool,
    truth: &TruthRecord,
    day_effect: f64,
    physician_effect: f64,
    noise: f64,
    ops: &OperationsModel,
) -> f64 {
    let s = unit.s_secs as f64 / 3600.0;
    let t = if treated { 1.0 } else { 0.0 };
    let ce = &m.covariate_effects;
    let mut effect = m.effect;
    for im in &m.interactions {
        if unit.level(im.source, ops) == im.level {
            effect += im.offset;
        }
    }
    let mut eta = m.intercept
        + m.slope * s
        + m.slope_treated * s * t
        + effect * t
        + ce.age * unit.age
        + ce.female * f64::from(u8::from(unit.female))
        + ce.white * f64::from(u8::from(unit.white))
        + ce.abdominal_pain * f64::from(u8::from(unit.abdominal_pain))
        + ce.congestion * f64::from(unit.congestion)
        + m.confounder_loading * unit.u
        + day_effect
        + physician_effect;
    for link in &m.mediators {
        eta += link.mu * truth.potential(link.mediator).expect("mediator").at(treated);
    }
    match (m.kind, m.link) {
        (OutcomeKind::Binary, _) => {
            if noise < eta.clamp(0.0, 1.0) {
                1.0
            } else {
                0.0
            }
        }
        (OutcomeKind::Continuous, Link::Identity) => eta + noise,
        (OutcomeKind::Continuous, Link::Log) => (eta + noise).exp(),
    }
}

/// Generates the visit table and its ground truth.
pub fn simulate(scn: &Scenario) -> Result<SimOutput> {
    scn.validate()?;
    // physician effects come from the stream reserved for scenario-wide draws
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    rng.set_stream(0);
    let physician_effects: Vec<Vec<f64>> = OUTCOME_ORDER
        .iter()
        .map(|v| {
            let sd = scn.outcomes.get(*v).expect("outcome").physician_sd;
            let dist = Normal::new(0.0, sd).expect("validated SD");
            (0..scn.operations.n_physicians).map(|_| dist.sample(&mut rng)).collect()
        })
        .collect();

    let mut warnings = Vec::new();
    for (i, r) in scn.schedule.regimes().iter().enumerate() {
        let start = crate::frame::schedule::clock_hours(r.start);
        let end = crate::frame::schedule::clock_hours(r.end);
        for (what, at) in [("start", start), ("end", end)] {
            if scn.expected_arrivals(at - 1.0, at + 1.0) == 0.0 {
                warnings.push(format!(
                    "regime {i}: no arrivals expected within an hour of the window {what}"
                ));
            }
        }
    }

    let days: Vec<Vec<(VisitRecord, TruthRecord)>> = (0..scn.n_days)
        .into_par_iter()
        .map(|day| {
            let date = scn.start_date + Duration::days(day as i64);
            let (regime_idx, regime) = scn.schedule.lookup(date)?;
            gen_day(
                &DayContext {
                    scn,
                    date,
                    regime_idx,
                    regime,
                    physician_effects: &physician_effects,
                },
                day,
            )
        })
        .collect::<Result<_>>()?;
    let n: usize = days.iter().map(Vec::len).sum();
    let mut visits = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for day in days {
        for (mut v, t) in day {
            // manipulation can move an arrival; keep the day's order by time
            v.visit_id = t.visit_id.clone();
            visits.push(v);
            truth.push(t);
        }
    }
    sort_by_arrival(&mut visits, &mut truth);
    Ok(SimOutput {
        visits,
        truth,
        warnings,
    })
}

fn sort_by_arrival(visits: &mut VisitTable, truth: &mut TruthTable) {
    let mut order: Vec<usize> = (0..visits.len()).collect();
    order.sort_by(|&i, &j| {
        visits[i]
            .arrival
            .cmp(&visits[j].arrival)
            .then_with(|| visits[i].visit_id.cmp(&visits[j].visit_id))
    });
    let v2: VisitTable = order.iter().map(|&i| visits[i].clone()).collect();
    let t2: TruthTable = order.iter().map(|&i| truth[i].clone()).collect();
    *visits = v2;
    *truth = t2;
}

/// Ground truth as CSV: `visit_id, s, a, u` then `y0`/`y1` per outcome.
pub fn write_truth<W: std::io::Write>(truth: &[TruthRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["visit_id".to_string(), "s".into(), "a".into(), "u".into()];
    for v in OUTCOME_ORDER {
        header.push(format!("{v}_y0"));
        header.push(format!("{v}_y1"));
    }
    w.write_record(&header)?;
    for t in truth {
        let mut rec = vec![
            t.visit_id.clone(),
            t.s.to_string(),
            u8::from(t.a).to_string(),
            t.u.to_string(),
        ];
        for v in OUTCOME_ORDER {
            let p = t.potential(v).expect("generated outcome");
            rec.push(p.y0.to_string());
            rec.push(p.y1.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of `Y¹ − Y⁰` over visits with `|s| <= window`.
pub fn oracle_ate(truth: &[TruthRecord], outcome: Variable, window: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in truth.iter().filter(|t| t.s.abs() <= window) {
        let p = t
            .potential(outcome)
            .ok_or_else(|| Error::Argument(format!("{outcome} has no potential outcomes")))?;
        sum += p.y1 - p.y0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data(format!("no visits within {window} hours of the cutoff")));
    }
    Ok(sum / n as f64)
}

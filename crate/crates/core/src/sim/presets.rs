use chrono::NaiveDate;

use super::{
    Confounder, CovariateEffects, CovariateModel, EffectModifier, Manipulation, MediatorLink,
    OperationsModel, OutcomeModel, Outcomes, Scenario,
};
use crate::error::{Error, Result};
use crate::frame::records::{Complaint, Insurance, Race};
use crate::frame::{InterventionSchedule, Variable};
use crate::moderation::ModeratorSource;

pub const PRESET_NAMES: [&str; 5] = [
    "paper_like",
    "null",
    "confounded_mediator",
    "manipulated",
    "heterogeneous",
];

/// Hourly arrival rates summing to about 163 per day. The two hours either
/// side of the default window start carry 11/8 times the volume of the two
/// hours either side of its end.
fn rate_fn() -> Vec<f64> {
    let late = 10.0 * 8.0 / 11.0;
    vec![
        2.6, 2.1, 2.0, 2.0, 2.0, 2.1, // 00-05
        3.5, 5.0, 7.5, 9.5, // 06-09
        10.0, 10.0, 10.0, 10.0, 10.0, // 10-14
        10.0, 10.0, 9.5, 9.0, // 15-18
        late, late, late, late, late, // 19-23
    ]
}

fn covariates() -> CovariateModel {
    CovariateModel {
        age_mean: 49.2,
        age_sd: 19.2,
        age_min: 18.0,
        age_max: 100.0,
        age_jump: 0.0,
        p_female: 0.547,
        race: vec![
            (Race::White, 0.793),
            (Race::Black, 0.12),
            (Race::HispanicLatino, 0.03),
            (Race::Asian, 0.02),
            (Race::Other, 0.025),
            (Race::AmericanIndianAlaskaNative, 0.005),
            (Race::Unknown, 0.007),
        ],
        insurance: vec![
            (Insurance::Commercial, 0.441),
            (Insurance::Medicare, 0.301),
            (Insurance::Medicaid, 0.18),
            (Insurance::SelfPaid, 0.06),
            (Insurance::Unknown, 0.018),
        ],
        complaint: vec![
            (Complaint::AbdominalPain, 0.119),
            (Complaint::ChestPain, 0.08),
            (Complaint::Dyspnea, 0.06),
            (Complaint::Fall, 0.05),
            (Complaint::Fever, 0.04),
            (Complaint::Other, 0.651),
        ],
    }
}

fn operations() -> OperationsModel {
    OperationsModel {
        congestion_mean: 36.0,
        congestion_day_sd: 11.0,
        congestion_visit_sd: 4.0,
        congestion_min: 2.0,
        congestion_max: 81.0,
        providers_min: 8,
        providers_max: 16,
        workload_exponent: 1.0,
        n_physicians: 30,
        physicians_per_day: 5,
        congestion_tertiles: (30.0, 41.0),
        workload_tertiles: (2.4, 3.1),
    }
}

fn outcomes() -> Outcomes {
    let mut first_order = OutcomeModel::continuous(40.0, -6.0, 4.0, 12.0);
    first_order.slope = 0.5;
    first_order.missing_rate = 0.036;

    let mut roomed = OutcomeModel::continuous(15.0, 4.6, 6.0, 10.0);
    roomed.slope = -1.0;
    roomed.covariate_effects = CovariateEffects {
        congestion: 0.2,
        ..CovariateEffects::default()
    };

    // direct -11.9; paths through first order (-6.0 / 3) and roomed (-0.5)
    let mut dispo = OutcomeModel::continuous(200.0, -11.9, 15.0, 100.0);
    dispo.slope = 2.0;
    dispo.covariate_effects = CovariateEffects {
        age: 0.5,
        female: -3.0,
        abdominal_pain: 20.0,
        ..CovariateEffects::default()
    };
    dispo.mediators = vec![
        MediatorLink {
            mediator: Variable::TimeToFirstOrder,
            mu: 1.0 / 3.0,
        },
        MediatorLink {
            mediator: Variable::TimeToRoomed,
            mu: -0.5 / 4.6,
        },
    ];

    let mut admitted = OutcomeModel::binary(0.245 - 0.002 * 49.2, -0.058, 0.02);
    admitted.covariate_effects = CovariateEffects {
        age: 0.002,
        ..CovariateEffects::default()
    };

    let mut revisit = OutcomeModel::binary(0.119, -0.008, 0.01);
    revisit.missing_rate = 0.04;

    Outcomes {
        time_to_first_order: first_order,
        time_to_roomed: roomed,
        time_to_dispo: dispo,
        admitted,
        revisit_30d: revisit,
    }
}

/// Minutes of disposition per minute of first order in the `null` preset.
const NULL_FIRST_ORDER_MU: f64 = 1.5;

fn paper_like() -> Scenario {
    Scenario {
        name: "paper_like".into(),
        seed: 20161101,
        n_days: 200,
        start_date: NaiveDate::from_ymd_opt(2017, 5, 1).expect("valid date"),
        rate_fn: rate_fn(),
        schedule: InterventionSchedule::study_default(),
        covariates: covariates(),
        operations: operations(),
        outcomes: outcomes(),
        confounder: None,
        manipulation: None,
    }
}

/// Returns the named scenario.
///
/// * `paper_like`: injected total effects +4.6 min (roomed), -14.4 min
///   (disposition), -5.8 and -0.8 probability points (admission, revisit).
/// * `null`: every treatment effect, including treatment-to-mediator, is 0,
///   and first order drives disposition more strongly than in `paper_like`.
/// * `confounded_mediator`: a latent U loads on time to roomed and time to
///   disposition with the same sign.
/// * `manipulated`: 10% of arrivals in the half hour before the start move
///   across it.
/// * `heterogeneous`: congestion-tertile offsets on roomed and disposition.
pub fn preset(name: &str) -> Result<Scenario> {
    let mut s = paper_like();
    match name {
        "paper_like" => {}
        "null" => {
            for v in [
                Variable::TimeToFirstOrder,
                Variable::TimeToRoomed,
                Variable::TimeToDispo,
                Variable::Admitted,
                Variable::Revisit30d,
            ] {
                s.outcomes.get_mut(v).expect("outcome").effect = 0.0;
            }
            // the product test of γ′μ only holds its size when μ is well
            // identified; at μ = 1/3 it rejects well under 1% of the time
            s.outcomes.time_to_dispo.mediators[0].mu = NULL_FIRST_ORDER_MU;
        }
        "confounded_mediator" => {
            s.confounder = Some(Confounder { sd: 1.0 });
            s.outcomes.time_to_roomed.confounder_loading = 5.0;
            s.outcomes.time_to_dispo.confounder_loading = 30.0;
        }
        "manipulated" => {
            s.manipulation = Some(Manipulation {
                fraction: 0.10,
                window_hours: 0.5,
            });
        }
        "heterogeneous" => {
            let congestion = |level: &str, offset: f64| EffectModifier {
                source: ModeratorSource::CongestionTertile,
                level: level.into(),
                offset,
            };
            s.outcomes.time_to_roomed.interactions =
                vec![congestion("Medium", -8.3), congestion("High", -4.0)];
            s.outcomes.time_to_dispo.interactions = vec![congestion("High", -10.0)];
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    }
    s.name = name.to_string();
    Ok(s)
}

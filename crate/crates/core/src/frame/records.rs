use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declares a categorical level set with stable machine names.
macro_rules! categorical {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let key = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(key))
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "`{}` is not a level of {}",
                            key,
                            stringify!($name)
                        ))
                    })
            }
        }
    };
}

categorical!(Sex {
    Female => "female",
    Male => "male",
});

categorical!(Race {
    White => "white",
    Black => "black",
    HispanicLatino => "hispanic_latino",
    Asian => "asian",
    Other => "other",
    AmericanIndianAlaskaNative => "american_indian_alaska_native",
    Unknown => "unknown",
});

categorical!(Insurance {
    Commercial => "commercial",
    Medicare => "medicare",
    Medicaid => "medicaid",
    SelfPaid => "self_paid",
    Unknown => "unknown",
});

categorical!(
    /// Chief complaint. `Procedure` marks complaints misrecorded as a
    /// procedure; those visits are removed by the exclusion pipeline.
    Complaint {
        AbdominalPain => "abdominal_pain",
        ChestPain => "chest_pain",
        Dyspnea => "dyspnea",
        Fall => "fall",
        Fever => "fever",
        Other => "other",
        Procedure => "procedure",
    }
);

categorical!(ArrivalMode {
    WalkIn => "walk_in",
    Ambulance => "ambulance",
    Helicopter => "helicopter",
    Other => "other",
});

/// One emergency-department visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub visit_id: String,
    pub arrival: NaiveDateTime,
    pub physician_id: Option<String>,
    pub age: f64,
    pub sex: Sex,
    pub race: Race,
    pub insurance: Insurance,
    pub complaint: Complaint,
    pub congestion: u32,
    pub workload: f64,
    pub time_to_roomed: Option<f64>,
    pub time_to_dispo: Option<f64>,
    pub admitted: Option<bool>,
    pub revisit_30d: Option<bool>,
    pub arrival_mode: ArrivalMode,
    pub transfer_flag: bool,
    pub first_order_time: Option<f64>,
}

impl VisitRecord {
    /// Calendar date of arrival on the local clock.
    pub fn day_key(&self) -> NaiveDate {
        self.arrival.date()
    }

    /// Numeric value of an analysis variable, `None` when missing.
    pub fn value(&self, var: Variable) -> Option<f64> {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        match var {
            Variable::Age => Some(self.age),
            Variable::Female => Some(flag(self.sex == Sex::Female)),
            Variable::White => Some(flag(self.race == Race::White)),
            Variable::AbdominalPain => Some(flag(self.complaint == Complaint::AbdominalPain)),
            Variable::Congestion => Some(f64::from(self.congestion)),
            Variable::Workload => Some(self.workload),
            Variable::TimeToRoomed => self.time_to_roomed,
            Variable::TimeToDispo => self.time_to_dispo,
            Variable::TimeToFirstOrder => self.first_order_time,
            Variable::Admitted => self.admitted.map(flag),
            Variable::Revisit30d => self.revisit_30d.map(flag),
        }
    }
}

/// Numeric variables available to models, either as outcomes, covariates,
/// mediators or moderator sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Age,
    Female,
    White,
    AbdominalPain,
    Congestion,
    Workload,
    TimeToRoomed,
    TimeToDispo,
    TimeToFirstOrder,
    Admitted,
    Revisit30d,
}

impl Variable {
    pub const ALL: &'static [Variable] = &[
        Variable::Age,
        Variable::Female,
        Variable::White,
        Variable::AbdominalPain,
        Variable::Congestion,
        Variable::Workload,
        Variable::TimeToRoomed,
        Variable::TimeToDispo,
        Variable::TimeToFirstOrder,
        Variable::Admitted,
        Variable::Revisit30d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Age => "age",
            Variable::Female => "female",
            Variable::White => "white",
            Variable::AbdominalPain => "abdominal_pain",
            Variable::Congestion => "congestion",
            Variable::Workload => "workload",
            Variable::TimeToRoomed => "time_to_roomed",
            Variable::TimeToDispo => "time_to_dispo",
            Variable::TimeToFirstOrder => "time_to_first_order",
            Variable::Admitted => "admitted",
            Variable::Revisit30d => "revisit_30d",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Variable::Female
                | Variable::White
                | Variable::AbdominalPain
                | Variable::Admitted
                | Variable::Revisit30d
        )
    }

    /// Default adjustment set of the primary analysis.
    pub fn default_covariates() -> Vec<Variable> {
        vec![
            Variable::Age,
            Variable::Female,
            Variable::White,
            Variable::AbdominalPain,
        ]
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        if key == "first_order_time" {
            return Ok(Variable::TimeToFirstOrder);
        }
        Variable::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| Error::Argument(format!("unknown variable `{key}`")))
    }
}

pub type VisitTable = Vec<VisitRecord>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_parse_is_case_insensitive() {
        assert_eq!("Female".parse::<Sex>().unwrap(), Sex::Female);
        assert_eq!(" walk_in ".parse::<ArrivalMode>().unwrap(), ArrivalMode::WalkIn);
        assert!("x".parse::<Race>().is_err());
    }

    #[test]
    fn variable_names_round_trip() {
        for v in Variable::ALL {
            assert_eq!(v.as_str().parse::<Variable>().unwrap(), *v);
        }
        assert_eq!(
            "first_order_time".parse::<Variable>().unwrap(),
            Variable::TimeToFirstOrder
        );
    }
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::forcing::ForcedVisit;
use super::records::{Complaint, Insurance, Race, Variable};
use crate::error::Result;
use crate::report::round_half_away;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub variable: String,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two values.
    pub sd: Option<f64>,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSummary {
    pub variable: String,
    pub levels: Vec<LevelCount>,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub label: String,
    pub n: usize,
    pub numeric: Vec<NumericSummary>,
    pub categorical: Vec<CategoricalSummary>,
}

/// Descriptive statistics split at `s = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub before: SideSummary,
    pub after: SideSummary,
}

const NUMERIC: &[Variable] = &[
    Variable::Age,
    Variable::TimeToRoomed,
    Variable::TimeToDispo,
    Variable::TimeToFirstOrder,
    Variable::Congestion,
    Variable::Workload,
];

const BINARY: &[Variable] = &[Variable::Female, Variable::Admitted, Variable::Revisit30d];

pub(crate) fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (Some(mean), Some((ss / (n - 1.0)).sqrt()))
}

fn level_counts<T: Copy + PartialEq + std::fmt::Display>(
    name: &str,
    all: &[T],
    rows: &[&ForcedVisit],
    get: impl Fn(&ForcedVisit) -> T,
) -> CategoricalSummary {
    let n = rows.len();
    CategoricalSummary {
        variable: name.to_string(),
        levels: all
            .iter()
            .map(|&lvl| {
                let count = rows.iter().filter(|r| get(r) == lvl).count();
                LevelCount {
                    level: lvl.to_string(),
                    count,
                    percent: if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 },
                }
            })
            .collect(),
        missing: 0,
    }
}

fn side(label: &str, rows: &[&ForcedVisit]) -> SideSummary {
    let mut numeric = Vec::new();
    for &var in NUMERIC {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.visit.value(var)).collect();
        let (mean, sd) = mean_sd(&values);
        numeric.push(NumericSummary {
            variable: var.as_str().to_string(),
            n: values.len(),
            mean,
            sd,
            missing: rows.len() - values.len(),
        });
    }
    let mut categorical = Vec::new();
    for &var in BINARY {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.visit.value(var)).collect();
        let count = values.iter().filter(|&&v| v == 1.0).count();
        categorical.push(CategoricalSummary {
            variable: var.as_str().to_string(),
            levels: vec![LevelCount {
                level: "yes".into(),
                count,
                percent: if values.is_empty() {
                    0.0
                } else {
                    100.0 * count as f64 / values.len() as f64
                },
            }],
            missing: rows.len() - values.len(),
        });
    }
    categorical.push(level_counts("race", Race::ALL, rows, |r| r.visit.race));
    categorical.push(level_counts("insurance", Insurance::ALL, rows, |r| {
        r.visit.insurance
    }));
    categorical.push(level_counts("complaint", Complaint::ALL, rows, |r| {
        r.visit.complaint
    }));
    SideSummary {
        label: label.to_string(),
        n: rows.len(),
        numeric,
        categorical,
    }
}

pub fn summarize(table: &[ForcedVisit]) -> Summary {
    let (after, before): (Vec<&ForcedVisit>, Vec<&ForcedVisit>) =
        table.iter().partition(|r| r.is_right());
    Summary {
        before: side("before", &before),
        after: side("after", &after),
    }
}

impl Summary {
    /// Two-column layout: `value` is "mean (SD)" or "count (percent)".
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "variable",
            "level",
            &format!("before (n = {})", self.before.n),
            "before_missing",
            &format!("after (n = {})", self.after.n),
            "after_missing",
        ])?;
        let num = |s: &NumericSummary| match (s.mean, s.sd) {
            (Some(m), Some(sd)) => format!(
                "{:.1} ({:.1})",
                round_half_away(m, 1),
                round_half_away(sd, 1)
            ),
            (Some(m), None) => format!("{:.1} (NA)", round_half_away(m, 1)),
            _ => "NA".into(),
        };
        for (b, a) in self.before.numeric.iter().zip(&self.after.numeric) {
            w.write_record([
                b.variable.as_str(),
                "",
                &num(b),
                &b.missing.to_string(),
                &num(a),
                &a.missing.to_string(),
            ])?;
        }
        let cat = |l: &LevelCount| format!("{} ({:.1})", l.count, round_half_away(l.percent, 1));
        for (b, a) in self.before.categorical.iter().zip(&self.after.categorical) {
            for (lb, la) in b.levels.iter().zip(&a.levels) {
                w.write_record([
                    b.variable.as_str(),
                    lb.level.as_str(),
                    &cat(lb),
                    &b.missing.to_string(),
                    &cat(la),
                    &a.missing.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::records::*;
    use crate::frame::schedule::Anchor;
    use chrono::NaiveDate;

    fn row(age: f64, s: f64, dispo: Option<f64>) -> ForcedVisit {
        ForcedVisit {
            visit: VisitRecord {
                visit_id: "v".into(),
                arrival: NaiveDate::from_ymd_opt(2017, 3, 1)
                    .unwrap()
                    .and_hms_opt(12, 0, 0)
                    .unwrap(),
                physician_id: None,
                age,
                sex: Sex::Female,
                race: Race::White,
                insurance: Insurance::Medicare,
                complaint: Complaint::Fever,
                congestion: 10,
                workload: 1.0,
                time_to_roomed: Some(5.0),
                time_to_dispo: dispo,
                admitted: Some(true),
                revisit_30d: None,
                arrival_mode: ArrivalMode::WalkIn,
                transfer_flag: false,
                first_order_time: None,
            },
            s,
            a: s >= 0.0,
            anchor: Anchor::WindowStart,
            regime: 0,
        }
    }

    #[test]
    fn single_row_has_mean_but_no_sd() {
        let s = summarize(&[row(50.0, 0.5, None)]);
        let age = &s.after.numeric[0];
        assert_eq!(age.mean, Some(50.0));
        assert_eq!(age.sd, None);
        assert_eq!(s.before.n, 0);
        let dispo = s.after.numeric.iter().find(|n| n.variable == "time_to_dispo").unwrap();
        assert_eq!(dispo.missing, 1);
    }

    #[test]
    fn splits_at_zero() {
        let t = vec![row(20.0, -2.0, Some(1.0)), row(30.0, 0.0, Some(2.0)), row(40.0, 2.5, None)];
        let s = summarize(&t);
        assert_eq!(s.before.n, 1);
        assert_eq!(s.after.n, 2);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("variable,level,before (n = 1),before_missing,after (n = 2)"));
    }

    #[test]
    fn moments_match_naive_fold() {
        let ages: Vec<f64> = (0..257).map(|i| 18.0 + ((i * 37) % 71) as f64 * 0.9).collect();
        let t: Vec<_> = ages.iter().map(|&a| row(a, 1.0, Some(a * 2.0))).collect();
        let s = summarize(&t);
        let n = ages.len() as f64;
        let mean = ages.iter().fold(0.0, |acc, x| acc + x) / n;
        let var = ages.iter().fold(0.0, |acc, x| acc + (x - mean) * (x - mean)) / (n - 1.0);
        let age = &s.after.numeric[0];
        assert!((age.mean.unwrap() - mean).abs() < 1e-12 * mean);
        assert!((age.sd.unwrap() - var.sqrt()).abs() < 1e-12 * var.sqrt());
    }
}

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use super::records::VisitRecord;
use super::schedule::{Anchor, InterventionSchedule, Regime};
use crate::error::{Error, Result};

const DAY_SECS: i64 = 24 * 3600;
const HALF_DAY_SECS: i64 = 12 * 3600;

/// A visit with its forcing value `s` (signed hours from the anchor) and
/// treatment indicator `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedVisit {
    #[serde(flatten)]
    pub visit: VisitRecord,
    pub s: f64,
    pub a: bool,
    pub anchor: Anchor,
    /// Index of the schedule regime in force on the arrival date.
    pub regime: usize,
}

impl ForcedVisit {
    pub fn is_right(&self) -> bool {
        self.s >= 0.0
    }
}

/// Wraps a signed offset in seconds into `[-12h, 12h)`.
fn wrap_half_day(secs: i64) -> i64 {
    (secs + HALF_DAY_SECS).rem_euclid(DAY_SECS) - HALF_DAY_SECS
}

fn seconds_of_day(v: &VisitRecord) -> i64 {
    i64::from(v.arrival.time().num_seconds_from_midnight())
}

/// Signed offset in seconds and treatment for a clock time within a regime.
pub(crate) fn assign(clock: i64, regime: &Regime, anchor: Anchor) -> (i64, bool) {
    let start = i64::from(regime.start.num_seconds_from_midnight());
    let end = i64::from(regime.end.num_seconds_from_midnight());
    let len = end - start;
    match anchor {
        Anchor::WindowStart => {
            let s = wrap_half_day(clock - start);
            (s, (0..len).contains(&s))
        }
        Anchor::WindowEnd => {
            let s = wrap_half_day(clock - end);
            (s, (-len..0).contains(&s))
        }
        Anchor::Clock(t) => {
            let s = wrap_half_day(clock - i64::from(t.num_seconds_from_midnight()));
            (s, s >= 0)
        }
    }
}

/// Forcing value and assignment for every visit, measured from `anchor` on
/// the arrival date's regime. Visits are coded strictly by arrival clock
/// time.
pub fn compute_forcing(
    table: &[VisitRecord],
    schedule: &InterventionSchedule,
    anchor: Anchor,
) -> Result<Vec<ForcedVisit>> {
    table
        .iter()
        .map(|v| {
            let (regime_idx, regime) = schedule.lookup(v.day_key())?;
            let (offset, a) = assign(seconds_of_day(v), regime, anchor);
            Ok(ForcedVisit {
                visit: v.clone(),
                s: offset as f64 / 3600.0,
                a,
                anchor,
                regime: regime_idx,
            })
        })
        .collect()
}

/// Rows with `|s| <= h` and the count on each side of the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSubset {
    pub rows: Vec<ForcedVisit>,
    pub n_left: usize,
    pub n_right: usize,
}

pub fn bandwidth_filter(table: &[ForcedVisit], h: f64) -> Result<BandwidthSubset> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("bandwidth must be positive, got {h}")));
    }
    let rows: Vec<ForcedVisit> = table.iter().filter(|r| r.s.abs() <= h).cloned().collect();
    let n_right = rows.iter().filter(|r| r.is_right()).count();
    Ok(BandwidthSubset {
        n_left: rows.len() - n_right,
        n_right,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::records::*;
    use chrono::{NaiveDate, NaiveDateTime};

    fn visit_at(ts: &str) -> VisitRecord {
        VisitRecord {
            visit_id: ts.into(),
            arrival: NaiveDateTime::parse_from_str(ts, "%Y-%m-%d %H:%M").unwrap(),
            physician_id: None,
            age: 40.0,
            sex: Sex::Male,
            race: Race::White,
            insurance: Insurance::Commercial,
            complaint: Complaint::Other,
            congestion: 20,
            workload: 2.0,
            time_to_roomed: None,
            time_to_dispo: None,
            admitted: None,
            revisit_30d: None,
            arrival_mode: ArrivalMode::WalkIn,
            transfer_flag: false,
            first_order_time: None,
        }
    }

    fn force(ts: &str, anchor: Anchor) -> ForcedVisit {
        let s = InterventionSchedule::study_default();
        compute_forcing(&[visit_at(ts)], &s, anchor).unwrap().remove(0)
    }

    #[test]
    fn first_regime_pre_start_is_control() {
        let f = force("2017-03-05 12:30", Anchor::WindowStart);
        assert_eq!(f.s, -0.5);
        assert!(!f.a);
    }

    #[test]
    fn second_regime_post_start_is_treated() {
        let f = force("2017-08-05 12:30", Anchor::WindowStart);
        assert_eq!(f.s, 0.5);
        assert!(f.a);
        assert_eq!(f.regime, 1);
    }

    #[test]
    fn arrival_at_start_is_treated_with_zero_forcing() {
        let f = force("2017-08-05 12:00", Anchor::WindowStart);
        assert_eq!(f.s, 0.0);
        assert!(f.a);
    }

    #[test]
    fn late_night_maps_to_negative_forcing() {
        // 02:00 is 10h before a 12:00 start
        let f = force("2017-08-05 02:00", Anchor::WindowStart);
        assert_eq!(f.s, -10.0);
        let f = force("2017-08-05 23:30", Anchor::WindowStart);
        assert_eq!(f.s, 11.5);
        assert!(!f.a);
    }

    #[test]
    fn end_anchor_treats_the_left_side() {
        let before = force("2017-08-05 20:30", Anchor::WindowEnd);
        assert_eq!(before.s, -0.5);
        assert!(before.a);
        let at = force("2017-08-05 21:00", Anchor::WindowEnd);
        assert_eq!(at.s, 0.0);
        assert!(!at.a);
    }

    #[test]
    fn date_before_schedule_names_the_date() {
        let s = InterventionSchedule::study_default();
        let err = compute_forcing(&[visit_at("2016-01-02 12:00")], &s, Anchor::WindowStart)
            .unwrap_err();
        assert!(err.to_string().contains("2016-01-02"));
        assert!(matches!(err, Error::DateBeforeSchedule(d) if d == NaiveDate::from_ymd_opt(2016, 1, 2).unwrap()));
    }

    #[test]
    fn bandwidth_filter_rejects_non_positive() {
        assert!(bandwidth_filter(&[], 0.0).is_err());
        assert!(bandwidth_filter(&[], -1.0).is_err());
    }

    #[test]
    fn wide_bandwidth_keeps_everything() {
        let s = InterventionSchedule::study_default();
        let table: Vec<_> = ["2017-03-05 00:00", "2017-03-05 12:59", "2017-03-05 23:59"]
            .iter()
            .map(|t| visit_at(t))
            .collect();
        let forced = compute_forcing(&table, &s, Anchor::WindowStart).unwrap();
        let all = bandwidth_filter(&forced, 24.0).unwrap();
        assert_eq!(all.rows.len(), 3);
        assert_eq!(all.n_left + all.n_right, 3);
    }
}

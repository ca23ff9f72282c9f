use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A daily on-window `[start, end)` in force from `effective_from` until the
/// next regime begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub effective_from: NaiveDate,
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl Regime {
    pub fn window_hours(&self) -> f64 {
        clock_hours(self.end) - clock_hours(self.start)
    }
}

/// Piecewise schedule of daily intervention windows with dated changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Regime>", into = "Vec<Regime>")]
pub struct InterventionSchedule {
    regimes: Vec<Regime>,
}

impl InterventionSchedule {
    pub fn new(regimes: Vec<Regime>) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::Schedule("at least one regime is required".into()));
        }
        for r in &regimes {
            if r.start >= r.end {
                return Err(Error::Schedule(format!(
                    "regime from {} has start {} not before end {}",
                    r.effective_from, r.start, r.end
                )));
            }
        }
        for pair in regimes.windows(2) {
            if pair[0].effective_from >= pair[1].effective_from {
                return Err(Error::Schedule(format!(
                    "regimes must be strictly ordered by date ({} then {})",
                    pair[0].effective_from, pair[1].effective_from
                )));
            }
        }
        Ok(Self { regimes })
    }

    /// One regime, every day from `from`.
    pub fn single(from: NaiveDate, start: NaiveTime, end: NaiveTime) -> Result<Self> {
        Self::new(vec![Regime {
            effective_from: from,
            start,
            end,
        }])
    }

    /// 1pm-10pm from 2016-11-01, then 12pm-9pm from 2017-07-01.
    pub fn study_default() -> Self {
        let hm = |h| NaiveTime::from_hms_opt(h, 0, 0).unwrap();
        Self::new(vec![
            Regime {
                effective_from: NaiveDate::from_ymd_opt(2016, 11, 1).unwrap(),
                start: hm(13),
                end: hm(22),
            },
            Regime {
                effective_from: NaiveDate::from_ymd_opt(2017, 7, 1).unwrap(),
                start: hm(12),
                end: hm(21),
            },
        ])
        .expect("static schedule is valid")
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    /// Index and regime in force on `date`.
    pub fn lookup(&self, date: NaiveDate) -> Result<(usize, &Regime)> {
        let idx = self
            .regimes
            .partition_point(|r| r.effective_from <= date);
        if idx == 0 {
            return Err(Error::DateBeforeSchedule(date));
        }
        Ok((idx - 1, &self.regimes[idx - 1]))
    }
}

impl TryFrom<Vec<Regime>> for InterventionSchedule {
    type Error = Error;

    fn try_from(regimes: Vec<Regime>) -> Result<Self> {
        Self::new(regimes)
    }
}

impl From<InterventionSchedule> for Vec<Regime> {
    fn from(s: InterventionSchedule) -> Self {
        s.regimes
    }
}

/// Reference point the forcing variable is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    WindowStart,
    WindowEnd,
    /// A fixed clock time every day, used for placebo scans.
    Clock(NaiveTime),
}

impl Anchor {
    pub fn label(&self) -> String {
        match self {
            Anchor::WindowStart => "window_start".into(),
            Anchor::WindowEnd => "window_end".into(),
            Anchor::Clock(t) => t.format("%H:%M").to_string(),
        }
    }
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Anchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "start" | "window_start" => Ok(Anchor::WindowStart),
            "end" | "window_end" => Ok(Anchor::WindowEnd),
            other => parse_clock(other)
                .map(Anchor::Clock)
                .ok_or_else(|| Error::Argument(format!("unrecognized anchor `{other}`"))),
        }
    }
}

/// Parses `HH:MM`, `HH:MM:SS`, or 12-hour forms such as `7am` / `11pm`.
pub fn parse_clock(s: &str) -> Option<NaiveTime> {
    let s = s.trim().to_ascii_lowercase();
    if let Ok(t) = NaiveTime::parse_from_str(&s, "%H:%M") {
        return Some(t);
    }
    if let Ok(t) = NaiveTime::parse_from_str(&s, "%H:%M:%S") {
        return Some(t);
    }
    let (digits, pm) = if let Some(d) = s.strip_suffix("pm") {
        (d, true)
    } else if let Some(d) = s.strip_suffix("am") {
        (d, false)
    } else {
        return None;
    };
    let h: u32 = digits.trim().parse().ok()?;
    if !(1..=12).contains(&h) {
        return None;
    }
    let h24 = match (h, pm) {
        (12, false) => 0,
        (12, true) => 12,
        (h, false) => h,
        (h, true) => h + 12,
    };
    NaiveTime::from_hms_opt(h24, 0, 0)
}

/// Clock time as fractional hours since midnight.
pub fn clock_hours(t: NaiveTime) -> f64 {
    f64::from(t.num_seconds_from_midnight()) / 3600.0
}

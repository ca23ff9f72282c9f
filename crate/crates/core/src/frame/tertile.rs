use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tertile {
    Low,
    Medium,
    High,
}

impl Tertile {
    pub const ALL: [Tertile; 3] = [Tertile::Low, Tertile::Medium, Tertile::High];

    pub fn label(self) -> &'static str {
        match self {
            Tertile::Low => "Low",
            Tertile::Medium => "Medium",
            Tertile::High => "High",
        }
    }

    /// `[min, q1]`, `(q1, q2]`, `(q2, max]`.
    pub fn classify(value: f64, boundaries: (f64, f64)) -> Tertile {
        if value <= boundaries.0 {
            Tertile::Low
        } else if value <= boundaries.1 {
            Tertile::Medium
        } else {
            Tertile::High
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TertileEncoding {
    pub categories: Vec<Tertile>,
    pub boundaries: (f64, f64),
}

/// Linear-interpolation sample quantile (type 7) of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical 1/3 and 2/3 quantiles.
pub fn fit_tertile_boundaries(values: &[f64]) -> Result<(f64, f64)> {
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("tertile values must be finite".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Data(format!(
            "tertiles need at least 3 distinct values, got {}",
            distinct.len()
        )));
    }
    Ok((quantile_sorted(&sorted, 1.0 / 3.0), quantile_sorted(&sorted, 2.0 / 3.0)))
}

/// Encodes values into tertiles, fitting boundaries when none are given.
pub fn tertile_encode(values: &[f64], boundaries: Option<(f64, f64)>) -> Result<TertileEncoding> {
    let boundaries = match boundaries {
        Some(b) => {
            if b.0 > b.1 {
                return Err(Error::Argument(format!(
                    "tertile boundaries must be ordered, got ({}, {})",
                    b.0, b.1
                )));
            }
            b
        }
        None => fit_tertile_boundaries(values)?,
    };
    Ok(TertileEncoding {
        categories: values
            .iter()
            .map(|&v| Tertile::classify(v, boundaries))
            .collect(),
        boundaries,
    })
}

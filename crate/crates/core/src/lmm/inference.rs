use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::MixedFit;
use crate::error::{Error, Result};

/// Relative pivot size below which a covariance block counts as singular.
const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// A scalar estimate with a normal-approximation standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

impl Estimate {
    pub fn z(&self) -> f64 {
        self.estimate / self.se
    }

    /// Two-sided normal p-value.
    pub fn p_value(&self) -> f64 {
        if self.se == 0.0 {
            return if self.estimate == 0.0 { 1.0 } else { 0.0 };
        }
        2.0 * Normal::standard().cdf(-self.z().abs())
    }

    pub fn ci(&self, level: f64) -> Result<(f64, f64)> {
        let z = z_quantile(level)?;
        Ok((self.estimate - z * self.se, self.estimate + z * self.se))
    }

    pub fn scaled(&self, c: f64) -> Estimate {
        Estimate {
            estimate: c * self.estimate,
            se: c.abs() * self.se,
        }
    }
}

/// Joint Wald test that the named coefficients are all zero.
pub fn wald_test(fit: &MixedFit, names: &[&str]) -> Result<WaldTest> {
    if names.is_empty() {
        return Err(Error::Argument("Wald test needs at least one coefficient".into()));
    }
    let idx: Vec<usize> = names.iter().map(|n| fit.index_of(n)).collect::<Result<_>>()?;
    let k = idx.len();
    let b = DVector::from_iterator(k, idx.iter().map(|&i| fit.beta[i]));
    let v = DMatrix::from_fn(k, k, |a, c| fit.cov_beta[idx[a]][idx[c]]);
    let singular = || Error::SingularCovariance(names.iter().map(|s| s.to_string()).collect());
    let max_diag = v.diagonal().max();
    if !(max_diag > 0.0) {
        return Err(singular());
    }
    let chol = v.clone().cholesky().ok_or_else(singular)?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
    if min_pivot <= SINGULAR_TOL * max_diag {
        return Err(singular());
    }
    let statistic = b.dot(&chol.solve(&b));
    let p = ChiSquared::new(k as f64)
        .expect("positive degrees of freedom")
        .sf(statistic);
    Ok(WaldTest { statistic, df: k, p })
}

/// Wald interval `b ± z·SE`.
pub fn confint(fit: &MixedFit, name: &str, level: f64) -> Result<(f64, f64)> {
    Estimate {
        estimate: fit.coef(name)?,
        se: fit.se(name)?,
    }
    .ci(level)
}

/// `Σ w_j β_j` with its delta-method standard error.
pub fn lincomb(fit: &MixedFit, weights: &[(&str, f64)]) -> Result<Estimate> {
    let idx: Vec<(usize, f64)> = weights
        .iter()
        .map(|(n, w)| Ok((fit.index_of(n)?, *w)))
        .collect::<Result<_>>()?;
    let estimate = idx.iter().map(|&(i, w)| w * fit.beta[i]).sum();
    let mut var = 0.0;
    for &(i, wi) in &idx {
        for &(j, wj) in &idx {
            var += wi * wj * fit.cov_beta[i][j];
        }
    }
    Ok(Estimate {
        estimate,
        se: var.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    FixedOnly,
    WithBlup,
}

/// Rows to predict: named fixed columns plus a key per fitted grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRows {
    pub names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    /// `groups[k][i]` is row `i`'s key in the fit's `k`-th grouping.
    pub groups: Vec<Vec<String>>,
}

/// Predictions; unseen group keys contribute no offset.
pub fn predict(fit: &MixedFit, rows: &NewRows, mode: PredictMode) -> Result<Vec<f64>> {
    let cols: Vec<usize> = fit
        .names
        .iter()
        .map(|name| {
            rows.names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Data(format!("missing column {name} for prediction")))
        })
        .collect::<Result<_>>()?;
    if mode == PredictMode::WithBlup && rows.groups.len() < fit.blups.len() {
        return Err(Error::Argument(format!(
            "prediction with random effects needs {} group key columns",
            fit.blups.len()
        )));
    }
    let mut out = Vec::with_capacity(rows.x.len());
    for (i, row) in rows.x.iter().enumerate() {
        let mut y: f64 = cols.iter().zip(&fit.beta).map(|(&c, b)| row[c] * b).sum();
        if mode == PredictMode::WithBlup {
            for (k, g) in fit.blups.iter().enumerate() {
                y += g.get(&rows.groups[k][i]).unwrap_or(0.0);
            }
        }
        out.push(y);
    }
    Ok(out)
}

//! Checks for sorting around the cutoff and binned series for plotting.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::frame::{ForcedVisit, Variable};
use crate::rd::{estimate_effect, RdEstimate, RdSpec, INTERCEPT};

/// Histogram widths in hours: quarter-hour plus 1, 2 and 3 hour bins.
pub const DEFAULT_HISTOGRAM_WIDTHS: [f64; 4] = [0.25, 1.0, 2.0, 3.0];

/// Forcing values lie in `[-12, 12)` hours.
const HALF_DAY: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Count for histograms, mean for binned outcomes; `None` for an empty
    /// bin of means.
    pub value: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub width: f64,
    pub bins: Vec<Bin>,
    /// Whether some bin edge sits exactly at `S = 0`.
    pub edge_at_zero: bool,
    pub n_left: usize,
    pub n_right: usize,
}

impl BinnedSeries {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["bin_lo", "bin_hi", "value", "se"])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for b in &self.bins {
            w.write_record([b.lo.to_string(), b.hi.to_string(), opt(b.value), opt(b.se)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.n).collect()
    }
}

/// Edges `k·w` covering `[lo, hi]`; zero is always an edge.
fn edges(lo: f64, hi: f64, width: f64) -> Result<(i64, Vec<f64>)> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Argument(format!("bin width must be positive, got {width}")));
    }
    let k0 = (lo / width).floor() as i64;
    let k1 = (hi / width).ceil() as i64;
    Ok((k0, (k0..=k1).map(|k| k as f64 * width).collect()))
}

fn bin_index(s: f64, width: f64, k0: i64, n_bins: usize) -> usize {
    let k = (s / width).floor() as i64 - k0;
    k.clamp(0, n_bins as i64 - 1) as usize
}

/// Arrival counts per bin for each width, over the whole forcing range.
pub fn arrival_histogram(table: &[ForcedVisit], widths: &[f64]) -> Result<Vec<BinnedSeries>> {
    widths
        .iter()
        .map(|&w| {
            let (k0, e) = edges(-HALF_DAY, HALF_DAY, w)?;
            let n_bins = e.len() - 1;
            let mut counts = vec![0usize; n_bins];
            for r in table {
                counts[bin_index(r.s, w, k0, n_bins)] += 1;
            }
            let n_right = table.iter().filter(|r| r.is_right()).count();
            Ok(BinnedSeries {
                width: w,
                bins: counts
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| Bin {
                        lo: e[i],
                        hi: e[i + 1],
                        n,
                        value: Some(n as f64),
                        se: Some((n as f64).sqrt()),
                    })
                    .collect(),
                edge_at_zero: e.contains(&0.0),
                n_left: table.len() - n_right,
                n_right,
            })
        })
        .collect()
}

/// Near-cutoff count comparison corrected for a linear trend in density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityTest {
    pub delta: f64,
    /// Counts in `[-δ, 0)` and `[0, δ)`.
    pub n_left: usize,
    pub n_right: usize,
    /// Counts in `[-2δ, -δ)` and `[δ, 2δ)`.
    pub n_left_outer: usize,
    pub n_right_outer: usize,
    /// Excess of the inner difference over the trend implied by the outer bins.
    pub excess: f64,
    pub z: f64,
    pub p: f64,
    /// Fewer than 20 arrivals within `δ` of the cutoff.
    pub inconclusive: bool,
}

/// Under a linear density the inner difference `n_right - n_left` has
/// expectation one third of the outer difference, so
/// `D = (nR - nL) - (nR' - nL')/3` is centred at zero with Poisson
/// variance `nR + nL + (nR' + nL')/9`.
pub fn density_jump_test(table: &[ForcedVisit], delta: f64) -> Result<DensityTest> {
    if !(delta > 0.0 && 2.0 * delta <= HALF_DAY) {
        return Err(Error::Argument(format!("delta must lie in (0, 6] hours, got {delta}")));
    }
    let count = |lo: f64, hi: f64| table.iter().filter(|r| r.s >= lo && r.s < hi).count();
    let n_left = count(-delta, 0.0);
    let n_right = count(0.0, delta);
    let n_left_outer = count(-2.0 * delta, -delta);
    let n_right_outer = count(delta, 2.0 * delta);
    let excess = (n_right as f64 - n_left as f64) - (n_right_outer as f64 - n_left_outer as f64) / 3.0;
    let var = (n_right + n_left) as f64 + (n_right_outer + n_left_outer) as f64 / 9.0;
    let (z, p) = if var > 0.0 {
        let z = excess / var.sqrt();
        let p = 2.0 * Normal::standard().cdf(-z.abs());
        (z, p)
    } else {
        (0.0, 1.0)
    };
    Ok(DensityTest {
        delta,
        n_left,
        n_right,
        n_left_outer,
        n_right_outer,
        excess,
        z,
        p,
        inconclusive: n_left + n_right < 20,
    })
}

/// `min(1, p·k)`.
pub fn bonferroni(p: f64, k: usize) -> f64 {
    (p * k as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: Variable,
    pub estimate: RdEstimate,
    pub p: f64,
    pub p_bonferroni: f64,
}

/// Each covariate in turn replaces the outcome of the base model, which
/// keeps the remaining adjustment covariates.
pub fn covariate_balance(table: &[ForcedVisit], spec: &RdSpec, covariates: &[Variable]) -> Result<Vec<BalanceRow>> {
    if covariates.is_empty() {
        return Err(Error::Argument("no covariates to check".into()));
    }
    let k = covariates.len();
    covariates
        .par_iter()
        .map(|&c| {
            let base = RdSpec::for_outcome(c);
            let sp = RdSpec {
                outcome: c,
                transform: base.transform,
                covariates: spec.covariates.iter().copied().filter(|v| *v != c).collect(),
                ..spec.clone()
            };
            let estimate = estimate_effect(table, &sp)?;
            Ok(BalanceRow {
                covariate: c,
                p: estimate.p,
                p_bonferroni: bonferroni(estimate.p, k),
                estimate,
            })
        })
        .collect()
}

pub fn write_balance_csv<W: Write>(rows: &[BalanceRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["covariate", "estimate (95% CI)", "p", "p_bonferroni"])?;
    for r in rows {
        w.write_record([
            r.covariate.as_str().to_string(),
            crate::report::format_estimate(r.estimate.gamma, r.estimate.ci95),
            crate::report::format_p(r.p),
            crate::report::format_p(r.p_bonferroni),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Binned outcome means with the RD fit evaluated on a grid for overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMeans {
    pub series: BinnedSeries,
    /// `(s, fitted)` pairs at covariate means; left-side points use `A = 0`
    /// and right-side points `A = 1`, with both evaluated at `s = 0`.
    pub fitted: Vec<(f64, f64)>,
    pub estimate: RdEstimate,
}

/// Outcome means (on the modeling and reporting scale) within the
/// bandwidth in bins of `width` hours.
pub fn bin_means(table: &[ForcedVisit], spec: &RdSpec, width: f64) -> Result<BinnedMeans> {
    let estimate = estimate_effect(table, spec)?;
    let h = spec.bandwidth;
    let (k0, e) = edges(-h, h, width)?;
    let n_bins = e.len() - 1;
    let scale = spec.transform.report_scale();
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); n_bins];
    let mut n_right = 0;
    let mut n_left = 0;
    let mut cov_sums = vec![0.0; spec.covariates.len()];
    let rows = crate::rd::base_parts(table, spec, &[])?;
    for (&i, &y) in rows.used.iter().zip(&rows.y) {
        let r = &table[i];
        let y = y * scale;
        let b = &mut sums[bin_index(r.s, width, k0, n_bins)];
        b.0 += 1;
        b.1 += y;
        b.2 += y * y;
        if r.is_right() {
            n_right += 1;
        } else {
            n_left += 1;
        }
        for (acc, c) in cov_sums.iter_mut().zip(&spec.covariates) {
            *acc += r.visit.value(*c).expect("complete row");
        }
    }
    let bins = sums
        .iter()
        .enumerate()
        .map(|(i, &(n, s1, s2))| {
            let mean = (n > 0).then(|| s1 / n as f64);
            let se = (n > 1).then(|| {
                let m = s1 / n as f64;
                ((s2 - n as f64 * m * m).max(0.0) / (n - 1) as f64 / n as f64).sqrt()
            });
            Bin {
                lo: e[i],
                hi: e[i + 1],
                n,
                value: mean,
                se,
            }
        })
        .collect();

    let n_used = rows.used.len() as f64;
    let fit = &estimate.fit;
    let mut base = 0.0;
    if fit.has(INTERCEPT) {
        base += fit.coef(INTERCEPT)?;
    }
    for (c, total) in spec.covariates.iter().zip(&cov_sums) {
        if fit.has(c.as_str()) {
            base += fit.coef(c.as_str())? * total / n_used;
        }
    }
    let cols = spec.form.columns();
    let at = |s: f64, a: bool| -> f64 {
        let mut v = base;
        for (name, x) in cols.iter().zip(spec.form.values(s, a)) {
            if fit.has(name) {
                v += fit.coef(name).expect("present column") * x;
            }
        }
        v * scale
    };
    let steps = 20;
    let mut fitted = Vec::with_capacity(2 * steps + 2);
    for k in 0..=steps {
        let s = -h + h * k as f64 / steps as f64;
        fitted.push((s, at(s, false)));
    }
    for k in 0..=steps {
        let s = h * k as f64 / steps as f64;
        fitted.push((s, at(s, true)));
    }
    Ok(BinnedMeans {
        series: BinnedSeries {
            width,
            bins,
            edge_at_zero: e.contains(&0.0),
            n_left,
            n_right,
        },
        fitted,
        estimate,
    })
}

//! Maximization of the profiled criterion over `ln θ`.
//!
//! Each coordinate is handled by a grid scan, golden-section refinement of
//! the best bracket and a final root polish on the analytic gradient. The
//! boundary `θ = 0` competes explicitly and wins ties.

use super::engine::{Criterion, Engine};
use crate::error::Result;

pub(crate) const GOLDEN_TOL: f64 = 1e-8;
pub(crate) const MAX_ITER: usize = 200;

const GRID_LO: f64 = -13.815510557964274; // ln 1e-6
const GRID_HI: f64 = 13.815510557964274; // ln 1e6
const GRID_STEP: f64 = 1.151292546497023; // ln 10 / 2
const FLOOR: f64 = -27.631021115928547; // ln 1e-12
const CEIL: f64 = 27.631021115928547; // ln 1e12
const TIE_REL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct Optimum {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Coordinate<'a> {
    engine: &'a Engine,
    criterion: Criterion,
    theta: Vec<f64>,
    k: usize,
    evals: usize,
}

impl Coordinate<'_> {
    fn at(&mut self, t: f64) -> Result<(f64, f64)> {
        self.evals += 1;
        let mut th = self.theta.clone();
        th[self.k] = t;
        let e = self.engine.eval(&th, self.criterion)?;
        let crit = if e.criterion.is_nan() { f64::NEG_INFINITY } else { e.criterion };
        Ok((crit, e.grad[self.k]))
    }

    fn f(&mut self, phi: f64) -> Result<f64> {
        Ok(self.at(phi.exp())?.0)
    }

    fn g(&mut self, phi: f64) -> Result<f64> {
        Ok(self.at(phi.exp())?.1)
    }

    fn tie(f0: f64) -> f64 {
        TIE_REL * f0.abs().max(1.0)
    }

    /// Golden section on `[a, b]`; returns the final bracket and whether the
    /// width tolerance was met.
    fn golden(&mut self, mut a: f64, mut b: f64) -> Result<(f64, f64, bool)> {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let mut fc = self.f(c)?;
        let mut fd = self.f(d)?;
        for _ in 0..MAX_ITER {
            if (b - a).abs() < GOLDEN_TOL {
                return Ok((a, b, true));
            }
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = self.f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = self.f(d)?;
            }
        }
        Ok((a, b, (b - a).abs() < GOLDEN_TOL))
    }

    /// Illinois false position for `g = 0` given `g(lo) > 0 > g(hi)`.
    fn root(&mut self, mut lo: f64, mut hi: f64, mut glo: f64, mut ghi: f64) -> Result<f64> {
        let mut side = 0i8;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..MAX_ITER {
            x = (lo * ghi - hi * glo) / (ghi - glo);
            if !x.is_finite() || x <= lo || x >= hi {
                x = 0.5 * (lo + hi);
            }
            let gx = self.g(x)?;
            if gx == 0.0 || (hi - lo) < 1e-14 * (1.0 + x.abs()) {
                break;
            }
            if gx > 0.0 {
                lo = x;
                glo = gx;
                if side == 1 {
                    ghi *= 0.5;
                }
                side = 1;
            } else {
                hi = x;
                ghi = gx;
                if side == -1 {
                    glo *= 0.5;
                }
                side = -1;
            }
        }
        Ok(x)
    }

    /// Tries to sharpen `phi` by bracketing a gradient sign change nearby.
    fn polish(&mut self, phi: f64, width: f64) -> Result<f64> {
        let mut w = width.max(1e-7);
        for _ in 0..6 {
            let (lo, hi) = (phi - w, phi + w);
            let glo = self.g(lo)?;
            let ghi = self.g(hi)?;
            if glo > 0.0 && ghi < 0.0 {
                return self.root(lo, hi, glo, ghi);
            }
            w *= 8.0;
        }
        Ok(phi)
    }

    /// Global search for the best `θ_k ≥ 0`.
    fn global(&mut self) -> Result<(f64, bool)> {
        let (f0, _) = self.at(0.0)?;
        let n_grid = ((GRID_HI - GRID_LO) / GRID_STEP).round() as usize + 1;
        let mut grid: Vec<f64> = (0..n_grid).map(|j| GRID_LO + j as f64 * GRID_STEP).collect();
        let mut values = Vec::with_capacity(grid.len());
        for &phi in &grid {
            values.push(self.f(phi)?);
        }
        let mut best = argmax(&values);
        // extend upward while the criterion keeps improving at the edge
        while best == grid.len() - 1 && grid[best] < CEIL {
            let next = grid[best] + GRID_STEP;
            grid.push(next);
            values.push(self.f(next)?);
            best = argmax(&values);
        }
        if !(values[best] > f0 + Self::tie(f0)) {
            return Ok((0.0, true));
        }
        let lo = if best == 0 { FLOOR } else { grid[best - 1] };
        let hi = if best + 1 < grid.len() { grid[best + 1] } else { grid[best] + GRID_STEP };
        let (a, b, ok) = self.golden(lo, hi)?;
        let phi = self.polish(0.5 * (a + b), b - a)?;
        let f_phi = self.f(phi)?;
        if f_phi > f0 + Self::tie(f0) {
            Ok((phi.exp(), ok))
        } else {
            Ok((0.0, ok))
        }
    }

    /// Local search from a positive hint, falling back to the global scan.
    fn local(&mut self, hint: f64) -> Result<(f64, bool)> {
        // a boundary hint stays on the boundary while the criterion falls
        // away from it
        if hint == 0.0 && self.g(GRID_LO)? <= 0.0 {
            return Ok((0.0, true));
        }
        if hint > 0.0 && hint.is_finite() {
            let phi = hint.ln();
            // widen the bracket a few times before paying for the global scan
            let mut w = 0.05;
            for _ in 0..3 {
                let glo = self.g(phi - w)?;
                let ghi = self.g(phi + w)?;
                if glo > 0.0 && ghi < 0.0 {
                    let root = self.root(phi - w, phi + w, glo, ghi)?;
                    let (f0, _) = self.at(0.0)?;
                    if self.f(root)? > f0 + Self::tie(f0) {
                        return Ok((root.exp(), true));
                    }
                    break;
                }
                if glo <= 0.0 && ghi >= 0.0 {
                    break;
                }
                w *= 8.0;
            }
        }
        self.global()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Maximizes the profiled criterion. `hint` warm-starts each coordinate.
pub(crate) fn optimize(engine: &Engine, criterion: Criterion, hint: Option<&[f64]>) -> Result<Optimum> {
    let q = engine.n_theta();
    if q == 0 {
        return Ok(Optimum {
            theta: vec![],
            iterations: 0,
            converged: true,
        });
    }
    let mut theta = hint.map(|h| h.to_vec()).unwrap_or_else(|| vec![0.0; q]);
    let mut evals = 0;
    let mut converged = true;
    if q == 1 {
        let mut c = Coordinate {
            engine,
            criterion,
            theta: theta.clone(),
            k: 0,
            evals: 0,
        };
        let (t, ok) = match hint {
            Some(h) => c.local(h[0])?,
            None => c.global()?,
        };
        return Ok(Optimum {
            theta: vec![t],
            iterations: c.evals,
            converged: ok,
        });
    }
    let mut cycles = 0;
    loop {
        cycles += 1;
        let mut max_change: f64 = 0.0;
        for k in 0..q {
            let mut c = Coordinate {
                engine,
                criterion,
                theta: theta.clone(),
                k,
                evals: 0,
            };
            let warm = cycles > 1 || hint.is_some();
            let (t, ok) = if warm { c.local(theta[k])? } else { c.global()? };
            evals += c.evals;
            converged &= ok;
            let change = if t > 0.0 && theta[k] > 0.0 {
                (t.ln() - theta[k].ln()).abs()
            } else {
                (t - theta[k]).abs()
            };
            max_change = max_change.max(change);
            theta[k] = t;
        }
        if max_change < GOLDEN_TOL {
            break;
        }
        if cycles >= MAX_ITER {
            converged = false;
            break;
        }
    }
    Ok(Optimum {
        theta,
        iterations: evals,
        converged,
    })
}

//! Gaussian linear mixed models with up to two crossed random intercepts,
//! fitted by profiled REML or ML.

mod engine;
mod inference;
mod optim;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use engine::Criterion;
pub(crate) use engine::Engine;
pub use inference::{confint, lincomb, predict, wald_test, Estimate, NewRows, PredictMode, WaldTest};
pub(crate) use optim::optimize;

use crate::error::{Error, Result};

/// Scaled residual variance below which a column counts as a linear
/// combination of the columns already kept.
const COLLINEAR_TOL: f64 = 1e-10;

/// Group membership for one random intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub name: String,
    /// Distinct keys in sorted order.
    pub levels: Vec<String>,
    /// Level index of each row.
    pub index: Vec<usize>,
}

impl Grouping {
    pub fn new(name: impl Into<String>, keys: &[String]) -> Self {
        let mut map: BTreeMap<&str, usize> = BTreeMap::new();
        for k in keys {
            map.insert(k.as_str(), 0);
        }
        for (i, v) in map.values_mut().enumerate() {
            *v = i;
        }
        let index = keys.iter().map(|k| map[k.as_str()]).collect();
        Self {
            name: name.into(),
            levels: map.keys().map(|s| s.to_string()).collect(),
            index,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn select(&self, rows: &[usize]) -> Grouping {
        let keys: Vec<String> = rows.iter().map(|&r| self.levels[self.index[r]].clone()).collect();
        Grouping::new(self.name.clone(), &keys)
    }
}

/// Fixed-effect design, response and random-intercept groupings.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    groupings: Vec<Grouping>,
    protected: Vec<String>,
    allow_zero: Vec<String>,
}

impl DesignMatrix {
    /// `rows[i]` holds the fixed-column values of observation `i`.
    pub fn from_rows(
        names: Vec<String>,
        rows: &[Vec<f64>],
        y: Vec<f64>,
        groupings: Vec<Grouping>,
    ) -> Result<Self> {
        let p = names.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Argument(format!(
                "row {bad} has {} values for {p} columns",
                rows[bad].len()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(names, x, DVector::from_vec(y), groupings)
    }

    pub fn new(names: Vec<String>, x: DMatrix<f64>, y: DVector<f64>, groupings: Vec<Grouping>) -> Result<Self> {
        let n = x.nrows();
        if names.len() != x.ncols() {
            return Err(Error::Argument(format!(
                "{} column names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Argument(format!("duplicate column name {name}")));
            }
        }
        if y.len() != n {
            return Err(Error::Argument(format!("response has {} rows, design has {n}", y.len())));
        }
        if groupings.len() > 2 {
            return Err(Error::Argument(format!(
                "at most two groupings are supported, got {}",
                groupings.len()
            )));
        }
        for g in &groupings {
            if g.index.len() != n {
                return Err(Error::Argument(format!(
                    "grouping {} has {} rows, design has {n}",
                    g.name,
                    g.index.len()
                )));
            }
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("design and response must be finite".into()));
        }
        Ok(Self {
            names,
            x,
            y,
            groupings,
            protected: vec![],
            allow_zero: vec![],
        })
    }

    /// Columns whose removal by collinearity pruning is an error.
    pub fn with_protected(mut self, names: &[&str]) -> Self {
        self.protected = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Columns that may legitimately be all zero (empty interaction cells).
    pub fn with_allowed_zero(mut self, names: Vec<String>) -> Self {
        self.allow_zero = names;
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn groupings(&self) -> &[Grouping] {
        &self.groupings
    }

    /// Same design with the response replaced.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        let mut d = self.clone();
        if y.len() != d.n() {
            return Err(Error::Argument("response length mismatch".into()));
        }
        d.y = DVector::from_vec(y);
        Ok(d)
    }

    /// Same design restricted to `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            groupings: self.groupings.iter().map(|g| g.select(rows)).collect(),
            protected: self.protected.clone(),
            allow_zero: self.allow_zero.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVariance {
    pub grouping: String,
    pub tau2: f64,
    /// `τ² / σ²`.
    pub theta: f64,
    pub n_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarComponents {
    pub sigma2: f64,
    pub groups: Vec<GroupVariance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBlups {
    pub grouping: String,
    pub levels: Vec<String>,
    pub values: Vec<f64>,
    pub sizes: Vec<usize>,
}

impl GroupBlups {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.levels
            .binary_search_by(|l| l.as_str().cmp(key))
            .ok()
            .map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

/// A fitted mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major covariance of `beta`.
    pub cov_beta: Vec<Vec<f64>>,
    pub var_components: VarComponents,
    pub blups: Vec<GroupBlups>,
    /// Profiled criterion at the optimum.
    pub loglik: f64,
    pub criterion: Criterion,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    pub p: usize,
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

impl MixedFit {
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Result<f64> {
        Ok(self.beta[self.index_of(name)?])
    }

    pub fn se(&self, name: &str) -> Result<f64> {
        let i = self.index_of(name)?;
        Ok(self.cov_beta[i][i].max(0.0).sqrt())
    }

    pub fn cov(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.cov_beta[self.index_of(a)?][self.index_of(b)?])
    }

    pub fn tau2(&self, grouping: &str) -> Option<f64> {
        self.var_components
            .groups
            .iter()
            .find(|g| g.grouping == grouping)
            .map(|g| g.tau2)
    }

    pub fn coefficients(&self) -> Vec<CoefficientRow> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, name)| CoefficientRow {
                name: name.clone(),
                estimate: self.beta[i],
                se: self.cov_beta[i][i].max(0.0).sqrt(),
            })
            .collect()
    }
}

/// Indices of columns kept and dropped by left-to-right rank screening.
fn screen_columns(x: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let p = x.ncols();
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    let xtx = x.tr_mul(x);
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    // rows of the Cholesky factor of the scaled Gram matrix of kept columns
    let mut l: Vec<Vec<f64>> = Vec::new();
    for j in 0..p {
        if norms[j] == 0.0 {
            dropped.push(j);
            continue;
        }
        let mut row = Vec::with_capacity(kept.len() + 1);
        for (a, &ka) in kept.iter().enumerate() {
            let g = xtx[(ka, j)] / (norms[ka] * norms[j]);
            let s: f64 = (0..a).map(|b| l[a][b] * row[b]).sum();
            row.push((g - s) / l[a][a]);
        }
        let resid = 1.0 - row.iter().map(|v| v * v).sum::<f64>();
        if resid > COLLINEAR_TOL {
            row.push(resid.sqrt());
            l.push(row);
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    (kept, dropped)
}

/// A design reduced to estimable columns, with its sufficient statistics.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub groupings: Vec<Grouping>,
    pub engine: Engine,
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn new(design: &DesignMatrix) -> Result<Self> {
        for (j, name) in design.names.iter().enumerate() {
            if design.x.column(j).iter().all(|&v| v == 0.0) && !design.allow_zero.contains(name) {
                return Err(Error::Data(format!("column {name} is identically zero")));
            }
        }
        let (kept, dropped_idx) = screen_columns(&design.x);
        let dropped: Vec<String> = dropped_idx.iter().map(|&j| design.names[j].clone()).collect();
        let hit: Vec<String> = dropped
            .iter()
            .filter(|d| design.protected.contains(d))
            .cloned()
            .collect();
        if !hit.is_empty() {
            return Err(Error::Estimability {
                dropped: hit,
                reason: "protected column is collinear with the rest of the design".into(),
            });
        }
        let n = design.n();
        if n <= kept.len() {
            return Err(Error::Estimability {
                dropped,
                reason: format!("{n} observations for {} fixed effects", kept.len()),
            });
        }
        let mut warnings = Vec::new();
        if !dropped.is_empty() {
            warnings.push(format!("dropped collinear columns: {}", dropped.join(", ")));
        }
        let x = design.x.select_columns(&kept);
        let names: Vec<String> = kept.iter().map(|&j| design.names[j].clone()).collect();
        let groups: Vec<&[usize]> = design.groupings.iter().map(|g| g.index.as_slice()).collect();
        let n_levels: Vec<usize> = design.groupings.iter().map(|g| g.n_levels()).collect();
        let engine = Engine::new(&x, &design.y, &groups, &n_levels);
        Ok(Self {
            names,
            x,
            y: design.y.clone(),
            groupings: design.groupings.clone(),
            engine,
            dropped,
            warnings,
        })
    }

    /// Whether OLS already reproduces the response exactly.
    fn perfect_ols(&self, criterion: Criterion) -> Result<Option<DVector<f64>>> {
        let ols = self.engine.eval(&vec![0.0; self.engine.n_theta()], criterion)?;
        let r = &self.y - &self.x * &ols.beta;
        let scale = self.y.norm_squared().max(f64::MIN_POSITIVE);
        Ok((r.norm_squared() <= 1e-24 * scale).then_some(ols.beta))
    }

    pub fn fit(&self, criterion: Criterion) -> Result<MixedFit> {
        self.fit_from(criterion, None)
    }

    pub fn fit_from(&self, criterion: Criterion, hint: Option<&[f64]>) -> Result<MixedFit> {
        let q = self.engine.n_theta();
        let mut warnings = self.warnings.clone();
        let (theta, iterations, converged) = if self.perfect_ols(criterion)?.is_some() {
            warnings.push("response is fitted exactly by the fixed effects".into());
            (vec![0.0; q], 0, true)
        } else {
            let opt = optimize(&self.engine, criterion, hint)?;
            (opt.theta, opt.iterations, opt.converged)
        };
        if !converged {
            warnings.push("variance-ratio optimizer reached its iteration cap".into());
        }
        let eval = self.engine.eval(&theta, criterion)?;
        let beta = eval.beta.clone();
        let resid = &self.y - &self.x * &beta;
        let rtr = resid.norm_squared();
        let ztr = self.level_sums(&resid);
        let (v, rhr) = self.engine.random_solve(&theta, &ztr, rtr);
        let n = self.engine.n as f64;
        let p = self.engine.p as f64;
        let dof = match criterion {
            Criterion::Reml => n - p,
            Criterion::Ml => n,
        };
        let sigma2 = rhr / dof;
        let c_inv = eval.chol_c.inverse();
        let cov = &c_inv * sigma2;
        let cov = (&cov + cov.transpose()) * 0.5;
        let w = self.engine.sqrt_weights(&theta);
        let u = w.component_mul(&v);

        let mut groups = Vec::new();
        let mut blups = Vec::new();
        let mut offset = 0;
        for (k, g) in self.groupings.iter().enumerate() {
            let q_k = g.n_levels();
            groups.push(GroupVariance {
                grouping: g.name.clone(),
                tau2: theta[k] * sigma2,
                theta: theta[k],
                n_levels: q_k,
            });
            let mut sizes = vec![0usize; q_k];
            for &i in &g.index {
                sizes[i] += 1;
            }
            blups.push(GroupBlups {
                grouping: g.name.clone(),
                levels: g.levels.clone(),
                values: u.rows(offset, q_k).iter().copied().collect(),
                sizes,
            });
            offset += q_k;
        }
        let pn = self.names.len();
        Ok(MixedFit {
            names: self.names.clone(),
            beta: beta.iter().copied().collect(),
            cov_beta: (0..pn).map(|i| (0..pn).map(|j| cov[(i, j)]).collect()).collect(),
            var_components: VarComponents { sigma2, groups },
            blups,
            loglik: eval.criterion,
            criterion,
            converged,
            iterations,
            n: self.engine.n,
            p: self.engine.p,
            dropped: self.dropped.clone(),
            warnings,
        })
    }

    /// Stacked per-level sums `Zᵀ v`.
    fn level_sums(&self, v: &DVector<f64>) -> DVector<f64> {
        let q: usize = self.groupings.iter().map(|g| g.n_levels()).sum();
        let mut out = DVector::zeros(q);
        let mut offset = 0;
        for g in &self.groupings {
            for (i, &lvl) in g.index.iter().enumerate() {
                out[offset + lvl] += v[i];
            }
            offset += g.n_levels();
        }
        out
    }
}

/// Fits the mixed model by maximizing the profiled criterion.
pub fn fit_lmm(design: &DesignMatrix, criterion: Criterion) -> Result<MixedFit> {
    Prepared::new(design)?.fit(criterion)
}

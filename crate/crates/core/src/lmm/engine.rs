//! Profiled criterion evaluation from sufficient statistics.
//!
//! With `H = I + Z Λ Zᵀ`, `Λ = diag(θ_k I)` and `W = Λ^{1/2}`, every
//! quantity the profiled criterion needs is expressed through
//! `M = W ZᵀZ W + I` (Woodbury):
//!
//! * `XᵀH⁻¹X = XᵀX − (WZᵀX)ᵀ M⁻¹ (WZᵀX)` and likewise for `y`,
//! * `log|H| = log|M|`.
//!
//! For a single grouping `M` is diagonal. For two crossed groupings the
//! first block is diagonal and is eliminated, leaving a dense Schur
//! complement the size of the second grouping.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Reml,
    Ml,
}

#[derive(Debug, Clone)]
enum RandomPart {
    None,
    OneWay {
        sizes: Vec<f64>,
    },
    Crossed {
        sizes1: Vec<f64>,
        sizes2: Vec<f64>,
        /// Cell counts, levels of grouping 1 by levels of grouping 2.
        cross: DMatrix<f64>,
    },
}

/// Sufficient statistics of a fixed design, response and grouping layout.
#[derive(Debug, Clone)]
pub(crate) struct Engine {
    pub n: usize,
    pub p: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// `ZᵀX`, all groupings stacked.
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    random: RandomPart,
}

/// Everything computed at one value of θ.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub beta: DVector<f64>,
    pub chol_c: Cholesky<f64, Dyn>,
    pub rhr: f64,
    pub criterion: f64,
    /// Gradient with respect to `ln θ_k`.
    pub grad: Vec<f64>,
    /// `M⁻¹ W Zᵀ r`, so that the random-effect predictions are `W v`.
    pub v: DVector<f64>,
}

/// `M` factorized at one θ.
struct MSolver<'a> {
    engine: &'a Engine,
    /// Square roots of θ per random column.
    w: DVector<f64>,
    /// Diagonal of the first (or only) block of `M`.
    diag1: DVector<f64>,
    schur: Option<SchurPart>,
    logdet: f64,
}

struct SchurPart {
    /// Off-diagonal block `B = w1 w2 N`.
    b: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Engine {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, groups: &[&[usize]], n_levels: &[usize]) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let xtx = x.tr_mul(x);
        let xty = x.tr_mul(y);
        let yty = y.dot(y);
        let q: usize = n_levels.iter().sum();
        let mut ztx = DMatrix::zeros(q, p);
        let mut zty = DVector::zeros(q);
        let mut offset = 0;
        for (g, &nl) in groups.iter().zip(n_levels) {
            for i in 0..n {
                let row = offset + g[i];
                for j in 0..p {
                    ztx[(row, j)] += x[(i, j)];
                }
                zty[row] += y[i];
            }
            offset += nl;
        }
        let count = |g: &[usize], nl: usize| {
            let mut c = vec![0.0; nl];
            for &k in g {
                c[k] += 1.0;
            }
            c
        };
        let random = match groups.len() {
            0 => RandomPart::None,
            1 => RandomPart::OneWay {
                sizes: count(groups[0], n_levels[0]),
            },
            2 => {
                let mut cross = DMatrix::zeros(n_levels[0], n_levels[1]);
                for i in 0..n {
                    cross[(groups[0][i], groups[1][i])] += 1.0;
                }
                RandomPart::Crossed {
                    sizes1: count(groups[0], n_levels[0]),
                    sizes2: count(groups[1], n_levels[1]),
                    cross,
                }
            }
            k => unreachable!("at most two groupings, got {k}"),
        };
        Self {
            n,
            p,
            xtx,
            xty,
            yty,
            ztx,
            zty,
            random,
        }
    }

    pub fn n_theta(&self) -> usize {
        match self.random {
            RandomPart::None => 0,
            RandomPart::OneWay { .. } => 1,
            RandomPart::Crossed { .. } => 2,
        }
    }

    fn block_sizes(&self) -> Vec<usize> {
        match &self.random {
            RandomPart::None => vec![],
            RandomPart::OneWay { sizes } => vec![sizes.len()],
            RandomPart::Crossed { sizes1, sizes2, .. } => vec![sizes1.len(), sizes2.len()],
        }
    }

    /// Statistics with observation `x_i, y_i` (in levels `levels[k]`) removed.
    pub fn without_row(&self, x_i: &[f64], y_i: f64, levels: &[usize]) -> Engine {
        let mut e = self.clone();
        let p = self.p;
        e.n -= 1;
        for a in 0..p {
            for b in 0..p {
                e.xtx[(a, b)] -= x_i[a] * x_i[b];
            }
            e.xty[a] -= x_i[a] * y_i;
        }
        e.yty -= y_i * y_i;
        let mut offset = 0;
        for (k, nl) in self.block_sizes().into_iter().enumerate() {
            let row = offset + levels[k];
            for a in 0..p {
                e.ztx[(row, a)] -= x_i[a];
            }
            e.zty[row] -= y_i;
            offset += nl;
        }
        match &mut e.random {
            RandomPart::None => {}
            RandomPart::OneWay { sizes } => sizes[levels[0]] -= 1.0,
            RandomPart::Crossed {
                sizes1,
                sizes2,
                cross,
            } => {
                sizes1[levels[0]] -= 1.0;
                sizes2[levels[1]] -= 1.0;
                cross[(levels[0], levels[1])] -= 1.0;
            }
        }
        e
    }

    fn factor(&self, theta: &[f64]) -> MSolver<'_> {
        match &self.random {
            RandomPart::None => MSolver {
                engine: self,
                w: DVector::zeros(0),
                diag1: DVector::zeros(0),
                schur: None,
                logdet: 0.0,
            },
            RandomPart::OneWay { sizes } => {
                let t = theta[0];
                let diag1 = DVector::from_iterator(sizes.len(), sizes.iter().map(|m| 1.0 + t * m));
                let logdet = diag1.iter().map(|d| d.ln()).sum();
                MSolver {
                    engine: self,
                    w: DVector::from_element(sizes.len(), t.sqrt()),
                    diag1,
                    schur: None,
                    logdet,
                }
            }
            RandomPart::Crossed {
                sizes1,
                sizes2,
                cross,
            } => {
                let (t1, t2) = (theta[0], theta[1]);
                let (q1, q2) = (sizes1.len(), sizes2.len());
                let diag1 = DVector::from_iterator(q1, sizes1.iter().map(|m| 1.0 + t1 * m));
                let b = cross * (t1 * t2).sqrt();
                let mut s = DMatrix::zeros(q2, q2);
                for j in 0..q2 {
                    s[(j, j)] = 1.0 + t2 * sizes2[j];
                }
                // S -= Bᵀ A⁻¹ B
                let mut scaled = b.clone();
                for i in 0..q1 {
                    let inv = 1.0 / diag1[i].sqrt();
                    for j in 0..q2 {
                        scaled[(i, j)] *= inv;
                    }
                }
                s -= scaled.tr_mul(&scaled);
                let chol = Cholesky::new(s).expect("Schur complement of I + WZᵀZW is positive definite");
                let logdet = diag1.iter().map(|d| d.ln()).sum::<f64>()
                    + 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let mut w = DVector::zeros(q1 + q2);
                w.rows_mut(0, q1).fill(t1.sqrt());
                w.rows_mut(q1, q2).fill(t2.sqrt());
                MSolver {
                    engine: self,
                    w,
                    diag1,
                    schur: Some(SchurPart { b, chol }),
                    logdet,
                }
            }
        }
    }
}

impl MSolver<'_> {
    fn q1(&self) -> usize {
        self.diag1.len()
    }

    /// `M⁻¹ R` for a block of right-hand sides.
    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let q1 = self.q1();
        match &self.schur {
            None => {
                let mut out = rhs.clone();
                for i in 0..q1 {
                    let d = self.diag1[i];
                    for j in 0..out.ncols() {
                        out[(i, j)] /= d;
                    }
                }
                out
            }
            Some(sp) => {
                let q2 = sp.b.ncols();
                let k = rhs.ncols();
                let r1 = rhs.rows(0, q1);
                let r2 = rhs.rows(q1, q2);
                let mut a_inv_r1 = r1.clone_owned();
                for i in 0..q1 {
                    let d = self.diag1[i];
                    for j in 0..k {
                        a_inv_r1[(i, j)] /= d;
                    }
                }
                let rhs2 = r2 - sp.b.tr_mul(&a_inv_r1);
                let x2 = sp.chol.solve(&rhs2);
                let mut x1 = r1 - &sp.b * &x2;
                for i in 0..q1 {
                    let d = self.diag1[i];
                    for j in 0..k {
                        x1[(i, j)] /= d;
                    }
                }
                let mut out = DMatrix::zeros(q1 + q2, k);
                out.rows_mut(0, q1).copy_from(&x1);
                out.rows_mut(q1, q2).copy_from(&x2);
                out
            }
        }
    }

    fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }

    /// Traces of the diagonal blocks of `M⁻¹`.
    fn block_traces_inv(&self) -> Vec<f64> {
        let tr1: f64 = self.diag1.iter().map(|d| 1.0 / d).sum();
        match &self.schur {
            None => vec![tr1],
            Some(sp) => {
                let q1 = self.q1();
                let mut e = sp.b.clone();
                for i in 0..q1 {
                    let d = self.diag1[i];
                    for j in 0..e.ncols() {
                        e[(i, j)] /= d;
                    }
                }
                let ete = e.tr_mul(&e);
                let s_inv = sp.chol.inverse();
                let extra = s_inv.component_mul(&ete).sum();
                vec![tr1 + extra, s_inv.trace()]
            }
        }
    }

    /// `diag(W) · Zᵀ(·)` applied to stacked `Zᵀ` statistics.
    fn scale_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for i in 0..out.nrows() {
            let w = self.w[i];
            for j in 0..out.ncols() {
                out[(i, j)] *= w;
            }
        }
        out
    }

    fn scale_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_mul(&self.w)
    }

    pub fn engine(&self) -> &Engine {
        self.engine
    }
}

impl Engine {
    /// Evaluates the profiled criterion and its gradient at `theta`.
    pub fn eval(&self, theta: &[f64], criterion: Criterion) -> Result<Eval> {
        debug_assert_eq!(theta.len(), self.n_theta());
        let solver = self.factor(theta);
        let e = solver.engine();
        let p = self.p;

        let (c, b, yhy, u, vy) = if self.n_theta() == 0 {
            (
                e.xtx.clone(),
                e.xty.clone(),
                e.yty,
                DMatrix::zeros(0, p),
                DVector::zeros(0),
            )
        } else {
            let cx = solver.scale_rows(&e.ztx);
            let cy = solver.scale_vec(&e.zty);
            let u = solver.solve(&cx);
            let vy = solver.solve_vec(&cy);
            let c = &e.xtx - cx.tr_mul(&u);
            let b = &e.xty - cx.tr_mul(&vy);
            let yhy = e.yty - cy.dot(&vy);
            (c, b, yhy, u, vy)
        };
        let c = (&c + c.transpose()) * 0.5;
        let chol_c = Cholesky::new(c).ok_or_else(|| Error::Estimability {
            dropped: vec![],
            reason: "XᵀH⁻¹X is not positive definite".into(),
        })?;
        let beta = chol_c.solve(&b);
        let rhr = (yhy - beta.dot(&b)).max(0.0);
        let logdet_c = 2.0 * chol_c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let n = self.n as f64;
        let pf = p as f64;
        let dof = match criterion {
            Criterion::Reml => n - pf,
            Criterion::Ml => n,
        };
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut crit = -0.5 * (dof * (1.0 + (two_pi * rhr / dof).ln()) + solver.logdet);
        if criterion == Criterion::Reml {
            crit -= 0.5 * logdet_c;
        }

        let v = if self.n_theta() == 0 {
            DVector::zeros(0)
        } else {
            &vy - &u * &beta
        };

        let mut grad = Vec::with_capacity(self.n_theta());
        if self.n_theta() > 0 {
            let traces = solver.block_traces_inv();
            let mut offset = 0;
            for (k, q_k) in self.block_sizes().into_iter().enumerate() {
                let tr_i_minus_minv = q_k as f64 - traces[k];
                let v_k = v.rows(offset, q_k);
                let mut g = tr_i_minus_minv - dof * v_k.norm_squared() / rhr;
                if criterion == Criterion::Reml {
                    let u_k_t = u.rows(offset, q_k).transpose();
                    let y = chol_c
                        .l_dirty()
                        .solve_lower_triangular(&u_k_t)
                        .expect("Cholesky factor is invertible");
                    g -= y.norm_squared();
                }
                grad.push(-0.5 * g);
                offset += q_k;
            }
        }

        Ok(Eval {
            beta,
            chol_c,
            rhr,
            criterion: crit,
            grad,
            v,
        })
    }

    /// `M⁻¹ W Zᵀ r` for an explicit residual vector's `Zᵀ r`, plus the
    /// matching `rᵀH⁻¹r` given `rᵀr`.
    pub fn random_solve(&self, theta: &[f64], ztr: &DVector<f64>, rtr: f64) -> (DVector<f64>, f64) {
        if self.n_theta() == 0 {
            return (DVector::zeros(0), rtr);
        }
        let solver = self.factor(theta);
        let c = solver.scale_vec(ztr);
        let v = solver.solve_vec(&c);
        (v.clone(), (rtr - c.dot(&v)).max(0.0))
    }

    /// `W` as a vector over all random columns.
    pub fn sqrt_weights(&self, theta: &[f64]) -> DVector<f64> {
        let sizes = self.block_sizes();
        let q: usize = sizes.iter().sum();
        let mut w = DVector::zeros(q);
        let mut offset = 0;
        for (k, q_k) in sizes.into_iter().enumerate() {
            w.rows_mut(offset, q_k).fill(theta[k].sqrt());
            offset += q_k;
        }
        w
    }

    pub fn is_perfect_fit(&self, eval: &Eval) -> bool {
        eval.rhr <= 1e-20 * self.yty.max(f64::MIN_POSITIVE) || eval.rhr == 0.0
    }
}

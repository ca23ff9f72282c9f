//! Leave-one-out cross-validation over bandwidths and polynomial forms.
//!
//! Every visit within the holdout radius of the cutoff is left out in turn;
//! the model is refitted from downdated sufficient statistics, warm-started
//! at the full-sample variance ratios, and the held-out outcome predicted.
//! Errors are on the fitting scale.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ForcedVisit;
use crate::lmm::{optimize, PredictMode, Prepared};
use crate::rd::{base_parts, PolyForm, RdSpec};
use crate::report::format_mse_cell;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub bandwidths: Vec<f64>,
    pub forms: Vec<PolyForm>,
    pub holdout_radius: f64,
    /// Whether held-out predictions include the day's predicted intercept.
    pub mode: PredictMode,
}

impl Default for CvGrid {
    fn default() -> Self {
        Self {
            bandwidths: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            forms: PolyForm::ALL.to_vec(),
            holdout_radius: 0.5,
            mode: PredictMode::WithBlup,
        }
    }
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.is_empty() || self.forms.is_empty() {
            return Err(Error::Argument("cross-validation grid is empty".into()));
        }
        if self.bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Argument("bandwidths must be positive".into()));
        }
        let min_h = self.bandwidths.iter().copied().fold(f64::INFINITY, f64::min);
        if !(self.holdout_radius > 0.0 && self.holdout_radius <= min_h) {
            return Err(Error::Argument(format!(
                "holdout radius {} must be positive and at most the smallest bandwidth {min_h}",
                self.holdout_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub form: PolyForm,
    pub bandwidth: f64,
    pub mse: Option<f64>,
    /// Standard deviation of the squared errors over `sqrt(n_holdout)`.
    pub se: Option<f64>,
    pub n_holdout: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: CvGrid,
    /// `cells[form][bandwidth]` in grid order.
    pub cells: Vec<Vec<CvCell>>,
}

impl CvResult {
    pub fn cell(&self, form: PolyForm, bandwidth: f64) -> Option<&CvCell> {
        let i = self.grid.forms.iter().position(|f| *f == form)?;
        let j = self.grid.bandwidths.iter().position(|h| *h == bandwidth)?;
        Some(&self.cells[i][j])
    }

    /// Cell with the smallest MSE among those that fitted.
    pub fn best(&self) -> Option<&CvCell> {
        self.cells
            .iter()
            .flatten()
            .filter(|c| c.mse.is_some())
            .min_by(|a, b| a.mse.unwrap().total_cmp(&b.mse.unwrap()))
    }

    /// Whether `form` at `bandwidth` is within one SE of the grid minimum.
    pub fn within_one_se(&self, form: PolyForm, bandwidth: f64) -> bool {
        match (self.cell(form, bandwidth), self.best()) {
            (Some(CvCell { mse: Some(m), se: Some(s), .. }), Some(best)) => *m <= best.mse.unwrap() + s,
            _ => false,
        }
    }

    /// Rows are forms, columns bandwidths, cells `mse (se)`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["Polynomial form".to_string()];
        header.extend(self.grid.bandwidths.iter().map(|h| h.to_string()));
        w.write_record(&header)?;
        for (form, row) in self.grid.forms.iter().zip(&self.cells) {
            let mut rec = vec![form.label().to_string()];
            rec.extend(row.iter().map(|c| match (c.mse, c.se) {
                (Some(m), Some(s)) => format_mse_cell(m, s),
                _ => "NA".to_string(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell(table: &[ForcedVisit], spec: &RdSpec, grid: &CvGrid) -> Result<(f64, f64, usize)> {
    let parts = base_parts(table, spec, &[])?;
    let design = parts.design(spec.groupings, &[], vec![])?;
    let prep = Prepared::new(&design)?;
    let full = prep.fit(spec.criterion)?;
    let hint: Vec<f64> = full.var_components.groups.iter().map(|g| g.theta).collect();
    let holdout: Vec<usize> = parts
        .used
        .iter()
        .enumerate()
        .filter(|(_, &i)| table[i].s.abs() <= grid.holdout_radius)
        .map(|(k, _)| k)
        .collect();
    if holdout.is_empty() {
        return Err(Error::Data(format!(
            "no visits within {} hours of the cutoff to hold out",
            grid.holdout_radius
        )));
    }
    let errors: Vec<f64> = holdout
        .par_iter()
        .map(|&k| {
            let x_k: Vec<f64> = prep.x.row(k).iter().copied().collect();
            let y_k = prep.y[k];
            let levels: Vec<usize> = prep.groupings.iter().map(|g| g.index[k]).collect();
            let engine = prep.engine.without_row(&x_k, y_k, &levels);
            let zero = vec![0.0; engine.n_theta()];
            let theta = if engine.is_perfect_fit(&engine.eval(&zero, spec.criterion)?) {
                zero
            } else {
                optimize(&engine, spec.criterion, Some(&hint))?.theta
            };
            let eval = engine.eval(&theta, spec.criterion)?;
            let mut pred: f64 = x_k.iter().zip(eval.beta.iter()).map(|(a, b)| a * b).sum();
            if grid.mode == PredictMode::WithBlup {
                let w = engine.sqrt_weights(&theta);
                let mut offset = 0;
                for (g, &level) in prep.groupings.iter().zip(&levels) {
                    pred += w[offset + level] * eval.v[offset + level];
                    offset += g.n_levels();
                }
            }
            Ok((y_k - pred).powi(2))
        })
        .collect::<Result<_>>()?;
    // ordered summation keeps results independent of the thread count
    let n = errors.len() as f64;
    let mse = errors.iter().sum::<f64>() / n;
    let se = if errors.len() > 1 {
        (errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok((mse, se, errors.len()))
}

/// Scores every grid cell; a cell whose folds fail is reported missing.
pub fn loocv(table: &[ForcedVisit], grid: &CvGrid, spec: &RdSpec) -> Result<CvResult> {
    grid.validate()?;
    spec.validate()?;
    let in_radius = table.iter().any(|r| r.s.abs() <= grid.holdout_radius);
    if !in_radius {
        return Err(Error::Data(format!(
            "no visits within {} hours of the cutoff to hold out",
            grid.holdout_radius
        )));
    }
    let cells = grid
        .forms
        .iter()
        .map(|&form| {
            grid.bandwidths
                .iter()
                .map(|&bandwidth| {
                    let sp = RdSpec {
                        form,
                        bandwidth,
                        ..spec.clone()
                    };
                    match cell(table, &sp, grid) {
                        Ok((mse, se, n)) => CvCell {
                            form,
                            bandwidth,
                            mse: Some(mse),
                            se: Some(se),
                            n_holdout: n,
                            error: None,
                        },
                        Err(e) => CvCell {
                            form,
                            bandwidth,
                            mse: None,
                            se: None,
                            n_holdout: 0,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect()
        })
        .collect();
    Ok(CvResult {
        grid: grid.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{compute_forcing, Anchor, Variable};
    use crate::lmm::{fit_lmm, predict, NewRows};
    use crate::sim::{preset, simulate};

    fn table(days: usize, seed: u64) -> Vec<ForcedVisit> {
        let mut s = preset("paper_like").unwrap();
        s.n_days = days;
        s.seed = seed;
        let out = simulate(&s).unwrap();
        compute_forcing(&out.visits, &s.schedule, Anchor::WindowStart).unwrap()
    }

    fn small_grid() -> CvGrid {
        CvGrid {
            bandwidths: vec![0.5, 1.0],
            ..CvGrid::default()
        }
    }

    #[test]
    fn grid_validation() {
        assert!(CvGrid::default().validate().is_ok());
        let g = CvGrid {
            holdout_radius: 0.75,
            ..CvGrid::default()
        };
        assert!(g.validate().is_err());
        let g = CvGrid {
            forms: vec![],
            ..CvGrid::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn noiseless_linear_truth_interpolates() {
        let mut t = table(8, 1);
        for r in &mut t {
            let a = if r.a { 1.0 } else { 0.0 };
            r.visit.time_to_roomed = Some(20.0 + 3.0 * r.s - 5.0 * a + 0.1 * r.visit.age);
        }
        let spec = RdSpec::for_outcome(Variable::TimeToRoomed);
        let res = loocv(&t, &small_grid(), &spec).unwrap();
        for c in res.cells.iter().flatten() {
            assert!(c.mse.unwrap() < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn fold_matches_an_explicit_refit() {
        let t = table(6, 2);
        let spec = RdSpec {
            bandwidth: 0.5,
            ..RdSpec::for_outcome(Variable::TimeToDispo)
        };
        let grid = CvGrid {
            bandwidths: vec![0.5],
            forms: vec![PolyForm::LinearShared],
            ..CvGrid::default()
        };
        let res = loocv(&t, &grid, &spec).unwrap();
        let parts = base_parts(&t, &spec, &[]).unwrap();
        let design = parts.design(spec.groupings, &[], vec![]).unwrap();
        let mut sq = Vec::new();
        for k in 0..parts.used.len() {
            let keep: Vec<usize> = (0..parts.used.len()).filter(|&j| j != k).collect();
            let fit = fit_lmm(&design.select_rows(&keep), spec.criterion).unwrap();
            let rows = NewRows {
                names: parts.names.clone(),
                x: vec![parts.rows[k].clone()],
                groups: vec![vec![parts.days[k].clone()]],
            };
            let pred = predict(&fit, &rows, PredictMode::WithBlup).unwrap()[0];
            sq.push((parts.y[k] - pred).powi(2));
        }
        let mse = sq.iter().sum::<f64>() / sq.len() as f64;
        let got = res.cells[0][0].mse.unwrap();
        assert!((got - mse).abs() < 1e-6 * mse, "{got} vs {mse}");
    }

    #[test]
    fn deterministic_and_csv_layout() {
        let t = table(10, 3);
        let spec = RdSpec::for_outcome(Variable::TimeToRoomed);
        let grid = CvGrid::default();
        let a = loocv(&t, &grid, &spec).unwrap();
        let b = loocv(&t, &grid, &spec).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "Polynomial form,0.5,1,1.5,2,2.5,3");
        assert!(lines[1].starts_with("Linear - same slopes,"));
        assert!(lines[2].starts_with("Linear - different slopes,"));
        assert!(lines[3].starts_with("Quadratic,"));
        let cell = regex_like_cell(lines[1].split(',').nth(1).unwrap());
        assert!(cell, "{}", lines[1]);
        assert!(a.within_one_se(a.best().unwrap().form, a.best().unwrap().bandwidth));
    }

    /// `"12.34 (0.567)"` with the quotes csv adds around spaces absent.
    fn regex_like_cell(s: &str) -> bool {
        let Some((m, rest)) = s.split_once(" (") else {
            return false;
        };
        let Some(se) = rest.strip_suffix(')') else {
            return false;
        };
        m.split_once('.').is_some_and(|(_, d)| d.len() == 2) && se.split_once('.').is_some_and(|(_, d)| d.len() == 3)
    }

    #[test]
    fn fixed_only_mode_differs_from_blup_mode() {
        let t = table(10, 4);
        let spec = RdSpec::for_outcome(Variable::TimeToDispo);
        let grid = CvGrid {
            bandwidths: vec![1.0],
            forms: vec![PolyForm::LinearShared],
            ..CvGrid::default()
        };
        let blup = loocv(&t, &grid, &spec).unwrap();
        let fixed = loocv(
            &t,
            &CvGrid {
                mode: PredictMode::FixedOnly,
                ..grid
            },
            &spec,
        )
        .unwrap();
        assert_ne!(blup.cells[0][0].mse, fixed.cells[0][0].mse);
        assert_eq!(blup.cells[0][0].n_holdout, fixed.cells[0][0].n_holdout);
    }

    #[test]
    fn failed_cells_are_marked_missing() {
        let t: Vec<ForcedVisit> = table(4, 5).into_iter().filter(|r| r.s.abs() <= 0.6).collect();
        let spec = RdSpec::for_outcome(Variable::TimeToRoomed);
        let grid = CvGrid {
            bandwidths: vec![0.5, 1.0],
            forms: vec![PolyForm::LinearShared],
            ..CvGrid::default()
        };
        let mut t2 = t.clone();
        // remove the outcome from every row left of the cutoff within 0.5h
        for r in t2.iter_mut().filter(|r| r.s < 0.0 && r.s >= -0.5) {
            r.visit.time_to_roomed = None;
        }
        let res = loocv(&t2, &grid, &spec).unwrap();
        assert!(res.cells[0][0].mse.is_none());
        assert!(res.cells[0][0].error.is_some());
        assert!(res.cells[0][1].mse.is_some());
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains(",NA,"));
        let far: Vec<ForcedVisit> = t.into_iter().filter(|r| r.s.abs() > 0.5).collect();
        assert!(loocv(&far, &grid, &spec).is_err());
    }
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::report::format_estimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub se: f64,
    pub p: f64,
    pub n_left: usize,
    pub n_right: usize,
}

/// A table cell: an estimate, or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCell {
    pub summary: Option<EffectSummary>,
    pub error: Option<String>,
}

impl EffectCell {
    pub fn ok(summary: EffectSummary) -> Self {
        Self {
            summary: Some(summary),
            error: None,
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        Self {
            summary: None,
            error: Some(reason.into()),
        }
    }

    fn formatted(&self) -> String {
        match &self.summary {
            Some(s) => format_estimate(s.estimate, (s.lo, s.hi)),
            None => "NA".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub label: String,
    pub cells: Vec<EffectCell>,
}

/// Estimates laid out with one row per analysis (or outcome) and one
/// column per outcome (or anchor); cells read "est (lo, hi)".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<EffectRow>,
}

impl EffectTable {
    pub fn new(row_header: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            row_header: row_header.into(),
            columns,
            rows: vec![],
        }
    }

    pub fn push(&mut self, label: impl Into<String>, cells: Vec<EffectCell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(EffectRow {
            label: label.into(),
            cells,
        });
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![self.row_header.clone()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.cells.iter().map(EffectCell::formatted));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One line per cell with unrounded numbers.
    pub fn write_long_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            self.row_header.as_str(),
            "column",
            "estimate",
            "lo",
            "hi",
            "se",
            "p",
            "n_left",
            "n_right",
            "error",
        ])?;
        for row in &self.rows {
            for (col, cell) in self.columns.iter().zip(&row.cells) {
                let mut rec = vec![row.label.clone(), col.clone()];
                match &cell.summary {
                    Some(s) => rec.extend([
                        s.estimate.to_string(),
                        s.lo.to_string(),
                        s.hi.to_string(),
                        s.se.to_string(),
                        s.p.to_string(),
                        s.n_left.to_string(),
                        s.n_right.to_string(),
                        String::new(),
                    ]),
                    None => {
                        rec.extend(std::iter::repeat_n(String::new(), 7));
                        rec.push(cell.error.clone().unwrap_or_default());
                    }
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

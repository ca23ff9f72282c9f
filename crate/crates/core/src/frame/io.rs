//! Delimited-text ingest and export of visit tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::records::{ArrivalMode, Complaint, Insurance, Race, Sex, VisitRecord, VisitTable};
use crate::error::{Error, Result};

/// Logical fields of a visit record, in canonical column order.
pub const FIELDS: &[&str] = &[
    "visit_id",
    "arrival",
    "physician_id",
    "age",
    "sex",
    "race",
    "insurance",
    "complaint",
    "congestion",
    "workload",
    "time_to_roomed",
    "time_to_dispo",
    "admitted",
    "revisit_30d",
    "arrival_mode",
    "transfer_flag",
    "first_order_time",
];

const REQUIRED: &[&str] = &["visit_id", "arrival", "age", "sex", "congestion", "workload"];

/// Maps logical fields to header names and raw categorical spellings to
/// canonical levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    /// Logical field -> header name. Fields not listed use their own name.
    pub columns: BTreeMap<String, String>,
    /// Logical field -> (raw value -> canonical level). Matching is
    /// case-insensitive on the trimmed raw value.
    pub aliases: BTreeMap<String, BTreeMap<String, String>>,
    pub delimiter: char,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        let mut aliases = BTreeMap::new();
        let pairs = |xs: &[(&str, &str)]| -> BTreeMap<String, String> {
            xs.iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect()
        };
        aliases.insert("sex".into(), pairs(&[("f", "female"), ("m", "male")]));
        aliases.insert(
            "arrival_mode".into(),
            pairs(&[("walk-in", "walk_in"), ("walkin", "walk_in"), ("ems", "ambulance")]),
        );
        aliases.insert(
            "race".into(),
            pairs(&[
                ("hispanic/latino", "hispanic_latino"),
                ("american indian/alaska native", "american_indian_alaska_native"),
            ]),
        );
        aliases.insert(
            "insurance".into(),
            pairs(&[("medicaid/badgercare", "medicaid"), ("self paid", "self_paid")]),
        );
        aliases.insert(
            "complaint".into(),
            pairs(&[("abdominal pain", "abdominal_pain"), ("chest pain", "chest_pain")]),
        );
        Self {
            columns: BTreeMap::new(),
            aliases,
            delimiter: ',',
        }
    }
}

impl ColumnSchema {
    pub fn header_for<'a>(&'a self, field: &'a str) -> &'a str {
        self.columns.get(field).map(String::as_str).unwrap_or(field)
    }

    fn canonical<'a>(&'a self, field: &str, raw: &'a str) -> String {
        let trimmed = raw.trim();
        self.aliases
            .get(field)
            .and_then(|m| {
                m.iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case(trimmed))
                    .map(|(_, v)| v.clone())
            })
            .unwrap_or_else(|| trimmed.to_string())
    }
}

/// A source row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub table: VisitTable,
    pub rejects: Vec<Reject>,
    /// Optional fields whose column was absent from the header.
    pub absent_fields: Vec<String>,
}

impl LoadReport {
    /// Fails with a schema error when `field`'s column was not in the source.
    pub fn require_field(&self, field: &str) -> Result<()> {
        if self.absent_fields.iter().any(|f| f == field) {
            Err(Error::Schema(format!("missing column `{field}`")))
        } else {
            Ok(())
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    const FORMATS: &[&str] = &[
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
    ];
    let s = raw.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Some(true),
        "0" | "false" | "no" | "n" | "f" => Some(false),
        _ => None,
    }
}

struct RowReader<'a> {
    record: &'a csv::StringRecord,
    index: &'a BTreeMap<&'static str, usize>,
    schema: &'a ColumnSchema,
}

impl RowReader<'_> {
    fn cell(&self, field: &str) -> Option<&str> {
        let i = *self.index.get(field)?;
        let v = self.record.get(i)?;
        if v.trim().is_empty() {
            None
        } else {
            Some(v)
        }
    }

    fn required(&self, field: &str) -> std::result::Result<&str, String> {
        self.cell(field).ok_or_else(|| format!("missing value for `{field}`"))
    }

    fn number(&self, field: &str) -> std::result::Result<Option<f64>, String> {
        match self.cell(field) {
            None => Ok(None),
            Some(v) => v
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| format!("`{field}` value `{}` is not a number", v.trim())),
        }
    }

    fn non_negative(&self, field: &str) -> std::result::Result<Option<f64>, String> {
        match self.number(field)? {
            Some(x) if x < 0.0 => Err(format!("`{field}` must be non-negative, got {x}")),
            other => Ok(other),
        }
    }

    fn flag(&self, field: &str) -> std::result::Result<Option<bool>, String> {
        match self.cell(field) {
            None => Ok(None),
            Some(v) => parse_bool(v)
                .map(Some)
                .ok_or_else(|| format!("`{field}` value `{}` is not boolean", v.trim())),
        }
    }

    fn level<T: std::str::FromStr>(&self, field: &str) -> std::result::Result<Option<T>, String> {
        match self.cell(field) {
            None => Ok(None),
            Some(v) => {
                let canon = self.schema.canonical(field, v);
                canon
                    .parse::<T>()
                    .map(Some)
                    .map_err(|_| format!("`{field}` value `{}` is not a declared level", v.trim()))
            }
        }
    }

    fn parse(&self) -> std::result::Result<VisitRecord, String> {
        let visit_id = self.required("visit_id")?.trim().to_string();
        let raw_arrival = self.required("arrival")?;
        let arrival = parse_timestamp(raw_arrival)
            .ok_or_else(|| format!("unparseable timestamp `{}`", raw_arrival.trim()))?;
        let age = self
            .non_negative("age")?
            .ok_or_else(|| "missing value for `age`".to_string())?;
        let sex = self
            .level::<Sex>("sex")?
            .ok_or_else(|| "missing value for `sex`".to_string())?;
        let congestion = self
            .non_negative("congestion")?
            .ok_or_else(|| "missing value for `congestion`".to_string())?;
        if congestion.fract() != 0.0 {
            return Err(format!("`congestion` must be an integer count, got {congestion}"));
        }
        let workload = self
            .non_negative("workload")?
            .ok_or_else(|| "missing value for `workload`".to_string())?;
        Ok(VisitRecord {
            visit_id,
            arrival,
            physician_id: self.cell("physician_id").map(|s| s.trim().to_string()),
            age,
            sex,
            race: self.level::<Race>("race")?.unwrap_or(Race::Unknown),
            insurance: self.level::<Insurance>("insurance")?.unwrap_or(Insurance::Unknown),
            complaint: self.level::<Complaint>("complaint")?.unwrap_or(Complaint::Other),
            congestion: congestion as u32,
            workload,
            time_to_roomed: self.number("time_to_roomed")?,
            time_to_dispo: self.number("time_to_dispo")?,
            admitted: self.flag("admitted")?,
            revisit_30d: self.flag("revisit_30d")?,
            arrival_mode: self
                .level::<ArrivalMode>("arrival_mode")?
                .unwrap_or(ArrivalMode::Other),
            transfer_flag: self.flag("transfer_flag")?.unwrap_or(false),
            first_order_time: self.number("first_order_time")?,
        })
    }
}

/// Reads a header-first delimited table. Malformed rows are reported in
/// `rejects`; a missing required column fails the whole load.
pub fn load_visits<R: Read>(source: R, schema: &ColumnSchema) -> Result<LoadReport> {
    let delimiter = u8::try_from(schema.delimiter)
        .map_err(|_| Error::Schema("delimiter must be a single-byte character".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut index = BTreeMap::new();
    let mut absent_fields = Vec::new();
    for &field in FIELDS {
        let name = schema.header_for(field);
        match headers.iter().position(|h| h.trim() == name) {
            Some(i) => {
                index.insert(field, i);
            }
            None if REQUIRED.contains(&field) => {
                return Err(Error::Schema(format!(
                    "missing required column `{name}` (field `{field}`)"
                )))
            }
            None => absent_fields.push(field.to_string()),
        }
    }

    let mut report = LoadReport {
        absent_fields,
        ..LoadReport::default()
    };
    for result in reader.records() {
        let record = result?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = RowReader {
            record: &record,
            index: &index,
            schema,
        };
        match row.parse() {
            Ok(v) => report.table.push(v),
            Err(reason) => report.rejects.push(Reject { line, reason }),
        }
    }
    Ok(report)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_flag(x: Option<bool>) -> String {
    x.map(|b| if b { "1" } else { "0" }.to_string())
        .unwrap_or_default()
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    if t.second() == 0 && t.nanosecond() == 0 {
        t.format("%Y-%m-%d %H:%M").to_string()
    } else {
        t.format("%Y-%m-%d %H:%M:%S").to_string()
    }
}

/// Writes a table in the canonical column layout `load_visits` reads with
/// the default schema.
pub fn write_visits<W: Write>(table: &[VisitRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(FIELDS)?;
    for v in table {
        w.write_record([
            v.visit_id.clone(),
            format_timestamp(&v.arrival),
            v.physician_id.clone().unwrap_or_default(),
            v.age.to_string(),
            v.sex.as_str().to_string(),
            v.race.as_str().to_string(),
            v.insurance.as_str().to_string(),
            v.complaint.as_str().to_string(),
            v.congestion.to_string(),
            v.workload.to_string(),
            fmt_opt(v.time_to_roomed),
            fmt_opt(v.time_to_dispo),
            fmt_flag(v.admitted),
            fmt_flag(v.revisit_30d),
            v.arrival_mode.as_str().to_string(),
            if v.transfer_flag { "1" } else { "0" }.to_string(),
            fmt_opt(v.first_order_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

use std::fs::File;
use std::io::BufReader;

use rdmix::cv::loocv as run_loocv;
use rdmix::diagnostics::{
    arrival_histogram, bin_means, covariate_balance, density_jump_test, write_balance_csv, BinnedMeans,
};
use rdmix::frame::{
    apply_exclusions, bandwidth_filter, compute_forcing, load_visits, summarize, write_visits, Anchor,
    ColumnSchema, ExclusionLedger, ForcedVisit, Reject, Variable, VisitRecord,
};
use rdmix::mediation::{mediate as run_mediation, mediate_by_level, MediationSpec, MediationTable, MonteCarlo};
use rdmix::moderation::{moderate_full, moderate_one, ModerationTable};
use rdmix::rd::{
    end_window_effect, estimate_effect, placebo_scan, EffectCell, EffectTable, Groupings, RdEstimate, RdSpec, Transform,
};
use rdmix::report::round_half_away;
use rdmix::sim::{preset, simulate as run_simulation, write_truth};
use rdmix::{Error, Result};
use serde::Serialize;

use crate::artifacts::Writer;
use crate::config::RunConfig;

const PRIMARY_OUTCOMES: [Variable; 4] = [
    Variable::TimeToRoomed,
    Variable::TimeToDispo,
    Variable::Admitted,
    Variable::Revisit30d,
];

const CONTINUOUS_OUTCOMES: [Variable; 2] = [Variable::TimeToRoomed, Variable::TimeToDispo];

/// Seed used by commands that draw random numbers outside simulation.
const DEFAULT_ANALYSIS_SEED: u64 = 1;

fn label(v: Variable) -> &'static str {
    match v {
        Variable::TimeToRoomed => "Time to be roomed",
        Variable::TimeToDispo => "Time to disposition",
        Variable::TimeToFirstOrder => "Time to first order",
        Variable::Admitted => "Admission decision",
        Variable::Revisit30d => "30-day revisit",
        other => other.as_str(),
    }
}

/// Source column carrying a variable.
fn field_of(v: Variable) -> &'static str {
    match v {
        Variable::Female => "sex",
        Variable::White => "race",
        Variable::AbdominalPain => "complaint",
        Variable::TimeToFirstOrder => "first_order_time",
        other => other.as_str(),
    }
}

fn cell(r: Result<RdEstimate>) -> EffectCell {
    match r {
        Ok(e) => EffectCell::ok(e.summary()),
        Err(e) => EffectCell::failed(e.to_string()),
    }
}

#[derive(Serialize)]
struct Ingest {
    rejects: Vec<Reject>,
    exclusions: ExclusionLedger,
}

/// Loads and concatenates every input, checks that `needed` columns are
/// present, and applies the exclusion pipeline.
fn load(c: &RunConfig, needed: &[Variable]) -> Result<(Vec<VisitRecord>, Ingest)> {
    if c.inputs.is_empty() {
        return Err(Error::Argument("no --input given".into()));
    }
    c.validate()?;
    let schema = ColumnSchema::default();
    let mut visits = Vec::new();
    let mut rejects = Vec::new();
    for p in &c.inputs {
        let report = load_visits(BufReader::new(File::open(p)?), &schema)?;
        for v in needed {
            report.require_field(field_of(*v)).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?;
        }
        visits.extend(report.table);
        rejects.extend(report.rejects);
    }
    let (kept, exclusions) = apply_exclusions(visits, &c.exclusions);
    Ok((kept, Ingest { rejects, exclusions }))
}

fn needed(c: &RunConfig, outcomes: &[Variable]) -> Vec<Variable> {
    let mut v = outcomes.to_vec();
    v.extend(c.covariates.iter().copied());
    v.sort();
    v.dedup();
    v
}

fn forced(c: &RunConfig, visits: &[VisitRecord], anchor: Anchor) -> Result<Vec<ForcedVisit>> {
    compute_forcing(visits, &c.schedule, anchor)
}

pub fn simulate(c: &RunConfig) -> Result<()> {
    let mut scn = match &c.scenario {
        Some(s) => s.clone(),
        None => preset(&c.preset)?,
    };
    if let Some(seed) = c.seed {
        scn.seed = seed;
    }
    if let Some(d) = c.n_days {
        scn.n_days = d;
    }
    let out = run_simulation(&scn)?;
    let w = Writer::new("simulate", c, Some(scn.seed))?;
    w.write("visits.csv", |b| write_visits(&out.visits, b))?;
    w.write("truth.csv", |b| write_truth(&out.truth, b))?;
    w.write("scenario.json", |b| {
        b.extend(scn.to_json()?.into_bytes());
        b.push(b'\n');
        Ok(())
    })?;
    w.write_json("warnings.json", &out.warnings)
}

pub fn estimate(c: &RunConfig) -> Result<()> {
    let outcomes = c.outcomes_or(&PRIMARY_OUTCOMES);
    let (visits, ingest) = load(c, &needed(c, &outcomes))?;
    let table = forced(c, &visits, c.anchor)?;
    let w = Writer::new("estimate", c, None)?;
    w.write_json("ingest.json", &ingest)?;

    let columns: Vec<String> = outcomes.iter().map(|&o| label(o).to_string()).collect();
    let mut main = EffectTable::new("Analysis", columns.clone());
    let variants: [(String, fn(RdSpec) -> RdSpec); 3] = [
        (format!("RD with {} hour bandwidth (primary)", c.bandwidth), |s| s),
        ("Changing bandwidth to 1/2 hour".into(), |s| RdSpec { bandwidth: 0.5, ..s }),
        ("Controlling for physician".into(), |s| RdSpec {
            groupings: Groupings::DayPhysician,
            ..s
        }),
    ];
    let mut warnings: Vec<(&str, Vec<String>)> = Vec::new();
    let mut primary_errors = Vec::new();
    for (i, (name, vary)) in variants.iter().enumerate() {
        let mut cells = Vec::with_capacity(outcomes.len());
        for &o in &outcomes {
            let r = estimate_effect(&table, &vary(c.spec_for(o)));
            if i == 0 {
                match &r {
                    Ok(e) => warnings.push((o.as_str(), e.warnings.clone())),
                    Err(_) => primary_errors.push(o),
                }
            }
            cells.push(cell(r));
        }
        main.push(name.clone(), cells);
    }
    // Nothing estimable at the primary spec: report the first failure.
    if primary_errors.len() == outcomes.len() {
        estimate_effect(&table, &c.spec_for(outcomes[0]))?;
    }
    w.write("estimate.csv", |b| main.write_csv(b))?;
    w.write("estimate_long.csv", |b| main.write_long_csv(b))?;
    w.write_json("warnings.json", &warnings)?;

    let mut by_bw = EffectTable::new("Bandwidth (hours)", columns);
    for &h in &c.grid.bandwidths {
        let cells = outcomes
            .iter()
            .map(|&o| cell(estimate_effect(&table, &RdSpec { bandwidth: h, ..c.spec_for(o) })))
            .collect();
        by_bw.push(h.to_string(), cells);
    }
    w.write("bandwidths.csv", |b| by_bw.write_csv(b))?;

    let subset = bandwidth_filter(&table, c.bandwidth)?;
    w.write("summary.csv", |b| summarize(&subset.rows).write_csv(b))
}

pub fn loocv(c: &RunConfig) -> Result<()> {
    let outcomes = c.outcomes_or(&CONTINUOUS_OUTCOMES);
    let (visits, _) = load(c, &needed(c, &outcomes))?;
    let table = forced(c, &visits, c.anchor)?;
    let w = Writer::new("loocv", c, None)?;
    for o in outcomes {
        let res = run_loocv(&table, &c.grid, &c.spec_for(o))?;
        w.write(&format!("loocv_{o}.csv"), |b| res.write_csv(b))?;
    }
    Ok(())
}

pub fn moderate(c: &RunConfig) -> Result<()> {
    let outcomes = c.outcomes_or(&PRIMARY_OUTCOMES);
    let (visits, _) = load(c, &needed(c, &outcomes))?;
    let table = forced(c, &visits, c.anchor)?;
    let w = Writer::new("moderate", c, None)?;
    let mut one = ModerationTable {
        outcomes: outcomes.iter().map(|&o| label(o).to_string()).collect(),
        results: vec![],
    };
    let mut full = one.clone();
    for &o in &outcomes {
        let spec = c.spec_for(o);
        one.results.push(
            c.moderators
                .iter()
                .map(|m| moderate_one(&table, &spec, m))
                .collect::<Result<_>>()?,
        );
        full.results.push(moderate_full(&table, &spec, &c.moderators)?.results);
    }
    w.write("moderation.csv", |b| one.write_csv(b))?;
    w.write("moderation_levels.csv", |b| one.write_levels_csv(b))?;
    w.write("moderation_full.csv", |b| full.write_csv(b))
}

pub fn mediate(c: &RunConfig) -> Result<()> {
    let outcome = c.outcomes.first().copied().unwrap_or(c.mediation_outcome);
    let mut need = needed(c, &[outcome]);
    need.extend(c.mediators.iter().copied());
    let (visits, _) = load(c, &need)?;
    let table = forced(c, &visits, c.anchor)?;
    let seed = c.seed.unwrap_or(DEFAULT_ANALYSIS_SEED);
    let w = Writer::new("mediate", c, c.monte_carlo_draws.map(|_| seed))?;
    let mut out = MediationTable::default();
    for &m in &c.mediators {
        let mut spec = MediationSpec::new(m, outcome);
        spec.rd = RdSpec {
            covariates: c.spec_for(outcome).covariates.into_iter().filter(|v| *v != m).collect(),
            ..c.spec_for(outcome)
        };
        spec.monte_carlo = c.monte_carlo_draws.map(|draws| MonteCarlo { draws, seed });
        out.rows.push(run_mediation(&table, &spec)?);
        if let Some(by) = &c.mediation_by {
            spec.by_level = Some(by.clone());
            out.rows.extend(mediate_by_level(&table, &spec)?);
        }
    }
    w.write("mediation.csv", |b| out.write_csv(b))?;
    w.write_json("mediation.json", &out)
}

pub fn placebo(c: &RunConfig) -> Result<()> {
    let outcomes = c.outcomes_or(&PRIMARY_OUTCOMES);
    let (visits, _) = load(c, &needed(c, &outcomes))?;
    let w = Writer::new("placebo", c, None)?;
    let columns = c.placebo_anchors.iter().map(Anchor::label).collect();
    let mut t = EffectTable::new("Outcome", columns);
    for &o in &outcomes {
        let cells = placebo_scan(&visits, &c.schedule, &c.spec_for(o), &c.placebo_anchors)
            .into_iter()
            .map(|p| match (p.estimate, p.error) {
                (Some(e), _) => EffectCell::ok(e.summary()),
                (None, err) => EffectCell::failed(err.unwrap_or_default()),
            })
            .collect();
        t.push(label(o), cells);
    }
    w.write("placebo.csv", |b| t.write_csv(b))?;
    w.write("placebo_long.csv", |b| t.write_long_csv(b))
}

pub fn diagnose(c: &RunConfig) -> Result<()> {
    let outcomes = c.outcomes_or(&PRIMARY_OUTCOMES);
    let mut need = needed(c, &outcomes);
    need.extend(c.balance_covariates.iter().copied());
    let (visits, _) = load(c, &need)?;
    let table = forced(c, &visits, c.anchor)?;
    let w = Writer::new("diagnose", c, None)?;
    for s in arrival_histogram(&table, &c.histogram_widths)? {
        w.write(&format!("histogram_{}.csv", s.width), |b| s.write_csv(b))?;
    }
    w.write_json("density.json", &density_jump_test(&table, c.density_delta)?)?;
    let balance = covariate_balance(&table, &c.spec_for(Variable::Age), &c.balance_covariates)?;
    w.write("balance.csv", |b| write_balance_csv(&balance, b))?;
    for &o in &outcomes {
        let BinnedMeans { series, fitted, .. } = bin_means(&table, &c.spec_for(o), c.bin_width)?;
        w.write(&format!("bins_{o}.csv"), |b| series.write_csv(b))?;
        w.write(&format!("fitted_{o}.csv"), |b| {
            let mut wr = csv::Writer::from_writer(b);
            wr.write_record(["s", "fitted"])?;
            for (s, y) in &fitted {
                wr.write_record([s.to_string(), y.to_string()])?;
            }
            wr.flush()?;
            Ok(())
        })?;
    }
    Ok(())
}

pub fn endhour(c: &RunConfig) -> Result<()> {
    let outcomes = c.outcomes_or(&PRIMARY_OUTCOMES);
    let (visits, _) = load(c, &needed(c, &outcomes))?;
    let table = forced(c, &visits, Anchor::WindowEnd)?;
    let w = Writer::new("endhour", c, None)?;
    let mut rows: Vec<[String; 3]> = Vec::new();
    let fmt = |est: f64, (lo, hi): (f64, f64)| {
        [
            format!("{:.1}", round_half_away(est, 1)),
            format!("({:.1}, {:.1})", round_half_away(lo, 1), round_half_away(hi, 1)),
        ]
    };
    for &o in &outcomes {
        let spec = c.spec_for(o);
        match end_window_effect(&table, &spec) {
            Ok(e) => {
                let [est, ci] = fmt(e.gamma, e.ci95);
                rows.push([label(o).to_string(), est, ci]);
            }
            Err(e) => rows.push([label(o).to_string(), "NA".into(), e.to_string()]),
        }
        if !o.is_binary() && spec.transform != Transform::Log {
            let log_spec = RdSpec { transform: Transform::Log, ..spec };
            let name = format!("{} (% change)", label(o));
            match end_window_effect(&table, &log_spec).map(|e| e.percent_change) {
                Ok(Some(p)) => {
                    let [est, ci] = fmt(p.estimate, (p.lo, p.hi));
                    rows.push([name, est, ci]);
                }
                Ok(None) => rows.push([name, "NA".into(), String::new()]),
                Err(e) => rows.push([name, "NA".into(), e.to_string()]),
            }
        }
    }
    w.write("endhour.csv", |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record(["Outcome", "Estimate", "95% CI"])?;
        for r in &rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    })
}

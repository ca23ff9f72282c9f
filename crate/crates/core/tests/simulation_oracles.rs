//! Recovery checks that replicate the simulator and compare estimates with
//! the injected truth.

use rdmix::frame::{compute_forcing, load_visits, write_visits, Anchor, ColumnSchema, ForcedVisit, Variable};
use rdmix::lmm::lincomb;
use rdmix::mediation::{mediate, mediate_by_level, MediationSpec};
use rdmix::moderation::{moderate_one, ModeratorSource, ModeratorSpec};
use rdmix::rd::{estimate_effect, PolyForm, RdSpec};
use rdmix::diagnostics::bin_means;
use rdmix::sim::{preset, simulate, Scenario};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn scenario(name: &str, days: usize, seed: u64) -> Scenario {
    let mut s = preset(name).unwrap();
    s.n_days = days;
    s.seed = seed;
    s
}

fn forced(s: &Scenario) -> Vec<ForcedVisit> {
    let out = simulate(s).unwrap();
    compute_forcing(&out.visits, &s.schedule, Anchor::WindowStart).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn csv_round_trip_preserves_estimates() {
    let s = scenario("paper_like", 30, 3);
    let out = simulate(&s).unwrap();
    let mut buf = Vec::new();
    write_visits(&out.visits, &mut buf).unwrap();
    let loaded = load_visits(buf.as_slice(), &ColumnSchema::default()).unwrap();
    assert!(loaded.rejects.is_empty(), "{:?}", &loaded.rejects[..loaded.rejects.len().min(3)]);
    assert_eq!(loaded.table, out.visits);
    let spec = RdSpec::for_outcome(Variable::TimeToDispo);
    let direct = estimate_effect(&compute_forcing(&out.visits, &s.schedule, Anchor::WindowStart).unwrap(), &spec).unwrap();
    let via_csv = estimate_effect(&compute_forcing(&loaded.table, &s.schedule, Anchor::WindowStart).unwrap(), &spec).unwrap();
    assert_eq!(direct.gamma, via_csv.gamma);
    assert_eq!(direct.se, via_csv.se);
}

#[test]
fn near_cutoff_counts_match_the_rate_integral() {
    let s = scenario("paper_like", 200, 8);
    let table = forced(&s);
    let mut expect_left = 0.0;
    let mut expect_right = 0.0;
    for d in 0..s.n_days {
        let date = s.start_date + chrono::Days::new(d as u64);
        let (_, regime) = s.schedule.lookup(date).unwrap();
        let start = rdmix::frame::schedule::clock_hours(regime.start);
        expect_left += s.expected_arrivals(start - 1.0, start);
        expect_right += s.expected_arrivals(start, start + 1.0);
    }
    let left = table.iter().filter(|r| r.s >= -1.0 && r.s < 0.0).count() as f64;
    let right = table.iter().filter(|r| r.s >= 0.0 && r.s < 1.0).count() as f64;
    assert!((left - expect_left).abs() <= 3.0 * expect_left.sqrt(), "{left} vs {expect_left}");
    assert!((right - expect_right).abs() <= 3.0 * expect_right.sqrt(), "{right} vs {expect_right}");
}

#[test]
fn separate_slopes_agree_under_a_shared_slope_truth() {
    let reps = 200;
    let mut agree = 0;
    for seed in 0..reps {
        let t = forced(&scenario("paper_like", 40, 1000 + seed));
        let spec = RdSpec {
            form: PolyForm::LinearSeparate,
            ..RdSpec::for_outcome(Variable::TimeToRoomed)
        };
        let e = estimate_effect(&t, &spec).unwrap();
        let diff = lincomb(&e.fit, &[("S:(1-A)", 1.0), ("S:A", -1.0)]).unwrap();
        if diff.p_value() > 0.05 {
            agree += 1;
        }
    }
    assert!(agree as f64 >= 0.9 * reps as f64, "{agree}/{reps}");
}

#[test]
fn injected_medium_congestion_interaction_is_covered() {
    let reps = 200;
    let truth = -8.3;
    let moderator = ModeratorSpec {
        boundaries: Some((30.0, 41.0)),
        ..ModeratorSpec::new(ModeratorSource::CongestionTertile)
    };
    let mut covered = 0;
    for seed in 0..reps {
        let t = forced(&scenario("heterogeneous", 100, 2000 + seed));
        let r = moderate_one(&t, &RdSpec::for_outcome(Variable::TimeToRoomed), &moderator).unwrap();
        let medium = r.interactions.iter().find(|i| i.level == "Medium").unwrap();
        let (lo, hi) = medium.ci95.unwrap();
        if lo <= truth && truth <= hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    assert!((0.9..=0.99).contains(&rate), "coverage {rate}");
}

/// With a moderator unrelated to treatment and outcome, the reference-level
/// effect differs from the pooled effect only by sampling noise of variance
/// `se_mod² - se_pool²`, so `|diff| <= se_mod` holds with a computable
/// probability in each replication.
#[test]
fn independent_moderator_leaves_the_base_effect_within_one_se() {
    let reps = 100;
    let z = Normal::new(0.0, 1.0).unwrap();
    let moderator = ModeratorSpec::new(ModeratorSource::DayOfWeek);
    let spec = RdSpec::for_outcome(Variable::TimeToDispo);
    let mut hits = 0.0;
    let mut expected = 0.0;
    let mut diffs = Vec::new();
    for seed in 0..reps {
        let t = forced(&scenario("paper_like", 100, 3000 + seed));
        let pooled = estimate_effect(&t, &spec).unwrap();
        let m = moderate_one(&t, &spec, &moderator).unwrap();
        let sd = (m.base_gamma.se.powi(2) - pooled.se.powi(2)).max(1e-12).sqrt();
        let diff = m.base_gamma.estimate - pooled.gamma;
        diffs.push(diff / sd);
        if diff.abs() <= m.base_gamma.se {
            hits += 1.0;
        }
        let k = m.base_gamma.se / sd;
        expected += z.cdf(k) - z.cdf(-k);
    }
    let p = expected / reps as f64;
    let observed = hits / reps as f64;
    let tol = 3.0 * (p * (1.0 - p) / reps as f64).sqrt();
    assert!((observed - p).abs() <= tol, "{observed} vs {p}");
    let (m, se) = mean_and_se(&diffs);
    assert!(m.abs() <= 3.0 * se, "standardized drift {m}");
}

#[test]
fn indirect_effect_through_first_order_is_recovered() {
    let reps = 150;
    let truth = preset("paper_like")
        .unwrap()
        .indirect_effect(Variable::TimeToDispo, Variable::TimeToFirstOrder);
    assert!((truth - -2.0).abs() < 1e-12);
    let spec = MediationSpec::new(Variable::TimeToFirstOrder, Variable::TimeToDispo);
    let mut est = Vec::new();
    let mut covered = 0;
    for seed in 0..reps {
        let t = forced(&scenario("paper_like", 100, 4000 + seed));
        let r = mediate(&t, &spec).unwrap();
        est.push(r.nie.estimate);
        if r.nie_ci95.0 <= truth && truth <= r.nie_ci95.1 {
            covered += 1;
        }
    }
    let (m, se) = mean_and_se(&est);
    assert!((m - truth).abs() <= 3.0 * se, "mean NIE {m} (se {se})");
    let rate = covered as f64 / reps as f64;
    assert!((0.89..=0.99).contains(&rate), "coverage {rate}");
}

#[test]
fn indirect_effects_agree_across_levels_of_an_unrelated_moderator() {
    let t = forced(&scenario("paper_like", 300, 5));
    let spec = MediationSpec {
        by_level: Some(ModeratorSpec::new(ModeratorSource::DayOfWeek)),
        ..MediationSpec::new(Variable::TimeToFirstOrder, Variable::TimeToDispo)
    };
    let rows = mediate_by_level(&t, &spec).unwrap();
    assert_eq!(rows.len(), 7);
    let w: Vec<f64> = rows.iter().map(|r| 1.0 / r.nie.se.powi(2)).collect();
    let pooled = rows.iter().zip(&w).map(|(r, w)| r.nie.estimate * w).sum::<f64>() / w.iter().sum::<f64>();
    let q: f64 = rows.iter().zip(&w).map(|(r, w)| (r.nie.estimate - pooled).powi(2) * w).sum();
    let crit = ChiSquared::new(6.0).unwrap().inverse_cdf(0.999);
    assert!(q < crit, "heterogeneity statistic {q} exceeds {crit}");
}

/// Right-side bin means minus the straight line through the left-side bin
/// means, averaged over bins, estimates the jump.
#[test]
fn binned_means_jump_by_the_injected_effect() {
    let reps = 30;
    let spec = RdSpec::for_outcome(Variable::TimeToDispo);
    let mut jumps = Vec::new();
    for seed in 0..reps {
        let t = forced(&scenario("paper_like", 200, 6000 + seed));
        let b = bin_means(&t, &spec, 0.25).unwrap();
        let centre = |lo: f64, hi: f64| 0.5 * (lo + hi);
        let left: Vec<(f64, f64)> = b
            .series
            .bins
            .iter()
            .filter(|x| x.hi <= 0.0)
            .map(|x| (centre(x.lo, x.hi), x.value.unwrap()))
            .collect();
        let n = left.len() as f64;
        let mx = left.iter().map(|p| p.0).sum::<f64>() / n;
        let my = left.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = left.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / left.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let right: Vec<f64> = b
            .series
            .bins
            .iter()
            .filter(|x| x.lo >= 0.0)
            .map(|x| x.value.unwrap() - (my + slope * (centre(x.lo, x.hi) - mx)))
            .collect();
        jumps.push(right.iter().sum::<f64>() / right.len() as f64);
    }
    let (m, se) = mean_and_se(&jumps);
    assert!((m - -14.4).abs() <= 3.0 * se, "mean jump {m} (se {se})");
}

#[test]
fn day_intercept_variance_is_recovered() {
    let s = scenario("paper_like", 2000, 9);
    let day_sd = s.outcomes.time_to_roomed.day_sd;
    let t = forced(&s);
    let mut covariates = Variable::default_covariates();
    covariates.push(Variable::Congestion);
    let spec = RdSpec {
        bandwidth: 12.0,
        covariates,
        ..RdSpec::for_outcome(Variable::TimeToRoomed)
    };
    let e = estimate_effect(&t, &spec).unwrap();
    let tau2 = e.fit.tau2("day").unwrap();
    let truth = day_sd * day_sd;
    assert!((tau2 - truth).abs() <= 0.1 * truth, "tau2 {tau2} vs {truth}");
}

//! Number formatting shared by the table writers.

/// Rounds half away from zero at `digits` decimals, on the decimal value the
/// caller wrote rather than its nearest binary neighbour.
pub fn round_half_away(x: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `"est (lo, hi)"` at one decimal.
pub fn format_estimate(est: f64, ci: (f64, f64)) -> String {
    format_estimate_digits(est, ci, 1)
}

pub fn format_estimate_digits(est: f64, ci: (f64, f64), digits: usize) -> String {
    let d = digits as i32;
    format!(
        "{:.*} ({:.*}, {:.*})",
        digits,
        round_half_away(est, d),
        digits,
        round_half_away(ci.0, d),
        digits,
        round_half_away(ci.1, d)
    )
}

/// `"mse (se)"` cell of a cross-validation grid.
pub fn format_mse_cell(mse: f64, se: f64) -> String {
    format!("{:.2} ({:.3})", round_half_away(mse, 2), round_half_away(se, 3))
}

/// P-value cell: `"< 0.001"`, three decimals below 0.01, two otherwise.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".into()
    } else if p < 0.01 {
        format!("{:.3}", round_half_away(p, 3))
    } else {
        format!("{:.2}", round_half_away(p, 2))
    }
}

//! Number formatting shared by the CSV and JSON reports.

/// `x` rounded to 6 significant digits, printed in shortest form.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

/// Round to 6 significant digits, for JSON output.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

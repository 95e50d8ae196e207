//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

/// Denominator floor so coordinates with vanishing gradients are compared in
/// absolute rather than relative terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares an analytic gradient against central differences of `f` at `point`.
pub fn finite_diff_check(f: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64], h: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), point.len(), "gradient and point lengths differ");
    let numeric = numeric_gradient(f, point, h);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if e > report.max_relative_error || report.worst_index.is_none() {
            report = GradCheckReport {
                max_relative_error: e,
                worst_index: Some(i),
                analytic: a,
                numeric: n,
            };
        }
    }
    report
}

use super::Matrix;

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// Compares `analytic` against `(f(x+h) − f(x−h)) / 2h` for every entry of
/// every tensor in `values`. Relative error uses `max(|a|, |n|, 1e-8)` as the
/// denominator. `values` is restored before returning.
pub fn finite_diff_check<F>(
    values: &mut [Matrix],
    analytic: &[Matrix],
    h: f64,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&[Matrix]) -> f64,
{
    assert_eq!(values.len(), analytic.len(), "one gradient per tensor");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    for t in 0..values.len() {
        assert_eq!(values[t].shape(), analytic[t].shape(), "gradient shape");
        for e in 0..values[t].len() {
            let orig = values[t].as_slice()[e];
            values[t].as_mut_slice()[e] = orig + h;
            let up = f(values);
            values[t].as_mut_slice()[e] = orig - h;
            let down = f(values);
            values[t].as_mut_slice()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t].as_slice()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.entries += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (t, e);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}

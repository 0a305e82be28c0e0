use crate::scalar::Scalar;

/// Lower bound on the denominator of the relative error.
pub const ABS_FLOOR: f64 = 1e-8;

/// Compares an analytic gradient with central differences
/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h` coordinate by coordinate and returns
/// the largest relative error `|a - n| / max(|n|, ABS_FLOOR)`.
pub fn finite_diff_check<S: Scalar>(
    mut f: impl FnMut(&[S]) -> S,
    x: &[S],
    analytic: &[S],
    h: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let h = S::lit(h);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = ((up - down) / (h + h)).to_f64_lossy();
        let a = analytic[i].to_f64_lossy();
        let diff = (a - numeric).abs();
        let err = if diff.is_nan() {
            f64::INFINITY
        } else {
            diff / numeric.abs().max(ABS_FLOOR)
        };
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function() {
        let err = finite_diff_check(|x: &[f64]| x[0] * x[0], &[3.0], &[6.0], 1e-5);
        assert!(err < 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = finite_diff_check(|x: &[f64]| x[0] * x[0], &[3.0], &[12.0], 1e-5);
        assert!((err - 1.0).abs() < 1e-6);
        let err = finite_diff_check(|x: &[f64]| x[0] * x[0] + x[1], &[3.0, 1.0], &[6.0, 3.0], 1e-5);
        assert!(err > 0.5);
    }
}

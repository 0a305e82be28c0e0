use super::ops::sigmoid;
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn clamp_prob<S: Scalar>(p: S) -> S {
    let lo = S::lit(PROB_CLAMP);
    p.max(lo).min(S::one() - lo)
}

/// Binary cross-entropy of probability `p` against label `y`.
#[inline]
pub fn bce_loss<S: Scalar>(p: S, y: bool) -> S {
    let p = clamp_prob(p);
    if y {
        -p.ln()
    } else {
        -(S::one() - p).ln()
    }
}

/// Loss and `dℓ/dz` for a logit `z`; the gradient is `σ(z) - y`.
#[inline]
pub fn bce_with_logit<S: Scalar>(z: S, y: bool) -> (S, S) {
    let p = sigmoid(z);
    (bce_loss(p, y), p - label(y))
}

#[inline]
pub fn label<S: Scalar>(y: bool) -> S {
    if y {
        S::one()
    } else {
        S::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::finite_diff_check;

    #[test]
    fn half_probability_costs_ln2() {
        assert!((bce_loss(0.5f64, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0f64, true) < 1e-11);
        assert!(bce_loss(0.0f64, false) < 1e-11);
        assert!(bce_loss(0.0f64, true).is_finite());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        for &z in &[-3.0f64, -0.2, 0.0, 0.7, 4.0] {
            for &y in &[true, false] {
                let (_, g) = bce_with_logit(z, y);
                assert_eq!(g, sigmoid(z) - label::<f64>(y));
                let err = finite_diff_check(|x: &[f64]| bce_with_logit(x[0], y).0, &[z], &[g], 1e-5);
                assert!(err < 1e-6, "z={z} y={y} err={err}");
            }
        }
    }
}

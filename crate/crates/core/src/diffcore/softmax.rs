use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Softmax restricted to entries where `available` is true. Unavailable
/// entries get probability exactly zero.
pub fn masked_softmax<S: Scalar>(logits: &[S], available: &[bool]) -> Result<Vec<S>> {
    if logits.len() != available.len() {
        return Err(Error::Dimension(format!(
            "softmax over {} logits with mask of {}",
            logits.len(),
            available.len()
        )));
    }
    let max = logits
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(&z, _)| z)
        .fold(None, |m: Option<S>, z| Some(m.map_or(z, |m| m.max(z))))
        .ok_or(Error::NoAvailableQuestion)?;
    let mut out: Vec<S> = logits
        .iter()
        .zip(available)
        .map(|(&z, &a)| if a { (z - max).exp() } else { S::zero() })
        .collect();
    let total: S = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Pulls `dL/dp` back through the softmax: `dL/dz = p ⊙ (g - <p, g>)`.
pub fn softmax_backward<S: Scalar>(probs: &[S], dprobs: &[S]) -> Vec<S> {
    let inner: S = probs.iter().zip(dprobs).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(dprobs)
        .map(|(&p, &g)| p * (g - inner))
        .collect()
}

/// Gradient of `log p[action]` with respect to the logits: `e_action - p`.
pub fn log_prob_grad<S: Scalar>(probs: &[S], action: usize) -> Vec<S> {
    let mut g: Vec<S> = probs.iter().map(|&p| -p).collect();
    g[action] += S::one();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::finite_diff_check;
    use crate::diffcore::ops::sigmoid;
    use proptest::prelude::*;

    #[test]
    fn uniform_over_available() {
        let p = masked_softmax(&[0.3f64; 6], &[true, false, true, true, false, true]).unwrap();
        assert_eq!(p, vec![0.25, 0.0, 0.25, 0.25, 0.0, 0.25]);
        let one = masked_softmax(&[5.0f64, -1.0, 2.0], &[false, true, false]).unwrap();
        assert_eq!(one, vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            masked_softmax(&[1.0f64, 2.0], &[false, false]),
            Err(Error::NoAvailableQuestion)
        ));
    }

    #[test]
    fn two_classes_reduce_to_logistic() {
        let p = masked_softmax(&[1.0f64, 2.0], &[true, true]).unwrap();
        assert!((p[0] - sigmoid(-1.0)).abs() < 1e-15);
        assert!((p[1] - sigmoid(1.0)).abs() < 1e-15);
        assert!((p[0] - 0.2689).abs() < 1e-4 && (p[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mask = [true, true, false, true];
        let w = [0.3f64, -1.2, 9.0, 2.0];
        let z = [0.1f64, 0.5, -0.3, 1.1];
        let p = masked_softmax(&z, &mask).unwrap();
        let dz = softmax_backward(&p, &w);
        assert_eq!(dz[2], 0.0);
        let f = |z: &[f64]| -> f64 {
            let p = masked_softmax(z, &mask).unwrap();
            p.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        assert!(finite_diff_check(f, &z, &dz, 1e-5) < 1e-6);
        let lg = log_prob_grad(&p, 3);
        let f = |z: &[f64]| masked_softmax(z, &mask).unwrap()[3].ln();
        assert!(finite_diff_check(f, &z, &lg, 1e-5) < 1e-6);
    }

    proptest! {
        #[test]
        fn shift_invariant_and_normalized(
            z in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
            bits in any::<u16>(),
        ) {
            let mut mask: Vec<bool> = (0..z.len()).map(|i| bits >> (i % 16) & 1 == 1).collect();
            mask[0] = true;
            let p = masked_softmax(&z, &mask).unwrap();
            let zs: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let q = masked_softmax(&zs, &mask).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for i in 0..z.len() {
                prop_assert!((p[i] - q[i]).abs() < 1e-9);
                if !mask[i] { prop_assert_eq!(p[i], 0.0); }
            }
        }
    }
}

//! Projection operators onto lp balls.

use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpNorm {
    Linf,
    L2,
}

/// Project onto the lp ball of radius `eps`: per-entry clamp for l-inf,
/// radial rescale for l2. Idempotent.
pub fn project_lp<F: Scalar>(v: &Tensor<F>, norm: LpNorm, eps: f64) -> Tensor<F> {
    let e = F::from_f64(eps);
    match norm {
        LpNorm::Linf => v.clamp(-e, e),
        LpNorm::L2 => {
            let n = v.norm_l2();
            // The relative slack makes the map exactly idempotent in floats:
            // after one rescale the recomputed norm can sit a few ulps above
            // eps, which must not trigger a second rescale.
            let slack = e * F::from_f64(1.0 + 1e-6);
            if n <= slack || n == F::zero() {
                v.clone()
            } else {
                v.scale(e / n)
            }
        }
    }
}

/// sign with sign(0) = 0.
pub fn sign<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inside_ball_unchanged() {
        let v = Tensor::<f64>::new(vec![2], vec![0.1, -0.1]);
        assert_eq!(project_lp(&v, LpNorm::Linf, 0.2).data(), v.data());
        assert_eq!(project_lp(&v, LpNorm::L2, 1.0).data(), v.data());
    }

    #[test]
    fn linf_clamps() {
        let v = Tensor::<f64>::new(vec![2], vec![0.3, -0.5]);
        let p = project_lp(&v, LpNorm::Linf, 0.2);
        assert_eq!(p.data(), &[0.2, -0.2]);
    }

    #[test]
    fn l2_rescales_onto_sphere() {
        let v = Tensor::<f64>::new(vec![2], vec![3.0, 4.0]);
        let p = project_lp(&v, LpNorm::L2, 1.0);
        assert!((p[0] - 0.6).abs() < 1e-12 && (p[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0f32), 0.0);
        assert_eq!(sign(-2.0f64), -1.0);
        assert_eq!(sign(0.5f64), 1.0);
    }
}

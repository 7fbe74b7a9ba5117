//! Input domains over which bounds are computed.

use crate::{Error, Result, Tensor};

/// Convex region of admissible network inputs.
#[derive(Debug, Clone)]
pub enum InputDomain {
    /// Axis-aligned box `l <= x <= u` (elementwise).
    Box { lower: Tensor, upper: Tensor },
    /// Euclidean ball of positive radius around a center point.
    L2Ball { center: Tensor, radius: f64 },
}

impl InputDomain {
    pub fn bounded(lower: Tensor, upper: Tensor) -> Result<Self> {
        lower.expect_len(upper.len(), "box bounds")?;
        if lower.data().iter().zip(upper.data()).any(|(l, u)| l > u) {
            return Err(Error::InvalidNetwork("box with lower > upper".into()));
        }
        Ok(InputDomain::Box { lower, upper })
    }

    pub fn l2_ball(center: Tensor, radius: f64) -> Result<Self> {
        if radius <= 0.0 || !radius.is_finite() {
            return Err(Error::OutOfDomain {
                value: radius,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(InputDomain::L2Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            InputDomain::Box { lower, .. } => lower.len(),
            InputDomain::L2Ball { center, .. } => center.len(),
        }
    }

    /// Smallest axis-aligned box containing the domain.
    pub fn bounding_box(&self) -> (Tensor, Tensor) {
        match self {
            InputDomain::Box { lower, upper } => (lower.clone(), upper.clone()),
            InputDomain::L2Ball { center, radius } => {
                let mut lo = center.clone();
                let mut hi = center.clone();
                for v in lo.data_mut() {
                    *v -= radius;
                }
                for v in hi.data_mut() {
                    *v += radius;
                }
                (lo, hi)
            }
        }
    }

    pub fn center(&self) -> Tensor {
        match self {
            InputDomain::Box { lower, upper } => {
                let data = lower
                    .data()
                    .iter()
                    .zip(upper.data())
                    .map(|(l, u)| 0.5 * (l + u))
                    .collect();
                Tensor::vector(data)
            }
            InputDomain::L2Ball { center, .. } => center.flattened(),
        }
    }

    pub fn contains(&self, x: &Tensor, tol: f64) -> bool {
        match self {
            InputDomain::Box { lower, upper } => x
                .data()
                .iter()
                .zip(lower.data().iter().zip(upper.data()))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            InputDomain::L2Ball { center, radius } => x.sub(center).norm_l2() <= radius + tol,
        }
    }

    /// Argmin and value of the linear function `coeff . x` over the domain.
    ///
    /// Ties (zero coefficients) resolve to the lower bound on boxes and the
    /// center on balls, so results are deterministic.
    pub fn minimize_linear(&self, coeff: &Tensor) -> (Tensor, f64) {
        match self {
            InputDomain::Box { lower, upper } => {
                let mut point = Vec::with_capacity(coeff.len());
                let mut value = 0.0;
                for i in 0..coeff.len() {
                    let x = if coeff[i] < 0.0 { upper[i] } else { lower[i] };
                    value += coeff[i] * x;
                    point.push(x);
                }
                (Tensor::vector(point), value)
            }
            InputDomain::L2Ball { center, radius } => {
                let norm = coeff.norm_l2();
                if norm == 0.0 {
                    return (center.flattened(), 0.0);
                }
                let mut point = center.flattened();
                point.axpy(-radius / norm, coeff);
                let value = coeff.dot(&point);
                (point, value)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_linear_min_sign_rule() {
        let dom = InputDomain::bounded(
            Tensor::vector(vec![0.0, 0.0]),
            Tensor::vector(vec![1.0, 1.0]),
        )
        .unwrap();
        // minimize -1*x0 + 2*x1 -> x0 = 1, x1 = 0
        let (p, v) = dom.minimize_linear(&Tensor::vector(vec![-1.0, 2.0]));
        assert_eq!(p.data(), &[1.0, 0.0]);
        assert_eq!(v, -1.0);
        // zero coefficients resolve to the lower corner
        let (p, v) = dom.minimize_linear(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(p.data(), &[0.0, 0.0]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ball_linear_min_boundary_point() {
        let dom =
            InputDomain::l2_ball(Tensor::vector(vec![1.0, 0.0]), 2.0).unwrap();
        let (p, v) = dom.minimize_linear(&Tensor::vector(vec![3.0, 0.0]));
        assert!((p.data()[0] - (-1.0)).abs() < 1e-12);
        assert!((p.data()[1]).abs() < 1e-12);
        assert!((v - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(InputDomain::bounded(
            Tensor::vector(vec![1.0]),
            Tensor::vector(vec![0.0])
        )
        .is_err());
        assert!(InputDomain::l2_ball(Tensor::vector(vec![0.0]), 0.0).is_err());
    }
}

//! Relativistic kinematics in mass-normalized units.
//!
//! `gamma = sqrt(1 + |p|^2/c^2)`, `v = p / gamma`, and the velocity Jacobian
//! `A = I/gamma - p p^T / (c^2 gamma^3)`. The non-relativistic case is its own
//! branch so that `c = infinity` results are exact.

use crate::error::{Error, Result};
use crate::vec3::{Mat3, Momentum3, Velocity3};
use alloc::format;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LightSpeed {
    /// Finite speed of light, `c >= 1`.
    Finite(f64),
    /// Exact non-relativistic branch.
    Infinite,
}

impl LightSpeed {
    pub fn finite(c: f64) -> Result<Self> {
        if c.is_finite() && c >= 1.0 {
            Ok(LightSpeed::Finite(c))
        } else {
            Err(Error::Invalid(format!("speed of light must be finite and >= 1, got {c}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, LightSpeed::Finite(_))
    }

    /// The value as a float, `f64::INFINITY` for the non-relativistic branch.
    pub fn value(&self) -> f64 {
        match self {
            LightSpeed::Finite(c) => *c,
            LightSpeed::Infinite => f64::INFINITY,
        }
    }
}

/// Interpolation weight between the relativistic (1) and classical (0) velocity.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Theta(f64);

impl Theta {
    pub const RELATIVISTIC: Theta = Theta(1.0);
    pub const CLASSICAL: Theta = Theta(0.0);

    pub fn new(theta: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&theta) {
            Ok(Theta(theta))
        } else {
            Err(Error::Invalid(format!("theta must lie in [0, 1], got {theta}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Rest momentum factor `sqrt(1 + |p|^2/c^2)`.
pub fn gamma(p: Momentum3, c: LightSpeed) -> f64 {
    match c {
        LightSpeed::Infinite => 1.0,
        LightSpeed::Finite(c) => libm::hypot(1.0, (p * (1.0 / c)).norm()),
    }
}

pub fn velocity(p: Momentum3, c: LightSpeed) -> Velocity3 {
    match c {
        LightSpeed::Infinite => p,
        LightSpeed::Finite(_) => p * (1.0 / gamma(p, c)),
    }
}

/// Inverse of [`velocity`], defined for `|q| < c`.
pub fn inverse_velocity(q: Velocity3, c: LightSpeed) -> Result<Momentum3> {
    match c {
        LightSpeed::Infinite => Ok(q),
        LightSpeed::Finite(c) => {
            let r = q.norm() / c;
            if !(r < 1.0) {
                return Err(Error::Domain(format!("velocity magnitude {} is not below c = {c}", q.norm())));
            }
            Ok(q * (1.0 / libm::sqrt((1.0 - r) * (1.0 + r))))
        }
    }
}

/// `theta * v_c(p) + (1 - theta) * p`.
pub fn interpolated_velocity(p: Momentum3, c: LightSpeed, theta: Theta) -> Velocity3 {
    velocity(p, c) * theta.0 + p * (1.0 - theta.0)
}

/// `theta * A_c(p) + (1 - theta) * I`.
pub fn velocity_jacobian(p: Momentum3, c: LightSpeed, theta: Theta) -> Mat3 {
    let LightSpeed::Finite(cv) = c else {
        return Mat3::IDENTITY;
    };
    let g = gamma(p, c);
    let q = p * (1.0 / cv);
    let a = Mat3::IDENTITY.scale(1.0 / g).sub(&Mat3::outer(q, q).scale(1.0 / (g * g * g)));
    a.scale(theta.0).add(&Mat3::IDENTITY.scale(1.0 - theta.0))
}

/// Closed-form spectrum of [`velocity_jacobian`]: two transverse eigenvalues
/// `theta/gamma + 1 - theta` and the longitudinal one `theta/gamma^3 + 1 - theta`.
pub fn jacobian_eigenvalues(p: Momentum3, c: LightSpeed, theta: Theta) -> [f64; 3] {
    let g = gamma(p, c);
    let t = theta.0;
    let transverse = t / g + (1.0 - t);
    [transverse, transverse, t / (g * g * g) + (1.0 - t)]
}

pub fn jacobian_determinant(p: Momentum3, c: LightSpeed, theta: Theta) -> f64 {
    let [a, b, l] = jacobian_eigenvalues(p, c, theta);
    a * b * l
}

/// `d A^{ij} / d p_k` (indices 0-based), fully symmetric in `(i, j, k)`.
pub fn jacobian_derivative(p: Momentum3, c: LightSpeed, i: usize, j: usize, k: usize) -> f64 {
    let LightSpeed::Finite(cv) = c else {
        return 0.0;
    };
    let mut idx = [i, j, k];
    idx.sort_unstable();
    let [i, j, k] = idx;
    let g = gamma(p, c);
    let q = p * (1.0 / cv);
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let bracket = d(i, j) * q[k] + d(i, k) * q[j] + d(j, k) * q[i] - 3.0 * q[i] * q[j] * q[k] / (g * g);
    -bracket / (cv * g * g * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::Vec3;
    use proptest::prelude::*;

    const C1: LightSpeed = LightSpeed::Finite(1.0);

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(velocity(Vec3::ZERO, C1), Vec3::ZERO);
        let p = Vec3::new(3.0, 0.0, 0.0);
        assert_eq!(velocity(p, LightSpeed::Infinite), p);
        assert!(close(velocity(p, C1)[0], 3.0 / libm::sqrt(10.0), 1e-15));
        assert!(close(velocity(p, C1)[0], 0.9486832981, 1e-10));
    }

    #[test]
    fn inverse_velocity_examples() {
        for c in [C1, LightSpeed::Finite(7.0), LightSpeed::Infinite] {
            assert_eq!(inverse_velocity(Vec3::ZERO, c).unwrap(), Vec3::ZERO);
        }
        let p = inverse_velocity(Vec3::new(0.6, 0.0, 0.0), C1).unwrap();
        assert!(close(p[0], 0.75, 1e-15) && p[1] == 0.0 && p[2] == 0.0);
        assert!(matches!(inverse_velocity(Vec3::new(1.0, 0.0, 0.0), C1), Err(Error::Domain(_))));
        assert!(matches!(
            inverse_velocity(Vec3::new(0.0, 3.0, 4.0), LightSpeed::Finite(5.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(Vec3::ZERO, C1), 1.0);
        assert!(close(
            gamma(Vec3::new(2.0, 0.0, 0.0), LightSpeed::Finite(2.0)),
            libm::sqrt(2.0),
            1e-15
        ));
        assert_eq!(gamma(Vec3::new(7.0, 1.0, 3.0), LightSpeed::Infinite), 1.0);
    }

    #[test]
    fn gamma_does_not_overflow() {
        let p = Vec3::new(1e300, 1e300, 0.0);
        let g = gamma(p, C1);
        assert!(g.is_finite() && close(g / (1e300 * libm::sqrt(2.0)), 1.0, 1e-14));
        assert!(velocity(p, C1).norm() <= 1.0 + 1e-15);
    }

    #[test]
    fn jacobian_examples() {
        assert_eq!(velocity_jacobian(Vec3::ZERO, C1, Theta::RELATIVISTIC), Mat3::IDENTITY);
        assert_eq!(
            velocity_jacobian(Vec3::new(4.0, -2.0, 9.0), LightSpeed::Infinite, Theta::RELATIVISTIC),
            Mat3::IDENTITY
        );
        assert_eq!(velocity_jacobian(Vec3::new(4.0, -2.0, 9.0), C1, Theta::CLASSICAL), Mat3::IDENTITY);

        let a = velocity_jacobian(Vec3::new(1.0, 0.0, 0.0), C1, Theta::RELATIVISTIC);
        let s2 = libm::sqrt(2.0);
        let expected = [1.0 / (2.0 * s2), 1.0 / s2, 1.0 / s2];
        for (i, (row, d)) in a.0.iter().zip(expected).enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { d } else { 0.0 };
                assert!(close(*v, e, 1e-15));
            }
        }
    }

    #[test]
    fn determinant_examples() {
        for c in [C1, LightSpeed::Finite(3.0), LightSpeed::Infinite] {
            assert_eq!(jacobian_determinant(Vec3::ZERO, c, Theta::new(0.3).unwrap()), 1.0);
        }
        assert_eq!(jacobian_determinant(Vec3::new(5.0, 1.0, 2.0), C1, Theta::CLASSICAL), 1.0);
        let d = jacobian_determinant(Vec3::new(1.0, 0.0, 0.0), C1, Theta::RELATIVISTIC);
        assert!(close(d, libm::pow(2.0, -2.5), 1e-15));
        assert!(close(d, 0.1767766953, 1e-10));
    }

    #[test]
    fn derivative_examples() {
        for (i, j, k) in [(0, 0, 0), (0, 1, 2), (2, 2, 1)] {
            assert_eq!(jacobian_derivative(Vec3::ZERO, C1, i, j, k), 0.0);
            assert_eq!(jacobian_derivative(Vec3::new(1.0, 2.0, 3.0), LightSpeed::Infinite, i, j, k), 0.0);
        }
    }

    #[test]
    fn theta_rejects_out_of_range() {
        assert!(Theta::new(-0.1).is_err());
        assert!(Theta::new(1.5).is_err());
        assert!(LightSpeed::finite(0.5).is_err());
        assert!(LightSpeed::finite(f64::NAN).is_err());
    }

    fn momentum() -> impl Strategy<Value = Vec3> {
        (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(a, b, c)| Vec3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_difference(p in momentum(), c in 1.0..20.0f64) {
            let c = LightSpeed::Finite(c);
            let h = 1e-5;
            for k in 0..3 {
                let mut plus = p;
                plus[k] += h;
                let mut minus = p;
                minus[k] -= h;
                let ap = velocity_jacobian(plus, c, Theta::RELATIVISTIC);
                let am = velocity_jacobian(minus, c, Theta::RELATIVISTIC);
                for i in 0..3 {
                    for j in 0..3 {
                        let fd = (ap.0[i][j] - am.0[i][j]) / (2.0 * h);
                        let exact = jacobian_derivative(p, c, i, j, k);
                        prop_assert!((fd - exact).abs() < 1e-7, "{fd} vs {exact}");
                        prop_assert_eq!(exact, jacobian_derivative(p, c, k, i, j));
                        prop_assert_eq!(exact, jacobian_derivative(p, c, j, k, i));
                    }
                }
            }
        }

        #[test]
        fn inverse_roundtrip(p in momentum(), c in 1.0..30.0f64) {
            let c = LightSpeed::Finite(c);
            let back = inverse_velocity(velocity(p, c), c).unwrap();
            prop_assert!((back - p).norm() <= 1e-12 * p.norm().max(1e-300));
        }

        #[test]
        fn speed_below_light(p in momentum(), c in 1.0..30.0f64) {
            let lc = LightSpeed::Finite(c);
            prop_assert!(velocity(p, lc).norm() < c);
        }

        #[test]
        fn jacobian_symmetric_and_spd(p in momentum(), c in 1.0..30.0f64, t in 0.0..=1.0f64) {
            let a = velocity_jacobian(p, LightSpeed::Finite(c), Theta::new(t).unwrap());
            prop_assert_eq!(a, a.transpose());
            let d = a.determinant();
            let closed = jacobian_determinant(p, LightSpeed::Finite(c), Theta::new(t).unwrap());
            prop_assert!((d - closed).abs() <= 1e-12 * closed);
            prop_assert!(closed > 0.0);
        }

        #[test]
        fn jacobian_contracts_momentum(p in momentum(), c in 1.0..30.0f64) {
            let c = LightSpeed::Finite(c);
            let g = gamma(p, c);
            let ap = velocity_jacobian(p, c, Theta::RELATIVISTIC).mul_vec(p);
            let expected = p * (1.0 / (g * g * g));
            prop_assert!((ap - expected).norm() <= 1e-12 * expected.norm().max(1e-300));
        }

        #[test]
        fn velocity_deviation_bound(p in momentum(), c in 1.0..30.0f64) {
            let r2 = p.norm_sq() / (c * c);
            let dev = (velocity(p, LightSpeed::Finite(c)) - p).norm();
            prop_assert!(dev <= p.norm() * r2.min(1.0) * (1.0 + 1e-12));
        }
    }
}

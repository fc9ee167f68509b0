//! Softened short-range interaction kernels.
//!
//! Both kernels are radial functions of the softened distance
//! `s = sqrt(|r|^2 + eps^2)`, so `grad w = u(s) r` and
//! `hess w = u(s) I + (u'(s)/s) r r^T`.

use crate::error::{Error, Result};
use crate::vec3::{Mat3, Position3, Vec3};
use alloc::format;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialKind {
    /// `w(r) = |r|^-alpha`.
    PowerLaw,
    /// `w(r) = exp(-a |r|) / |r|` with screening rate `a > 0`.
    Yukawa { screening: f64 },
}

/// Sign of the coupling constant in `E = beta * grad w * rho`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    Attractive,
    Free,
    Repulsive,
}

impl Coupling {
    pub fn from_sign(beta: i32) -> Result<Self> {
        match beta {
            1 => Ok(Coupling::Attractive),
            0 => Ok(Coupling::Free),
            -1 => Ok(Coupling::Repulsive),
            _ => Err(Error::Invalid(format!("beta must be -1, 0 or 1, got {beta}"))),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Coupling::Attractive => 1.0,
            Coupling::Free => 0.0,
            Coupling::Repulsive => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub alpha: f64,
    pub coupling: Coupling,
    /// Softening length at t = 0.
    pub epsilon: f64,
    /// Softening grows as `sqrt(epsilon^2 + (growth * t)^2)`; zero keeps it fixed.
    pub softening_growth: f64,
    /// Admit `alpha` in `(0, 1]`, outside the short-range regime.
    pub out_of_scope: bool,
}

impl PotentialSpec {
    pub fn power_law(alpha: f64, coupling: Coupling, epsilon: f64) -> Result<Self> {
        Self {
            kind: PotentialKind::PowerLaw,
            alpha,
            coupling,
            epsilon,
            softening_growth: 0.0,
            out_of_scope: false,
        }
        .validated()
    }

    pub fn yukawa(screening: f64, alpha: f64, coupling: Coupling, epsilon: f64) -> Result<Self> {
        Self {
            kind: PotentialKind::Yukawa { screening },
            alpha,
            coupling,
            epsilon,
            softening_growth: 0.0,
            out_of_scope: false,
        }
        .validated()
    }

    pub fn with_softening_growth(mut self, growth: f64) -> Result<Self> {
        self.softening_growth = growth;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok_alpha = if self.out_of_scope {
            self.alpha > 0.0 && self.alpha < 2.0
        } else {
            self.alpha > 1.0 && self.alpha < 2.0
        };
        if !ok_alpha {
            return Err(Error::Invalid(format!(
                "alpha = {} outside the short-range range (1, 2); set the out-of-scope flag to admit (0, 1]",
                self.alpha
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Invalid(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !(self.softening_growth >= 0.0 && self.softening_growth.is_finite()) {
            return Err(Error::Invalid(format!(
                "softening growth must be finite and >= 0, got {}",
                self.softening_growth
            )));
        }
        if let PotentialKind::Yukawa { screening } = self.kind {
            if !(screening > 0.0 && screening.is_finite()) {
                return Err(Error::Invalid(format!("Yukawa screening must be > 0, got {screening}")));
            }
        }
        Ok(self)
    }

    pub fn beta(&self) -> f64 {
        self.coupling.sign()
    }

    /// Softening length in effect at time `t`.
    pub fn softening_at(&self, t: f64) -> f64 {
        if self.softening_growth == 0.0 {
            self.epsilon
        } else {
            libm::hypot(self.epsilon, self.softening_growth * t)
        }
    }

    /// `grad w_eps(r)` at the base softening.
    pub fn grad_kernel(&self, r: Position3) -> Result<Vec3> {
        if self.epsilon == 0.0 && r == Vec3::ZERO {
            return Err(Error::Domain("unsoftened kernel evaluated at r = 0".into()));
        }
        Ok(self.grad_kernel_eps(r, self.epsilon))
    }

    /// `grad w` with softening `eps`. At `r = 0` with `eps = 0` this returns a
    /// non-finite vector; callers guard that case.
    pub fn grad_kernel_eps(&self, r: Position3, eps: f64) -> Vec3 {
        let (u, _) = self.radial(r.norm_sq() + eps * eps, false);
        r * u
    }

    /// Hessian of the softened kernel.
    pub fn hessian_kernel_eps(&self, r: Position3, eps: f64) -> Mat3 {
        let (u, up_over_s) = self.radial(r.norm_sq() + eps * eps, true);
        Mat3::IDENTITY.scale(u).add(&Mat3::outer(r, r).scale(up_over_s))
    }

    /// Kernel value `w_eps(r)`.
    pub fn kernel_eps(&self, r: Position3, eps: f64) -> f64 {
        let s2 = r.norm_sq() + eps * eps;
        match self.kind {
            PotentialKind::PowerLaw => libm::pow(s2, -0.5 * self.alpha),
            PotentialKind::Yukawa { screening } => {
                let s = libm::sqrt(s2);
                libm::exp(-screening * s) / s
            }
        }
    }

    /// `(u(s), u'(s)/s)` for the squared softened distance `s2`.
    fn radial(&self, s2: f64, second: bool) -> (f64, f64) {
        match self.kind {
            PotentialKind::PowerLaw => {
                let a = self.alpha;
                let base = libm::pow(s2, -0.5 * (a + 2.0));
                let u = -a * base;
                let up = if second { a * (a + 2.0) * base / s2 } else { 0.0 };
                (u, up)
            }
            PotentialKind::Yukawa { screening: k } => {
                let s = libm::sqrt(s2);
                let e = libm::exp(-k * s);
                let s3 = s2 * s;
                let u = -e * (k * s + 1.0) / s3;
                let up = if second {
                    e * (k * k * s2 + 3.0 * k * s + 3.0) / (s3 * s2)
                } else {
                    0.0
                };
                (u, up)
            }
        }
    }
}

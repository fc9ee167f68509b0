//! Force fields `E(t, x)`: analytic closed forms and direct ensemble sums.

use crate::ensemble::ParticleEnsemble;
use crate::potential::PotentialSpec;
use crate::sum::CompensatedSum;
use crate::vec3::{Mat3, Position3, Vec3};

/// A time-dependent force field with its spatial Jacobian.
pub trait ForceField: Sync {
    fn field(&self, t: f64, x: Position3) -> Vec3;

    /// `d E_i / d x_j`.
    fn gradient(&self, t: f64, x: Position3) -> Mat3;

    /// Closed time interval on which the field is defined.
    fn time_domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

impl<F: ForceField + ?Sized> ForceField for &F {
    fn field(&self, t: f64, x: Position3) -> Vec3 {
        (**self).field(t, x)
    }
    fn gradient(&self, t: f64, x: Position3) -> Mat3 {
        (**self).gradient(t, x)
    }
    fn time_domain(&self) -> (f64, f64) {
        (**self).time_domain()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl ForceField for ZeroField {
    fn field(&self, _: f64, _: Position3) -> Vec3 {
        Vec3::ZERO
    }
    fn gradient(&self, _: f64, _: Position3) -> Mat3 {
        Mat3::ZERO
    }
}

/// Spatially constant field `amplitude * direction * (1+t)^(-alpha-1)`, for `t > -1`.
#[derive(Clone, Copy, Debug)]
pub struct UniformDecayingField {
    pub amplitude: f64,
    pub alpha: f64,
    pub direction: Vec3,
}

impl UniformDecayingField {
    pub fn new(amplitude: f64, alpha: f64) -> Self {
        Self {
            amplitude,
            alpha,
            direction: Vec3::unit(0),
        }
    }

    /// Closed-form momentum `p + (amplitude/alpha) (1 - (1+t)^-alpha) e`.
    pub fn momentum_at(&self, p: Vec3, t: f64) -> Vec3 {
        p + self.direction * (self.amplitude / self.alpha * (1.0 - libm::pow(1.0 + t, -self.alpha)))
    }

    /// `int_0^t E(s) ds`.
    pub fn impulse(&self, t: f64) -> Vec3 {
        self.momentum_at(Vec3::ZERO, t)
    }
}

impl ForceField for UniformDecayingField {
    fn field(&self, t: f64, _: Position3) -> Vec3 {
        self.direction * (self.amplitude * libm::pow(1.0 + t, -self.alpha - 1.0))
    }
    fn gradient(&self, _: f64, _: Position3) -> Mat3 {
        Mat3::ZERO
    }
    fn time_domain(&self) -> (f64, f64) {
        (-1.0 + 1e-12, f64::INFINITY)
    }
}

/// Field of a fixed point source whose core widens linearly in time:
/// `amplitude * grad w_{s(t)}(x - center)` for the power-law kernel with
/// `s(t) = core * (1 + t)`. Decays like `(1+t)^-(alpha+1)` with gradient
/// `(1+t)^-(alpha+2)`, and varies in space, unlike [`UniformDecayingField`].
#[derive(Clone, Copy, Debug)]
pub struct SpreadingSourceField {
    pub amplitude: f64,
    pub alpha: f64,
    pub core: f64,
    pub center: Vec3,
}

impl SpreadingSourceField {
    fn softening(&self, t: f64) -> f64 {
        self.core * (1.0 + t)
    }

    fn kernel(&self) -> PotentialSpec {
        PotentialSpec {
            kind: crate::potential::PotentialKind::PowerLaw,
            alpha: self.alpha,
            coupling: crate::potential::Coupling::Attractive,
            epsilon: self.core,
            softening_growth: 0.0,
            out_of_scope: true,
        }
    }
}

impl ForceField for SpreadingSourceField {
    fn field(&self, t: f64, x: Position3) -> Vec3 {
        self.kernel().grad_kernel_eps(x - self.center, self.softening(t)) * self.amplitude
    }
    fn gradient(&self, t: f64, x: Position3) -> Mat3 {
        self.kernel()
            .hessian_kernel_eps(x - self.center, self.softening(t))
            .scale(self.amplitude)
    }
    fn time_domain(&self) -> (f64, f64) {
        (-1.0 + 1e-12, f64::INFINITY)
    }
}

/// `beta * sum_i w_i grad w_eps(x - x_i)` at softening `eps`, summed in order
/// with compensation.
pub fn field_from_sources(spec: &PotentialSpec, eps: f64, sources: &[Position3], weights: &[f64], x: Position3) -> Vec3 {
    let beta = spec.beta();
    if beta == 0.0 {
        return Vec3::ZERO;
    }
    let mut acc = [CompensatedSum::new(); 3];
    for (y, w) in sources.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let r = x - *y;
        if eps == 0.0 && r == Vec3::ZERO {
            continue;
        }
        let g = spec.grad_kernel_eps(r, eps);
        for k in 0..3 {
            acc[k].add(w * g[k]);
        }
    }
    Vec3([acc[0].value(), acc[1].value(), acc[2].value()]) * beta
}

/// Analytic Jacobian of [`field_from_sources`].
pub fn gradient_from_sources(spec: &PotentialSpec, eps: f64, sources: &[Position3], weights: &[f64], x: Position3) -> Mat3 {
    let beta = spec.beta();
    if beta == 0.0 {
        return Mat3::ZERO;
    }
    let mut acc = [[CompensatedSum::new(); 3]; 3];
    for (y, w) in sources.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let r = x - *y;
        if eps == 0.0 && r == Vec3::ZERO {
            continue;
        }
        let h = spec.hessian_kernel_eps(r, eps);
        for (row, hrow) in acc.iter_mut().zip(h.0) {
            for (a, v) in row.iter_mut().zip(hrow) {
                a.add(w * v);
            }
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = acc[i][j].value();
        }
    }
    // Symmetrize the rounding; the exact sum is symmetric.
    let m = Mat3(m);
    m.add(&m.transpose()).scale(0.5 * beta)
}

/// Mean-field force of an ensemble at the spec's base softening.
pub fn field_from_ensemble(spec: &PotentialSpec, ensemble: &ParticleEnsemble, x: Position3) -> Vec3 {
    field_from_sources(spec, spec.epsilon, ensemble.positions(), ensemble.weights(), x)
}

pub fn field_gradient_from_ensemble(spec: &PotentialSpec, ensemble: &ParticleEnsemble, x: Position3) -> Mat3 {
    gradient_from_sources(spec, spec.epsilon, ensemble.positions(), ensemble.weights(), x)
}

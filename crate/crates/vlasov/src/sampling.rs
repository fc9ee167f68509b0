//! Built-in initial data families and seeded sampling.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use vlasov_core::{ParticleEnsemble, PhaseState, Vec3};

/// Weight exponent on `<x>` in the norm proxy.
pub const SPATIAL_WEIGHT_EXPONENT: f64 = 3.5;

/// Separable, radially symmetric unit-mass densities `phi(|x|) psi(|p|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataFamily {
    Gaussian {
        sigma_x: f64,
        sigma_p: f64,
    },
    /// `(1 - r^2/R^2)^3` on a ball of radius `R`, in each of x and p.
    Bump {
        radius_x: f64,
        radius_p: f64,
    },
}

impl Default for DataFamily {
    fn default() -> Self {
        DataFamily::Gaussian {
            sigma_x: 1.0,
            sigma_p: 1.0,
        }
    }
}

/// Unit-mass radial profile in three dimensions: value and radial derivative.
fn gaussian_profile(r: f64, sigma: f64) -> (f64, f64) {
    let v = (2.0 * PI * sigma * sigma).powf(-1.5) * (-0.5 * r * r / (sigma * sigma)).exp();
    (v, -r / (sigma * sigma) * v)
}

fn bump_profile(r: f64, radius: f64) -> (f64, f64) {
    if r >= radius {
        return (0.0, 0.0);
    }
    let norm = 4.0 * PI * radius.powi(3) * 16.0 / 315.0;
    let u = 1.0 - r * r / (radius * radius);
    (u.powi(3) / norm, -6.0 * r / (radius * radius) * u * u / norm)
}

fn japanese(r: f64) -> f64 {
    (1.0 + r * r).sqrt()
}

impl DataFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let good = match *self {
            DataFamily::Gaussian { sigma_x, sigma_p } => ok(sigma_x) && ok(sigma_p),
            DataFamily::Bump { radius_x, radius_p } => ok(radius_x) && ok(radius_p),
        };
        if good {
            Ok(())
        } else {
            Err(Error::Validation(format!("data family scales must be positive: {self:?}")))
        }
    }

    fn profile_x(&self, r: f64) -> (f64, f64) {
        match *self {
            DataFamily::Gaussian { sigma_x, .. } => gaussian_profile(r, sigma_x),
            DataFamily::Bump { radius_x, .. } => bump_profile(r, radius_x),
        }
    }

    fn profile_p(&self, q: f64) -> (f64, f64) {
        match *self {
            DataFamily::Gaussian { sigma_p, .. } => gaussian_profile(q, sigma_p),
            DataFamily::Bump { radius_p, .. } => bump_profile(q, radius_p),
        }
    }

    fn scales(&self) -> (f64, f64) {
        match *self {
            DataFamily::Gaussian { sigma_x, sigma_p } => (sigma_x, sigma_p),
            DataFamily::Bump { radius_x, radius_p } => (radius_x, radius_p),
        }
    }

    /// Unit-mass density at `(x, p)`.
    pub fn density(&self, z: &PhaseState) -> f64 {
        self.profile_x(z.x.norm()).0 * self.profile_p(z.p.norm()).0
    }

    /// `<x>^3.5 <p>^8 f + <x>^3.5 <p>^9 |grad f|` at `(r, q)` for unit mass.
    fn proxy_terms(&self, r: f64, q: f64) -> (f64, f64) {
        let (fx, dfx) = self.profile_x(r);
        let (fp, dfp) = self.profile_p(q);
        let wx = japanese(r).powf(SPATIAL_WEIGHT_EXPONENT);
        let wp = japanese(q);
        let grad = (dfx * fp).hypot(fx * dfp);
        (wx * wp.powi(8) * fx * fp, wx * wp.powi(9) * grad)
    }

    /// Norm proxy of the unit-mass density: each weighted sup is taken over a
    /// fine `(|x|, |p|)` scan.
    pub fn unit_norm_proxy(&self) -> f64 {
        let (sx, sp) = self.scales();
        let (rmax, qmax) = match self {
            DataFamily::Gaussian { .. } => (12.0 * sx, 12.0 * sp),
            DataFamily::Bump { .. } => (sx, sp),
        };
        let n = 1200;
        let (mut a, mut b) = (0.0_f64, 0.0_f64);
        for i in 0..=n {
            let r = rmax * i as f64 / n as f64;
            for j in 0..=n {
                let q = qmax * j as f64 / n as f64;
                let (u, v) = self.proxy_terms(r, q);
                a = a.max(u);
                b = b.max(v);
            }
        }
        a + b
    }

    fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
        loop {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r2 = v.norm_sq();
            if r2 < 1.0 && rng.gen::<f64>() < (1.0 - r2).powi(3) {
                return v * radius;
            }
        }
    }

    fn sample_gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
        Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * sigma
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> PhaseState {
        match *self {
            DataFamily::Gaussian { sigma_x, sigma_p } => {
                let x = Self::sample_gaussian(rng, sigma_x);
                PhaseState::new(x, Self::sample_gaussian(rng, sigma_p))
            }
            DataFamily::Bump { radius_x, radius_p } => {
                let x = Self::sample_ball(rng, radius_x);
                PhaseState::new(x, Self::sample_ball(rng, radius_p))
            }
        }
    }
}

/// Initial datum: a family scaled so that its norm proxy equals `eta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub family: DataFamily,
    pub eta: f64,
}

impl InitialData {
    /// Total mass of the datum.
    pub fn mass(&self) -> f64 {
        self.eta / self.family.unit_norm_proxy()
    }
}

#[derive(Clone, Debug)]
pub struct SampledData {
    pub ensemble: ParticleEnsemble,
    pub mass: f64,
    /// Norm proxy of the continuum datum (equals `eta`).
    pub norm_proxy: f64,
    /// Largest norm-proxy term evaluated at the sampled points.
    pub empirical_proxy: f64,
}

/// `n` seeded Monte-Carlo samples with equal weights summing to the mass.
pub fn sample_initial_data(data: &InitialData, n: usize, seed: u64) -> Result<SampledData> {
    data.family.validate()?;
    if !(data.eta >= 0.0 && data.eta.is_finite()) {
        return Err(Error::Validation(format!("eta must be nonnegative, got {}", data.eta)));
    }
    let unit = data.family.unit_norm_proxy();
    let mass = data.eta / unit;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<PhaseState> = (0..n).map(|_| data.family.sample(&mut rng)).collect();
    let empirical_proxy = states
        .iter()
        .map(|z| {
            let (a, b) = data.family.proxy_terms(z.x.norm(), z.p.norm());
            mass * (a + b)
        })
        .fold(0.0_f64, f64::max);
    let w = if n == 0 { 0.0 } else { mass / n as f64 };
    let ensemble = ParticleEnsemble::from_states(&states, vec![w; n])?;
    Ok(SampledData {
        ensemble,
        mass,
        norm_proxy: mass * unit,
        empirical_proxy,
    })
}

//! Scattering diagnostics: pullback profiles, limiting states, binned L1
//! rates, the non-relativistic limit sweep, and dispersive decay of the free
//! flow.

use crate::error::{Error, Result};
use crate::sampling::sample_initial_data;
use crate::selfconsistent::{picard_iterate, probe_values, PicardState, SolverConfig};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use vlasov_core::field::ForceField;
use vlasov_core::flows::{free_flow_inverse, limit_with_decades, DecadeIncrements, TimeGrid, WaveTime};
use vlasov_core::phase_grid::{displacement_bound, BinnedDistribution, PhaseGridSpec};
use vlasov_core::quadrature::adaptive_simpson;
use vlasov_core::ratefit::{fit_power_law, RateFit};
use vlasov_core::relkin::{gamma, velocity};
use vlasov_core::{LightSpeed, ParticleEnsemble, PhaseState, Theta, Vec3};

/// Relative change beyond which a halved bin width flags under-resolution.
pub const REFINEMENT_TOLERANCE: f64 = 0.1;

/// Particles at `W(t)` images: positions `X - t v_c(P)`, weights unchanged.
pub fn pullback_profile(ensemble: &ParticleEnsemble, c: LightSpeed, t: f64) -> Result<ParticleEnsemble> {
    let states: Vec<PhaseState> = ensemble.states().map(|s| free_flow_inverse(s, c, t)).collect();
    Ok(ensemble.with_states(&states)?)
}

#[derive(Clone, Debug)]
pub struct LimitingState {
    pub ensemble: ParticleEnsemble,
    /// Largest fitted tail bound over particles.
    pub max_tail_bound: f64,
    /// `sup_i |P+_i - p_i|`.
    pub sup_momentum_shift: f64,
    /// Particles whose own decade increments grew; their images are kept.
    pub unsettled: usize,
}

/// Pushes every initial particle through the limiting wave operator along
/// `grid`; weights unchanged. Convergence is judged on the summed decade
/// increments of the ensemble: a particle that only feels the cloud late can
/// move more in the last decade than the one before without the limit
/// failing to exist, while a divergent field moves them all.
pub fn limiting_state<F: ForceField>(
    initial: &ParticleEnsemble,
    field: &F,
    c: LightSpeed,
    grid: &TimeGrid,
    alpha: f64,
) -> Result<LimitingState> {
    let results = (0..initial.len())
        .into_par_iter()
        .map(|i| limit_with_decades(initial.state(i), field, c, grid, alpha))
        .collect::<vlasov_core::Result<Vec<_>>>()?;
    let unsettled = results.iter().filter(|(_, d)| !d.settles()).count();
    if let Some((_, first)) = results.first() {
        let total = results.iter().fold(
            DecadeIncrements {
                earlier: 0.0,
                later: 0.0,
                allowance: first.allowance,
                floor: 0.0,
            },
            |acc, (_, d)| DecadeIncrements {
                earlier: acc.earlier + d.earlier,
                later: acc.later + d.later,
                floor: acc.floor + d.floor,
                ..acc
            },
        );
        total.check()?;
    }
    let images: Vec<_> = results.into_iter().map(|(img, _)| img).collect();
    let mut max_tail_bound = 0.0_f64;
    let mut sup_momentum_shift = 0.0_f64;
    let states: Vec<PhaseState> = images
        .iter()
        .map(|img| {
            if let WaveTime::Plus { tail_bound, .. } = img.time {
                max_tail_bound = max_tail_bound.max(tail_bound);
            }
            sup_momentum_shift = sup_momentum_shift.max((img.output.p - img.input.p).norm());
            img.output
        })
        .collect();
    Ok(LimitingState {
        ensemble: initial.with_states(&states)?,
        max_tail_bound,
        sup_momentum_shift,
        unsettled,
    })
}

/// Limiting state of a converged run along its own snapshot schedule.
pub fn limiting_state_of(run: &PicardState, alpha: f64) -> Result<LimitingState> {
    limiting_state(&run.initial, &run.field, run.light_speed, &run.schedule.grid, alpha)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScatterRow {
    pub t: f64,
    pub l1: f64,
    pub l1_refined: f64,
    pub displacement_bound: f64,
    /// Weighted mean of `|X - X+|` and `|P - P+|` between pullback and limit.
    pub mean_position_gap: f64,
    pub mean_momentum_gap: f64,
}

#[derive(Clone, Debug)]
pub struct ScatterReport {
    pub rows: Vec<ScatterRow>,
    pub fit: Option<RateFit>,
    pub position_gap_fit: Option<RateFit>,
    pub momentum_gap_fit: Option<RateFit>,
    /// Distances nonincreasing over the window.
    pub monotone: bool,
    /// Halving bin widths changes every distance by less than 10%.
    pub refinement_stable: bool,
    /// Binned distance never exceeds the displacement bound.
    pub bound_holds: bool,
}

fn fit_rows(pts: &[(f64, f64)]) -> Option<RateFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().filter(|(_, y)| *y > 0.0).map(|(t, y)| (1.0 + t, *y)).unzip();
    fit_power_law(&xs, &ys).ok()
}

/// `|g_c(t) - f_c+|` on the shared phase grid at every snapshot time inside
/// `window`, with its log-log fit against `1 + t`.
pub fn scattering_rate(run: &PicardState, limit: &LimitingState, window: (f64, f64), spec: &PhaseGridSpec) -> Result<ScatterReport> {
    let t_max = run.schedule.grid.end();
    if window.1 * 4.0 > t_max * (1.0 + 1e-12) {
        return Err(Error::Validation(format!(
            "limit horizon {t_max} must be at least 4 x the window end {}",
            window.1
        )));
    }
    let plus = BinnedDistribution::bin(&limit.ensemble, *spec)?;
    let plus_fine = BinnedDistribution::bin(&limit.ensemble, spec.refined())?;
    let weights = run.initial.weights();
    let total = run.initial.total_weight();
    let ks: Vec<usize> = (0..run.times().len())
        .filter(|&k| run.times()[k] >= window.0 * (1.0 - 1e-12) && run.times()[k] <= window.1 * (1.0 + 1e-12))
        .collect();
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let t = run.times()[k];
        let g = pullback_profile(&run.ensemble_at(k)?, run.light_speed, t)?;
        let l1 = BinnedDistribution::bin(&g, *spec)?.l1_distance(&plus)?;
        let l1_refined = BinnedDistribution::bin(&g, spec.refined())?.l1_distance(&plus_fine)?;
        let from: Vec<PhaseState> = g.states().collect();
        let to: Vec<PhaseState> = limit.ensemble.states().collect();
        let bound = displacement_bound(spec, weights, &from, &to);
        let (mut px, mut pp) = (0.0, 0.0);
        for ((a, b), w) in from.iter().zip(&to).zip(weights) {
            px += w * (a.x - b.x).norm();
            pp += w * (a.p - b.p).norm();
        }
        let norm = if total > 0.0 { 1.0 / total } else { 0.0 };
        rows.push(ScatterRow {
            t,
            l1,
            l1_refined,
            displacement_bound: bound,
            mean_position_gap: px * norm,
            mean_momentum_gap: pp * norm,
        });
    }
    let col = |f: fn(&ScatterRow) -> f64| rows.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();
    let scale = rows.iter().map(|r| r.l1).fold(0.0_f64, f64::max);
    Ok(ScatterReport {
        fit: fit_rows(&col(|r| r.l1)),
        position_gap_fit: fit_rows(&col(|r| r.mean_position_gap)),
        momentum_gap_fit: fit_rows(&col(|r| r.mean_momentum_gap)),
        monotone: rows.windows(2).all(|w| w[1].l1 <= w[0].l1),
        refinement_stable: rows
            .iter()
            .all(|r| (r.l1_refined - r.l1).abs() <= REFINEMENT_TOLERANCE * r.l1.max(1e-300)),
        bound_holds: rows.iter().all(|r| r.l1 <= r.displacement_bound * (1.0 + 1e-12) + 1e-15 * scale),
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub c: f64,
    /// `sup_{i,k} |W_c(t_k) z_i - W_inf(t_k) z_i| / <p_i>^3`.
    pub wave_difference: f64,
    /// `sup_{k, probe} <t_k>^(alpha+1) |E_c - E_inf|`.
    pub field_difference: f64,
    /// Binned L1 of `f_c+` against `f_inf+`.
    pub scattering_difference: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub wave_fit: Option<RateFit>,
    pub field_fit: Option<RateFit>,
    pub scattering_fit: Option<RateFit>,
    /// Each metric nonincreasing in `c`, in the order above.
    pub monotone: [bool; 3],
    pub iterations: Vec<(f64, usize)>,
}

fn finite_speeds(speeds: &[LightSpeed]) -> Result<Vec<f64>> {
    let mut finite: Vec<f64> = speeds.iter().map(|c| c.value()).filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    finite.dedup();
    if finite.len() < 3 || !speeds.contains(&LightSpeed::Infinite) {
        return Err(Error::Validation(format!(
            "nr-limit needs at least 3 distinct finite light speeds plus inf, got {speeds:?}"
        )));
    }
    Ok(finite)
}

/// Runs the solver for `c = inf` and every finite `c` on identical data and
/// compares wave operators, fields, and scattering states. Members run one
/// after another, each parallel inside, so only two runs are held at once.
pub fn nr_limit_sweep(cfg: &SolverConfig, speeds: &[LightSpeed]) -> Result<SweepReport> {
    let finite = finite_speeds(speeds)?;
    let alpha = cfg.potential.alpha;
    let data = sample_initial_data(&cfg.data, cfg.particles, cfg.seed)?;
    let reference = picard_iterate(cfg, LightSpeed::Infinite, &data)?;
    let spec = reference.schedule.phase_grid(&cfg.grid)?;
    let ref_limit = limiting_state_of(&reference, alpha)?;
    let ref_plus = BinnedDistribution::bin(&ref_limit.ensemble, spec)?;
    let times = reference.times().to_vec();
    let ref_probes: Vec<Vec<Vec3>> = (0..times.len())
        .map(|k| probe_values(&reference.field, &reference.schedule, k))
        .collect();
    let mut iterations = vec![(f64::INFINITY, reference.iterate)];
    let mut rows = Vec::with_capacity(finite.len());
    for &cv in &finite {
        let c = LightSpeed::finite(cv)?;
        let run = picard_iterate(cfg, c, &data)?;
        iterations.push((cv, run.iterate));
        let momenta = data.ensemble.momenta();
        let wave_difference = (0..times.len())
            .into_par_iter()
            .map(|k| {
                let t = times[k];
                run.states[k]
                    .iter()
                    .zip(&reference.states[k])
                    .zip(momenta)
                    .map(|((a, b), p)| {
                        let wa = free_flow_inverse(*a, c, t);
                        let wb = free_flow_inverse(*b, LightSpeed::Infinite, t);
                        wa.distance(&wb) / (1.0 + p.norm_sq()).powf(1.5)
                    })
                    .fold(0.0_f64, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        let field_difference = (0..times.len())
            .map(|k| {
                let m = probe_values(&run.field, &run.schedule, k)
                    .iter()
                    .zip(&ref_probes[k])
                    .map(|(a, b)| (*a - *b).norm())
                    .fold(0.0_f64, f64::max);
                (1.0 + times[k] * times[k]).sqrt().powf(alpha + 1.0) * m
            })
            .fold(0.0_f64, f64::max);
        let limit = limiting_state_of(&run, alpha)?;
        let scattering_difference = BinnedDistribution::bin(&limit.ensemble, spec)?.l1_distance(&ref_plus)?;
        rows.push(SweepRow {
            c: cv,
            wave_difference,
            field_difference,
            scattering_difference,
        });
    }
    let fit = |f: fn(&SweepRow) -> f64| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| f(r) > 0.0).map(|r| (r.c, f(r))).unzip();
        fit_power_law(&xs, &ys).ok()
    };
    let mono = |f: fn(&SweepRow) -> f64| rows.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
    Ok(SweepReport {
        wave_fit: fit(|r| r.wave_difference),
        field_fit: fit(|r| r.field_difference),
        scattering_fit: fit(|r| r.scattering_difference),
        monotone: [
            mono(|r| r.wave_difference),
            mono(|r| r.field_difference),
            mono(|r| r.scattering_difference),
        ],
        rows,
        iterations,
    })
}

/// Radial speed `|v^theta(q e)|` and its derivative in `q`.
fn radial_speed(q: f64, c: LightSpeed, theta: Theta) -> (f64, f64) {
    let th = theta.get();
    let p = Vec3::new(q, 0.0, 0.0);
    let g = gamma(p, c);
    (th * velocity(p, c)[0] + (1.0 - th) * q, th / (g * g * g) + 1.0 - th)
}

/// Inverse of the radial speed by bracketed Newton iteration.
fn radial_momentum(v: f64, c: LightSpeed, theta: Theta) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while radial_speed(hi, c, theta).0 < v {
        hi *= 2.0;
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, df) = radial_speed(q, c, theta);
        if (f - v).abs() <= 1e-16 * v || hi - lo <= 1e-15 * hi {
            break;
        }
        if f < v {
            lo = q;
        } else {
            hi = q;
        }
        let next = q - (f - v) / df;
        q = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    q
}

/// Unit Gaussian test function `h(x, p)` with widths `sigma_x`, `sigma_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianTest {
    pub sigma_x: f64,
    pub sigma_p: f64,
}

impl GaussianTest {
    fn gaussian(r: f64, s: f64) -> f64 {
        (2.0 * PI * s * s).powf(-1.5) * (-0.5 * r * r / (s * s)).exp()
    }

    /// Spherical average of the spatial Gaussian at distance `r` from a
    /// point shifted by `u`.
    fn shell_average(&self, r: f64, u: f64) -> f64 {
        let s2 = self.sigma_x * self.sigma_x;
        let a = r * u / s2;
        let factor = if a < 1e-8 { 1.0 - a } else { -(-2.0 * a).exp_m1() / (2.0 * a) };
        (2.0 * PI * s2).powf(-1.5) * (-0.5 * (r - u) * (r - u) / s2).exp() * factor
    }

    /// `T^theta[h](t, x) = int h(x - t v^theta(p), p) dp` at `|x| = r`.
    pub fn free_transport(&self, t: f64, r: f64, c: LightSpeed, theta: Theta) -> f64 {
        if t == 0.0 {
            return Self::gaussian(r, self.sigma_x);
        }
        let q_max = 12.0 * self.sigma_p;
        let u_max = t * radial_speed(q_max, c, theta).0;
        let (a, b) = ((r - 12.0 * self.sigma_x).max(0.0), (r + 12.0 * self.sigma_x).min(u_max));
        if a >= b {
            return 0.0;
        }
        // Momentum window whose free images land within reach of the shell.
        let q_lo = radial_momentum(a / t, c, theta);
        let q_hi = if b >= u_max { q_max } else { radial_momentum(b / t, c, theta) };
        let integrand = |q: f64| {
            let u = t * radial_speed(q, c, theta).0;
            4.0 * PI * q * q * Self::gaussian(q, self.sigma_p) * self.shell_average(r, u)
        };
        relative_quadrature(&integrand, q_lo, q_hi, 32)
    }

    fn reach(&self, t: f64, c: LightSpeed, theta: Theta) -> f64 {
        t * radial_speed(12.0 * self.sigma_p, c, theta).0 + 12.0 * self.sigma_x
    }
}

/// Adaptive Simpson with a tolerance set from a coarse first pass.
fn relative_quadrature(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / (2 * panels) as f64;
    let coarse: f64 = (0..=2 * panels)
        .map(|i| {
            let w = if i == 0 || i == 2 * panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(a + i as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0;
    if coarse == 0.0 {
        return 0.0;
    }
    adaptive_simpson(f, a, b, panels, 1e-11 * coarse.abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersiveRow {
    pub t: f64,
    pub sup: f64,
    pub l1: f64,
}

#[derive(Clone, Debug)]
pub struct DispersiveReport {
    pub rows: Vec<DispersiveRow>,
    pub fit: Option<RateFit>,
    /// Largest `| ||T h(t)||_1 - ||h||_1 |`.
    pub l1_defect: f64,
}

/// Sup and L1 norms of the interpolated free transport of a Gaussian test
/// function, by radial quadrature, with the slope of the sup against `1 + t`.
pub fn dispersive_bound_check(h: GaussianTest, c: LightSpeed, theta: Theta, times: &[f64]) -> Result<DispersiveReport> {
    let rows: Vec<DispersiveRow> = times
        .par_iter()
        .map(|&t| {
            let reach = h.reach(t, c, theta);
            let probes = 800;
            let sup = (0..=probes)
                .map(|j| h.free_transport(t, reach * j as f64 / probes as f64, c, theta))
                .fold(0.0_f64, f64::max);
            let panels = (reach / h.sigma_x).ceil() as usize + 8;
            let l1 = relative_quadrature(&|r: f64| 4.0 * PI * r * r * h.free_transport(t, r, c, theta), 0.0, reach, panels);
            DispersiveRow { t, sup, l1 }
        })
        .collect();
    let l1_defect = rows.iter().map(|r| (r.l1 - 1.0).abs()).fold(0.0_f64, f64::max);
    let fit = fit_rows(&rows.iter().map(|r| (r.t, r.sup)).collect::<Vec<_>>());
    Ok(DispersiveReport { rows, fit, l1_defect })
}

//! Characteristic flows `d/ds (X, P) = (v_c(P), E(s, X))` by fixed-step RK4,
//! the free flow, and classical wave operators.

use crate::error::{Error, Result};
use crate::field::ForceField;
use crate::ratefit::fit_offset_amplitude;
use crate::relkin::{velocity, velocity_jacobian, LightSpeed, Theta};
use crate::sum::CompensatedSum;
use crate::vec3::{PhaseState, Vec3};
use alloc::format;
#[cfg(test)]
use alloc::vec;
use alloc::vec::Vec;

/// `(x + t v_c(p), p)`.
pub fn free_flow(s: PhaseState, c: LightSpeed, t: f64) -> PhaseState {
    PhaseState::new(s.x + velocity(s.p, c) * t, s.p)
}

/// `(x - t v_c(p), p)`.
pub fn free_flow_inverse(s: PhaseState, c: LightSpeed, t: f64) -> PhaseState {
    PhaseState::new(s.x - velocity(s.p, c) * t, s.p)
}

fn rhs<F: ForceField + ?Sized>(field: &F, c: LightSpeed, t: f64, s: &PhaseState) -> (Vec3, Vec3) {
    (velocity(s.p, c), field.field(t, s.x))
}

/// One classical RK4 step of size `h` (negative for backward flow).
pub fn rk4_step<F: ForceField + ?Sized>(field: &F, c: LightSpeed, t: f64, s: PhaseState, h: f64) -> PhaseState {
    let (dx, dp) = rk4_increment(field, c, t, &s, h);
    PhaseState::new(s.x + dx, s.p + dp)
}

fn rk4_increment<F: ForceField + ?Sized>(field: &F, c: LightSpeed, t: f64, s: &PhaseState, h: f64) -> (Vec3, Vec3) {
    let (k1x, k1p) = rhs(field, c, t, s);
    let s2 = PhaseState::new(s.x + k1x * (0.5 * h), s.p + k1p * (0.5 * h));
    let (k2x, k2p) = rhs(field, c, t + 0.5 * h, &s2);
    let s3 = PhaseState::new(s.x + k2x * (0.5 * h), s.p + k2p * (0.5 * h));
    let (k3x, k3p) = rhs(field, c, t + 0.5 * h, &s3);
    let s4 = PhaseState::new(s.x + k3x * h, s.p + k3p * h);
    let (k4x, k4p) = rhs(field, c, t + h, &s4);
    (
        (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0),
        (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0),
    )
}

fn check_domain<F: ForceField + ?Sized>(field: &F, a: f64, b: f64) -> Result<()> {
    let (lo, hi) = field.time_domain();
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if a < lo {
        return Err(Error::FieldDomain { t: a, start: lo, end: hi });
    }
    if b > hi {
        return Err(Error::FieldDomain { t: b, start: lo, end: hi });
    }
    Ok(())
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!("integration step must be positive, got {step}")));
    }
    Ok(())
}

/// Number of equal steps no longer than `step` covering `span`.
fn step_count(span: f64, step: f64) -> usize {
    (libm::ceil(span.abs() / step) as usize).max(1)
}

/// Node time `t0 + i (t1 - t0) / n`, exact at both ends.
fn node_time(t0: f64, t1: f64, i: usize, n: usize) -> f64 {
    if i == n {
        t1
    } else {
        t0 + (t1 - t0) * (i as f64 / n as f64)
    }
}

/// March `n` equal RK4 steps from `t0` to `t1`, calling `visit` at every node
/// including both ends. Increments are accumulated with Kahan compensation so
/// long runs do not drift by round-off.
fn march<F: ForceField + ?Sized>(
    s0: PhaseState,
    field: &F,
    c: LightSpeed,
    t0: f64,
    t1: f64,
    n: usize,
    mut visit: impl FnMut(usize, f64, &PhaseState),
) -> PhaseState {
    let h = (t1 - t0) / n as f64;
    let mut s = s0.to_array();
    let mut carry = [0.0; 6];
    visit(0, t0, &s0);
    for i in 0..n {
        let (dx, dp) = rk4_increment(field, c, node_time(t0, t1, i, n), &PhaseState::from_array(s), h);
        let inc = PhaseState::new(dx, dp).to_array();
        for d in 0..6 {
            let y = inc[d] - carry[d];
            let sum = s[d] + y;
            carry[d] = (sum - s[d]) - y;
            s[d] = sum;
        }
        visit(i + 1, node_time(t0, t1, i + 1, n), &PhaseState::from_array(s));
    }
    PhaseState::from_array(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowStats {
    pub steps: usize,
    pub step: f64,
    /// Largest step-doubling estimate of the local error over step pairs.
    pub max_local_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowResult {
    pub samples: Vec<(f64, PhaseState)>,
    pub stats: FlowStats,
}

impl FlowResult {
    pub fn end(&self) -> PhaseState {
        self.samples[self.samples.len() - 1].1
    }
}

/// RK4 flow from `t0` to `t1` (either direction) with equal steps no longer
/// than `step`, sampled at every node.
pub fn integrate_flow<F: ForceField + ?Sized>(
    state: PhaseState,
    field: &F,
    c: LightSpeed,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<FlowResult> {
    check_step(step)?;
    check_domain(field, t0, t1)?;
    let n = step_count(t1 - t0, step);
    let h = (t1 - t0) / n as f64;
    let mut samples = Vec::with_capacity(n + 1);
    march(state, field, c, t0, t1, n, |_, t, s| samples.push((t, *s)));
    let mut max_local_error = 0.0_f64;
    for pair in (0..n.saturating_sub(1)).step_by(2) {
        let (t, s) = samples[pair];
        let coarse = rk4_step(field, c, t, s, 2.0 * h);
        max_local_error = max_local_error.max(coarse.distance(&samples[pair + 2].1) / 15.0);
    }
    Ok(FlowResult {
        samples,
        stats: FlowStats {
            steps: n,
            step: h.abs(),
            max_local_error,
        },
    })
}

/// Increasing time nodes with a count of equal RK4 substeps on each interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    substeps: Vec<usize>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, substeps: Vec<usize>) -> Result<Self> {
        if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("time grid needs finite nodes".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("time grid nodes must be strictly increasing".into()));
        }
        if substeps.len() + 1 != times.len() || substeps.contains(&0) {
            return Err(Error::Invalid("need one positive substep count per interval".into()));
        }
        Ok(Self { times, substeps })
    }

    /// Substeps no longer than `step` on every interval.
    pub fn with_max_step(times: Vec<f64>, step: f64) -> Result<Self> {
        check_step(step)?;
        let substeps = times.windows(2).map(|w| step_count(w[1] - w[0], step)).collect();
        Self::new(times, substeps)
    }

    /// Substeps no longer than `relative * (1 + t)` at the left end of each
    /// interval, which suits fields decaying in powers of `1 + t`.
    pub fn with_relative_step(times: Vec<f64>, relative: f64) -> Result<Self> {
        check_step(relative)?;
        let substeps = times
            .windows(2)
            .map(|w| step_count(w[1] - w[0], relative * (1.0 + w[0].abs())))
            .collect();
        Self::new(times, substeps)
    }

    /// `t0 - 1 + (1 + t1 - t0)^(k/intervals)`: nodes evenly spaced in `log(1 + t - t0)`.
    pub fn geometric_nodes(t0: f64, t1: f64, intervals: usize) -> Vec<f64> {
        let span = 1.0 + (t1 - t0);
        (0..=intervals)
            .map(|k| {
                if k == intervals {
                    t1
                } else {
                    t0 - 1.0 + libm::pow(span, k as f64 / intervals as f64)
                }
            })
            .collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn substeps(&self) -> &[usize] {
        &self.substeps
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn total_steps(&self) -> usize {
        self.substeps.iter().sum()
    }
}

/// States at every node of `grid`, starting from `state` at `grid.start()`.
pub fn transport<F: ForceField + ?Sized>(state: PhaseState, field: &F, c: LightSpeed, grid: &TimeGrid) -> Result<Vec<PhaseState>> {
    check_domain(field, grid.start(), grid.end())?;
    let mut out = Vec::with_capacity(grid.times.len());
    let mut s = state;
    out.push(s);
    for (w, &n) in grid.times.windows(2).zip(&grid.substeps) {
        s = march(s, field, c, w[0], w[1], n, |_, _, _| {});
        out.push(s);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Definitional,
    ExplicitFormula,
}

/// Time argument of a wave operator image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WaveTime {
    At(f64),
    /// The limit `t -> infinity`, approximated at `t_max` with a tail bound.
    Plus {
        t_max: f64,
        tail_bound: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveOperatorImage {
    pub input: PhaseState,
    pub time: WaveTime,
    pub output: PhaseState,
    pub route: Route,
    /// Tail-model extrapolation to infinite time, for limit images.
    pub extrapolated: Option<PhaseState>,
}

/// `W(t) = Phi_free(t)^-1 o Phi(t)` by flowing from time 0 to `t`.
pub fn wave_operator_definitional<F: ForceField + ?Sized>(
    state: PhaseState,
    field: &F,
    c: LightSpeed,
    t: f64,
    step: f64,
) -> Result<WaveOperatorImage> {
    check_step(step)?;
    let output = if t == 0.0 {
        state
    } else {
        check_domain(field, 0.0, t)?;
        let end = march(state, field, c, 0.0, t, step_count(t, step), |_, _, _| {});
        free_flow_inverse(end, c, t)
    };
    Ok(WaveOperatorImage {
        input: state,
        time: WaveTime::At(t),
        output,
        route: Route::Definitional,
        extrapolated: None,
    })
}

/// `W1 = x - int_0^t tau A_c(P) E dtau`, `W2 = p + int_0^t E dtau`, by
/// composite Simpson on the RK4 trajectory nodes.
pub fn wave_operator_explicit<F: ForceField + ?Sized>(
    state: PhaseState,
    field: &F,
    c: LightSpeed,
    t: f64,
    step: f64,
) -> Result<WaveOperatorImage> {
    check_step(step)?;
    if t == 0.0 {
        return Ok(WaveOperatorImage {
            input: state,
            time: WaveTime::At(0.0),
            output: state,
            route: Route::ExplicitFormula,
            extrapolated: None,
        });
    }
    check_domain(field, 0.0, t)?;
    let mut n = step_count(t, step);
    n += n % 2;
    let mut pos = [CompensatedSum::new(); 3];
    let mut mom = [CompensatedSum::new(); 3];
    march(state, field, c, 0.0, t, n, |i, tau, s| {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let e = field.field(tau, s.x);
        let ae = velocity_jacobian(s.p, c, Theta::RELATIVISTIC).mul_vec(e) * tau;
        for d in 0..3 {
            pos[d].add(w * ae[d]);
            mom[d].add(w * e[d]);
        }
    });
    let h3 = t / n as f64 / 3.0;
    let ipos = Vec3(core::array::from_fn(|d| pos[d].value() * h3));
    let imom = Vec3(core::array::from_fn(|d| mom[d].value() * h3));
    Ok(WaveOperatorImage {
        input: state,
        time: WaveTime::At(t),
        output: PhaseState::new(state.x - ipos, state.p + imom),
        route: Route::ExplicitFormula,
        extrapolated: None,
    })
}

/// Tail exponents of the wave operator: positions converge like
/// `(1+t)^(1-alpha)`, momenta like `(1+t)^(-alpha)`.
pub fn tail_exponents(alpha: f64) -> (f64, f64) {
    (alpha - 1.0, alpha)
}

/// Sampling grid for limits: the start, then 65 nodes spaced evenly in
/// `log t` over the last two decades of `[t_start, t_start + t_max]`.
fn limit_grid(t_start: f64, t_max: f64, step: f64) -> Result<TimeGrid> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::Invalid(format!("t_max must be positive, got {t_max}")));
    }
    let mut times = Vec::with_capacity(66);
    times.push(t_start);
    for j in 0..=64 {
        times.push(if j == 64 {
            t_start + t_max
        } else {
            t_start + t_max * libm::pow(10.0, -2.0 + j as f64 / 32.0)
        });
    }
    TimeGrid::with_max_step(times, step)
}

/// Increments of `W(t)` over the last two decades of a limit grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecadeIncrements {
    /// `|W(T/10) - W(T/100)|`.
    pub earlier: f64,
    /// `|W(T) - W(T/10)|`.
    pub later: f64,
    /// Largest admissible `later / earlier`.
    pub allowance: f64,
    /// Rounding level below which increments are not compared.
    pub floor: f64,
}

impl DecadeIncrements {
    /// Decade differences must shrink, except where the slowest admissible
    /// tail `(1+t)^(1-alpha)` itself predicts growth, as for late start times.
    pub fn settles(&self) -> bool {
        !(self.later > self.floor && self.later >= self.earlier * self.allowance)
    }

    pub fn check(&self) -> Result<()> {
        if self.settles() {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                earlier: self.earlier,
                later: self.later,
            })
        }
    }
}

/// Limit image along `grid`: flows from `grid.start()` to its end, undoes the
/// free flow over the elapsed time, and fits the samples of the last decade
/// to `W+ + b (1 + t)^-k` per component (see [`tail_exponents`]). The grid
/// needs nodes at or after one hundredth and one tenth of the elapsed span.
pub fn limiting_wave_operator_on<F: ForceField + ?Sized>(
    state: PhaseState,
    field: &F,
    c: LightSpeed,
    grid: &TimeGrid,
    alpha: f64,
) -> Result<WaveOperatorImage> {
    let (image, decades) = limit_with_decades(state, field, c, grid, alpha)?;
    decades.check()?;
    Ok(image)
}

/// As [`limiting_wave_operator_on`], but hands back the decade increments
/// instead of rejecting a state whose increments grow. Callers that judge
/// convergence over a whole ensemble use this.
pub fn limit_with_decades<F: ForceField + ?Sized>(
    state: PhaseState,
    field: &F,
    c: LightSpeed,
    grid: &TimeGrid,
    alpha: f64,
) -> Result<(WaveOperatorImage, DecadeIncrements)> {
    let (t_start, t_end) = (grid.start(), grid.end());
    let t_max = t_end - t_start;
    let states = transport(state, field, c, grid)?;
    let times = grid.times();
    let w: Vec<PhaseState> = states
        .iter()
        .zip(times)
        .map(|(s, t)| free_flow_inverse(*s, c, t - t_start))
        .collect();
    let first_at = |frac: f64| times.iter().position(|t| t - t_start >= frac * t_max * (1.0 - 1e-12));
    let last = times.len() - 1;
    let (Some(i_hundredth), Some(i_tenth)) = (first_at(0.01), first_at(0.1)) else {
        return Err(Error::Invalid("time grid too short for a limit".into()));
    };
    if !(i_hundredth < i_tenth && i_tenth < last) {
        return Err(Error::Invalid("time grid too coarse to resolve the last two decades".into()));
    }
    let output = w[last];

    let (kx, kp) = tail_exponents(alpha);
    let decay = |i: usize| libm::pow(1.0 + times[i], -kx);
    let predicted = (decay(i_tenth) - decay(last)) / (decay(i_hundredth) - decay(i_tenth));
    let allowance = if predicted.is_finite() && predicted > 0.5 {
        2.0 * predicted
    } else {
        1.0
    };
    let earlier = w[i_tenth].distance(&w[i_hundredth]);
    let later = output.distance(&w[i_tenth]);
    let floor = 1e-12 * (1.0 + output.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    let decades = DecadeIncrements {
        earlier,
        later,
        allowance,
        floor,
    };

    let tail = i_tenth..=last;
    let mut bound_sq = 0.0;
    let limit: [f64; 6] = core::array::from_fn(|d| {
        let k = if d < 3 { kx } else { kp };
        let s: Vec<f64> = tail.clone().map(|i| libm::pow(1.0 + times[i], -k)).collect();
        let y: Vec<f64> = tail.clone().map(|i| w[i].to_array()[d]).collect();
        let (a, b) = fit_offset_amplitude(&s, &y);
        let r = b * libm::pow(1.0 + t_end, -k);
        bound_sq += r * r;
        a
    });
    let image = WaveOperatorImage {
        input: state,
        time: WaveTime::Plus {
            t_max,
            tail_bound: libm::sqrt(bound_sq),
        },
        output,
        route: Route::Definitional,
        extrapolated: Some(PhaseState::from_array(limit)),
    };
    Ok((image, decades))
}

/// Limit image from a state at time `t_start` with substeps no longer than
/// `step`.
pub fn limiting_wave_operator_from<F: ForceField + ?Sized>(
    state: PhaseState,
    t_start: f64,
    field: &F,
    c: LightSpeed,
    t_max: f64,
    step: f64,
    alpha: f64,
) -> Result<WaveOperatorImage> {
    limiting_wave_operator_on(state, field, c, &limit_grid(t_start, t_max, step)?, alpha)
}

/// `W+` approximated at `t_max` from time 0, with a fitted tail bound.
pub fn limiting_wave_operator<F: ForceField + ?Sized>(
    state: PhaseState,
    field: &F,
    c: LightSpeed,
    t_max: f64,
    step: f64,
    alpha: f64,
) -> Result<WaveOperatorImage> {
    limiting_wave_operator_from(state, 0.0, field, c, t_max, step, alpha)
}

fn tail_bound(img: &WaveOperatorImage) -> f64 {
    match img.time {
        WaveTime::Plus { tail_bound, .. } => tail_bound,
        WaveTime::At(_) => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntertwiningReport {
    /// Largest `|W+(Phi(t) z) - Phi_free(t) W+(z)|` over the samples.
    pub residual: f64,
    /// Combined tail bound `tail(left) + (1 + t) tail(right)` at the worst sample.
    pub tail_bound: f64,
    /// Largest residual-to-bound ratio over the samples.
    pub worst_ratio: f64,
}

/// Intertwining defect `W+ o Phi(t)` against `Phi_free(t) o W+`, both limits
/// taken at `t_max`. The left side starts the limit flow at time `t`, since
/// the field is time dependent.
pub fn intertwining_residual<F: ForceField + ?Sized>(
    samples: &[PhaseState],
    field: &F,
    c: LightSpeed,
    t: f64,
    t_max: f64,
    step: f64,
    alpha: f64,
) -> Result<IntertwiningReport> {
    let mut report = IntertwiningReport {
        residual: 0.0,
        tail_bound: 0.0,
        worst_ratio: 0.0,
    };
    for z in samples {
        let moved = integrate_to(*z, field, c, t, step)?;
        let left = limiting_wave_operator_from(moved, t, field, c, t_max, step, alpha)?;
        let right = limiting_wave_operator(*z, field, c, t_max, step, alpha)?;
        let r = left.output.distance(&free_flow(right.output, c, t));
        let bound = tail_bound(&left) + (1.0 + t) * tail_bound(&right);
        let ratio = if bound > 0.0 {
            r / bound
        } else if r > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if r > report.residual {
            report.residual = r;
            report.tail_bound = bound;
        }
        report.worst_ratio = report.worst_ratio.max(ratio);
    }
    Ok(report)
}

fn integrate_to<F: ForceField + ?Sized>(z: PhaseState, field: &F, c: LightSpeed, t: f64, step: f64) -> Result<PhaseState> {
    if t == 0.0 {
        return Ok(z);
    }
    check_domain(field, 0.0, t)?;
    Ok(march(z, field, c, 0.0, t, step_count(t, step), |_, _, _| {}))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumReport {
    /// `sup |P(s) - p|` over samples and step nodes in `[0, horizon]`.
    pub sup_deviation: f64,
    /// `sup_deviation / eta0`.
    pub ratio: f64,
}

pub fn perturbed_momentum_check<F: ForceField + ?Sized>(
    samples: &[PhaseState],
    field: &F,
    c: LightSpeed,
    horizon: f64,
    step: f64,
    eta0: f64,
) -> Result<MomentumReport> {
    check_step(step)?;
    check_domain(field, 0.0, horizon)?;
    let n = step_count(horizon, step);
    let mut sup = 0.0_f64;
    for z in samples {
        march(*z, field, c, 0.0, horizon, n, |_, _, s| sup = sup.max((s.p - z.p).norm()));
    }
    let ratio = if eta0 > 0.0 { sup / eta0 } else { 0.0 };
    Ok(MomentumReport { sup_deviation: sup, ratio })
}

//! Self-consistent small-data solutions by Picard iteration on frozen force
//! fields, and the decay reports measured on them.

use crate::error::{Error, Result};
use crate::sampling::{sample_initial_data, InitialData, SampledData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vlasov_core::field::{ForceField, ZeroField};
use vlasov_core::flows::{transport, TimeGrid};
use vlasov_core::frozen::{FieldSnapshot, FrozenField, NodeLattice};
use vlasov_core::grid::{density_estimate, GridSpec};
use vlasov_core::phase_grid::PhaseGridSpec;
use vlasov_core::ratefit::{fit_power_law, RateFit};
use vlasov_core::relkin::{gamma, velocity};
use vlasov_core::{LightSpeed, Mat3, ParticleEnsemble, PhaseState, PotentialSpec, Vec3};

/// Spatial discretization parameters. Extents are in units of the ensemble
/// spread `s(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lattice_nodes: usize,
    pub lattice_extent: f64,
    pub density_cells: usize,
    pub density_extent: f64,
    pub probe_points: usize,
    pub phase_cells_x: usize,
    pub phase_cells_p: usize,
    pub phase_extent: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lattice_nodes: 20,
            lattice_extent: 4.5,
            density_cells: 32,
            density_extent: 4.0,
            probe_points: 512,
            phase_cells_x: 24,
            phase_cells_p: 16,
            phase_extent: 4.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub horizon: f64,
    /// Snapshot intervals K; snapshots are spaced evenly in `log(1 + t)`.
    pub snapshots: usize,
    pub picard_tol: f64,
    pub max_iters: usize,
    /// RK4 substeps no longer than `relative_step * (1 + t)`.
    pub relative_step: f64,
    pub data: InitialData,
    pub particles: usize,
    /// Field-norm budget the converged field is checked against.
    pub eta0: f64,
    pub light_speeds: Vec<LightSpeed>,
    pub potential: PotentialSpec,
    pub grid: GridConfig,
    /// Window for decay-rate fits; `None` means `[T/10, T]`.
    pub decay_window: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let potential = PotentialSpec::power_law(1.5, vlasov_core::Coupling::Attractive, 0.5)
            .and_then(|p| p.with_softening_growth(0.5))
            .expect("default potential is valid");
        Self {
            horizon: 50.0,
            snapshots: 64,
            picard_tol: 1e-8,
            max_iters: 25,
            relative_step: 0.05,
            data: InitialData {
                family: Default::default(),
                eta: 1e-2,
            },
            particles: 100_000,
            eta0: 0.1,
            light_speeds: vec![LightSpeed::Finite(4.0)],
            potential,
            grid: GridConfig::default(),
            decay_window: None,
            seed: 20_240_601,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.picard_tol > 0.0) {
            return bad(format!("picard_tol must be positive, got {}", self.picard_tol));
        }
        if self.snapshots < 16 {
            return bad(format!("snapshots must be at least 16, got {}", self.snapshots));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.max_iters < 2 {
            return bad(format!("max_iters must be at least 2, got {}", self.max_iters));
        }
        if !(self.relative_step > 0.0 && self.relative_step <= 1.0) {
            return bad(format!("relative_step must lie in (0, 1], got {}", self.relative_step));
        }
        if !(self.eta0 > 0.0) {
            return bad(format!("eta0 must be positive, got {}", self.eta0));
        }
        if self.light_speeds.is_empty() {
            return bad("light_speeds must not be empty".into());
        }
        if self.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        // manifests store the seed as a TOML integer
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must not exceed {}, got {}", i64::MAX, self.seed));
        }
        let g = &self.grid;
        if g.lattice_nodes < 4 || g.density_cells < 4 || g.phase_cells_x < 2 || g.phase_cells_p < 2 {
            return bad(format!("grid too coarse: {g:?}"));
        }
        if !(g.lattice_extent > 0.0 && g.density_extent > 0.0 && g.phase_extent > 0.0) {
            return bad(format!("grid extents must be positive: {g:?}"));
        }
        if let Some((a, b)) = self.decay_window {
            if !(0.0 <= a && a < b && b <= self.horizon) {
                return bad(format!("decay window ({a}, {b}) must lie inside [0, horizon]"));
            }
        }
        self.data.family.validate()?;
        if !(self.data.eta >= 0.0) {
            return bad(format!("eta must be nonnegative, got {}", self.data.eta));
        }
        self.potential.validated().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn decay_window(&self) -> (f64, f64) {
        self.decay_window.unwrap_or((self.horizon / 10.0, self.horizon))
    }
}

/// Snapshot times, substeps, and the deterministic boxes that follow the
/// free spreading of the initial ensemble: center `x̄ + t p̄` and spread
/// `s(t) = sqrt(var_x + t^2 var_p)`. Momentum statistics bound velocity ones
/// for every `c`, so boxes and probes are shared across light speeds.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub grid: TimeGrid,
    mean_x: Vec3,
    mean_p: Vec3,
    var_x: f64,
    var_p: f64,
    unit_probes: Vec<Vec3>,
    lattice_nodes: usize,
    lattice_extent: f64,
    density_cells: usize,
    density_extent: f64,
}

fn moments(v: impl Iterator<Item = Vec3> + Clone, n: usize) -> (Vec3, f64) {
    if n == 0 {
        return (Vec3::ZERO, 1.0);
    }
    let mean = v.clone().fold(Vec3::ZERO, |a, b| a + b) * (1.0 / n as f64);
    let var = v.map(|x| (x - mean).norm_sq()).sum::<f64>() / (3.0 * n as f64);
    (mean, if var > 0.0 { var } else { 1.0 })
}

impl Schedule {
    pub fn new(cfg: &SolverConfig, initial: &ParticleEnsemble) -> Result<Self> {
        let times = TimeGrid::geometric_nodes(0.0, cfg.horizon, cfg.snapshots);
        let grid = TimeGrid::with_relative_step(times, cfg.relative_step)?;
        let n = initial.len();
        let (mean_x, var_x) = moments(initial.positions().iter().copied(), n);
        let (mean_p, var_p) = moments(initial.momenta().iter().copied(), n);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed9b_0be5);
        let unit_probes = (0..cfg.grid.probe_points)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                Vec3(v)
            })
            .collect();
        Ok(Self {
            grid,
            mean_x,
            mean_p,
            var_x,
            var_p,
            unit_probes,
            lattice_nodes: cfg.grid.lattice_nodes,
            lattice_extent: cfg.grid.lattice_extent,
            density_cells: cfg.grid.density_cells,
            density_extent: cfg.grid.density_extent,
        })
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn center(&self, t: f64) -> Vec3 {
        self.mean_x + self.mean_p * t
    }

    pub fn spread(&self, t: f64) -> f64 {
        (self.var_x + t * t * self.var_p).sqrt()
    }

    pub fn lattice(&self, t: f64) -> Result<NodeLattice> {
        Ok(NodeLattice::centered(
            self.center(t),
            self.lattice_extent * self.spread(t),
            self.lattice_nodes,
        )?)
    }

    pub fn density_grid(&self, t: f64) -> Result<GridSpec> {
        Ok(GridSpec::cube(
            self.center(t),
            self.density_extent * self.spread(t),
            self.density_cells,
        )?)
    }

    /// The density box at `t`, widened if needed so that every particle of
    /// `ensemble` deposits inside it.
    pub fn density_grid_covering(&self, t: f64, ensemble: &ParticleEnsemble) -> Result<GridSpec> {
        let c = self.center(t);
        let reach = ensemble.positions().iter().map(|x| (*x - c).max_abs()).fold(0.0_f64, f64::max);
        let half = (self.density_extent * self.spread(t)).max(reach * (1.0 + 1e-9) + f64::MIN_POSITIVE);
        Ok(GridSpec::cube(c, half, self.density_cells)?)
    }

    /// Phase-space box around the initial data: `extent` standard deviations
    /// in every position and momentum direction.
    pub fn phase_grid(&self, grid: &GridConfig) -> Result<PhaseGridSpec> {
        let (hx, hp) = (grid.phase_extent * self.var_x.sqrt(), grid.phase_extent * self.var_p.sqrt());
        let center = [
            self.mean_x[0],
            self.mean_x[1],
            self.mean_x[2],
            self.mean_p[0],
            self.mean_p[1],
            self.mean_p[2],
        ];
        let (nx, np) = (grid.phase_cells_x, grid.phase_cells_p);
        Ok(PhaseGridSpec::boxed(center, [hx, hx, hx, hp, hp, hp], [nx, nx, nx, np, np, np])?)
    }

    /// Seeded Gaussian probe points scaled to the spread at `t`.
    pub fn random_probes(&self, t: f64) -> impl Iterator<Item = Vec3> + '_ {
        let (c, s) = (self.center(t), self.spread(t));
        self.unit_probes.iter().map(move |u| c + *u * s)
    }
}

/// One Picard iterate `j`: the field `E^(j)` that transported the particles,
/// the particle states at every snapshot time, and the field `E^(j+1)` they
/// generate.
#[derive(Clone, Debug)]
pub struct PicardState {
    pub iterate: usize,
    pub light_speed: LightSpeed,
    pub field: FrozenField,
    pub next_field: FrozenField,
    /// `states[k][i]`: particle `i` at snapshot time `k`.
    pub states: Vec<Vec<PhaseState>>,
    pub initial: ParticleEnsemble,
    /// `(j, r_j)` for `j >= 2`, `r_j` the weighted sup of `E^(j) - E^(j-1)`.
    pub residuals: Vec<(usize, f64)>,
    pub converged: bool,
    pub schedule: Schedule,
}

impl PicardState {
    /// `r_{j+1} / r_j` for consecutive recorded residuals.
    pub fn quotients(&self) -> Vec<Option<f64>> {
        self.residuals.windows(2).map(|w| (w[0].1 > 0.0).then(|| w[1].1 / w[0].1)).collect()
    }

    /// Residual history nonincreasing after the first two iterates.
    pub fn residuals_monotone(&self) -> bool {
        self.residuals.windows(2).skip(1).all(|w| w[1].1 <= w[0].1)
    }

    pub fn ensemble_at(&self, k: usize) -> Result<ParticleEnsemble> {
        Ok(self.initial.with_states(&self.states[k])?)
    }

    pub fn times(&self) -> &[f64] {
        self.schedule.times()
    }
}

fn transport_all<F: ForceField>(initial: &ParticleEnsemble, field: &F, c: LightSpeed, grid: &TimeGrid) -> Result<Vec<Vec<PhaseState>>> {
    let n = initial.len();
    let nodes = grid.times().len();
    let mut by_time: Vec<Vec<PhaseState>> = (0..nodes).map(|_| Vec::with_capacity(n)).collect();
    const BLOCK: usize = 4096;
    for start in (0..n).step_by(BLOCK) {
        let block: Vec<Vec<PhaseState>> = (start..(start + BLOCK).min(n))
            .into_par_iter()
            .map(|i| transport(initial.state(i), field, c, grid))
            .collect::<vlasov_core::Result<_>>()?;
        for traj in block {
            for (k, s) in traj.into_iter().enumerate() {
                by_time[k].push(s);
            }
        }
    }
    Ok(by_time)
}

fn build_field(spec: &PotentialSpec, schedule: &Schedule, states: &[Vec<PhaseState>], weights: &[f64]) -> Result<FrozenField> {
    let snaps = schedule
        .times()
        .par_iter()
        .zip(states)
        .map(|(&t, st)| {
            let pos: Vec<Vec3> = st.iter().map(|s| s.x).collect();
            Ok(FieldSnapshot::build(spec, t, schedule.lattice(t)?, &pos, weights))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrozenField::new(snaps)?)
}

/// Field values at the probe points of snapshot `k`: lattice nodes, then the
/// seeded random probes.
pub(crate) fn probe_values(field: &FrozenField, schedule: &Schedule, k: usize) -> Vec<Vec3> {
    let snap = &field.snapshots()[k];
    let mut v = snap.node_field().to_vec();
    v.extend(schedule.random_probes(snap.time).map(|x| snap.field(x)));
    v
}

fn probe_values_zero(schedule: &Schedule) -> Vec<Vec3> {
    let lattice = schedule.lattice_nodes.pow(3);
    vec![Vec3::ZERO; lattice + schedule.unit_probes.len()]
}

/// `sup_k (1 + t_k)^(alpha+1) max_probe |a - b|`.
fn weighted_difference(alpha: f64, times: &[f64], a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> f64 {
    times
        .iter()
        .zip(a.iter().zip(b))
        .map(|(t, (u, v))| {
            let m = u.iter().zip(v).map(|(x, y)| (*x - *y).norm()).fold(0.0_f64, f64::max);
            (1.0 + t).powf(alpha + 1.0) * m
        })
        .fold(0.0_f64, f64::max)
}

enum Field {
    Zero,
    Frozen(FrozenField),
}

/// Runs the Picard iteration for one light speed. `E^(1) = 0`; iterate `j`
/// transports the data under `E^(j)` and builds `E^(j+1)` from the result.
/// Stops once `r_{j+1} < picard_tol`, or at `max_iters` with
/// `converged = false`.
pub fn picard_iterate(cfg: &SolverConfig, c: LightSpeed, data: &SampledData) -> Result<PicardState> {
    cfg.validate()?;
    let initial = data.ensemble.clone();
    let schedule = Schedule::new(cfg, &initial)?;
    let times = schedule.times().to_vec();
    let alpha = cfg.potential.alpha;
    let weights = initial.weights().to_vec();

    let mut current = Field::Zero;
    let mut current_probes: Vec<Vec<Vec3>> = (0..times.len()).map(|_| probe_values_zero(&schedule)).collect();
    let mut residuals: Vec<(usize, f64)> = Vec::new();
    let mut rising = 0;
    let mut j = 1;
    loop {
        let states = match &current {
            Field::Zero => transport_all(&initial, &ZeroField, c, &schedule.grid)?,
            Field::Frozen(f) => transport_all(&initial, f, c, &schedule.grid)?,
        };
        let next = build_field(&cfg.potential, &schedule, &states, &weights)?;
        let next_probes: Vec<Vec<Vec3>> = (0..times.len())
            .into_par_iter()
            .map(|k| probe_values(&next, &schedule, k))
            .collect();
        let r = weighted_difference(alpha, &times, &next_probes, &current_probes);
        if let Some(&(_, prev)) = residuals.last() {
            if prev > 0.0 && r >= prev {
                rising += 1;
            } else {
                rising = 0;
            }
        }
        residuals.push((j + 1, r));
        if rising >= 3 {
            return Err(Error::NonContraction {
                residuals: residuals.iter().map(|x| x.1).collect(),
            });
        }
        let converged = r < cfg.picard_tol;
        if converged || j + 1 >= cfg.max_iters {
            let field = match current {
                Field::Zero => zero_like(&next)?,
                Field::Frozen(f) => f,
            };
            return Ok(PicardState {
                iterate: j,
                light_speed: c,
                field,
                next_field: next,
                states,
                initial,
                residuals,
                converged,
                schedule,
            });
        }
        current = Field::Frozen(next);
        current_probes = next_probes;
        j += 1;
    }
}

/// A frozen field on the same snapshots with every source weight zero.
fn zero_like(f: &FrozenField) -> Result<FrozenField> {
    let snaps = f
        .snapshots()
        .iter()
        .map(|s| FieldSnapshot::build(s.spec(), s.time, s.lattice, &[], &[]))
        .collect();
    Ok(FrozenField::new(snaps)?)
}

/// Samples the initial data and runs [`picard_iterate`].
pub fn solve(cfg: &SolverConfig, c: LightSpeed) -> Result<(SampledData, PicardState)> {
    let data = sample_initial_data(&cfg.data, cfg.particles, cfg.seed)?;
    let state = picard_iterate(cfg, c, &data)?;
    Ok((data, state))
}

/// Largest absolute entry scale of a matrix, by Frobenius norm.
fn mat_norm(m: &Mat3) -> f64 {
    m.frobenius()
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub norm_e: f64,
    pub norm_grad_e: f64,
    pub norm_rho: f64,
    pub norm_grad_rho: f64,
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub field_fit: Option<RateFit>,
    pub gradient_fit: Option<RateFit>,
    pub density_fit: Option<RateFit>,
    pub density_gradient_fit: Option<RateFit>,
    /// `sup_t (1+t)^(alpha+1) |E| + (1+t)^(alpha+2) |grad E|`.
    pub measured_eta0: f64,
    /// Largest relative deviation of the gridded mass from the initial mass.
    pub mass_drift: f64,
}

fn fit_window(rows: &[(f64, f64)], window: (f64, f64)) -> Option<RateFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|(t, y)| *t >= window.0 * (1.0 - 1e-12) && *t <= window.1 * (1.0 + 1e-12) && *y > 0.0)
        .map(|(t, y)| (1.0 + t, *y))
        .unzip();
    fit_power_law(&xs, &ys).ok()
}

/// Probe points for gradients: the random probes and the lattice nodes
/// within one spread of the center.
fn gradient_probes(schedule: &Schedule, snap: &FieldSnapshot) -> Vec<Vec3> {
    let c = schedule.center(snap.time);
    let s = schedule.spread(snap.time);
    let lattice = snap.lattice;
    let mut pts: Vec<Vec3> = (0..lattice.len())
        .map(|i| lattice.node(i))
        .filter(|x| (*x - c).max_abs() <= s)
        .collect();
    pts.extend(schedule.random_probes(snap.time));
    pts
}

/// Sup norms of `E`, `grad E`, `rho`, `grad rho` at each snapshot and their
/// log-log slopes over the decay window.
pub fn decay_report(state: &PicardState, cfg: &SolverConfig) -> Result<DecayReport> {
    let schedule = &state.schedule;
    let alpha = cfg.potential.alpha;
    let mass0 = state.initial.total_weight();
    let rows: Vec<DecayRow> = state
        .field
        .snapshots()
        .par_iter()
        .enumerate()
        .map(|(k, snap)| {
            let t = snap.time;
            let norm_e = probe_values(&state.field, schedule, k)
                .iter()
                .map(|v| v.norm())
                .fold(0.0_f64, f64::max);
            let norm_grad_e = if cfg.potential.beta() == 0.0 || mass0 == 0.0 {
                0.0
            } else {
                gradient_probes(schedule, snap)
                    .iter()
                    .map(|x| mat_norm(&snap.gradient(*x)))
                    .fold(0.0_f64, f64::max)
            };
            let ens = state.ensemble_at(k)?;
            let rho = density_estimate(&ens, schedule.density_grid_covering(t, &ens)?)?;
            Ok(DecayRow {
                t,
                norm_e,
                norm_grad_e,
                norm_rho: rho.sup(),
                norm_grad_rho: rho.gradient_sup(),
                mass: rho.integral(),
            })
        })
        .collect::<Result<_>>()?;
    let window = cfg.decay_window();
    let col = |f: fn(&DecayRow) -> f64| rows.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();
    let measured_eta0 = rows
        .iter()
        .map(|r| (1.0 + r.t).powf(alpha + 1.0) * r.norm_e + (1.0 + r.t).powf(alpha + 2.0) * r.norm_grad_e)
        .fold(0.0_f64, f64::max);
    let mass_drift = if mass0 > 0.0 {
        rows.iter().map(|r| ((r.mass - mass0) / mass0).abs()).fold(0.0_f64, f64::max)
    } else {
        0.0
    };
    Ok(DecayReport {
        field_fit: fit_window(&col(|r| r.norm_e), window),
        gradient_fit: fit_window(&col(|r| r.norm_grad_e), window),
        density_fit: fit_window(&col(|r| r.norm_rho), window),
        density_gradient_fit: fit_window(&col(|r| r.norm_grad_rho), window),
        rows,
        measured_eta0,
        mass_drift,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JacobianReport {
    pub finite_difference: f64,
    pub closed_form: f64,
    pub relative_error: f64,
}

/// `|det d(x - t v_c(p))/dp|` by central differences against `t^3 / gamma^5`.
pub fn jacobian_change_of_variables_check(c: LightSpeed, t: f64, p: Vec3) -> JacobianReport {
    let h = 1e-5 * (1.0 + p.max_abs());
    let mut cols = [[0.0; 3]; 3];
    for k in 0..3 {
        let mut a = p;
        let mut b = p;
        a[k] += h;
        b[k] -= h;
        let d = (velocity(a, c) - velocity(b, c)) * (-t / (2.0 * h));
        for i in 0..3 {
            cols[i][k] = d[i];
        }
    }
    let fd = Mat3(cols).determinant().abs();
    let closed = t.powi(3) / gamma(p, c).powi(5);
    JacobianReport {
        finite_difference: fd,
        closed_form: closed,
        relative_error: ((fd - closed) / closed).abs(),
    }
}

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vlasov::scatter::{dispersive_bound_check, limiting_state_of, nr_limit_sweep, pullback_profile, scattering_rate, GaussianTest};
use vlasov::selfconsistent::{solve, PicardState, SolverConfig};
use vlasov::Error;
use vlasov_core::flows::wave_operator_definitional;
use vlasov_core::phase_grid::{binned_l1_distance, PhaseGridSpec};
use vlasov_core::{Coupling, LightSpeed, ParticleEnsemble, PhaseState, PotentialSpec, Theta, Vec3};

fn c4() -> LightSpeed {
    LightSpeed::Finite(4.0)
}

fn config(particles: usize, horizon: f64) -> SolverConfig {
    SolverConfig {
        particles,
        horizon,
        snapshots: 32,
        ..SolverConfig::default()
    }
}

fn free(mut cfg: SolverConfig) -> SolverConfig {
    cfg.potential = PotentialSpec {
        coupling: Coupling::Free,
        ..cfg.potential
    };
    cfg
}

fn interacting() -> (SolverConfig, PicardState) {
    let cfg = config(2000, 40.0);
    let (_, run) = solve(&cfg, c4()).unwrap();
    assert!(run.converged);
    (cfg, run)
}

#[test]
fn pullback_at_zero_is_identity() {
    let (_, run) = interacting();
    let g = pullback_profile(&run.initial, c4(), 0.0).unwrap();
    assert_eq!(g, run.initial);
}

#[test]
fn free_pullback_returns_initial_data() {
    let (_, run) = solve(&free(config(2000, 30.0)), c4()).unwrap();
    for (k, &t) in run.times().iter().enumerate() {
        let g = pullback_profile(&run.ensemble_at(k).unwrap(), c4(), t).unwrap();
        assert_eq!(g.weights(), run.initial.weights());
        for (a, b) in g.states().zip(run.initial.states()) {
            // x + t v - t v: rounding only
            assert!(a.distance(&b) <= 1e-13 * (1.0 + t) * (1.0 + b.x.norm()), "t = {t}");
        }
    }
}

#[test]
fn interacting_pullback_matches_wave_operator_images() {
    let (_, run) = interacting();
    for k in [run.times().len() / 3, run.times().len() - 1] {
        let t = run.times()[k];
        let g = pullback_profile(&run.ensemble_at(k).unwrap(), c4(), t).unwrap();
        for i in (0..run.initial.len()).step_by(97) {
            let w = wave_operator_definitional(run.initial.state(i), &run.field, c4(), t, 0.01).unwrap();
            let gap = g.state(i).distance(&w.output);
            assert!(gap <= 1e-7, "t = {t}, particle {i}: {gap:e}");
        }
    }
}

#[test]
fn free_limit_is_initial_ensemble() {
    let (_, run) = solve(&free(config(2000, 40.0)), c4()).unwrap();
    let limit = limiting_state_of(&run, 1.5).unwrap();
    assert_eq!(limit.ensemble.weights(), run.initial.weights());
    assert_eq!(limit.ensemble.ids(), run.initial.ids());
    assert_eq!(limit.sup_momentum_shift, 0.0);
    for (a, b) in limit.ensemble.states().zip(run.initial.states()) {
        assert_eq!(a.p, b.p);
        assert!((a.x - b.x).norm() <= 1e-13 * 40.0 * (1.0 + b.x.norm()));
    }
}

#[test]
fn limit_is_a_pushforward_with_bounded_momentum_marginals() {
    let (cfg, run) = interacting();
    let limit = limiting_state_of(&run, cfg.potential.alpha).unwrap();
    assert_eq!(limit.ensemble.weights(), run.initial.weights());
    assert_eq!(limit.ensemble.total_weight(), run.initial.total_weight());
    assert!(limit.sup_momentum_shift > 0.0);
    // quantiles of each momentum marginal move no further than any particle
    for d in 0..3 {
        let sorted = |e: &ParticleEnsemble| {
            let mut v: Vec<f64> = e.momenta().iter().map(|p| p[d]).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let (a, b) = (sorted(&run.initial), sorted(&limit.ensemble));
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0_f64, f64::max);
        assert!(
            worst <= limit.sup_momentum_shift * (1.0 + 1e-12),
            "axis {d}: {worst} > {}",
            limit.sup_momentum_shift
        );
    }
}

#[test]
fn free_scattering_distances_vanish() {
    let cfg = free(config(2000, 40.0));
    let (_, run) = solve(&cfg, c4()).unwrap();
    let limit = limiting_state_of(&run, 1.5).unwrap();
    let spec = run.schedule.phase_grid(&cfg.grid).unwrap();
    let report = scattering_rate(&run, &limit, (2.0, 10.0), &spec).unwrap();
    assert!(!report.rows.is_empty());
    // pulled-back positions round differently from the initial ones
    assert!(report.rows.iter().all(|r| r.l1 <= 1e-12), "{:?}", report.rows);
    assert!(report.fit.is_none() || report.rows.iter().all(|r| r.l1 > 0.0));
}

#[test]
fn scattering_window_must_sit_well_inside_the_horizon() {
    let (cfg, run) = interacting();
    let limit = limiting_state_of(&run, cfg.potential.alpha).unwrap();
    let spec = run.schedule.phase_grid(&cfg.grid).unwrap();
    assert!(matches!(
        scattering_rate(&run, &limit, (2.0, 20.0), &spec),
        Err(Error::Validation(_))
    ));
}

#[test]
fn free_nr_sweep_has_zero_differences() {
    let cfg = free(config(1000, 20.0));
    let speeds = [2.0, 4.0, 8.0].map(LightSpeed::Finite);
    let report = nr_limit_sweep(&cfg, &[speeds[0], speeds[1], speeds[2], LightSpeed::Infinite]).unwrap();
    assert_eq!(report.rows.len(), 3);
    for r in &report.rows {
        assert_eq!(r.field_difference, 0.0);
        // wave images are the initial data up to rounding in x + t v - t v
        assert!(r.wave_difference <= 1e-12 * 20.0, "{r:?}");
        assert!(r.scattering_difference <= 1e-12, "{r:?}");
    }
}

#[test]
fn nr_sweep_rejects_a_single_speed() {
    let cfg = config(500, 10.0);
    assert!(matches!(
        nr_limit_sweep(&cfg, &[c4(), LightSpeed::Infinite]),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        nr_limit_sweep(&cfg, &[2.0, 4.0, 8.0].map(LightSpeed::Finite)),
        Err(Error::Validation(_))
    ));
}

fn line_grid(half: f64, cells: usize) -> PhaseGridSpec {
    PhaseGridSpec::boxed([0.0; 6], [half, 1.0, 1.0, 1.0, 1.0, 1.0], [cells, 1, 1, 1, 1, 1]).unwrap()
}

fn on_line(xs: &[f64], weight: f64) -> ParticleEnsemble {
    let states: Vec<PhaseState> = xs.iter().map(|&x| PhaseState::new(Vec3::new(x, 0.0, 0.0), Vec3::ZERO)).collect();
    ParticleEnsemble::from_states(&states, vec![weight; xs.len()]).unwrap()
}

#[test]
fn binned_distance_of_identical_and_disjoint_ensembles() {
    let spec = line_grid(10.0, 40);
    let a = on_line(&[-8.0, -7.2, -6.9], 0.5);
    let b = on_line(&[6.0, 7.7], 0.25);
    assert_eq!(binned_l1_distance(&a, &a, spec).unwrap(), 0.0);
    let d = binned_l1_distance(&a, &b, spec).unwrap();
    assert!((d - (1.5 + 0.5)).abs() <= 1e-12 * 2.0, "{d}");
}

#[test]
fn shifted_gaussians_match_analytic_distance() {
    let n = 400_000;
    let shift = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let ys: Vec<f64> = (0..n).map(|_| shift + normal.sample(&mut rng)).collect();
    let (a, b) = (on_line(&xs, 1.0 / n as f64), on_line(&ys, 1.0 / n as f64));
    let d = binned_l1_distance(&a, &b, line_grid(8.0, 160)).unwrap();
    // || N(0,1) - N(s,1) ||_1 = 2 erf(s / (2 sqrt 2))
    let exact = 2.0 * libm::erf(shift / (2.0 * std::f64::consts::SQRT_2));
    assert!((d / exact - 1.0).abs() < 0.05, "{d} vs {exact}");
}

fn small_ensemble() -> impl Strategy<Value = ParticleEnsemble> {
    prop::collection::vec(
        (
            (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
            (-2.0..2.0f64, -2.0..2.0f64),
            0.0..1.0f64,
        ),
        1..30,
    )
    .prop_map(|rows| {
        let states: Vec<PhaseState> = rows
            .iter()
            .map(|((x, y, z), (p, q), _)| PhaseState::new(Vec3::new(*x, *y, *z), Vec3::new(*p, *q, 0.0)))
            .collect();
        ParticleEnsemble::from_states(&states, rows.iter().map(|r| r.2).collect()).unwrap()
    })
}

fn cube() -> PhaseGridSpec {
    PhaseGridSpec::boxed([0.0; 6], [4.0, 4.0, 4.0, 3.0, 3.0, 3.0], [8, 8, 8, 6, 6, 6]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binned_distance_is_a_metric(a in small_ensemble(), b in small_ensemble(), c in small_ensemble()) {
        let spec = cube();
        let ab = binned_l1_distance(&a, &b, spec).unwrap();
        let ba = binned_l1_distance(&b, &a, spec).unwrap();
        let bc = binned_l1_distance(&b, &c, spec).unwrap();
        let ac = binned_l1_distance(&a, &c, spec).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert!(ac <= (ab + bc) * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn interpolated_transport_disperses_like_t_cubed() {
    let h = GaussianTest {
        sigma_x: 1.0,
        sigma_p: 1.0,
    };
    let times: Vec<f64> = (0..=6).map(|k| 20.0 * 16f64.powf(k as f64 / 6.0)).collect();
    let report = dispersive_bound_check(h, LightSpeed::Finite(1.0), Theta::RELATIVISTIC, &times).unwrap();
    let slope = report.fit.unwrap().slope;
    assert!((slope + 3.0).abs() <= 0.2, "{slope}");
    assert!(report.l1_defect <= 1e-8, "{}", report.l1_defect);
}

use proptest::prelude::*;
use vlasov_core::field::{ForceField, SpreadingSourceField, UniformDecayingField, ZeroField};
use vlasov_core::flows::*;
use vlasov_core::quadrature::adaptive_simpson;
use vlasov_core::relkin::{velocity, velocity_jacobian};
use vlasov_core::{LightSpeed, PhaseState, Theta, Vec3};

fn uniform_position_integral(eta: f64, alpha: f64, t: f64) -> f64 {
    // int_0^t tau eta (1+tau)^(-alpha-1) dtau
    eta * ((libm::pow(1.0 + t, 1.0 - alpha) - 1.0) / (1.0 - alpha) - (1.0 - libm::pow(1.0 + t, -alpha)) / alpha)
}

/// `W(t)` for the uniform field by quadrature along the closed-form momentum.
fn uniform_wave_oracle(f: &UniformDecayingField, z: PhaseState, c: LightSpeed, t: f64) -> PhaseState {
    let w1: [f64; 3] = core::array::from_fn(|d| {
        let g = |tau: f64| {
            let p = f.momentum_at(z.p, tau);
            tau * velocity_jacobian(p, c, Theta::RELATIVISTIC).mul_vec(f.field(tau, Vec3::ZERO))[d]
        };
        adaptive_simpson(&g, 0.0, t, 64, 1e-14)
    });
    PhaseState::new(z.x - Vec3(w1), f.momentum_at(z.p, t))
}

fn state() -> impl Strategy<Value = PhaseState> {
    prop::array::uniform6(-2.0..2.0f64).prop_map(PhaseState::from_array)
}

fn light_speed() -> impl Strategy<Value = LightSpeed> {
    prop_oneof![Just(LightSpeed::Infinite), (1.0..20.0f64).prop_map(LightSpeed::Finite)]
}

#[test]
fn uniform_field_flow_matches_closed_form() {
    let (eta, alpha) = (0.2, 1.5);
    let f = UniformDecayingField::new(eta, alpha);
    let z = PhaseState::new(Vec3::new(1.0, -0.5, 0.2), Vec3::new(0.3, 0.7, -1.1));
    let t = 20.0;
    let r = integrate_flow(z, &f, LightSpeed::Infinite, 0.0, t, 1e-3).unwrap();
    let p = f.momentum_at(z.p, t);
    // X(t) = x + t p + e1 int_0^t (eta/alpha)(1 - (1+s)^-alpha) ds
    let drift = eta / alpha * (t - (libm::pow(1.0 + t, 1.0 - alpha) - 1.0) / (1.0 - alpha));
    let x = z.x + z.p * t + Vec3::unit(0) * drift;
    assert!(r.end().distance(&PhaseState::new(x, p)) < 1e-8);
    assert_eq!(r.samples.len(), r.stats.steps + 1);
    assert!(r.samples.windows(2).all(|w| w[1].0 > w[0].0));
    assert!(r.stats.max_local_error < 1e-12);
}

#[test]
fn wave_operators_match_uniform_field_oracle() {
    let f = UniformDecayingField::new(0.1, 1.5);
    let z = PhaseState::new(Vec3::new(0.2, 1.0, -0.3), Vec3::new(-0.4, 0.9, 0.5));
    for c in [LightSpeed::Finite(1.0), LightSpeed::Finite(4.0), LightSpeed::Infinite] {
        let oracle = uniform_wave_oracle(&f, z, c, 60.0);
        let def = wave_operator_definitional(z, &f, c, 60.0, 0.01).unwrap();
        let exp = wave_operator_explicit(z, &f, c, 60.0, 0.01).unwrap();
        assert_eq!(def.route, Route::Definitional);
        assert_eq!(exp.route, Route::ExplicitFormula);
        assert!(def.output.distance(&oracle) < 1e-7, "{c:?}");
        assert!(exp.output.distance(&oracle) < 1e-7, "{c:?}");
    }
    let plain = 0.2 - uniform_position_integral(0.1, 1.5, 60.0);
    let exp = wave_operator_explicit(z, &f, LightSpeed::Infinite, 60.0, 0.01).unwrap();
    assert!((exp.output.x[0] - plain).abs() < 1e-9);
}

#[test]
fn zero_field_wave_operators_are_identity() {
    let z = PhaseState::new(Vec3::new(3.0, -1.0, 2.0), Vec3::new(0.5, 1.5, -2.0));
    for c in [LightSpeed::Finite(1.0), LightSpeed::Infinite] {
        assert!(
            wave_operator_definitional(z, &ZeroField, c, 50.0, 0.01)
                .unwrap()
                .output
                .distance(&z)
                < 1e-12
        );
        assert_eq!(wave_operator_explicit(z, &ZeroField, c, 50.0, 0.01).unwrap().output, z);
        let lim = limiting_wave_operator(z, &ZeroField, c, 100.0, 0.05, 1.5).unwrap();
        assert!(lim.output.distance(&z) < 1e-12);
        match lim.time {
            WaveTime::Plus { tail_bound, .. } => assert!(tail_bound < 1e-12),
            WaveTime::At(_) => panic!("limit marker expected"),
        }
        let r = intertwining_residual(&[z], &ZeroField, c, 5.0, 100.0, 0.05, 1.5).unwrap();
        assert!(r.residual < 1e-12);
    }
}

#[test]
fn limit_of_uniform_field() {
    let (eta, alpha) = (0.1, 1.5);
    let f = UniformDecayingField::new(eta, alpha);
    let z = PhaseState::new(Vec3::new(0.5, 0.0, 1.0), Vec3::new(0.2, -0.3, 0.4));
    let lim = limiting_wave_operator(z, &f, LightSpeed::Infinite, 200.0, 0.02, alpha).unwrap();
    let WaveTime::Plus { tail_bound, t_max } = lim.time else { panic!() };
    assert_eq!(t_max, 200.0);
    let p_plus = z.p + Vec3::unit(0) * (eta / alpha);
    let x_plus = z.x - Vec3::unit(0) * (eta / (alpha * (alpha - 1.0)));
    let exact = PhaseState::new(x_plus, p_plus);
    assert!(lim.output.distance(&exact) <= tail_bound * 1.5);
    assert!((lim.output.p - p_plus).norm() <= tail_bound);
    let extrap = lim.extrapolated.unwrap();
    assert!((extrap.p - p_plus).norm() < 1e-9, "{}", (extrap.p - p_plus).norm());
    assert!(extrap.distance(&exact) < lim.output.distance(&exact));
}

#[test]
fn doubling_t_max_shrinks_tail_by_component_rate() {
    let alpha = 1.5;
    let f = UniformDecayingField::new(0.1, alpha);
    let z = PhaseState::new(Vec3::ZERO, Vec3::new(0.5, 0.2, 0.0));
    let c = LightSpeed::Finite(4.0);
    let reference = limiting_wave_operator(z, &f, c, 3200.0, 0.05, alpha).unwrap().extrapolated.unwrap();
    let gap = |t: f64| {
        let w = limiting_wave_operator(z, &f, c, t, 0.02, alpha).unwrap().output;
        ((w.x - reference.x).norm(), (w.p - reference.p).norm())
    };
    let (x1, p1) = gap(100.0);
    let (x2, p2) = gap(200.0);
    let span = 201.0f64 / 101.0;
    assert!((p2 / p1 / libm::pow(span, -alpha) - 1.0).abs() < 0.02, "{}", p2 / p1);
    assert!((x2 / x1 / libm::pow(span, 1.0 - alpha) - 1.0).abs() < 0.1, "{}", x2 / x1);
}

#[test]
fn non_decreasing_decades_are_rejected() {
    // Constant force: W keeps growing, so the last decade moves more.
    struct Constant;
    impl ForceField for Constant {
        fn field(&self, _: f64, _: Vec3) -> Vec3 {
            Vec3::new(1e-3, 0.0, 0.0)
        }
        fn gradient(&self, _: f64, _: Vec3) -> vlasov_core::Mat3 {
            vlasov_core::Mat3::ZERO
        }
    }
    let r = limiting_wave_operator(PhaseState::default(), &Constant, LightSpeed::Infinite, 100.0, 0.1, 1.5);
    assert!(matches!(r, Err(vlasov_core::Error::NonConvergence { .. })));
}

#[test]
fn intertwining_with_spreading_source() {
    let f = SpreadingSourceField {
        amplitude: 0.05,
        alpha: 1.5,
        core: 1.0,
        center: Vec3::ZERO,
    };
    let zs = [
        PhaseState::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
        PhaseState::new(Vec3::new(-0.5, 0.5, 1.0), Vec3::new(0.7, 0.0, -0.4)),
    ];
    let c = LightSpeed::Finite(4.0);
    let a = intertwining_residual(&zs, &f, c, 5.0, 100.0, 0.02, 1.5).unwrap();
    let b = intertwining_residual(&zs, &f, c, 5.0, 400.0, 0.02, 1.5).unwrap();
    assert!(a.worst_ratio < 1.0 && b.worst_ratio < 1.0, "{a:?} {b:?}");
    assert!(b.residual < a.residual);
}

#[test]
fn momentum_deviation_stays_bounded() {
    let f = SpreadingSourceField {
        amplitude: 0.02,
        alpha: 1.5,
        core: 1.0,
        center: Vec3::ZERO,
    };
    let zs = [PhaseState::new(Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.5, 0.0))];
    let c = LightSpeed::Finite(4.0);
    let short = perturbed_momentum_check(&zs, &f, c, 100.0, 0.05, 0.02).unwrap();
    let long = perturbed_momentum_check(&zs, &f, c, 1000.0, 0.05, 0.02).unwrap();
    assert!(long.ratio < 10.0);
    assert!(long.sup_deviation - short.sup_deviation < 0.1 * short.sup_deviation);
}

fn flow_end<F: ForceField>(z: PhaseState, f: &F, c: LightSpeed, t: f64, h: f64) -> PhaseState {
    integrate_flow(z, f, c, 0.0, t, h).unwrap().end()
}

#[test]
fn flow_preserves_volume() {
    let f = SpreadingSourceField {
        amplitude: 0.3,
        alpha: 1.5,
        core: 0.5,
        center: Vec3::ZERO,
    };
    let c = LightSpeed::Finite(2.0);
    let z = PhaseState::new(Vec3::new(0.4, 0.1, -0.2), Vec3::new(0.1, 0.3, 0.0));
    let d = 1e-5;
    let mut jac = [[0.0; 6]; 6];
    for col in 0..6 {
        let mut a = z.to_array();
        let mut b = z.to_array();
        a[col] += d;
        b[col] -= d;
        let fa = flow_end(PhaseState::from_array(a), &f, c, 10.0, 0.01).to_array();
        let fb = flow_end(PhaseState::from_array(b), &f, c, 10.0, 0.01).to_array();
        for row in 0..6 {
            jac[row][col] = (fa[row] - fb[row]) / (2.0 * d);
        }
    }
    let det = nalgebra::Matrix6::from_fn(|i, j| jac[i][j]).determinant();
    assert!((det - 1.0).abs() < 1e-4, "{det}");
}

#[test]
fn rk4_step_halving_order() {
    let f = SpreadingSourceField {
        amplitude: 0.5,
        alpha: 1.5,
        core: 0.5,
        center: Vec3::ZERO,
    };
    let c = LightSpeed::Finite(2.0);
    let z = PhaseState::new(Vec3::new(0.6, -0.2, 0.1), Vec3::new(-0.2, 0.4, 0.1));
    let ends: Vec<PhaseState> = [0.1, 0.05, 0.025].iter().map(|&h| flow_end(z, &f, c, 10.0, h)).collect();
    let order = libm::log2(ends[0].distance(&ends[1]) / ends[1].distance(&ends[2]));
    assert!(order >= 3.7, "{order}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_backward_roundtrip(z in state(), c in light_speed(), amp in 0.0..0.3f64, center in prop::array::uniform3(-1.0..1.0f64)) {
        let f = SpreadingSourceField { amplitude: amp, alpha: 1.5, core: 0.5, center: Vec3(center) };
        let fwd = integrate_flow(z, &f, c, 0.0, 10.0, 0.01).unwrap();
        let back = integrate_flow(fwd.end(), &f, c, 10.0, 0.0, 0.01).unwrap();
        prop_assert!(back.end().distance(&z) < 1e-8);
    }

    #[test]
    fn two_routes_agree(z in state(), c in light_speed(), amp in 0.0..0.3f64, t in 0.5..100.0f64, center in prop::array::uniform3(-1.0..1.0f64)) {
        let f = SpreadingSourceField { amplitude: amp, alpha: 1.5, core: 0.5, center: Vec3(center) };
        let a = wave_operator_definitional(z, &f, c, t, 0.02).unwrap();
        let b = wave_operator_explicit(z, &f, c, t, 0.02).unwrap();
        prop_assert!(a.output.distance(&b.output) < 1e-7, "{}", a.output.distance(&b.output));
    }

    #[test]
    fn free_flow_inverse_is_exact_at_zero_time(z in state(), c in light_speed()) {
        prop_assert_eq!(free_flow(z, c, 0.0), z);
        prop_assert_eq!(free_flow_inverse(free_flow(z, c, 0.0), c, 0.0), z);
    }

    #[test]
    fn almost_identity_scales_with_amplitude(z in state(), amp in 0.01..0.2f64) {
        let c = LightSpeed::Finite(4.0);
        let f = SpreadingSourceField { amplitude: amp, alpha: 1.5, core: 1.0, center: Vec3::ZERO };
        let g = SpreadingSourceField { amplitude: amp / 2.0, ..f };
        let k1 = wave_operator_definitional(z, &f, c, 30.0, 0.05).unwrap().output.distance(&z) / amp;
        let k2 = wave_operator_definitional(z, &g, c, 30.0, 0.05).unwrap().output.distance(&z) / (amp / 2.0);
        prop_assert!(k1 < 20.0);
        prop_assert!((k1 - k2).abs() <= 0.25 * k1.max(k2), "{k1} {k2}");
    }
}

#[test]
fn velocity_used_by_free_flow() {
    let z = PhaseState::new(Vec3::ZERO, Vec3::new(3.0, 0.0, 0.0));
    let c = LightSpeed::Finite(4.0);
    assert_eq!(free_flow(z, c, 2.0).x, velocity(z.p, c) * 2.0);
}

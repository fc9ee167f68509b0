use proptest::prelude::*;
use vlasov::config::{parse_config, Command, RunManifest, WaveField};
use vlasov::sampling::DataFamily;
use vlasov::Error;
use vlasov_core::{Coupling, LightSpeed, PotentialSpec};

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::Simulate),
        Just(Command::WaveOp),
        Just(Command::Scatter),
        Just(Command::NrLimit),
        Just(Command::VerifyLemmas),
    ]
}

fn potential() -> impl Strategy<Value = PotentialSpec> {
    (
        1.01..1.99f64,
        prop_oneof![Just(Coupling::Attractive), Just(Coupling::Repulsive), Just(Coupling::Free)],
        0.01..2.0f64,
        0.0..2.0f64,
        prop::option::of(0.1..5.0f64),
    )
        .prop_map(|(alpha, coupling, eps, growth, screening)| {
            let base = match screening {
                Some(a) => PotentialSpec::yukawa(a, alpha, coupling, eps),
                None => PotentialSpec::power_law(alpha, coupling, eps),
            };
            base.and_then(|p| p.with_softening_growth(growth)).unwrap()
        })
}

fn manifest() -> impl Strategy<Value = RunManifest> {
    (
        command(),
        potential(),
        (10.0..500.0f64, 16usize..128, 1e-12..1e-4f64, 2usize..60, 0.001..0.2f64),
        (
            1usize..1_000_000,
            0.0..1.0f64,
            0..=i64::MAX as u64,
            any::<bool>(),
            0.1..3.0f64,
            0.1..3.0f64,
        ),
        prop::collection::vec(1.0..64.0f64, 3..6),
        (
            prop_oneof![Just(WaveField::Uniform), Just(WaveField::Spreading)],
            0.0..1.0f64,
            1usize..100,
            0.001..0.1f64,
        ),
    )
        .prop_map(|(command, potential, solver, data, speeds, wave)| {
            let mut m = RunManifest {
                command,
                ..RunManifest::default()
            };
            let s = &mut m.solver;
            (s.horizon, s.snapshots, s.picard_tol, s.max_iters, s.relative_step) = solver;
            s.potential = potential;
            (s.particles, s.data.eta, s.seed) = (data.0, data.1, data.2);
            s.data.family = if data.3 {
                DataFamily::Gaussian {
                    sigma_x: data.4,
                    sigma_p: data.5,
                }
            } else {
                DataFamily::Bump {
                    radius_x: data.4,
                    radius_p: data.5,
                }
            };
            s.light_speeds = speeds.into_iter().map(LightSpeed::Finite).collect();
            s.light_speeds.push(LightSpeed::Infinite);
            s.decay_window = Some((1.0, s.horizon / 2.0));
            m.scatter.t_max = 4.0 * s.horizon;
            m.scatter.window = (1.0, s.horizon);
            (m.wave_op.field, m.wave_op.amplitude, m.wave_op.samples, m.wave_op.step) = wave;
            m
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn manifests_round_trip_through_toml(m in manifest()) {
        m.validate().unwrap();
        let text = m.to_toml();
        prop_assert_eq!(parse_config(&text).unwrap(), m, "{}", text);
    }
}

fn parse_error(text: &str) -> (usize, String) {
    match parse_config(text) {
        Err(Error::Parse { line, key, .. }) => (line, key),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn unknown_keys_are_named_in_every_table() {
    assert_eq!(parse_error("bogus = 1\n"), (1, "bogus".into()));
    assert_eq!(parse_error("[data]\neta = 0.01\nsigma = 1.0\n"), (3, "sigma".into()));
    assert_eq!(
        parse_error("[wave_op]\n\n\nfield = \"uniform\"\nstep_size = 0.1\n"),
        (5, "step_size".into())
    );
}

#[test]
fn malformed_values_are_rejected() {
    assert!(matches!(parse_config("command = \"simulat\"\n"), Err(Error::Parse { .. })));
    assert!(matches!(
        parse_config("[solver]\nlight_speeds = [\"fast\"]\n"),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(parse_config("[solver]\nhorizon = \n"), Err(Error::Parse { .. })));
}

#[test]
fn inconsistent_values_fail_validation() {
    for text in [
        "schema = \"vlasov-run/0\"\n",
        "[solver]\nhorizon = -1.0\n",
        "[solver]\nparticles = 0\n",
        "[scatter]\nt_max = 100.0\nwindow = [5.0, 50.0]\n",
        "[scatter]\nwindow = [50.0, 5.0]\n",
        "[wave_op]\ntimes = [1.0, 500.0]\n",
        "[potential]\nbeta = 3\n",
        "[potential]\nkind = \"yukawa\"\nscreening_a = -1.0\n",
    ] {
        assert!(matches!(parse_config(text), Err(Error::Validation(_))), "{text}");
    }
}

#[test]
fn seeds_beyond_toml_integers_are_rejected() {
    let mut m = RunManifest::default();
    m.solver.seed = u64::MAX;
    assert!(matches!(m.validate(), Err(Error::Validation(_))));
    m.solver.seed = i64::MAX as u64;
    assert_eq!(parse_config(&m.to_toml()).unwrap(), m);
}

#[test]
fn infinite_speed_is_spelled_inf() {
    let m = parse_config("[solver]\nlight_speeds = [\"inf\", 1e300]\n").unwrap();
    assert_eq!(m.solver.light_speeds, vec![LightSpeed::Infinite, LightSpeed::Finite(1e300)]);
    assert!(m.to_toml().contains("\"inf\""));
}

//! Subcommand orchestration. Compute stages run on a dedicated worker pool
//! and hand their results back; only this thread touches the output
//! directory.

use crate::config::{Command, RunManifest, WaveField};
use crate::error::{Context, Error, Result};
use crate::output::{num, speed_label, ArtifactDir, Check, FitRecord, Summary};
use crate::sampling::sample_initial_data;
use crate::scatter::{limiting_state_of, nr_limit_sweep, scattering_rate};
use crate::selfconsistent::{decay_report, picard_iterate, solve, PicardState, SolverConfig};
use crate::verify::{lemma_table, random_states};
use rayon::prelude::*;
use std::time::Instant;
use vlasov_core::field::{ForceField, SpreadingSourceField, UniformDecayingField};
use vlasov_core::flows::{limiting_wave_operator, wave_operator_definitional, wave_operator_explicit, Route, WaveOperatorImage, WaveTime};
use vlasov_core::grid::density_estimate;
use vlasov_core::{LightSpeed, PhaseState, Vec3};

/// Exit status for a run whose checks all pass.
pub const EXIT_PASS: i32 = 0;
/// Exit status for a runtime error.
pub const EXIT_ERROR: i32 = 1;
/// Exit status for a completed run with failed checks.
pub const EXIT_CHECKS_FAILED: i32 = 2;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub threads: Option<usize>,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Summary,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.pass {
            EXIT_PASS
        } else {
            EXIT_CHECKS_FAILED
        }
    }
}

/// Maps a run result to the process exit status.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) => o.exit_code(),
        Err(_) => EXIT_ERROR,
    }
}

struct Session {
    out: ArtifactDir,
    pool: rayon::ThreadPool,
    quiet: bool,
    started: Instant,
    checks: Vec<Check>,
    fits: Vec<FitRecord>,
    notes: Vec<String>,
}

impl Session {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{:>8.1}s] {}", self.started.elapsed().as_secs_f64(), msg.as_ref());
        }
    }

    fn compute<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        self.pool.install(f)
    }
}

/// Runs the manifest's subcommand and writes its artifacts under
/// `manifest.out_dir`: the manifest echo, the CSVs, and `summary.json`.
pub fn run(manifest: &RunManifest, opts: &RunOptions) -> Result<RunOutcome> {
    manifest.validate()?;
    let command = manifest.command;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start {:?} worker threads: {e}", opts.threads)))?;
    let mut s = Session {
        out: ArtifactDir::create(&manifest.out_dir)?,
        pool,
        quiet: opts.quiet,
        started: Instant::now(),
        checks: Vec::new(),
        fits: Vec::new(),
        notes: Vec::new(),
    };
    s.out.text("manifest.toml", &manifest.to_toml())?;
    s.log(format!("{} -> {}", command.name(), manifest.out_dir.display()));
    let stage = match command {
        Command::Simulate => simulate(&mut s, manifest),
        Command::WaveOp => wave_op(&mut s, manifest),
        Command::Scatter => scatter(&mut s, manifest),
        Command::NrLimit => nr_limit(&mut s, manifest),
        Command::VerifyLemmas => verify_lemmas(&mut s, manifest),
    };
    stage.context(|| format!("subcommand {}", command.name()))?;
    let root = s.out.root().to_path_buf();
    let mut artifacts: Vec<String> = s
        .out
        .written()
        .iter()
        .map(|p| p.strip_prefix(&root).unwrap_or(p).display().to_string())
        .collect();
    artifacts.push("summary.json".into());
    let summary = Summary {
        schema: manifest.schema.clone(),
        command: command.name().into(),
        seed: manifest.solver.seed,
        pass: s.checks.iter().all(|c| c.pass),
        checks: s.checks,
        fits: s.fits,
        notes: s.notes,
        artifacts,
    };
    s.out.json("summary.json", &summary)?;
    if !s.quiet {
        for c in &summary.checks {
            eprintln!("{} {} = {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.rule);
        }
    }
    Ok(RunOutcome { summary })
}

fn quotient_rows(state: &PicardState) -> Vec<Vec<String>> {
    let q = state.quotients();
    state
        .residuals
        .iter()
        .enumerate()
        .map(|(i, (j, r))| vec![j.to_string(), num(*r), q.get(i).copied().flatten().map_or_else(String::new, num)])
        .collect()
}

fn simulate(s: &mut Session, m: &RunManifest) -> Result<()> {
    let cfg = &m.solver;
    let alpha = cfg.potential.alpha;
    let free = cfg.potential.beta() == 0.0;
    for &c in &cfg.light_speeds {
        let label = speed_label(c);
        s.log(format!("c = {label}: Picard iteration, N = {}", cfg.particles));
        let (data, state) = s.compute(|| solve(cfg, c)).context(|| format!("c = {label}, stage solve"))?;
        s.log(format!("c = {label}: converged = {} at iterate {}", state.converged, state.iterate));
        let report = s
            .compute(|| decay_report(&state, cfg))
            .context(|| format!("c = {label}, stage decay report"))?;

        s.out.csv(
            &format!("residuals_c{label}.csv"),
            &["j [iterate]", "r_j [force]", "quotient [1]"],
            quotient_rows(&state),
        )?;
        let rows = report.rows.iter().map(|r| {
            vec![
                num(r.t),
                num(r.norm_e),
                num(r.norm_grad_e),
                num(r.norm_rho),
                num(r.norm_grad_rho),
                num(r.mass),
            ]
        });
        s.out.csv(
            &format!("decay_c{label}.csv"),
            &[
                "t [time]",
                "normE [force]",
                "normGradE [force/length]",
                "normRho [mass/length^3]",
                "normGradRho [mass/length^4]",
                "mass [mass]",
            ],
            rows,
        )?;
        let last = state.times().len() - 1;
        let final_ens = state.ensemble_at(last)?;
        s.out.ensemble(&format!("ensemble_c{label}_t0.csv"), &data.ensemble)?;
        s.out.ensemble(&format!("ensemble_c{label}_final.csv"), &final_ens)?;
        let t_end = state.times()[last];
        let rho = density_estimate(&final_ens, state.schedule.density_grid_covering(t_end, &final_ens)?)?;
        s.out.density(&format!("density_c{label}_final"), &rho)?;

        let tag = |name: &str| format!("c = {label}: {name}");
        s.checks.push(Check::holds(tag("Picard converged"), state.converged));
        let worst_q = state.quotients().into_iter().flatten().fold(0.0_f64, f64::max);
        s.checks.push(Check::below(tag("largest contraction quotient"), worst_q, 1.0));
        if free {
            let max_e = report.rows.iter().map(|r| r.norm_e.max(r.norm_grad_e)).fold(0.0_f64, f64::max);
            s.checks.push(Check::at_most(tag("field norms (free case)"), max_e, 0.0));
            s.checks
                .push(Check::near(tag("density slope"), report.density_fit.map(|f| f.slope), -3.0, 0.2));
        } else {
            s.checks.push(Check::near(
                tag("field slope"),
                report.field_fit.map(|f| f.slope),
                -(alpha + 1.0),
                0.3,
            ));
            s.checks.push(Check::near(
                tag("field gradient slope"),
                report.gradient_fit.map(|f| f.slope),
                -(alpha + 2.0),
                0.4,
            ));
            s.checks
                .push(Check::near(tag("density slope"), report.density_fit.map(|f| f.slope), -3.0, 0.3));
        }
        s.checks.push(Check::at_most(tag("relative mass drift"), report.mass_drift, 1e-10));
        s.fits.push(FitRecord::new(
            tag("field"),
            report.field_fit.as_ref(),
            (!free).then_some((-(alpha + 1.0), 0.3)),
        ));
        s.fits.push(FitRecord::new(
            tag("field gradient"),
            report.gradient_fit.as_ref(),
            (!free).then_some((-(alpha + 2.0), 0.4)),
        ));
        s.fits.push(FitRecord::new(
            tag("density"),
            report.density_fit.as_ref(),
            Some((-3.0, if free { 0.2 } else { 0.3 })),
        ));
        s.fits
            .push(FitRecord::new(tag("density gradient"), report.density_gradient_fit.as_ref(), None));
        s.notes.push(format!(
            "c = {label}: measured eta0 = {:e} (configured {:e}), empirical initial norm proxy {:e}",
            report.measured_eta0, cfg.eta0, data.empirical_proxy
        ));
    }
    Ok(())
}

fn image_row(t: f64, img: &WaveOperatorImage) -> Vec<String> {
    let z = img.input;
    let w = img.output;
    let (route, tail) = match (img.route, img.time) {
        (_, WaveTime::Plus { tail_bound, .. }) => ("limit", tail_bound),
        (Route::Definitional, WaveTime::At(_)) => ("definitional", 0.0),
        (Route::ExplicitFormula, WaveTime::At(_)) => ("explicit", 0.0),
    };
    let mut row = vec![num(t)];
    row.extend((0..3).map(|d| num(z.x[d])));
    row.extend((0..3).map(|d| num(z.p[d])));
    row.extend((0..3).map(|d| num(w.x[d])));
    row.extend((0..3).map(|d| num(w.p[d])));
    row.push(route.into());
    row.push(num(tail));
    row
}

/// Per state: definitional and explicit images at each configured time,
/// then the limit.
fn wave_images<F: ForceField + Sync>(
    field: &F,
    c: LightSpeed,
    states: &[PhaseState],
    m: &RunManifest,
) -> Result<Vec<Vec<WaveOperatorImage>>> {
    let w = &m.wave_op;
    let alpha = m.solver.potential.alpha;
    let per_state = states
        .par_iter()
        .map(|z| {
            let mut out = Vec::with_capacity(2 * w.times.len() + 1);
            for &t in &w.times {
                out.push(wave_operator_definitional(*z, field, c, t, w.step)?);
                out.push(wave_operator_explicit(*z, field, c, t, w.step)?);
            }
            out.push(limiting_wave_operator(*z, field, c, w.t_max, w.step, alpha)?);
            Ok(out)
        })
        .collect::<vlasov_core::Result<Vec<_>>>()?;
    Ok(per_state)
}

fn wave_op(s: &mut Session, m: &RunManifest) -> Result<()> {
    let w = &m.wave_op;
    let cfg = &m.solver;
    let alpha = cfg.potential.alpha;
    for &c in &cfg.light_speeds {
        let label = speed_label(c);
        s.log(format!("c = {label}: wave operators on {} states, field {:?}", w.samples, w.field));
        let images = match w.field {
            WaveField::Uniform => {
                let f = UniformDecayingField::new(w.amplitude, alpha);
                let states = random_states(w.samples, cfg.seed, 2.0);
                s.compute(|| wave_images(&f, c, &states, m))
            }
            WaveField::Spreading => {
                let f = SpreadingSourceField {
                    amplitude: w.amplitude,
                    alpha,
                    core: cfg.potential.epsilon.max(0.1),
                    center: Vec3::ZERO,
                };
                let states = random_states(w.samples, cfg.seed, 2.0);
                s.compute(|| wave_images(&f, c, &states, m))
            }
            WaveField::SelfConsistent => {
                let data = sample_initial_data(&cfg.data, cfg.particles, cfg.seed)?;
                let run = s
                    .compute(|| picard_iterate(cfg, c, &data))
                    .context(|| format!("c = {label}, stage solve"))?;
                let states: Vec<PhaseState> = data.ensemble.states().take(w.samples).collect();
                s.compute(|| wave_images(&run.field, c, &states, m))
            }
        }
        .context(|| format!("c = {label}, stage wave operators"))?;

        let mut gap = 0.0_f64;
        let mut worst_tail = 0.0_f64;
        let mut rows = Vec::new();
        for imgs in &images {
            for pair in imgs.chunks(2) {
                if let [a, b] = pair {
                    gap = gap.max(a.output.distance(&b.output));
                }
            }
            for img in imgs {
                let t = match img.time {
                    WaveTime::At(t) => t,
                    WaveTime::Plus { t_max, tail_bound } => {
                        worst_tail = worst_tail.max(tail_bound);
                        t_max
                    }
                };
                rows.push(image_row(t, img));
            }
        }
        let header = [
            "t [time]",
            "x0 [length]",
            "x1 [length]",
            "x2 [length]",
            "p0 [momentum]",
            "p1 [momentum]",
            "p2 [momentum]",
            "W1_0 [length]",
            "W1_1 [length]",
            "W1_2 [length]",
            "W2_0 [momentum]",
            "W2_1 [momentum]",
            "W2_2 [momentum]",
            "route",
            "tail_bound [phase distance]",
        ];
        s.out.csv(&format!("wave_op_c{label}.csv"), &header, rows)?;
        s.checks
            .push(Check::at_most(format!("c = {label}: definitional vs explicit"), gap, 1e-7));
        s.checks.push(Check::holds(
            format!("c = {label}: limit tail bounds finite"),
            worst_tail.is_finite(),
        ));
    }
    Ok(())
}

fn scatter_config(m: &RunManifest) -> SolverConfig {
    let mut cfg = m.solver.clone();
    cfg.horizon = m.scatter.t_max;
    cfg.decay_window = Some(m.scatter.window);
    cfg
}

fn scatter(s: &mut Session, m: &RunManifest) -> Result<()> {
    let cfg = scatter_config(m);
    let alpha = cfg.potential.alpha;
    for &c in &cfg.light_speeds {
        let label = speed_label(c);
        s.log(format!("c = {label}: solving to t_max = {}", cfg.horizon));
        let (_, run) = s.compute(|| solve(&cfg, c)).context(|| format!("c = {label}, stage solve"))?;
        s.log(format!("c = {label}: limiting state"));
        let limit = s
            .compute(|| limiting_state_of(&run, alpha))
            .context(|| format!("c = {label}, stage limiting state"))?;
        let spec = run.schedule.phase_grid(&cfg.grid)?;
        let report = s
            .compute(|| scattering_rate(&run, &limit, m.scatter.window, &spec))
            .context(|| format!("c = {label}, stage scattering rate"))?;
        s.out.csv(
            &format!("residuals_c{label}.csv"),
            &["j [iterate]", "r_j [force]", "quotient [1]"],
            quotient_rows(&run),
        )?;
        let rows = report.rows.iter().map(|r| {
            vec![
                num(r.t),
                num(r.l1),
                num(r.l1_refined),
                num(r.displacement_bound),
                num(r.mean_position_gap),
                num(r.mean_momentum_gap),
            ]
        });
        s.out.csv(
            &format!("scatter_c{label}.csv"),
            &[
                "t [time]",
                "l1 [mass]",
                "l1_refined [mass]",
                "displacement_bound [mass]",
                "mean_position_gap [length]",
                "mean_momentum_gap [momentum]",
            ],
            rows,
        )?;
        s.out.ensemble(&format!("limit_c{label}.csv"), &limit.ensemble)?;
        let tag = |name: &str| format!("c = {label}: {name}");
        s.checks.push(Check::holds(tag("Picard converged"), run.converged));
        s.checks
            .push(Check::near(tag("scattering L1 slope"), report.fit.map(|f| f.slope), -alpha, 0.25));
        s.checks
            .push(Check::holds(tag("distances nonincreasing on the window"), report.monotone));
        s.checks.push(Check::holds(tag("L1 within displacement bound"), report.bound_holds));
        s.fits
            .push(FitRecord::new(tag("scattering L1"), report.fit.as_ref(), Some((-alpha, 0.25))));
        s.fits
            .push(FitRecord::new(tag("mean position gap"), report.position_gap_fit.as_ref(), None));
        s.fits
            .push(FitRecord::new(tag("mean momentum gap"), report.momentum_gap_fit.as_ref(), None));
        if !report.refinement_stable {
            s.notes.push(format!(
                "c = {label}: halving the phase bins changed L1 distances by more than 10%: under-resolved"
            ));
        }
        s.notes
            .push(format!("c = {label}: largest limit tail bound {:e}", limit.max_tail_bound));
        if limit.unsettled > 0 {
            s.notes.push(format!(
                "c = {label}: {} of {} particles moved more in the last decade than the one before",
                limit.unsettled,
                limit.ensemble.len()
            ));
        }
    }
    Ok(())
}

/// Name, accessor, fit, and slope tolerance of one sweep metric.
type Metric = (
    &'static str,
    fn(&crate::scatter::SweepRow) -> f64,
    Option<vlasov_core::ratefit::RateFit>,
    f64,
);

fn nr_limit(s: &mut Session, m: &RunManifest) -> Result<()> {
    let cfg = &m.solver;
    s.log(format!(
        "sweep over {:?}",
        cfg.light_speeds.iter().map(|c| speed_label(*c)).collect::<Vec<_>>()
    ));
    let report = s
        .compute(|| nr_limit_sweep(cfg, &cfg.light_speeds))
        .context(|| "stage sweep".to_string())?;
    let metrics: [Metric; 3] = [
        ("wave_operator", |r| r.wave_difference, report.wave_fit, 0.2),
        ("field", |r| r.field_difference, report.field_fit, 0.2),
        ("scattering_state", |r| r.scattering_difference, report.scattering_fit, 0.25),
    ];
    let mut rows = Vec::new();
    for (name, get, fit, _) in &metrics {
        for r in &report.rows {
            rows.push(vec![
                num(r.c),
                name.to_string(),
                num(get(r)),
                fit.map_or_else(String::new, |f| num(f.slope)),
                fit.map_or_else(String::new, |f| num(f.rms_residual)),
            ]);
        }
    }
    s.out.csv(
        "sweep.csv",
        &["c [speed]", "metric", "value [metric units]", "fit_slope [1]", "fit_residual [log]"],
        rows,
    )?;
    for (i, (name, _, fit, tol)) in metrics.iter().enumerate() {
        s.checks.push(Check::near(
            format!("{name} difference slope in c"),
            fit.map(|f| f.slope),
            -2.0,
            *tol,
        ));
        s.checks
            .push(Check::holds(format!("{name} difference nonincreasing in c"), report.monotone[i]));
        s.fits
            .push(FitRecord::new(format!("{name} difference vs c"), fit.as_ref(), Some((-2.0, *tol))));
    }
    for (c, it) in &report.iterations {
        s.notes.push(format!(
            "c = {}: Picard iterate {it}",
            if c.is_finite() { format!("{c}") } else { "inf".into() }
        ));
    }
    Ok(())
}

/// Samples drawn for each randomized kinematic check.
pub const LEMMA_SAMPLES: usize = 10_000;

fn verify_lemmas(s: &mut Session, m: &RunManifest) -> Result<()> {
    s.log("lemma checks");
    let rows = s.compute(|| lemma_table(LEMMA_SAMPLES, m.solver.seed))?;
    let table = rows.iter().map(|r| {
        vec![
            r.name.clone(),
            r.samples.to_string(),
            num(r.worst),
            num(r.limit),
            r.pass.to_string(),
        ]
    });
    s.out.csv(
        "lemmas.csv",
        &["check", "samples [count]", "worst [check units]", "limit [check units]", "pass"],
        table,
    )?;
    for r in rows {
        s.checks.push(Check {
            name: r.name,
            value: r.worst,
            rule: format!("limit {}", num(r.limit)),
            pass: r.pass,
        });
    }
    Ok(())
}

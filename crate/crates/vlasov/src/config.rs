//! Run manifests: TOML text with one table per concern. Every key has a
//! documented default; unknown keys are rejected.

use crate::error::{Error, Result};
use crate::sampling::{DataFamily, InitialData};
use crate::selfconsistent::{GridConfig, SolverConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::path::PathBuf;
use vlasov_core::{Coupling, LightSpeed, PotentialKind, PotentialSpec};

pub const SCHEMA: &str = "vlasov-run/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    WaveOp,
    Scatter,
    NrLimit,
    VerifyLemmas,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::WaveOp => "wave-op",
            Command::Scatter => "scatter",
            Command::NrLimit => "nr-limit",
            Command::VerifyLemmas => "verify-lemmas",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterConfig {
    /// Horizon for the limiting state; also the solver horizon for scatter runs.
    pub t_max: f64,
    /// Fit window for `|g(t) - f+|`.
    pub window: (f64, f64),
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            t_max: 200.0,
            window: (5.0, 50.0),
        }
    }
}

/// Force field used by `wave-op`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveField {
    /// `amplitude (1+t)^(-alpha-1) e1`, the same at every point.
    Uniform,
    /// A point source whose core widens like `1 + t`.
    Spreading,
    /// The converged mean field of a `simulate` run.
    SelfConsistent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveOpConfig {
    pub field: WaveField,
    /// Strength of the analytic fields.
    pub amplitude: f64,
    pub samples: usize,
    pub times: Vec<f64>,
    pub step: f64,
    pub t_max: f64,
}

impl Default for WaveOpConfig {
    fn default() -> Self {
        Self {
            field: WaveField::Uniform,
            amplitude: 0.1,
            samples: 32,
            times: vec![1.0, 10.0, 50.0],
            step: 0.01,
            t_max: 200.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub schema: String,
    pub command: Command,
    pub out_dir: PathBuf,
    pub solver: SolverConfig,
    pub scatter: ScatterConfig,
    pub wave_op: WaveOpConfig,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            schema: SCHEMA.into(),
            command: Command::Simulate,
            out_dir: PathBuf::from("out"),
            solver: SolverConfig::default(),
            scatter: ScatterConfig::default(),
            wave_op: WaveOpConfig::default(),
        }
    }
}

/// A light speed written as a number or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct SpeedText(LightSpeed);

impl Serialize for SpeedText {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            LightSpeed::Finite(c) => s.serialize_f64(c),
            LightSpeed::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SpeedText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        let bad = |m: String| serde::de::Error::custom(m);
        match Raw::deserialize(d)? {
            Raw::Num(c) => LightSpeed::finite(c).map(SpeedText).map_err(|e| bad(e.to_string())),
            Raw::Int(c) => LightSpeed::finite(c as f64).map(SpeedText).map_err(|e| bad(e.to_string())),
            Raw::Text(t) if t == "inf" => Ok(SpeedText(LightSpeed::Infinite)),
            Raw::Text(t) => Err(bad(format!("light speed must be a number >= 1 or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindText {
    PowerLaw,
    Yukawa,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyText {
    Gaussian,
    Bump,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawPotential {
    kind: KindText,
    alpha: f64,
    /// Coupling sign: 1 attractive, 0 free, -1 repulsive.
    beta: i32,
    epsilon: f64,
    softening_growth: f64,
    screening_a: f64,
    out_of_scope: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    horizon: f64,
    snapshots: usize,
    picard_tol: f64,
    max_iters: usize,
    relative_step: f64,
    particles: usize,
    eta0: f64,
    light_speeds: Vec<SpeedText>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay_window: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawData {
    family: FamilyText,
    eta: f64,
    sigma_x: f64,
    sigma_p: f64,
    radius_x: f64,
    radius_p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawScatter {
    t_max: f64,
    window: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawWaveOp {
    field: WaveField,
    amplitude: f64,
    samples: usize,
    times: Vec<f64>,
    step: f64,
    t_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawManifest {
    schema: String,
    command: Command,
    out_dir: PathBuf,
    seed: u64,
    potential: RawPotential,
    solver: RawSolver,
    data: RawData,
    grid: GridConfig,
    scatter: RawScatter,
    wave_op: RawWaveOp,
}

macro_rules! default_from_manifest {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                RawManifest::from(&RunManifest::default()).into_part()
            }
        }
    )*};
}

trait IntoPart<T> {
    fn into_part(self) -> T;
}

impl IntoPart<RawPotential> for RawManifest {
    fn into_part(self) -> RawPotential {
        self.potential
    }
}
impl IntoPart<RawSolver> for RawManifest {
    fn into_part(self) -> RawSolver {
        self.solver
    }
}
impl IntoPart<RawData> for RawManifest {
    fn into_part(self) -> RawData {
        self.data
    }
}
impl IntoPart<RawScatter> for RawManifest {
    fn into_part(self) -> RawScatter {
        self.scatter
    }
}
impl IntoPart<RawWaveOp> for RawManifest {
    fn into_part(self) -> RawWaveOp {
        self.wave_op
    }
}
impl IntoPart<RawManifest> for RawManifest {
    fn into_part(self) -> RawManifest {
        self
    }
}

default_from_manifest!(RawPotential, RawSolver, RawData, RawScatter, RawWaveOp, RawManifest);

impl From<&RunManifest> for RawManifest {
    fn from(m: &RunManifest) -> Self {
        let s = &m.solver;
        let p = &s.potential;
        let (kind, screening) = match p.kind {
            PotentialKind::PowerLaw => (KindText::PowerLaw, 1.0),
            PotentialKind::Yukawa { screening } => (KindText::Yukawa, screening),
        };
        let (family, sigma_x, sigma_p, radius_x, radius_p) = match s.data.family {
            DataFamily::Gaussian { sigma_x, sigma_p } => (FamilyText::Gaussian, sigma_x, sigma_p, 2.0, 2.0),
            DataFamily::Bump { radius_x, radius_p } => (FamilyText::Bump, 1.0, 1.0, radius_x, radius_p),
        };
        RawManifest {
            schema: m.schema.clone(),
            command: m.command,
            out_dir: m.out_dir.clone(),
            seed: s.seed,
            potential: RawPotential {
                kind,
                alpha: p.alpha,
                beta: p.coupling.sign() as i32,
                epsilon: p.epsilon,
                softening_growth: p.softening_growth,
                screening_a: screening,
                out_of_scope: p.out_of_scope,
            },
            solver: RawSolver {
                horizon: s.horizon,
                snapshots: s.snapshots,
                picard_tol: s.picard_tol,
                max_iters: s.max_iters,
                relative_step: s.relative_step,
                particles: s.particles,
                eta0: s.eta0,
                light_speeds: s.light_speeds.iter().copied().map(SpeedText).collect(),
                decay_window: s.decay_window.map(|(a, b)| [a, b]),
            },
            data: RawData {
                family,
                eta: s.data.eta,
                sigma_x,
                sigma_p,
                radius_x,
                radius_p,
            },
            grid: s.grid,
            scatter: RawScatter {
                t_max: m.scatter.t_max,
                window: [m.scatter.window.0, m.scatter.window.1],
            },
            wave_op: RawWaveOp {
                field: m.wave_op.field,
                amplitude: m.wave_op.amplitude,
                samples: m.wave_op.samples,
                times: m.wave_op.times.clone(),
                step: m.wave_op.step,
                t_max: m.wave_op.t_max,
            },
        }
    }
}

impl RawManifest {
    fn build(self) -> Result<RunManifest> {
        let p = self.potential;
        let kind = match p.kind {
            KindText::PowerLaw => PotentialKind::PowerLaw,
            KindText::Yukawa => PotentialKind::Yukawa { screening: p.screening_a },
        };
        let coupling = Coupling::from_sign(p.beta).map_err(|e| Error::Validation(e.to_string()))?;
        let potential = PotentialSpec {
            kind,
            alpha: p.alpha,
            coupling,
            epsilon: p.epsilon,
            softening_growth: p.softening_growth,
            out_of_scope: p.out_of_scope,
        };
        let d = self.data;
        let family = match d.family {
            FamilyText::Gaussian => DataFamily::Gaussian {
                sigma_x: d.sigma_x,
                sigma_p: d.sigma_p,
            },
            FamilyText::Bump => DataFamily::Bump {
                radius_x: d.radius_x,
                radius_p: d.radius_p,
            },
        };
        let s = self.solver;
        let solver = SolverConfig {
            horizon: s.horizon,
            snapshots: s.snapshots,
            picard_tol: s.picard_tol,
            max_iters: s.max_iters,
            relative_step: s.relative_step,
            data: InitialData { family, eta: d.eta },
            particles: s.particles,
            eta0: s.eta0,
            light_speeds: s.light_speeds.into_iter().map(|c| c.0).collect(),
            potential,
            grid: self.grid,
            decay_window: s.decay_window.map(|[a, b]| (a, b)),
            seed: self.seed,
        };
        let m = RunManifest {
            schema: self.schema,
            command: self.command,
            out_dir: self.out_dir,
            solver,
            scatter: ScatterConfig {
                t_max: self.scatter.t_max,
                window: (self.scatter.window[0], self.scatter.window[1]),
            },
            wave_op: WaveOpConfig {
                field: self.wave_op.field,
                amplitude: self.wave_op.amplitude,
                samples: self.wave_op.samples,
                times: self.wave_op.times,
                step: self.wave_op.step,
                t_max: self.wave_op.t_max,
            },
        };
        m.validate()?;
        Ok(m)
    }
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Validation(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        self.solver.validate()?;
        let (a, b) = self.scatter.window;
        if !(0.0 <= a && a < b && 4.0 * b <= self.scatter.t_max) {
            return Err(Error::Validation(format!(
                "scatter window ({a}, {b}) must be increasing and end by t_max / 4 = {}",
                self.scatter.t_max / 4.0
            )));
        }
        let w = &self.wave_op;
        if !(w.step > 0.0) || w.samples == 0 || w.times.iter().any(|t| !(*t >= 0.0 && *t <= w.t_max)) || !(w.t_max > 0.0) {
            return Err(Error::Validation(format!(
                "wave_op needs samples > 0, step > 0, t_max > 0 and times in [0, t_max]: {w:?}"
            )));
        }
        if !(w.amplitude >= 0.0 && w.amplitude.is_finite()) {
            return Err(Error::Validation(format!(
                "wave_op amplitude must be finite and nonnegative, got {}",
                w.amplitude
            )));
        }
        if w.field == WaveField::SelfConsistent && w.t_max > self.solver.horizon {
            return Err(Error::Validation(format!(
                "wave_op t_max {} exceeds the solver horizon {} that carries the self-consistent field",
                w.t_max, self.solver.horizon
            )));
        }
        if self.command == Command::NrLimit {
            let finite = self.solver.light_speeds.iter().filter(|c| c.is_finite()).count();
            if finite < 3 || !self.solver.light_speeds.contains(&LightSpeed::Infinite) {
                return Err(Error::Validation(format!(
                    "nr-limit needs at least 3 finite light speeds plus \"inf\", got {:?}",
                    self.solver.light_speeds
                )));
            }
        }
        Ok(())
    }

    /// TOML text with every field written out. The manifest must validate.
    pub fn to_toml(&self) -> String {
        toml::to_string(&RawManifest::from(self)).expect("validated manifest fields are all TOML-representable")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn key_of(text: &str, message: &str, offset: Option<usize>) -> String {
    if let Some(rest) = message.split("unknown field `").nth(1) {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(off) = offset {
        let start = text[..off.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
        let line = text[start..].lines().next().unwrap_or("");
        if let Some((k, _)) = line.split_once('=') {
            return k.trim().to_string();
        }
        return line.trim().trim_matches(['[', ']']).to_string();
    }
    String::new()
}

/// Parses and validates a manifest; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunManifest> {
    let raw: RawManifest = toml::from_str(text).map_err(|e| {
        let offset = e.span().map(|s| s.start);
        let message = e.message().to_string();
        Error::Parse {
            line: offset.map_or(0, |o| line_of(text, o)),
            key: key_of(text, &message, offset),
            reason: message,
        }
    })?;
    raw.build()
}

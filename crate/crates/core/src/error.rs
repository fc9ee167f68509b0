use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input outside the domain of a map, e.g. a superluminal velocity.
    Domain(String),
    /// A field provider was queried outside its time domain.
    FieldDomain { t: f64, start: f64, end: f64 },
    /// More than the tolerated fraction of weight fell outside a grid.
    GridCoverage { outside_fraction: f64 },
    /// Successive decade differences of a wave operator did not shrink.
    NonConvergence { earlier: f64, later: f64 },
    /// Invalid specification or parameter.
    Invalid(String),
    /// Rate fit window does not meet the minimum size or span.
    FitWindow { points: usize, span: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::FieldDomain { t, start, end } => {
                write!(f, "field queried at t = {t} outside [{start}, {end}]")
            }
            Error::GridCoverage { outside_fraction } => write!(
                f,
                "grid coverage: {:.4}% of the weight lies outside the grid",
                100.0 * outside_fraction
            ),
            Error::NonConvergence { earlier, later } => write!(
                f,
                "wave operator not converging: decade difference {later:e} >= previous {earlier:e}"
            ),
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::FitWindow { points, span } => write!(
                f,
                "fit window too small: {points} points spanning a factor {span} (need >= 5 and >= 4)"
            ),
        }
    }
}

impl core::error::Error for Error {}

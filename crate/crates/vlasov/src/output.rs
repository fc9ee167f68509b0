//! Artifact files. Every file goes to a temporary sibling first and is
//! renamed into place, so a failed run never leaves a half-written file.

use crate::error::{Error, Result};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use tempfile::NamedTempFile;
use vlasov_core::grid::DensityGrid;
use vlasov_core::ratefit::RateFit;
use vlasov_core::{LightSpeed, ParticleEnsemble};

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn speed_label(c: LightSpeed) -> String {
    match c {
        LightSpeed::Finite(v) => format!("{v}"),
        LightSpeed::Infinite => "inf".into(),
    }
}

pub struct ArtifactDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|source| Error::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Paths written so far, in order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write_with(&mut self, name: &str, body: impl FnOnce(&mut NamedTempFile) -> Result<()>) -> Result<PathBuf> {
        let path = self.root.join(name);
        let io = |source| Error::Io {
            path: path.clone(),
            source,
        };
        let mut tmp = NamedTempFile::new_in(&self.root).map_err(io)?;
        body(&mut tmp)?;
        tmp.as_file_mut().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        self.write_with(name, |f| f.write_all(text.as_bytes()).map_err(|source| Error::Io { path, source }))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    /// CSV with a header row; column names carry their units in brackets.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        self.write_with(name, |f| {
            let mut w = csv::Writer::from_writer(f);
            w.write_record(header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush().map_err(csv::Error::from)?;
            Ok(())
        })
    }

    pub fn ensemble(&mut self, name: &str, ens: &ParticleEnsemble) -> Result<PathBuf> {
        let header = [
            "id",
            "x1 [length]",
            "x2 [length]",
            "x3 [length]",
            "p1 [momentum]",
            "p2 [momentum]",
            "p3 [momentum]",
            "weight [mass]",
        ];
        let rows = (0..ens.len()).map(|i| {
            let s = ens.state(i);
            let mut row = vec![ens.ids()[i].to_string()];
            row.extend((0..3).map(|d| num(s.x[d])));
            row.extend((0..3).map(|d| num(s.p[d])));
            row.push(num(ens.weights()[i]));
            row
        });
        self.csv(name, &header, rows)
    }

    /// Density values as `(i, j, k, value)` plus a `.json` sidecar with the
    /// grid geometry.
    pub fn density(&mut self, stem: &str, rho: &DensityGrid) -> Result<()> {
        let spec = rho.spec;
        let rows = (0..spec.len()).map(|idx| {
            let [i, j, k] = spec.unravel(idx);
            vec![i.to_string(), j.to_string(), k.to_string(), num(rho.values[idx])]
        });
        self.csv(&format!("{stem}.csv"), &["i", "j", "k", "rho [mass/length^3]"], rows)?;
        #[derive(Serialize)]
        struct Meta {
            origin: [f64; 3],
            spacing: [f64; 3],
            counts: [usize; 3],
            cell_centers: &'static str,
            outside_weight: f64,
            total_weight: f64,
        }
        let meta = Meta {
            origin: spec.origin.0,
            spacing: spec.spacing.0,
            counts: spec.counts,
            cell_centers: "origin + (index + 1/2) * spacing",
            outside_weight: rho.outside_weight,
            total_weight: rho.total_weight,
        };
        self.json(&format!("{stem}.json"), &meta)?;
        Ok(())
    }
}

/// A fitted rate next to the tolerance it was judged against.
#[derive(Clone, Debug, Serialize)]
pub struct FitRecord {
    pub name: String,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub rms_residual: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub points: usize,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
}

impl FitRecord {
    pub fn new(name: impl Into<String>, fit: Option<&RateFit>, target: Option<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            rms_residual: fit.map(|f| f.rms_residual),
            window: fit.map(|f| f.window),
            points: fit.map_or(0, |f| f.points),
            target: target.map(|t| t.0),
            tolerance: target.map(|t| t.1),
        }
    }
}

/// One pass/fail line of a run summary.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance rule, e.g. `-2.5 +- 0.3` or `<= 1e-10`.
    pub rule: String,
    pub pass: bool,
}

impl Check {
    /// `value` within `tol` of `target`; a missing fit fails.
    pub fn near(name: impl Into<String>, value: Option<f64>, target: f64, tol: f64) -> Self {
        let v = value.unwrap_or(f64::NAN);
        Self {
            name: name.into(),
            value: v,
            rule: format!("{target} +- {tol}"),
            pass: (v - target).abs() <= tol,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            rule: format!("<= {limit:e}"),
            pass: value <= limit,
        }
    }

    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            rule: format!("< {limit:e}"),
            pass: value < limit,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            rule: "true".into(),
            pass: ok,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub fits: Vec<FitRecord>,
    /// Diagnostics that do not gate the exit status.
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
}

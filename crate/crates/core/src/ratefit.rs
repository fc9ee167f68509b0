//! Log-log least-squares rate fits.

use crate::error::{Error, Result};
use alloc::format;

/// Power-law fit `y ~ exp(intercept) * x^slope`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual in log space.
    pub rms_residual: f64,
    /// Smallest and largest abscissa used.
    pub window: (f64, f64),
    pub points: usize,
}

impl RateFit {
    /// Whether the slope is within `tol` of `target`.
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

pub const MIN_FIT_POINTS: usize = 5;
pub const MIN_FIT_SPAN: f64 = 4.0;

/// Least-squares line through `(ln x, ln y)`. Needs at least 5 points whose
/// abscissae span a factor of 4, all coordinates positive.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::Invalid(format!(
            "fit needs equal-length data, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if let Some((x, y)) = xs
        .iter()
        .zip(ys)
        .find(|(x, y)| !(**x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(Error::Invalid(format!("log-log fit needs positive finite data, got ({x}, {y})")));
    }
    let n = xs.len();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), x| (l.min(*x), h.max(*x)));
    let span = if n > 0 { hi / lo } else { 0.0 };
    if n < MIN_FIT_POINTS || span < MIN_FIT_SPAN {
        return Err(Error::FitWindow { points: n, span });
    }
    let lx: alloc::vec::Vec<f64> = xs.iter().map(|x| libm::log(*x)).collect();
    let ly: alloc::vec::Vec<f64> = ys.iter().map(|y| libm::log(*y)).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        rms_residual: libm::sqrt(ss / n as f64),
        window: (lo, hi),
        points: n,
    })
}

/// Least-squares `y = offset + amplitude * s` for a known regressor `s`.
/// Returns `(offset, amplitude)`; a constant regressor yields zero amplitude.
pub fn fit_offset_amplitude(s: &[f64], y: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    if s.is_empty() {
        return (0.0, 0.0);
    }
    let ms = s.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sss: f64 = s.iter().map(|v| (v - ms) * (v - ms)).sum();
    if sss == 0.0 {
        return (my, 0.0);
    }
    let ssy: f64 = s.iter().zip(y).map(|(a, b)| (a - ms) * (b - my)).sum();
    let amp = ssy / sss;
    (my - amp * ms, amp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn exact_power_law() {
        let xs: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * libm::pow(*x, -2.5)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.slope + 2.5).abs() < 1e-12);
        assert!((f.intercept - libm::log(3.0)).abs() < 1e-12);
        assert!(f.rms_residual < 1e-12);
        assert_eq!(f.window, (1.0, 10.0));
    }

    #[test]
    fn window_rules() {
        let xs = [1.0, 1.5, 2.0, 2.5, 3.0];
        assert!(matches!(fit_power_law(&xs, &[1.0; 5]), Err(Error::FitWindow { .. })));
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(fit_power_law(&xs, &[1.0; 4]), Err(Error::FitWindow { .. })));
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(fit_power_law(&xs, &[1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn offset_amplitude() {
        let s = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = s.iter().map(|v| 2.0 - 3.0 * v).collect();
        let (a, b) = fit_offset_amplitude(&s, &y);
        assert!((a - 2.0).abs() < 1e-14 && (b + 3.0).abs() < 1e-14);
    }
}

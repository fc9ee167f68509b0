//! Six-dimensional cloud-in-cell binning and binned L1 distances.

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::grid::{cic_axis, MAX_OUTSIDE_FRACTION};
use crate::sum::{self, CompensatedSum};
use crate::vec3::PhaseState;
use alloc::format;
use alloc::vec::Vec;

/// Cell-centred grid on `R^6 = x x p`, axes ordered `x1 x2 x3 p1 p2 p3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseGridSpec {
    pub origin: [f64; 6],
    pub spacing: [f64; 6],
    pub counts: [usize; 6],
}

impl PhaseGridSpec {
    pub fn new(origin: [f64; 6], spacing: [f64; 6], counts: [usize; 6]) -> Result<Self> {
        let cells: u128 = counts.iter().map(|&n| n as u128).product();
        if counts.contains(&0)
            || spacing.iter().any(|h| !(*h > 0.0 && h.is_finite()))
            || origin.iter().any(|o| !o.is_finite())
            || cells > u64::MAX as u128
        {
            return Err(Error::Invalid(format!("bad phase grid: counts {counts:?}, spacing {spacing:?}")));
        }
        Ok(Self { origin, spacing, counts })
    }

    /// Box `center +- half` per axis with the given counts.
    pub fn boxed(center: [f64; 6], half: [f64; 6], counts: [usize; 6]) -> Result<Self> {
        Self::new(
            core::array::from_fn(|d| center[d] - half[d]),
            core::array::from_fn(|d| 2.0 * half[d] / counts[d] as f64),
            counts,
        )
    }

    /// Same box with every bin width halved.
    pub fn refined(&self) -> Self {
        Self {
            origin: self.origin,
            spacing: self.spacing.map(|h| 0.5 * h),
            counts: self.counts.map(|n| 2 * n),
        }
    }

    pub fn cell_count(&self) -> u64 {
        self.counts.iter().map(|&n| n as u64).product()
    }
}

/// Nonzero cell masses of a binned ensemble, sorted by cell index.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedDistribution {
    pub spec: PhaseGridSpec,
    cells: Vec<(u64, f64)>,
    pub outside_weight: f64,
    pub total_weight: f64,
}

impl BinnedDistribution {
    /// Deposit without coverage check.
    pub fn deposit(ensemble: &ParticleEnsemble, spec: PhaseGridSpec) -> Self {
        let mut entries: Vec<(u64, f64)> = Vec::with_capacity(ensemble.len() * 64);
        let mut outside = CompensatedSum::new();
        'particles: for (state, w) in ensemble.states().zip(ensemble.weights()) {
            let z = state.to_array();
            let mut stencil = [([0usize; 2], [0.0; 2]); 6];
            for d in 0..6 {
                let rel = (z[d] - spec.origin[d]) / spec.spacing[d];
                if !(rel >= 0.0 && rel < spec.counts[d] as f64) {
                    outside.add(*w);
                    continue 'particles;
                }
                stencil[d] = cic_axis(rel, spec.counts[d]);
            }
            for corner in 0..64u32 {
                let mut idx = 0u64;
                let mut m = *w;
                for (d, (cells, weights)) in stencil.iter().enumerate() {
                    let bit = ((corner >> d) & 1) as usize;
                    m *= weights[bit];
                    idx = idx * spec.counts[d] as u64 + cells[bit] as u64;
                }
                if m != 0.0 {
                    entries.push((idx, m));
                }
            }
        }
        // Stable sort keeps particle order within a cell, so sums are reproducible.
        entries.sort_by_key(|e| e.0);
        let mut cells: Vec<(u64, f64)> = Vec::new();
        let mut i = 0;
        while i < entries.len() {
            let key = entries[i].0;
            let mut acc = CompensatedSum::new();
            while i < entries.len() && entries[i].0 == key {
                acc.add(entries[i].1);
                i += 1;
            }
            cells.push((key, acc.value()));
        }
        Self {
            spec,
            cells,
            outside_weight: outside.value(),
            total_weight: ensemble.total_weight(),
        }
    }

    /// Cloud-in-cell binning; fails if more than 0.1% of the weight is outside.
    pub fn bin(ensemble: &ParticleEnsemble, spec: PhaseGridSpec) -> Result<Self> {
        let b = Self::deposit(ensemble, spec);
        if b.total_weight > 0.0 && b.outside_weight / b.total_weight > MAX_OUTSIDE_FRACTION {
            return Err(Error::GridCoverage {
                outside_fraction: b.outside_weight / b.total_weight,
            });
        }
        Ok(b)
    }

    pub fn cells(&self) -> &[(u64, f64)] {
        &self.cells
    }

    pub fn mass(&self) -> f64 {
        sum::sum(self.cells.iter().map(|c| c.1))
    }

    /// `sum |a - b|` over cells of a shared grid.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::Invalid("binned distributions live on different grids".into()));
        }
        let (a, b) = (&self.cells, &other.cells);
        let mut acc = CompensatedSum::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
                acc.add(a[i].1.abs());
                i += 1;
            } else if i == a.len() || b[j].0 < a[i].0 {
                acc.add(b[j].1.abs());
                j += 1;
            } else {
                acc.add((a[i].1 - b[j].1).abs());
                i += 1;
                j += 1;
            }
        }
        Ok(acc.value())
    }
}

/// Binned L1 distance between two ensembles on a shared grid.
pub fn binned_l1_distance(a: &ParticleEnsemble, b: &ParticleEnsemble, spec: PhaseGridSpec) -> Result<f64> {
    BinnedDistribution::bin(a, spec)?.l1_distance(&BinnedDistribution::bin(b, spec)?)
}

/// Upper bound on the binned L1 distance between an ensemble and its
/// per-particle displacement: each hat weight is `1/h`-Lipschitz, so a particle
/// moved by `delta` changes its cell masses by at most `2 w sum_d |delta_d| / h_d`.
pub fn displacement_bound(spec: &PhaseGridSpec, weights: &[f64], from: &[PhaseState], to: &[PhaseState]) -> f64 {
    sum::sum(weights.iter().zip(from.iter().zip(to)).map(|(w, (a, b))| {
        let (za, zb) = (a.to_array(), b.to_array());
        let s: f64 = (0..6).map(|d| (za[d] - zb[d]).abs() / spec.spacing[d]).sum();
        2.0 * w * s
    }))
}

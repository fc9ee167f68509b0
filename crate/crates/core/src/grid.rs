//! Uniform spatial grids: cloud-in-cell density estimates and direct grid
//! convolutions.

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::sum::{self, CompensatedSum};
use crate::vec3::{Position3, Vec3};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Largest fraction of weight allowed outside a grid.
pub const MAX_OUTSIDE_FRACTION: f64 = 1e-3;

/// Cell-centred grid covering `[origin, origin + counts * spacing)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub counts: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: Vec3, counts: [usize; 3]) -> Result<Self> {
        if counts.contains(&0) || !(spacing.0.iter().all(|h| *h > 0.0 && h.is_finite())) || !origin.is_finite() {
            return Err(Error::Invalid(format!("bad grid: counts {counts:?}, spacing {spacing:?}")));
        }
        Ok(Self { origin, spacing, counts })
    }

    /// Cubic grid of `n^3` cells centred on `center` with half-width `half`.
    pub fn cube(center: Vec3, half: f64, n: usize) -> Result<Self> {
        let h = 2.0 * half / n as f64;
        Self::new(center - Vec3([half; 3]), Vec3([h; 3]), [n; 3])
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.counts[1] + j) * self.counts[2] + k
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.counts[2];
        let j = (idx / self.counts[2]) % self.counts[1];
        [idx / (self.counts[1] * self.counts[2]), j, k]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Position3 {
        let ijk = [i, j, k];
        Vec3(core::array::from_fn(|d| self.origin[d] + (ijk[d] as f64 + 0.5) * self.spacing[d]))
    }

    /// Two cell indices and weights per axis for a cloud-in-cell deposit, or
    /// `None` if `x` lies outside the box. Weight that would leave the box
    /// from a boundary half-cell is folded into the edge cell.
    pub fn cic_stencil(&self, x: Position3) -> Option<[([usize; 2], [f64; 2]); 3]> {
        let mut out = [([0usize; 2], [0.0; 2]); 3];
        for d in 0..3 {
            let rel = (x[d] - self.origin[d]) / self.spacing[d];
            let n = self.counts[d];
            if !(rel >= 0.0 && rel < n as f64) {
                return None;
            }
            out[d] = cic_axis(rel, n);
        }
        Some(out)
    }
}

/// Cloud-in-cell weights along one axis for a point at `rel` cells from the
/// lower edge, `0 <= rel < n`.
pub(crate) fn cic_axis(rel: f64, n: usize) -> ([usize; 2], [f64; 2]) {
    let u = rel - 0.5;
    let i0 = libm::floor(u);
    let f = u - i0;
    let lo = i0 as i64;
    if lo < 0 {
        ([0, 0], [1.0, 0.0])
    } else if lo as usize + 1 >= n {
        ([n - 1, n - 1], [1.0, 0.0])
    } else {
        ([lo as usize, lo as usize + 1], [1.0 - f, f])
    }
}

/// Density on a [`GridSpec`], in weight per unit volume.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub outside_weight: f64,
    pub total_weight: f64,
}

impl DensityGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
            outside_weight: 0.0,
            total_weight: 0.0,
        }
    }

    /// Cloud-in-cell deposit without a coverage check.
    pub fn deposit(ensemble: &ParticleEnsemble, spec: GridSpec) -> Self {
        let mut grid = Self::zeros(spec);
        let inv_vol = 1.0 / spec.cell_volume();
        let mut outside = CompensatedSum::new();
        for (x, w) in ensemble.positions().iter().zip(ensemble.weights()) {
            match spec.cic_stencil(*x) {
                None => outside.add(*w),
                Some([(ia, wa), (ib, wb), (ic, wc)]) => {
                    for a in 0..2 {
                        for b in 0..2 {
                            for c in 0..2 {
                                let m = w * wa[a] * wb[b] * wc[c];
                                grid.values[spec.index(ia[a], ib[b], ic[c])] += m * inv_vol;
                            }
                        }
                    }
                }
            }
        }
        grid.outside_weight = outside.value();
        grid.total_weight = ensemble.total_weight();
        grid
    }

    pub fn outside_fraction(&self) -> f64 {
        if self.total_weight > 0.0 {
            self.outside_weight / self.total_weight
        } else {
            0.0
        }
    }

    /// `sum(values) * cell volume`.
    pub fn integral(&self) -> f64 {
        sum::sum(self.values.iter().copied()) * self.spec.cell_volume()
    }

    pub fn l1_norm(&self) -> f64 {
        sum::sum(self.values.iter().map(|v| v.abs())) * self.spec.cell_volume()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.spec.index(i, j, k)]
    }

    /// Largest central-difference gradient magnitude over interior cells.
    pub fn gradient_sup(&self) -> f64 {
        let [nx, ny, nz] = self.spec.counts;
        if nx < 3 || ny < 3 || nz < 3 {
            return 0.0;
        }
        let h = self.spec.spacing;
        let mut best = 0.0_f64;
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                for k in 1..nz - 1 {
                    let g = Vec3::new(
                        (self.get(i + 1, j, k) - self.get(i - 1, j, k)) / (2.0 * h[0]),
                        (self.get(i, j + 1, k) - self.get(i, j - 1, k)) / (2.0 * h[1]),
                        (self.get(i, j, k + 1) - self.get(i, j, k - 1)) / (2.0 * h[2]),
                    );
                    best = best.max(g.norm());
                }
            }
        }
        best
    }
}

/// Cloud-in-cell density estimate; fails if more than 0.1% of the weight
/// falls outside the grid.
pub fn density_estimate(ensemble: &ParticleEnsemble, spec: GridSpec) -> Result<DensityGrid> {
    let grid = DensityGrid::deposit(ensemble, spec);
    let frac = grid.outside_fraction();
    if frac > MAX_OUTSIDE_FRACTION {
        return Err(Error::GridCoverage { outside_fraction: frac });
    }
    Ok(grid)
}

/// Vector kernel tabulated on all node offsets of a `counts` lattice, for
/// direct discrete convolution.
pub(crate) struct OffsetTable {
    counts: [usize; 3],
    m: [usize; 3],
    data: Vec<[f64; 3]>,
}

impl OffsetTable {
    /// `kernel(offset vector)` for every lattice offset; the zero offset is
    /// tabulated too (callers' kernels handle it).
    pub fn build(counts: [usize; 3], spacing: Vec3, kernel: impl Fn(Vec3) -> Vec3) -> Self {
        let m = [2 * counts[0] - 1, 2 * counts[1] - 1, 2 * counts[2] - 1];
        let mut data = Vec::with_capacity(m[0] * m[1] * m[2]);
        for a in 0..m[0] {
            for b in 0..m[1] {
                for c in 0..m[2] {
                    let r = Vec3::new(
                        (a as f64 - (counts[0] - 1) as f64) * spacing[0],
                        (b as f64 - (counts[1] - 1) as f64) * spacing[1],
                        (c as f64 - (counts[2] - 1) as f64) * spacing[2],
                    );
                    data.push(kernel(r).0);
                }
            }
        }
        Self { counts, m, data }
    }

    /// `out[a] = sum_b mass[b] * kernel(a - b)` over lattice nodes, summed in
    /// node order.
    pub fn convolve(&self, mass: &[f64]) -> Vec<[f64; 3]> {
        let [n0, n1, n2] = self.counts;
        let [_, m1, m2] = self.m;
        let sources: Vec<(usize, f64)> = (0..n0)
            .flat_map(|i| (0..n1).flat_map(move |j| (0..n2).map(move |k| (i, j, k))))
            .zip(mass)
            .filter(|(_, w)| **w != 0.0)
            .map(|((i, j, k), w)| ((i * m1 + j) * m2 + k, *w))
            .collect();
        let mut out = Vec::with_capacity(n0 * n1 * n2);
        for i in 0..n0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    let base = ((i + n0 - 1) * m1 + j + n1 - 1) * m2 + k + n2 - 1;
                    let mut acc = [0.0; 3];
                    for &(d, w) in &sources {
                        let kv = &self.data[base - d];
                        acc[0] += w * kv[0];
                        acc[1] += w * kv[1];
                        acc[2] += w * kv[2];
                    }
                    out.push(acc);
                }
            }
        }
        out
    }
}

/// Both sides of the interpolation inequality
/// `|grad w * h|_inf <~ |h|_1^((2-alpha)/3) |h|_inf^((alpha+1)/3)` for a
/// density given on a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, absent for a zero density.
    pub ratio: Option<f64>,
}

/// Direct grid convolution of `grad w_eps` (spec softening; the self cell is
/// skipped when unsoftened) with the density, against the norm product.
pub fn interpolation_bound_check(spec: &PotentialSpec, density: &DensityGrid) -> InterpolationReport {
    let g = &density.spec;
    let eps = spec.epsilon;
    let table = OffsetTable::build(g.counts, g.spacing, |r| {
        if eps == 0.0 && r == Vec3::ZERO {
            Vec3::ZERO
        } else {
            spec.grad_kernel_eps(r, eps)
        }
    });
    let vol = g.cell_volume();
    let mass: Vec<f64> = density.values.iter().map(|v| v * vol).collect();
    let lhs = table.convolve(&mass).iter().fold(0.0_f64, |m, e| m.max(Vec3(*e).norm()));
    let a = spec.alpha;
    let rhs = libm::pow(density.l1_norm(), (2.0 - a) / 3.0) * libm::pow(density.sup(), (a + 1.0) / 3.0);
    let ratio = if rhs > 0.0 { Some(lhs / rhs) } else { None };
    InterpolationReport { lhs, rhs, ratio }
}

/// Flags unbounded growth of the interpolation ratio along a refinement
/// sequence: every refinement increases it and the last exceeds twice the
/// first.
pub fn interpolation_ratio_diverges(ratios: &[f64]) -> bool {
    ratios.len() >= 3 && ratios.windows(2).all(|w| w[1] > w[0]) && ratios[ratios.len() - 1] > 2.0 * ratios[0]
}

//! Ensemble-backed force fields frozen on a time grid.
//!
//! Each snapshot deposits its particles onto a cubic node lattice
//! (cloud-in-cell), sums the softened kernel directly over lattice sources,
//! and interpolates trilinearly between nodes. Particles outside the lattice
//! act as individual point sources, and queries outside it are summed
//! directly. Between snapshots the field is linear in time; outside the time
//! grid it is clamped to the end snapshot.

use crate::error::{Error, Result};
use crate::field::{self, ForceField};
use crate::grid::OffsetTable;
use crate::potential::PotentialSpec;
use crate::vec3::{Mat3, Position3, Vec3};
use alloc::format;
use alloc::vec::Vec;

/// Cubic node lattice `origin + spacing * (i, j, k)`, `0 <= i, j, k < nodes`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeLattice {
    pub origin: Vec3,
    pub spacing: f64,
    pub nodes: usize,
}

impl NodeLattice {
    pub fn centered(center: Vec3, half_width: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 || !(half_width > 0.0 && half_width.is_finite()) || !center.is_finite() {
            return Err(Error::Invalid(format!("bad lattice: {nodes} nodes, half width {half_width}")));
        }
        Ok(Self {
            origin: center - Vec3([half_width; 3]),
            spacing: 2.0 * half_width / (nodes - 1) as f64,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes * self.nodes * self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, idx: usize) -> Position3 {
        let n = self.nodes;
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Lower corner index and fractional offsets of the cell containing `x`.
    fn locate(&self, x: Position3) -> Option<([usize; 3], [f64; 3])> {
        let top = (self.nodes - 1) as f64;
        let mut i0 = [0usize; 3];
        let mut f = [0.0; 3];
        for d in 0..3 {
            let u = (x[d] - self.origin[d]) / self.spacing;
            if !(u >= 0.0 && u <= top) {
                return None;
            }
            let lo = (libm::floor(u) as usize).min(self.nodes - 2);
            i0[d] = lo;
            f[d] = u - lo as f64;
        }
        Some((i0, f))
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nodes + j) * self.nodes + k
    }
}

/// The field of one frozen snapshot.
#[derive(Clone, Debug)]
pub struct FieldSnapshot {
    pub time: f64,
    pub softening: f64,
    pub lattice: NodeLattice,
    spec: PotentialSpec,
    node_field: Vec<Vec3>,
    /// Lattice sources and out-of-lattice particles, for direct sums.
    source_pos: Vec<Position3>,
    source_w: Vec<f64>,
    outliers: usize,
}

impl FieldSnapshot {
    /// Field of the given particles at time `time` (softening from the spec's
    /// schedule).
    pub fn build(spec: &PotentialSpec, time: f64, lattice: NodeLattice, positions: &[Position3], weights: &[f64]) -> Self {
        let eps = spec.softening_at(time);
        let mut mass = alloc::vec![0.0; lattice.len()];
        let mut out_pos = Vec::new();
        let mut out_w = Vec::new();
        for (x, w) in positions.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            match lattice.locate(*x) {
                Some((i0, f)) => {
                    for a in 0..2 {
                        let wa = if a == 0 { 1.0 - f[0] } else { f[0] };
                        for b in 0..2 {
                            let wb = if b == 0 { 1.0 - f[1] } else { f[1] };
                            for c in 0..2 {
                                let wc = if c == 0 { 1.0 - f[2] } else { f[2] };
                                mass[lattice.index(i0[0] + a, i0[1] + b, i0[2] + c)] += w * wa * wb * wc;
                            }
                        }
                    }
                }
                None => {
                    out_pos.push(*x);
                    out_w.push(*w);
                }
            }
        }

        let beta = spec.beta();
        let n = lattice.nodes;
        let node_field: Vec<Vec3> = if beta == 0.0 {
            alloc::vec![Vec3::ZERO; lattice.len()]
        } else {
            let table = OffsetTable::build([n; 3], Vec3([lattice.spacing; 3]), |r| {
                if eps == 0.0 && r == Vec3::ZERO {
                    Vec3::ZERO
                } else {
                    spec.grad_kernel_eps(r, eps)
                }
            });
            table
                .convolve(&mass)
                .into_iter()
                .enumerate()
                .map(|(idx, e)| {
                    let mut v = Vec3(e) * beta;
                    if !out_pos.is_empty() {
                        v += field::field_from_sources(spec, eps, &out_pos, &out_w, lattice.node(idx));
                    }
                    v
                })
                .collect()
        };

        let mut source_pos = Vec::new();
        let mut source_w = Vec::new();
        for (idx, m) in mass.iter().enumerate() {
            if *m != 0.0 {
                source_pos.push(lattice.node(idx));
                source_w.push(*m);
            }
        }
        let outliers = out_pos.len();
        source_pos.extend(out_pos);
        source_w.extend(out_w);
        Self {
            time,
            softening: eps,
            lattice,
            spec: *spec,
            node_field,
            source_pos,
            source_w,
            outliers,
        }
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn node_field(&self) -> &[Vec3] {
        &self.node_field
    }

    /// Number of particles that fell outside the lattice.
    pub fn outliers(&self) -> usize {
        self.outliers
    }

    /// Field by direct summation over the snapshot's sources.
    pub fn field_direct(&self, x: Position3) -> Vec3 {
        field::field_from_sources(&self.spec, self.softening, &self.source_pos, &self.source_w, x)
    }

    pub fn field(&self, x: Position3) -> Vec3 {
        let Some((i0, f)) = self.lattice.locate(x) else {
            return self.field_direct(x);
        };
        let mut acc = Vec3::ZERO;
        for a in 0..2 {
            let wa = if a == 0 { 1.0 - f[0] } else { f[0] };
            for b in 0..2 {
                let wb = if b == 0 { 1.0 - f[1] } else { f[1] };
                for c in 0..2 {
                    let wc = if c == 0 { 1.0 - f[2] } else { f[2] };
                    acc += self.node_field[self.lattice.index(i0[0] + a, i0[1] + b, i0[2] + c)] * (wa * wb * wc);
                }
            }
        }
        acc
    }

    /// Analytic Jacobian of the direct source sum.
    pub fn gradient(&self, x: Position3) -> Mat3 {
        field::gradient_from_sources(&self.spec, self.softening, &self.source_pos, &self.source_w, x)
    }
}

/// Piecewise-linear-in-time field through a strictly increasing series of
/// snapshots.
#[derive(Clone, Debug)]
pub struct FrozenField {
    snapshots: Vec<FieldSnapshot>,
}

impl FrozenField {
    pub fn new(snapshots: Vec<FieldSnapshot>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Invalid("frozen field needs at least one snapshot".into()));
        }
        if snapshots.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::Invalid("snapshot times must be strictly increasing".into()));
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[FieldSnapshot] {
        &self.snapshots
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.snapshots.iter().map(|s| s.time)
    }

    /// Bracketing snapshot index and linear weight of the later one.
    fn bracket(&self, t: f64) -> (usize, f64) {
        let s = &self.snapshots;
        if s.len() == 1 || t <= s[0].time {
            return (0, 0.0);
        }
        let last = s.len() - 1;
        if t >= s[last].time {
            return (last - 1, 1.0);
        }
        let k = s.partition_point(|snap| snap.time <= t) - 1;
        (k, (t - s[k].time) / (s[k + 1].time - s[k].time))
    }
}

impl ForceField for FrozenField {
    fn field(&self, t: f64, x: Position3) -> Vec3 {
        let (k, lam) = self.bracket(t);
        if lam == 0.0 {
            self.snapshots[k].field(x)
        } else if lam == 1.0 {
            self.snapshots[k + 1].field(x)
        } else {
            self.snapshots[k].field(x) * (1.0 - lam) + self.snapshots[k + 1].field(x) * lam
        }
    }

    fn gradient(&self, t: f64, x: Position3) -> Mat3 {
        let (k, lam) = self.bracket(t);
        if lam == 0.0 {
            self.snapshots[k].gradient(x)
        } else if lam == 1.0 {
            self.snapshots[k + 1].gradient(x)
        } else {
            self.snapshots[k]
                .gradient(x)
                .scale(1.0 - lam)
                .add(&self.snapshots[k + 1].gradient(x).scale(lam))
        }
    }

    fn time_domain(&self) -> (f64, f64) {
        (self.snapshots[0].time, self.snapshots[self.snapshots.len() - 1].time)
    }
}

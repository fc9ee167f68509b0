use crate::error::{Error, Result};
use crate::sum;
use crate::vec3::{Momentum3, PhaseState, Position3};
use alloc::format;
use alloc::vec::Vec;

/// Weighted particle cloud with stable identities.
///
/// Weights are nonnegative; an all-zero cloud is allowed so that vanishing
/// initial amplitude can flow through the same pipeline as the free case.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    ids: Vec<u64>,
    positions: Vec<Position3>,
    momenta: Vec<Momentum3>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(ids: Vec<u64>, positions: Vec<Position3>, momenta: Vec<Momentum3>, weights: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if positions.len() != n || momenta.len() != n || weights.len() != n {
            return Err(Error::Invalid(format!(
                "ensemble arrays differ in length: {} ids, {} positions, {} momenta, {} weights",
                n,
                positions.len(),
                momenta.len(),
                weights.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| !(positions[i].is_finite() && momenta[i].is_finite())) {
            return Err(Error::Invalid(format!("particle {} has a non-finite coordinate", ids[i])));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Invalid(format!("weights must be finite and >= 0, found {w}")));
        }
        Ok(Self {
            ids,
            positions,
            momenta,
            weights,
        })
    }

    /// Ensemble whose ids are `0..n`.
    pub fn from_states(states: &[PhaseState], weights: Vec<f64>) -> Result<Self> {
        Self::new(
            (0..states.len() as u64).collect(),
            states.iter().map(|s| s.x).collect(),
            states.iter().map(|s| s.p).collect(),
            weights,
        )
    }

    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            positions: Vec::new(),
            momenta: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn positions(&self) -> &[Position3] {
        &self.positions
    }

    pub fn momenta(&self) -> &[Momentum3] {
        &self.momenta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn state(&self, i: usize) -> PhaseState {
        PhaseState::new(self.positions[i], self.momenta[i])
    }

    pub fn states(&self) -> impl Iterator<Item = PhaseState> + '_ {
        self.positions.iter().zip(&self.momenta).map(|(x, p)| PhaseState::new(*x, *p))
    }

    /// Compensated total weight in id order.
    pub fn total_weight(&self) -> f64 {
        sum::sum(self.weights.iter().copied())
    }

    /// Same ids and weights with new phase-space coordinates (a pushforward).
    pub fn with_states(&self, states: &[PhaseState]) -> Result<Self> {
        if states.len() != self.len() {
            return Err(Error::Invalid(format!(
                "expected {} states for the pushforward, got {}",
                self.len(),
                states.len()
            )));
        }
        Self::new(
            self.ids.clone(),
            states.iter().map(|s| s.x).collect(),
            states.iter().map(|s| s.p).collect(),
            self.weights.clone(),
        )
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), self.positions.clone(), self.momenta.clone(), weights)
    }
}

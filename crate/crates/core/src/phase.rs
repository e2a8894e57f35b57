//! Phase vectors and circular arithmetic helpers.

use std::f64::consts::{PI, TAU};
use std::ops::Index;

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_to_tau(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to the modulus itself for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Reduce an angle to `(-π, π]`.
pub fn wrap_to_pi(x: f64) -> f64 {
    let r = wrap_to_tau(x);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// A point in a d-dimensional phase space, in radians.
///
/// Holds either a true phase vector, an estimate, or a grid coordinate.
/// Components are plain reals: after domain cuts the protocol works in
/// unwrapped coordinates that may leave `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint(Vec<f64>);

impl PhasePoint {
    pub fn new(phases: Vec<f64>) -> Self {
        PhasePoint(phases)
    }

    /// Construct with every component reduced to `[0, 2π)`.
    pub fn wrapped(phases: Vec<f64>) -> Self {
        PhasePoint(phases.into_iter().map(wrap_to_tau).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Largest per-axis distance to `other` measured on the circle.
    pub fn max_circular_distance(&self, other: &PhasePoint) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| wrap_to_pi(a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for PhasePoint {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for PhasePoint {
    fn from(v: Vec<f64>) -> Self {
        PhasePoint(v)
    }
}

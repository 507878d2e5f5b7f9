//! State and control spaces with per-dimension topology and a weighted metric.
//!
//! Angular dimensions live on the circle and are always normalized into
//! `[-PI, PI)`; the metric uses the shortest wrapped difference for them.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PlanningError, Result};

/// Per-dimension topology tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Real,
    Angular,
}

/// Wrap an angle into `[-PI, PI)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*PI - eps sums that land on PI
    if r >= PI {
        r -= 2.0 * PI;
    }
    r
}

/// Shortest signed difference `a - b` respecting topology.
fn dim_diff(topology: Topology, a: f64, b: f64) -> f64 {
    match topology {
        Topology::Real => a - b,
        Topology::Angular => wrap_angle(a - b),
    }
}

/// A point in a [`StateSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    values: Vec<f64>,
}

impl State {
    pub fn new(values: Vec<f64>) -> Self {
        State { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A control input; plain real vector clamped to its [`ControlSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    values: Vec<f64>,
}

impl Control {
    pub fn new(values: Vec<f64>) -> Self {
        Control { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean norm, used by the control-effort running cost.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// State space: bounds, topology and metric weights per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    topology: Vec<Topology>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    weights: Vec<f64>,
}

impl StateSpace {
    /// Build a space; angular dimensions get their bounds fixed to `[-PI, PI)`
    /// regardless of the provided values.
    pub fn new(
        topology: Vec<Topology>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let dims = topology.len();
        if lower.len() != dims || upper.len() != dims || weights.len() != dims {
            return Err(PlanningError::InvalidSpace(format!(
                "inconsistent field lengths: topology {}, lower {}, upper {}, weights {}",
                dims,
                lower.len(),
                upper.len(),
                weights.len()
            )));
        }
        if dims == 0 {
            return Err(PlanningError::InvalidSpace("zero-dimensional space".into()));
        }
        let mut lower = lower;
        let mut upper = upper;
        for i in 0..dims {
            match topology[i] {
                Topology::Real => {
                    if !(lower[i] < upper[i]) {
                        return Err(PlanningError::InvalidSpace(format!(
                            "dimension {}: lower {} must be < upper {}",
                            i, lower[i], upper[i]
                        )));
                    }
                }
                Topology::Angular => {
                    lower[i] = -PI;
                    upper[i] = PI;
                }
            }
            if !(weights[i] > 0.0) || !weights[i].is_finite() {
                return Err(PlanningError::InvalidSpace(format!(
                    "dimension {}: weight {} must be strictly positive",
                    i, weights[i]
                )));
            }
        }
        Ok(StateSpace {
            topology,
            lower,
            upper,
            weights,
        })
    }

    /// All-real space with unit weights.
    pub fn real(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let dims = lower.len();
        StateSpace::new(vec![Topology::Real; dims], lower, upper, vec![1.0; dims])
    }

    pub fn dims(&self) -> usize {
        self.topology.len()
    }

    pub fn topology(&self) -> &[Topology] {
        &self.topology
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Wrap angular entries into `[-PI, PI)`. Real entries are untouched.
    pub fn normalize(&self, values: &mut [f64]) {
        for (i, t) in self.topology.iter().enumerate() {
            if *t == Topology::Angular {
                values[i] = wrap_angle(values[i]);
            }
        }
    }

    /// Build a normalized state from raw values.
    pub fn make_state(&self, mut values: Vec<f64>) -> State {
        self.normalize(&mut values);
        State::new(values)
    }

    /// Clamp real entries into bounds and wrap angular entries.
    pub fn clamp(&self, values: &mut [f64]) {
        for i in 0..self.dims() {
            match self.topology[i] {
                Topology::Real => values[i] = values[i].clamp(self.lower[i], self.upper[i]),
                Topology::Angular => values[i] = wrap_angle(values[i]),
            }
        }
    }

    pub fn contains(&self, state: &State) -> bool {
        state.dims() == self.dims()
            && state
                .values()
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Weighted metric with wrapped angular differences; errors on dimension
    /// mismatch.
    pub fn distance(&self, a: &State, b: &State) -> Result<f64> {
        if a.dims() != self.dims() {
            return Err(PlanningError::DimensionMismatch {
                expected: self.dims(),
                got: a.dims(),
            });
        }
        if b.dims() != self.dims() {
            return Err(PlanningError::DimensionMismatch {
                expected: self.dims(),
                got: b.dims(),
            });
        }
        Ok(self.distance_unchecked(a, b))
    }

    /// Metric fast path; dimensions must already match.
    pub fn distance_unchecked(&self, a: &State, b: &State) -> f64 {
        debug_assert_eq!(a.dims(), self.dims());
        debug_assert_eq!(b.dims(), self.dims());
        let mut acc = 0.0;
        for i in 0..self.dims() {
            let d = dim_diff(self.topology[i], a.values()[i], b.values()[i]);
            acc += self.weights[i] * d * d;
        }
        acc.sqrt()
    }

    /// Per-dimension shortest difference `a - b` (wrapped on angular dims),
    /// without metric weights. Used by the optimizer residual and by noise
    /// application.
    pub fn difference(&self, a: &State, b: &State) -> Vec<f64> {
        debug_assert_eq!(a.dims(), self.dims());
        (0..self.dims())
            .map(|i| dim_diff(self.topology[i], a.values()[i], b.values()[i]))
            .collect()
    }

    /// Uniform sample within bounds (angular dims uniform on `[-PI, PI)`).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let values = (0..self.dims())
            .map(|i| rng.random_range(self.lower[i]..self.upper[i]))
            .collect();
        State::new(values)
    }
}

/// Control space: axis-aligned box of admissible controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(PlanningError::InvalidSpace(
                "control bounds must be non-empty and of equal length".into(),
            ));
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) {
                return Err(PlanningError::InvalidSpace(format!(
                    "control dimension {}: lower {} must be < upper {}",
                    i, lower[i], upper[i]
                )));
            }
        }
        Ok(ControlSpace { lower, upper })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Clamp into bounds; idempotent.
    pub fn clamp(&self, control: &mut Control) {
        for i in 0..self.dims() {
            control.values[i] = control.values[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn clamped(&self, mut control: Control) -> Control {
        self.clamp(&mut control);
        control
    }

    pub fn contains(&self, control: &Control) -> bool {
        control.dims() == self.dims()
            && control
                .values()
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Control {
        let values = (0..self.dims())
            .map(|i| rng.random_range(self.lower[i]..self.upper[i]))
            .collect();
        Control::new(values)
    }
}

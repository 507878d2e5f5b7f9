//! Trajectories, running costs and tracking error.

use serde::{Deserialize, Serialize};

use crate::error::{PlanningError, Result};
use crate::space::{Control, State, StateSpace};

/// Running-cost variant for the trajectory cost J.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFunction {
    /// Sum of state-space distances between consecutive states.
    PathLength,
    /// Sum of segment durations.
    Duration,
    /// Sum of `|u|^2 * dt` per segment.
    ControlEffort,
}

impl CostFunction {
    /// Per-segment running cost.
    pub fn step_cost(
        &self,
        space: &StateSpace,
        from: &State,
        to: &State,
        control: &Control,
        duration: f64,
    ) -> f64 {
        match self {
            CostFunction::PathLength => space.distance_unchecked(from, to),
            CostFunction::Duration => duration,
            CostFunction::ControlEffort => control.norm_sq() * duration,
        }
    }
}

/// Interleaved states, piecewise-constant controls and per-segment durations.
///
/// Lengths always satisfy `states.len() == controls.len() + 1 ==
/// durations.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<State>,
    controls: Vec<Control>,
    durations: Vec<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<State>, controls: Vec<Control>, durations: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(PlanningError::InvalidTrajectory(
                "a trajectory needs at least one state".into(),
            ));
        }
        if states.len() != controls.len() + 1 || controls.len() != durations.len() {
            return Err(PlanningError::InvalidTrajectory(format!(
                "length invariant violated: {} states, {} controls, {} durations",
                states.len(),
                controls.len(),
                durations.len()
            )));
        }
        if let Some(d) = durations.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(PlanningError::InvalidDuration(*d));
        }
        Ok(Trajectory {
            states,
            controls,
            durations,
        })
    }

    pub fn single(state: State) -> Self {
        Trajectory {
            states: vec![state],
            controls: Vec::new(),
            durations: Vec::new(),
        }
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn controls(&self) -> &[Control] {
        &self.controls
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    /// Number of segments (controls).
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn first_state(&self) -> &State {
        &self.states[0]
    }

    pub fn last_state(&self) -> &State {
        self.states.last().expect("non-empty by construction")
    }

    /// Drop the first segment, making the second state the new head.
    /// Errors when no segment is left.
    pub fn advance(&mut self) -> Result<()> {
        if self.is_empty() {
            return Err(PlanningError::InvalidTrajectory(
                "cannot advance a single-state trajectory".into(),
            ));
        }
        self.states.remove(0);
        self.controls.remove(0);
        self.durations.remove(0);
        Ok(())
    }

    /// Concatenate `self` with `other`; `other` must start where `self` ends.
    pub fn concat(&self, other: &Trajectory, space: &StateSpace) -> Result<Trajectory> {
        let joint = space.distance(self.last_state(), other.first_state())?;
        if joint > 1e-9 {
            return Err(PlanningError::InvalidTrajectory(format!(
                "concatenation endpoints differ by {joint}"
            )));
        }
        let mut states = self.states.clone();
        states.extend(other.states.iter().skip(1).cloned());
        let mut controls = self.controls.clone();
        controls.extend(other.controls.iter().cloned());
        let mut durations = self.durations.clone();
        durations.extend(other.durations.iter().cloned());
        Trajectory::new(states, controls, durations)
    }
}

/// Total cost J of a trajectory under the given running-cost variant.
pub fn trajectory_cost(traj: &Trajectory, cost: CostFunction, space: &StateSpace) -> f64 {
    let mut total = 0.0;
    for i in 0..traj.len() {
        total += cost.step_cost(
            space,
            &traj.states[i],
            &traj.states[i + 1],
            &traj.controls[i],
            traj.durations[i],
        );
    }
    total
}

/// Tracking error between a nominal and an executed state sequence:
/// total `E` plus the per-step distance sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingError {
    pub total: f64,
    pub per_step: Vec<f64>,
}

impl TrackingError {
    pub fn mean_step(&self) -> f64 {
        if self.per_step.is_empty() {
            0.0
        } else {
            self.total / self.per_step.len() as f64
        }
    }
}

/// Sum of state distances between paired nominal and executed states.
pub fn tracking_error(
    nominal: &[State],
    executed: &[State],
    space: &StateSpace,
) -> Result<TrackingError> {
    if nominal.len() != executed.len() {
        return Err(PlanningError::LengthMismatch(format!(
            "nominal has {} states, executed has {}",
            nominal.len(),
            executed.len()
        )));
    }
    let mut per_step = Vec::with_capacity(nominal.len());
    let mut total = 0.0;
    for (n, e) in nominal.iter().zip(executed.iter()) {
        let d = space.distance(n, e)?;
        per_step.push(d);
        total += d;
    }
    Ok(TrackingError { total, per_step })
}

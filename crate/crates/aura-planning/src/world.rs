//! Workspace geometry: obstacles, collision checking and goal regions.

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{PlanningError, Result};
use crate::space::{Control, State, StateSpace};

/// Resolution of swept-motion collision checking, in state-distance units.
/// Segments are subdivided adaptively so consecutive checked states are no
/// farther apart than this.
pub const COLLISION_RESOLUTION: f64 = 0.02;

/// Static obstacle in position coordinates (the leading dimensions of the
/// state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    /// Axis-aligned box, closed on its boundary.
    Box { min: Vec<f64>, max: Vec<f64> },
    /// Closed ball.
    Sphere { center: Vec<f64>, radius: f64 },
}

impl Obstacle {
    fn dims(&self) -> usize {
        match self {
            Obstacle::Box { min, .. } => min.len(),
            Obstacle::Sphere { center, .. } => center.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Obstacle::Box { min, max } => {
                if min.len() != max.len() || min.is_empty() {
                    return Err(PlanningError::InvalidSpace(
                        "box obstacle needs matching non-empty min/max".into(),
                    ));
                }
                for i in 0..min.len() {
                    if !(min[i] < max[i]) {
                        return Err(PlanningError::InvalidSpace(format!(
                            "box obstacle: min {} must be < max {} on axis {i}",
                            min[i], max[i]
                        )));
                    }
                }
            }
            Obstacle::Sphere { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) {
                    return Err(PlanningError::InvalidSpace(format!(
                        "sphere obstacle needs a non-empty center and positive radius, got {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Does the obstacle, inflated by `margin`, contain the position `p`?
    pub fn contains(&self, p: &[f64], margin: f64) -> bool {
        match self {
            Obstacle::Box { min, max } => p
                .iter()
                .zip(min.iter().zip(max.iter()))
                .all(|(x, (lo, hi))| *x >= lo - margin && *x <= hi + margin),
            Obstacle::Sphere { center, radius } => {
                let d2: f64 = p
                    .iter()
                    .zip(center.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() <= radius + margin
            }
        }
    }
}

/// Obstacle set plus a collision margin; validity means inside the state
/// bounds and outside every inflated obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// How many leading state dimensions are position coordinates.
    pos_dims: usize,
    obstacles: Vec<Obstacle>,
    /// Inflation applied to every obstacle before the containment test.
    margin: f64,
}

impl Environment {
    pub fn new(pos_dims: usize, obstacles: Vec<Obstacle>, margin: f64) -> Result<Self> {
        if pos_dims == 0 {
            return Err(PlanningError::InvalidSpace(
                "environment needs at least one position dimension".into(),
            ));
        }
        if !(margin >= 0.0) || !margin.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "collision margin must be non-negative, got {margin}"
            )));
        }
        for o in &obstacles {
            o.validate()?;
            if o.dims() != pos_dims {
                return Err(PlanningError::InvalidSpace(format!(
                    "obstacle has {} dims but the environment has {pos_dims} position dims",
                    o.dims()
                )));
            }
        }
        Ok(Environment {
            pos_dims,
            obstacles,
            margin,
        })
    }

    /// Obstacle-free environment.
    pub fn empty(pos_dims: usize) -> Self {
        Environment {
            pos_dims,
            obstacles: Vec::new(),
            margin: 0.0,
        }
    }

    pub fn pos_dims(&self) -> usize {
        self.pos_dims
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Is the bare position outside all inflated obstacles?
    pub fn is_position_free(&self, p: &[f64]) -> bool {
        self.obstacles.iter().all(|o| !o.contains(p, self.margin))
    }

    /// Full validity check: inside the space bounds and collision-free.
    pub fn is_state_valid(&self, space: &StateSpace, x: &State) -> bool {
        space.contains(x) && self.is_position_free(&x.values()[..self.pos_dims])
    }

    /// Swept validity of one constant-control segment. The motion is
    /// re-propagated with adaptively sized time substeps so consecutive
    /// checked states are at most [`COLLISION_RESOLUTION`] apart in the
    /// state metric; every sample including both endpoints must be valid.
    /// A zero-length motion is valid iff the start is.
    pub fn is_motion_valid(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
    ) -> Result<bool> {
        let space = model.state_space();
        self.sweep_motion(model, x, u, dt, |s| self.is_state_valid(space, s))
    }

    /// Like [`Environment::is_motion_valid`] but checks only obstacle
    /// clearance along the sweep, not state-space containment. Execution
    /// uses this: an observed state may sit slightly outside the nominal
    /// bounds from noise, which is not a crash, while a segment that steps
    /// across a thin obstacle between two checked endpoints is.
    pub fn is_motion_position_free(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
    ) -> Result<bool> {
        self.sweep_motion(model, x, u, dt, |s| {
            self.is_position_free(&s.values()[..self.pos_dims])
        })
    }

    fn sweep_motion(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
        check: impl Fn(&State) -> bool,
    ) -> Result<bool> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(PlanningError::InvalidDuration(dt));
        }
        let space = model.state_space();
        if !check(x) {
            return Ok(false);
        }
        if dt == 0.0 {
            return Ok(true);
        }
        if !check(&model.propagate(x, u, dt)?) {
            return Ok(false);
        }
        let min_h = dt * 1e-6;
        let mut cur = x.clone();
        let mut remaining = dt;
        let mut h = dt;
        while remaining > dt * 1e-12 {
            h = h.min(remaining);
            let (next, step) = loop {
                let cand = model.propagate(&cur, u, h)?;
                let gap = space.distance_unchecked(&cur, &cand);
                if gap <= COLLISION_RESOLUTION || h <= min_h {
                    break (cand, h);
                }
                // the gap scales roughly linearly with the step, so one
                // proportional shrink usually lands inside the resolution
                h = (h * COLLISION_RESOLUTION / gap * 0.9).max(min_h);
            };
            if !check(&next) {
                return Ok(false);
            }
            cur = next;
            remaining -= step;
            // regrow so briefly slow sections do not pin the step size
            h = step * 2.0;
        }
        Ok(true)
    }
}

/// Goal region: closed metric ball around a full-state center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: State,
    pub radius: f64,
}

impl GoalRegion {
    pub fn new(center: State, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "goal radius must be positive, got {radius}"
            )));
        }
        Ok(GoalRegion { center, radius })
    }

    /// Boundary states count as satisfying the goal.
    pub fn satisfied(&self, space: &StateSpace, x: &State) -> Result<bool> {
        Ok(space.distance(x, &self.center)? <= self.radius)
    }
}

//! Ground-truth execution: the nominal model plus bounded per-step error.
//!
//! Executors model what actually happens when a control is applied: the
//! nominal propagation plus an additive disturbance `w` with `|w| <= delta`
//! in the state metric. Observation is perfect; only the transition is noisy.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{PlanningError, Result};
use crate::space::{Control, State, StateSpace};

/// Applies one control step on the real (simulated) system.
pub trait GroundTruthExecutor: Send + Sync {
    /// Observed state after applying `u` for `dt` from `x`.
    fn execute(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
        rng: &mut dyn rand::RngCore,
    ) -> Result<State>;

    /// Bound on the per-step deviation from the nominal prediction, in
    /// state-metric units.
    fn noise_bound(&self, space: &StateSpace) -> f64;
}

fn add_noise(space: &StateSpace, nominal: State, w: &[f64]) -> State {
    let mut values = nominal.into_values();
    for (v, n) in values.iter_mut().zip(w.iter()) {
        *v += n;
    }
    space.make_state(values)
}

fn weighted_norm(space: &StateSpace, w: &[f64]) -> f64 {
    w.iter()
        .zip(space.weights().iter())
        .map(|(v, wt)| wt * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Perfect execution: ground truth equals the nominal prediction.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoiselessExecutor;

impl GroundTruthExecutor for NoiselessExecutor {
    fn execute(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
        _rng: &mut dyn rand::RngCore,
    ) -> Result<State> {
        model.propagate(x, u, dt)
    }

    fn noise_bound(&self, _space: &StateSpace) -> f64 {
        0.0
    }
}

/// Additive Gaussian disturbance with per-dimension scale `sigma`, redrawn
/// whole whenever its weighted norm exceeds `bound`.
#[derive(Debug, Clone)]
pub struct GaussianNoiseExecutor {
    pub sigma: f64,
    pub bound: f64,
}

impl GaussianNoiseExecutor {
    pub fn new(sigma: f64, bound: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "noise sigma must be non-negative, got {sigma}"
            )));
        }
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "noise bound must be positive, got {bound}"
            )));
        }
        Ok(GaussianNoiseExecutor { sigma, bound })
    }

    fn draw(&self, space: &StateSpace, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let normal = Normal::new(0.0, self.sigma).expect("validated sigma");
        // rejection sampling terminates fast for sane sigma/bound ratios;
        // the deterministic rescale fallback guarantees termination anyway
        for _ in 0..256 {
            let w: Vec<f64> = (0..space.dims()).map(|_| normal.sample(rng)).collect();
            if weighted_norm(space, &w) <= self.bound {
                return w;
            }
        }
        let mut w: Vec<f64> = (0..space.dims()).map(|_| normal.sample(rng)).collect();
        let norm = weighted_norm(space, &w);
        let scale = self.bound * 0.99 / norm.max(f64::MIN_POSITIVE);
        for v in &mut w {
            *v *= scale;
        }
        w
    }
}

impl GroundTruthExecutor for GaussianNoiseExecutor {
    fn execute(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
        rng: &mut dyn rand::RngCore,
    ) -> Result<State> {
        let space = model.state_space();
        let nominal = model.propagate(x, u, dt)?;
        if self.sigma == 0.0 {
            return Ok(nominal);
        }
        let w = self.draw(space, rng);
        Ok(add_noise(space, nominal, &w))
    }

    fn noise_bound(&self, _space: &StateSpace) -> f64 {
        self.bound
    }
}

/// Worst-case style disturbance: the same offset added every step.
#[derive(Debug, Clone)]
pub struct ConstantBiasExecutor {
    pub bias: Vec<f64>,
}

impl ConstantBiasExecutor {
    pub fn new(bias: Vec<f64>) -> Self {
        ConstantBiasExecutor { bias }
    }
}

impl GroundTruthExecutor for ConstantBiasExecutor {
    fn execute(
        &self,
        model: &dyn DynamicsModel,
        x: &State,
        u: &Control,
        dt: f64,
        _rng: &mut dyn rand::RngCore,
    ) -> Result<State> {
        let space = model.state_space();
        if self.bias.len() != space.dims() {
            return Err(PlanningError::DimensionMismatch {
                expected: space.dims(),
                got: self.bias.len(),
            });
        }
        let nominal = model.propagate(x, u, dt)?;
        Ok(add_noise(space, nominal, &self.bias))
    }

    fn noise_bound(&self, space: &StateSpace) -> f64 {
        weighted_norm(space, &self.bias)
    }
}

/// Serializable executor choice for scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    Gaussian { sigma: f64, bound: f64 },
}

impl NoiseSpec {
    pub fn build(&self) -> Result<Box<dyn GroundTruthExecutor>> {
        match self {
            NoiseSpec::None => Ok(Box::new(NoiselessExecutor)),
            NoiseSpec::Gaussian { sigma, bound } => {
                Ok(Box::new(GaussianNoiseExecutor::new(*sigma, *bound)?))
            }
        }
    }

    pub fn is_noisy(&self) -> bool {
        !matches!(self, NoiseSpec::None)
    }
}

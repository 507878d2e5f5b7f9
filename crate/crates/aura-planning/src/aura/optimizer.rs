//! Batched recovery-control optimization.
//!
//! For every (sampled start, child target) pair the batch holds one control,
//! initialized to the child's nominal control and refined by gradient
//! descent on the terminal squared error. Backtracking on the step size
//! makes each pair's loss non-increasing, so a pair that starts at loss
//! zero (the unperturbed start) keeps its nominal control bit for bit.

use rayon::prelude::*;

use crate::dynamics::DynamicsModel;
use crate::error::{PlanningError, Result};
use crate::space::{Control, State, StateSpace};

/// Pairs processed in parallel once the batch is at least this large.
const PAIR_PARALLEL_THRESHOLD: usize = 16;

/// Step-size halvings tried per gradient iteration before giving up.
const MAX_BACKTRACKS: u32 = 30;

/// One child of the upcoming tree node: the state the system should reach
/// next, the nominal control of that edge, and the edge duration.
#[derive(Debug, Clone)]
pub struct ChildTarget {
    pub state: State,
    pub control: Control,
    pub duration: f64,
    /// Tree node id of the child, when the target comes from a plan tree.
    pub node_id: Option<u64>,
}

/// The b x c table of optimized controls for one upcoming state.
#[derive(Debug, Clone, Default)]
pub struct OptimizedControlTable {
    samples: Vec<State>,
    children: Vec<ChildTarget>,
    /// Row-major: entry (i, j) recovers from sample i toward child j.
    controls: Vec<Control>,
    losses: Vec<f64>,
}

impl OptimizedControlTable {
    pub fn samples(&self) -> &[State] {
        &self.samples
    }

    pub fn children(&self) -> &[ChildTarget] {
        &self.children
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn num_children(&self) -> usize {
        self.children.len()
    }

    /// True when there is nothing to select from (no children).
    pub fn is_empty(&self) -> bool {
        self.children.is_empty() || self.samples.is_empty()
    }

    pub fn control(&self, sample: usize, child: usize) -> &Control {
        &self.controls[sample * self.children.len() + child]
    }

    pub fn loss(&self, sample: usize, child: usize) -> f64 {
        self.losses[sample * self.children.len() + child]
    }

    /// Column whose child carries the given tree node id.
    pub fn column_for_node(&self, node_id: u64) -> Option<usize> {
        self.children
            .iter()
            .position(|c| c.node_id == Some(node_id))
    }

    /// Column whose child state matches `state` within `tol`.
    pub fn column_for_state(&self, space: &StateSpace, state: &State, tol: f64) -> Option<usize> {
        self.children
            .iter()
            .position(|c| space.distance_unchecked(&c.state, state) <= tol)
    }

    /// Index of the sample nearest to `x` (ties break to the lowest index,
    /// so the unperturbed entry 0 wins when distances are equal).
    pub fn nearest_sample(&self, space: &StateSpace, x: &State) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.samples.iter().enumerate() {
            let d = space.distance_unchecked(s, x);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Squared terminal error of reaching `target` from `start` under `u`,
/// in the weighted state metric.
fn pair_loss(
    model: &dyn DynamicsModel,
    space: &StateSpace,
    start: &State,
    u: &Control,
    duration: f64,
    target: &State,
) -> Result<f64> {
    let reached = model.propagate(start, u, duration)?;
    let diff = space.difference(&reached, target);
    let w = space.weights();
    Ok(diff
        .iter()
        .zip(w)
        .map(|(d, w)| (w * d) * (w * d))
        .sum())
}

fn optimize_pair(
    model: &dyn DynamicsModel,
    start: &State,
    child: &ChildTarget,
    alpha: f64,
    iterations: usize,
) -> Result<(Control, f64, Vec<f64>)> {
    let space = model.state_space();
    let cspace = model.control_space();
    let mut u = cspace.clamped(child.control.clone());
    let mut loss = pair_loss(model, space, start, &u, child.duration, &child.state)?;
    let mut history = Vec::with_capacity(iterations + 1);
    history.push(loss);
    let w = space.weights();
    for _ in 0..iterations {
        let reached = model.propagate(start, &u, child.duration)?;
        let jac = model.jacobian_u(start, &u, child.duration)?;
        let mut residual = space.difference(&reached, &child.state);
        for (r, wd) in residual.iter_mut().zip(w) {
            *r *= 2.0 * wd * wd;
        }
        let grad = jac.transpose_mul(&residual);
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = Control::new(
                u.values()
                    .iter()
                    .zip(&grad)
                    .map(|(v, g)| v - step * g)
                    .collect(),
            );
            cspace.clamp(&mut cand);
            let cand_loss = pair_loss(model, space, start, &cand, child.duration, &child.state)?;
            if cand_loss <= loss {
                u = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // no admissible step decreases this pair any further
        }
        history.push(loss);
    }
    Ok((u, loss, history))
}

/// Run gradient descent on the full b x c batch. `samples` are the possible
/// start states (entry 0 is the unperturbed one), `children` the targets
/// with their nominal controls. Empty `children` yields an empty table; the
/// runtime then falls back to the nominal control.
pub fn optimize_batch(
    model: &dyn DynamicsModel,
    samples: &[State],
    children: &[ChildTarget],
    alpha: f64,
    iterations: usize,
) -> Result<OptimizedControlTable> {
    optimize_batch_traced(model, samples, children, alpha, iterations).map(|(t, _)| t)
}

/// Like [`optimize_batch`] but also returns the per-pair loss history
/// (initial loss, then one entry per accepted gradient step). Used by
/// diagnostics and tests that check the non-increase guarantee directly.
pub fn optimize_batch_traced(
    model: &dyn DynamicsModel,
    samples: &[State],
    children: &[ChildTarget],
    alpha: f64,
    iterations: usize,
) -> Result<(OptimizedControlTable, Vec<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(PlanningError::InvalidSpace(
            "optimize_batch needs at least one sample".into(),
        ));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(PlanningError::NonFinite("gradient step size"));
    }
    if children.is_empty() {
        return Ok((OptimizedControlTable::default(), Vec::new()));
    }
    let c = children.len();
    let pairs = samples.len() * c;
    let run = |p: usize| {
        let (i, j) = (p / c, p % c);
        optimize_pair(model, &samples[i], &children[j], alpha, iterations)
    };
    let results: Result<Vec<_>> = if pairs >= PAIR_PARALLEL_THRESHOLD {
        (0..pairs).into_par_iter().map(run).collect()
    } else {
        (0..pairs).map(run).collect()
    };
    let mut controls = Vec::with_capacity(pairs);
    let mut losses = Vec::with_capacity(pairs);
    let mut traces = Vec::with_capacity(pairs);
    for (u, loss, history) in results? {
        controls.push(u);
        losses.push(loss);
        traces.push(history);
    }
    Ok((
        OptimizedControlTable {
            samples: samples.to_vec(),
            children: children.to_vec(),
            controls,
            losses,
        },
        traces,
    ))
}

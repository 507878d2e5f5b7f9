//! Sampling-based kinodynamic planners over a persistent, resumable tree.
//!
//! Both planners use only forward propagation plus collision checks (no
//! steering function). SST keeps a sparse active set through witness
//! dominance; AO-RRT searches the state-cost product space under a
//! shrinking cost bound. Either can resume from a previous tree, which is
//! what the runtime replanner does every cycle.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{PlanningError, Result};
use crate::space::State;
use crate::trajectory::{CostFunction, Trajectory};
use crate::world::{Environment, GoalRegion};

mod nn;
mod tree;

pub use tree::{PlanTree, TreeNode};

/// Iterations treated as equivalent to one second of planning when a
/// wall-clock budget is converted for deterministic runs.
pub const DEFAULT_ITERS_PER_SECOND: f64 = 2000.0;

/// How many goal-reaching candidates a [`PlanSet`] retains.
pub const PLAN_SET_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerVariant {
    Sst,
    AoRrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub variant: PlannerVariant,
    /// Probability of sampling the goal center instead of uniformly.
    pub goal_bias: f64,
    /// SST best-near selection radius.
    pub s_bn: f64,
    /// SST witness radius; must be below `s_bn`.
    pub s_v: f64,
    /// Propagation duration sampled uniformly from
    /// `[duration_range[0], duration_range[1]] * dt_prop`.
    pub duration_range: [f64; 2],
    pub dt_prop: f64,
    /// AO-RRT weight of the cost axis in the augmented metric.
    pub cost_weight: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            variant: PlannerVariant::Sst,
            goal_bias: 0.05,
            s_bn: 0.4,
            s_v: 0.2,
            duration_range: [1.0, 3.0],
            dt_prop: 1.0,
            cost_weight: 1.0,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PlanningError::InvalidSpace(msg));
        if !(0.0..1.0).contains(&self.goal_bias) {
            return bad(format!("goal bias {} must lie in [0, 1)", self.goal_bias));
        }
        if !(self.s_v > 0.0 && self.s_v < self.s_bn) {
            return bad(format!(
                "witness radius {} must satisfy 0 < s_v < s_bn = {}",
                self.s_v, self.s_bn
            ));
        }
        if !(self.duration_range[0] > 0.0 && self.duration_range[0] <= self.duration_range[1]) {
            return bad(format!(
                "duration range {:?} must be 0 < lo <= hi",
                self.duration_range
            ));
        }
        if !(self.dt_prop > 0.0) {
            return bad(format!("dt_prop {} must be positive", self.dt_prop));
        }
        if !(self.cost_weight > 0.0) {
            return bad(format!("cost weight {} must be positive", self.cost_weight));
        }
        Ok(())
    }
}

/// Planning effort: a fixed number of iterations (deterministic) or a
/// wall-clock allowance (benchmarks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Iterations(u64),
    WallSeconds(f64),
}

impl Budget {
    /// Convert to a deterministic iteration budget at `ips` iterations per
    /// second. Iteration budgets pass through unchanged.
    pub fn to_iterations(self, ips: f64) -> Budget {
        match self {
            Budget::Iterations(n) => Budget::Iterations(n),
            Budget::WallSeconds(s) => Budget::Iterations((s * ips).round().max(0.0) as u64),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Budget::Iterations(n) => *n == 0,
            Budget::WallSeconds(s) => *s <= 0.0,
        }
    }

    /// Scale the budget by a factor (used to split a cycle's allowance).
    pub fn scaled(self, factor: f64) -> Budget {
        match self {
            Budget::Iterations(n) => Budget::Iterations((n as f64 * factor).round() as u64),
            Budget::WallSeconds(s) => Budget::WallSeconds(s * factor),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Iterations(n) => write!(f, "{n}iter"),
            Budget::WallSeconds(s) => write!(f, "{s}s"),
        }
    }
}

impl FromStr for Budget {
    type Err = PlanningError;

    /// `"5s"` or `"2.5s"` for wall time, `"10000iter"` for iterations.
    fn from_str(s: &str) -> Result<Budget> {
        let bad = || PlanningError::Scenario(format!("cannot parse budget {s:?}: use Ns or Niter"));
        if let Some(n) = s.strip_suffix("iter") {
            return n.parse::<u64>().map(Budget::Iterations).map_err(|_| bad());
        }
        if let Some(n) = s.strip_suffix('s') {
            let v: f64 = n.parse().map_err(|_| bad())?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad());
            }
            return Ok(Budget::WallSeconds(v));
        }
        Err(bad())
    }
}

impl Serialize for Budget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A goal-reaching trajectory with its cached cost and, when extracted from
/// a tree, the node ids along its path.
#[derive(Debug, Clone)]
pub struct PlanCandidate {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub node_path: Vec<u64>,
}

/// Goal-reaching candidates, best first.
#[derive(Debug, Clone, Default)]
pub struct PlanSet {
    candidates: Vec<PlanCandidate>,
}

impl PlanSet {
    pub fn new(mut candidates: Vec<PlanCandidate>) -> Self {
        sort_candidates(&mut candidates);
        candidates.truncate(PLAN_SET_CAP);
        PlanSet { candidates }
    }

    pub fn best(&self) -> Option<&PlanCandidate> {
        self.candidates.first()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PlanCandidate> {
        self.candidates.iter()
    }

    pub fn into_candidates(self) -> Vec<PlanCandidate> {
        self.candidates
    }

}

fn sort_candidates(candidates: &mut [PlanCandidate]) {
    // stable: ties keep insertion order, which is already deterministic
    candidates.sort_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap());
}

/// Grow (or create) a tree with the configured planner and return all
/// goal-reaching candidates found so far plus the live tree.
///
/// With `initial_tree` the search resumes exactly where it stopped: the
/// tree carries its own generator state, so `plan(B)` followed by a resumed
/// `plan(B)` is identical to a single `plan(2B)`.
pub fn plan(
    config: &PlannerConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
    cost: CostFunction,
    start: &State,
    budget: Budget,
    initial_tree: Option<PlanTree>,
) -> Result<(PlanSet, PlanTree)> {
    config.validate()?;
    let space = model.state_space();
    if !start.is_finite() {
        return Err(PlanningError::InvalidStart("non-finite start state".into()));
    }
    if start.dims() != space.dims() {
        return Err(PlanningError::InvalidStart(format!(
            "start has {} dims, space has {}",
            start.dims(),
            space.dims()
        )));
    }
    // collision only: executed states can drift marginally outside the
    // nominal bounds under noise, and replanning must still work from them
    if !env.is_position_free(&start.values()[..env.pos_dims()]) {
        return Err(PlanningError::InvalidStart(
            "start position is in collision".into(),
        ));
    }
    let mut tree = match initial_tree {
        Some(t) => {
            if t.config.variant != config.variant {
                return Err(PlanningError::InvalidStart(
                    "resume tree was built by a different planner variant".into(),
                ));
            }
            if t.cost != cost {
                return Err(PlanningError::InvalidStart(
                    "resume tree was built under a different cost function".into(),
                ));
            }
            let d = space.distance(t.root_state(), start)?;
            if d > 1e-9 {
                return Err(PlanningError::InvalidStart(format!(
                    "resume tree root is {d} away from the requested start"
                )));
            }
            t
        }
        None => PlanTree::new(config.clone(), space, cost, start.clone())?,
    };
    if goal.satisfied(space, tree.root_state())? {
        tree.mark_goal(tree.root_id());
    }
    match budget {
        Budget::Iterations(n) => {
            for _ in 0..n {
                planner_step(&mut tree, config, model, env, goal)?;
            }
        }
        Budget::WallSeconds(s) => {
            let deadline = Instant::now() + std::time::Duration::from_secs_f64(s.max(0.0));
            while Instant::now() < deadline {
                planner_step(&mut tree, config, model, env, goal)?;
            }
        }
    }
    let plans = collect_plans(&tree)?;
    Ok((plans, tree))
}

/// Materialize the plan set of a tree: trajectories of all goal nodes,
/// sorted by cost, capped at [`PLAN_SET_CAP`].
pub fn collect_plans(tree: &PlanTree) -> Result<PlanSet> {
    // rank by stored cost first so only the plans that can make the capped
    // set pay for trajectory extraction
    let mut ranked: Vec<(f64, u64)> = tree
        .goal_node_ids()
        .iter()
        .map(|&id| Ok((tree.node(id)?.cost_to_come, id)))
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
    ranked.truncate(PLAN_SET_CAP);
    let mut candidates = Vec::with_capacity(ranked.len());
    for (cost, id) in ranked {
        candidates.push(PlanCandidate {
            trajectory: tree.extract_trajectory(id)?,
            cost,
            node_path: tree.extract_path(id)?,
        });
    }
    Ok(PlanSet::new(candidates))
}

fn planner_step(
    tree: &mut PlanTree,
    config: &PlannerConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
) -> Result<()> {
    tree.iterations += 1;
    match config.variant {
        PlannerVariant::Sst => sst_step(tree, config, model, env, goal),
        PlannerVariant::AoRrt => aorrt_step(tree, config, model, env, goal),
    }
}

fn sample_target(
    tree: &mut PlanTree,
    config: &PlannerConfig,
    model: &dyn DynamicsModel,
    goal: &GoalRegion,
) -> State {
    let biased = tree.rng.random_bool(config.goal_bias);
    if biased {
        goal.center.clone()
    } else {
        model.state_space().sample_uniform(&mut tree.rng)
    }
}

fn sample_duration(tree: &mut PlanTree, config: &PlannerConfig) -> f64 {
    let lo = config.duration_range[0] * config.dt_prop;
    let hi = config.duration_range[1] * config.dt_prop;
    if hi > lo {
        tree.rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sst_step(
    tree: &mut PlanTree,
    config: &PlannerConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
) -> Result<()> {
    let space = model.state_space();
    let x_rand = sample_target(tree, config, model, goal);

    // BestNear: cheapest active node within s_bn of the sample, else nearest
    let selected = {
        let near = tree.nn.within(x_rand.values(), config.s_bn);
        if near.is_empty() {
            tree.nn.nearest(x_rand.values()).unwrap_or(tree.root)
        } else {
            near.into_iter()
                .min_by(|a, b| {
                    let ca = tree.nodes[a].cost_to_come;
                    let cb = tree.nodes[b].cost_to_come;
                    ca.partial_cmp(&cb).unwrap().then(a.cmp(b))
                })
                .unwrap()
        }
    };

    let u = model.control_space().sample_uniform(&mut tree.rng);
    let dur = sample_duration(tree, config);
    let x_sel = tree.nodes[&selected].state.clone();
    let x_new = model.propagate(&x_sel, &u, dur)?;
    if !env.is_motion_valid(model, &x_sel, &u, dur)? {
        return Ok(());
    }

    let key = x_new.values().to_vec();
    let witness = tree.witness_lookup(&key);
    if let Some(idx) = witness {
        let rep = tree.witnesses[idx].rep;
        let rep_cost = tree.nodes[&rep].cost_to_come;
        let new_cost =
            tree.nodes[&selected].cost_to_come + tree.step_cost(&x_sel, &x_new, &u, dur);
        if new_cost >= rep_cost {
            return Ok(()); // dominated inside the witness region
        }
    }

    let reached_goal = goal.satisfied(space, &x_new)?;
    let id = tree.add_node(selected, x_new, u, dur)?;
    if reached_goal {
        tree.mark_goal(id);
    }
    if let Some(old) = tree.claim_witness(witness, id, key) {
        tree.deactivate(old);
    }
    Ok(())
}

fn aorrt_step(
    tree: &mut PlanTree,
    config: &PlannerConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
) -> Result<()> {
    let space = model.state_space();
    let x_rand = sample_target(tree, config, model, goal);
    let ceiling = tree.cost_sampling_ceiling();
    let c_rand = if ceiling > 0.0 {
        tree.rng.random_range(0.0..ceiling)
    } else {
        0.0
    };
    let mut key = x_rand.values().to_vec();
    key.push(c_rand);
    let selected = tree.nn.nearest(&key).unwrap_or(tree.root);

    let u = model.control_space().sample_uniform(&mut tree.rng);
    let dur = sample_duration(tree, config);
    let x_sel = tree.nodes[&selected].state.clone();
    let x_new = model.propagate(&x_sel, &u, dur)?;
    if !env.is_motion_valid(model, &x_sel, &u, dur)? {
        return Ok(());
    }

    let new_cost = tree.nodes[&selected].cost_to_come + tree.step_cost(&x_sel, &x_new, &u, dur);
    if new_cost > tree.cost_bound {
        return Ok(()); // outside the shrinking bound
    }
    let reached_goal = goal.satisfied(space, &x_new)?;
    let id = tree.add_node(selected, x_new, u, dur)?;
    if reached_goal {
        tree.mark_goal(id);
        if new_cost < tree.cost_bound {
            tree.cost_bound = new_cost;
            tree.enforce_cost_bound();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;

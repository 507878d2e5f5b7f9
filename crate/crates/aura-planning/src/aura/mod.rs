//! The concurrent execute / replan / optimize runtime.
//!
//! After an offline planning phase, each control cycle runs three workers:
//! the executor applies the chosen control to the ground-truth system, the
//! replanner re-roots the tree at the upcoming nominal state and keeps
//! searching, and the optimizer precomputes recovery controls for a batch
//! of perturbed starts. A barrier joins them, costs are recalculated
//! against the observed state, and the next control is selected from the
//! optimized table (or the nominal plan when no table entry applies).
//!
//! With iteration budgets the whole runtime is deterministic: worker
//! results do not depend on scheduling, so the threaded and sequential
//! paths produce identical reports.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{PlanningError, Result};
use crate::executor::GroundTruthExecutor;
use crate::planner::{
    plan, Budget, PlanCandidate, PlanSet, PlanTree, PlannerConfig, DEFAULT_ITERS_PER_SECOND,
};
use crate::space::{Control, State, StateSpace};
use crate::trajectory::{trajectory_cost, CostFunction, TrackingError, Trajectory};
use crate::world::{Environment, GoalRegion};

mod optimizer;

pub use optimizer::{
    optimize_batch, optimize_batch_traced, ChildTarget, OptimizedControlTable,
};

/// Seed offsets so the executor noise and the neighborhood sampler draw
/// from streams independent of the planner's. The noise stream is shared
/// with the baseline runners so a seed pins one noise realization across
/// methods.
pub(crate) const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const SAMPLE_STREAM: u64 = 0x2545_f491_4f6c_dd1d;
pub(crate) const RESTART_STREAM: u64 = 0x517c_c1b7_2722_0a95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuraConfig {
    /// Offline planning time in seconds.
    pub t_init: f64,
    /// Control duration: the period of one runtime cycle, and the duration
    /// of every tree edge (the planner's propagation duration is forced to
    /// exactly this value so executed segments line up with plan edges).
    pub delta_t: f64,
    /// Per-dimension scale for neighborhood sampling. Empty means zero for
    /// every dimension.
    pub sigma: Vec<f64>,
    /// Neighborhood batch size (entry 0 is always the unperturbed state).
    pub b: usize,
    /// Gradient step size.
    pub alpha: f64,
    /// Gradient iterations per cycle.
    pub n_grad: usize,
    pub planner: PlannerConfig,
    pub cost: CostFunction,
    pub replan_enabled: bool,
    pub optimize_enabled: bool,
    /// Orchestration slack: the cycle may exceed `delta_t` by at most this
    /// much wall time in real-time mode.
    pub slack: f64,
    /// Offline phase keeps planning in `t_init` increments up to this many
    /// rounds before reporting failure.
    pub max_offline_rounds: usize,
    /// Restart-from-observed-state attempts before giving up.
    pub max_restarts: usize,
    /// Hard cap on runtime cycles; exceeding it is a failure, not a hang.
    pub max_cycles: usize,
    /// Replace wall-clock budgets with iteration budgets and a virtual
    /// clock; runs the workers sequentially.
    pub deterministic: bool,
    /// Iterations treated as one second when converting budgets.
    pub ips: f64,
}

impl Default for AuraConfig {
    fn default() -> Self {
        AuraConfig {
            t_init: 5.0,
            delta_t: 1.0,
            sigma: Vec::new(),
            b: 32,
            alpha: 0.1,
            n_grad: 100,
            planner: PlannerConfig::default(),
            cost: CostFunction::PathLength,
            replan_enabled: true,
            optimize_enabled: true,
            slack: 0.05,
            max_offline_rounds: 10,
            max_restarts: 3,
            max_cycles: 1000,
            deterministic: false,
            ips: DEFAULT_ITERS_PER_SECOND,
        }
    }
}

impl AuraConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PlanningError::InvalidSpace(m));
        if !(self.t_init > 0.0) || !self.t_init.is_finite() {
            return bad(format!("t_init {} must be positive", self.t_init));
        }
        if !(self.delta_t > 0.0) || !self.delta_t.is_finite() {
            return bad(format!("delta_t {} must be positive", self.delta_t));
        }
        if self.b < 1 {
            return bad("batch size b must be at least 1".into());
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(self.slack >= 0.0) {
            return bad(format!("slack {} must be non-negative", self.slack));
        }
        if self.max_offline_rounds < 1 {
            return bad("max_offline_rounds must be at least 1".into());
        }
        if !(self.ips > 0.0) {
            return bad(format!("ips {} must be positive", self.ips));
        }
        for s in &self.sigma {
            if !(*s >= 0.0) || !s.is_finite() {
                return bad(format!("sigma entries must be non-negative, got {s}"));
            }
        }
        self.planner.validate()
    }

    /// Planner configuration actually used by the runtime: every tree edge
    /// lasts exactly `delta_t` so one cycle consumes one edge.
    pub fn effective_planner(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        p.dt_prop = self.delta_t;
        p.duration_range = [1.0, 1.0];
        p
    }

    /// Resolve `sigma` against a state space (empty means all zeros).
    pub fn sigma_for(&self, space: &StateSpace) -> Result<Vec<f64>> {
        if self.sigma.is_empty() {
            return Ok(vec![0.0; space.dims()]);
        }
        if self.sigma.len() != space.dims() {
            return Err(PlanningError::LengthMismatch(format!(
                "sigma has {} entries for a {}-dimensional space",
                self.sigma.len(),
                space.dims()
            )));
        }
        Ok(self.sigma.clone())
    }

    fn phase_budget(&self, seconds: f64) -> Budget {
        if self.deterministic {
            Budget::WallSeconds(seconds).to_iterations(self.ips)
        } else {
            Budget::WallSeconds(seconds)
        }
    }
}

/// Where an executed control came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSource {
    /// The first control of the current best plan.
    Nominal,
    /// Entry (sample, child) of the optimized table.
    Table { sample: usize, child: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Nominal state the executed control was driving toward.
    pub x_next: Vec<f64>,
    /// Observed ground-truth state at the end of the cycle.
    pub x_gt: Vec<f64>,
    /// Control applied during this cycle.
    pub control: Vec<f64>,
    pub control_source: ControlSource,
    /// Recalculated effective costs of the surviving candidates.
    pub candidate_costs: Vec<f64>,
    pub best_cost: f64,
    pub exec_seconds: f64,
    pub replan_seconds: f64,
    pub optimize_seconds: f64,
    pub sync_seconds: f64,
    /// Distance between observed and nominal state.
    pub step_error: f64,
    /// Restart attempts consumed during this cycle.
    pub restarts: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub records: Vec<CycleRecord>,
    pub success: bool,
    pub cycles: usize,
    /// Total task time: offline + cycles + restarts. Virtual in
    /// deterministic mode, measured otherwise.
    pub task_seconds: f64,
    pub offline_seconds: f64,
    pub restart_seconds: f64,
    /// Cost of the best offline plan, if one was found.
    pub offline_cost: Option<f64>,
    /// Cost of the executed trajectory under the configured cost function.
    pub executed_cost: f64,
    pub tracking: TrackingError,
    pub restarts: usize,
    /// The executed trajectory: ground-truth states under applied controls.
    #[serde(skip, default = "placeholder_trajectory")]
    pub executed: Trajectory,
    pub failure: Option<String>,
}

fn placeholder_trajectory() -> Trajectory {
    Trajectory::single(State::new(Vec::new()))
}

impl ExecutionReport {
    pub(crate) fn failed(reason: String, offline_seconds: f64, task_seconds: f64) -> Self {
        ExecutionReport {
            records: Vec::new(),
            success: false,
            cycles: 0,
            task_seconds,
            offline_seconds,
            restart_seconds: 0.0,
            offline_cost: None,
            executed_cost: 0.0,
            tracking: TrackingError {
                total: 0.0,
                per_step: Vec::new(),
            },
            restarts: 0,
            executed: placeholder_trajectory(),
            failure: Some(reason),
        }
    }
}

/// Draw `b` states around `x`: entry 0 is `x` itself, the rest add
/// independent Gaussian noise with per-dimension scale `sigma`, wrapped and
/// clamped into the space.
pub fn sample_nearby(
    space: &StateSpace,
    x: &State,
    sigma: &[f64],
    b: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<State>> {
    if b == 0 {
        return Err(PlanningError::InvalidSpace(
            "neighborhood batch size must be at least 1".into(),
        ));
    }
    if sigma.len() != space.dims() {
        return Err(PlanningError::LengthMismatch(format!(
            "sigma has {} entries for a {}-dimensional space",
            sigma.len(),
            space.dims()
        )));
    }
    let mut out = Vec::with_capacity(b);
    out.push(x.clone());
    for _ in 1..b {
        let mut vals = x.values().to_vec();
        for (v, s) in vals.iter_mut().zip(sigma) {
            if *s > 0.0 {
                let n = Normal::new(0.0, *s)
                    .map_err(|_| PlanningError::NonFinite("sampling scale"))?;
                *v += n.sample(rng);
            }
        }
        space.clamp(&mut vals);
        out.push(State::new(vals));
    }
    Ok(out)
}

/// Re-rank candidates against the observed state: effective cost is the
/// deviation from the candidate's first state plus its remaining nominal
/// cost. Candidates whose first segment sweeps through an obstacle when
/// re-executed from `x_gt` are dropped. The check is position-only on
/// purpose: noise can leave `x_gt` slightly outside the nominal velocity
/// bounds, and rejecting every candidate for that would force a restart
/// where a small correction suffices. An empty result is the signal to
/// restart.
pub fn recalculate_costs(
    model: &dyn DynamicsModel,
    env: &Environment,
    x_gt: &State,
    plans: &PlanSet,
) -> Result<PlanSet> {
    let space = model.state_space();
    let mut out = Vec::new();
    for cand in plans.iter() {
        let deviation = space.distance(x_gt, cand.trajectory.first_state())?;
        if cand.trajectory.len() >= 1 {
            let u = &cand.trajectory.controls()[0];
            let dur = cand.trajectory.durations()[0];
            if !env.is_motion_position_free(model, x_gt, u, dur)? {
                continue;
            }
        }
        out.push(PlanCandidate {
            trajectory: cand.trajectory.clone(),
            cost: deviation + cand.cost,
            node_path: cand.node_path.clone(),
        });
    }
    if out.is_empty() {
        return Err(PlanningError::CandidatesExhausted);
    }
    Ok(PlanSet::new(out))
}

/// The sample row used to execute toward the chosen child column: nearest
/// table sample to the observed state (entry 0 is the unperturbed state, so
/// zero deviation selects the nominal control).
pub fn select_execution_control(
    space: &StateSpace,
    x_gt: &State,
    table: &OptimizedControlTable,
    child_column: usize,
) -> Result<(Control, usize)> {
    if table.is_empty() || child_column >= table.num_children() {
        return Err(PlanningError::InvalidSpace(
            "control table has no entry for the requested child".into(),
        ));
    }
    let row = table
        .nearest_sample(space, x_gt)
        .expect("non-empty table has a nearest sample");
    Ok((table.control(row, child_column).clone(), row))
}

fn best_with_edge(plans: &PlanSet) -> Option<&PlanCandidate> {
    plans.iter().find(|c| c.trajectory.len() >= 1)
}

/// What the runtime tracks about the edge currently being executed.
struct ExecutionTarget {
    control: Control,
    source: ControlSource,
    x_next: State,
    x_next_id: Option<u64>,
}

fn choose_target(
    space: &StateSpace,
    best: &PlanCandidate,
    table: &OptimizedControlTable,
    x_gt: &State,
    tree_mode: bool,
) -> ExecutionTarget {
    let x_next = best.trajectory.states()[1].clone();
    let x_next_id = best.node_path.get(1).copied();
    let column = if table.is_empty() {
        None
    } else if tree_mode {
        x_next_id.and_then(|id| table.column_for_node(id))
    } else {
        table.column_for_state(space, &x_next, 1e-9)
    };
    match column {
        Some(col) => {
            let (control, row) = select_execution_control(space, x_gt, table, col)
                .expect("column checked against table");
            ExecutionTarget {
                control,
                source: ControlSource::Table {
                    sample: row,
                    child: col,
                },
                x_next,
                x_next_id,
            }
        }
        None => ExecutionTarget {
            control: best.trajectory.controls()[0].clone(),
            source: ControlSource::Nominal,
            x_next,
            x_next_id,
        },
    }
}

/// Offline-style planning: keep growing in `t_init` rounds until a plan
/// exists or the round cap is hit. Returns the plans, tree, and rounds used.
fn plan_rounds(
    cfg: &AuraConfig,
    planner_cfg: &PlannerConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
    start: &State,
) -> Result<(PlanSet, PlanTree, usize)> {
    let budget = cfg.phase_budget(cfg.t_init);
    let (mut plans, mut tree) = plan(
        planner_cfg,
        model,
        env,
        goal,
        cfg.cost,
        start,
        budget,
        None,
    )?;
    let mut rounds = 1;
    while plans.is_empty() && rounds < cfg.max_offline_rounds {
        let (p, t) = plan(
            planner_cfg,
            model,
            env,
            goal,
            cfg.cost,
            start,
            budget,
            Some(tree),
        )?;
        plans = p;
        tree = t;
        rounds += 1;
    }
    Ok((plans, tree, rounds))
}

/// Advance suffix-mode candidates through the consumed edge: keep those
/// whose next node matches, drop their first segment, and recompute their
/// nominal cost.
fn advance_candidates(
    plans: &PlanSet,
    consumed_id: Option<u64>,
    cost: CostFunction,
    space: &StateSpace,
) -> PlanSet {
    let mut out = Vec::new();
    for cand in plans.iter() {
        if cand.trajectory.len() < 1 || cand.node_path.get(1).copied() != consumed_id {
            continue;
        }
        let mut trajectory = cand.trajectory.clone();
        trajectory
            .advance()
            .expect("candidate with an edge can advance");
        let mut node_path = cand.node_path.clone();
        node_path.remove(0);
        let cost_val = trajectory_cost(&trajectory, cost, space);
        out.push(PlanCandidate {
            trajectory,
            cost: cost_val,
            node_path,
        });
    }
    PlanSet::new(out)
}

pub fn run_aura(
    config: &AuraConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
    start: &State,
    executor: &dyn GroundTruthExecutor,
) -> Result<ExecutionReport> {
    config.validate()?;
    let space = model.state_space();
    let sigma = config.sigma_for(space)?;
    let planner_cfg = config.effective_planner();
    let run_start = Instant::now();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.planner.seed ^ NOISE_STREAM);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.planner.seed ^ SAMPLE_STREAM);

    // offline phase
    let offline_start = Instant::now();
    let (mut plans, mut tree, offline_rounds) =
        plan_rounds(config, &planner_cfg, model, env, goal, start)?;
    let mut offline_seconds = if config.deterministic {
        offline_rounds as f64 * config.t_init
    } else {
        offline_start.elapsed().as_secs_f64()
    };
    if plans.is_empty() {
        let task = if config.deterministic {
            offline_seconds
        } else {
            run_start.elapsed().as_secs_f64()
        };
        return Ok(ExecutionReport::failed(
            format!("offline phase found no plan in {offline_rounds} rounds"),
            offline_seconds,
            task,
        ));
    }
    let offline_cost = plans.best().map(|c| c.cost);

    let mut x_gt = start.clone();
    let mut executed_states = vec![x_gt.clone()];
    let mut executed_controls: Vec<Control> = Vec::new();
    let mut step_errors: Vec<f64> = Vec::new();
    let mut records: Vec<CycleRecord> = Vec::new();
    let mut restarts_total = 0usize;
    let mut restart_seconds = 0.0f64;
    let mut failure: Option<String> = None;
    let mut overhead_estimate = 0.0f64;

    let mut target = match best_with_edge(&plans) {
        Some(best) => choose_target(space, best, &OptimizedControlTable::default(), &x_gt, true),
        None => {
            // the only offline plans are zero-length, so the start already
            // satisfies the goal; the loop below exits immediately
            ExecutionTarget {
                control: Control::new(vec![0.0; model.control_space().lower().len()]),
                source: ControlSource::Nominal,
                x_next: x_gt.clone(),
                x_next_id: None,
            }
        }
    };

    while !goal.satisfied(space, &x_gt)? {
        let cycle = records.len();
        if cycle >= config.max_cycles {
            failure = Some(format!("cycle cap {} exceeded", config.max_cycles));
            break;
        }

        // snapshot the children of the upcoming state for the optimizer
        let children: Vec<ChildTarget> = if !config.optimize_enabled {
            Vec::new()
        } else if config.replan_enabled {
            let id = target.x_next_id.expect("tree mode targets carry an id");
            let node = tree.node(id)?;
            node.children
                .iter()
                .map(|cid| {
                    let c = tree.node(*cid).expect("child listed by parent");
                    ChildTarget {
                        state: c.state.clone(),
                        control: c
                            .control_from_parent
                            .clone()
                            .expect("non-root node has an incoming control"),
                        duration: c.duration_from_parent.expect("non-root node has a duration"),
                        node_id: Some(*cid),
                    }
                })
                .collect()
        } else {
            // no tree maintenance: target the best plan's subsequent edge
            match best_with_edge(&plans) {
                Some(best) if best.trajectory.len() >= 2 => vec![ChildTarget {
                    state: best.trajectory.states()[2].clone(),
                    control: best.trajectory.controls()[1].clone(),
                    duration: best.trajectory.durations()[1],
                    node_id: best.node_path.get(2).copied(),
                }],
                _ => Vec::new(),
            }
        };

        let replan_budget_seconds = if config.deterministic {
            config.delta_t
        } else {
            (config.delta_t - overhead_estimate).max(config.delta_t * 0.1)
        };
        let replan_budget = config.phase_budget(replan_budget_seconds);

        // the three workers; each owns disjoint state, so the threaded and
        // sequential paths agree whenever budgets are iteration-based
        struct ReplanOut {
            plans: PlanSet,
            tree: PlanTree,
            seconds: f64,
        }
        let mut exec_fn = {
            let x = x_gt.clone();
            let u = target.control.clone();
            let rng = &mut noise_rng;
            move || -> (Result<State>, f64) {
                let t0 = Instant::now();
                let r = executor.execute(model, &x, &u, config.delta_t, rng);
                (r, t0.elapsed().as_secs_f64())
            }
        };
        let replan_fn = {
            let old_plans = plans;
            let old_tree = tree;
            let x_next = target.x_next.clone();
            let x_next_id = target.x_next_id;
            let cfg = &planner_cfg;
            move || -> Result<ReplanOut> {
                let t0 = Instant::now();
                if config.replan_enabled {
                    let mut t = old_tree;
                    t.prune_unreachable(x_next_id.expect("tree mode target has an id"))?;
                    // pruning shares the replanning slot with tree growth, so
                    // under a wall budget only the remainder goes to planning
                    let budget = match replan_budget {
                        Budget::WallSeconds(total) => Budget::WallSeconds(
                            (total - t0.elapsed().as_secs_f64()).max(0.05 * config.delta_t),
                        ),
                        b => b,
                    };
                    let (p, t) = plan(
                        cfg,
                        model,
                        env,
                        goal,
                        config.cost,
                        &x_next,
                        budget,
                        Some(t),
                    )?;
                    Ok(ReplanOut {
                        plans: p,
                        tree: t,
                        seconds: t0.elapsed().as_secs_f64(),
                    })
                } else {
                    let p = advance_candidates(&old_plans, x_next_id, config.cost, space);
                    Ok(ReplanOut {
                        plans: p,
                        tree: old_tree,
                        seconds: t0.elapsed().as_secs_f64(),
                    })
                }
            }
        };
        let mut opt_fn = {
            let x_next = target.x_next.clone();
            let children = &children;
            let sigma = &sigma;
            let rng = &mut sample_rng;
            move || -> (Result<OptimizedControlTable>, f64) {
                let t0 = Instant::now();
                if !config.optimize_enabled || children.is_empty() {
                    return (Ok(OptimizedControlTable::default()), t0.elapsed().as_secs_f64());
                }
                let table = sample_nearby(space, &x_next, sigma, config.b, rng).and_then(|xb| {
                    optimize_batch(model, &xb, children, config.alpha, config.n_grad)
                });
                (table, t0.elapsed().as_secs_f64())
            }
        };

        let (exec_out, replan_out, opt_out) = if config.deterministic {
            (exec_fn(), replan_fn(), opt_fn())
        } else {
            std::thread::scope(|s| {
                let e = s.spawn(exec_fn);
                let r = s.spawn(replan_fn);
                let o = s.spawn(opt_fn);
                (
                    e.join().expect("executor worker panicked"),
                    r.join().expect("replanner worker panicked"),
                    o.join().expect("optimizer worker panicked"),
                )
            })
        };

        // synchronization
        let sync_start = Instant::now();
        let (exec_result, exec_seconds) = exec_out;
        let replan_out = replan_out?;
        plans = replan_out.plans;
        tree = replan_out.tree;
        let (table_result, opt_seconds) = opt_out;
        let table = table_result?;
        let x_from = x_gt.clone();
        x_gt = exec_result?;

        // a crash ends the run: the commanded segment must stay clear the
        // whole way through, and so must the position noise landed us on
        if !env.is_motion_position_free(model, &x_from, &target.control, config.delta_t)?
            || !env.is_position_free(&x_gt.values()[..env.pos_dims()])
        {
            failure = Some(format!("collision at cycle {cycle}"));
        }

        let step_error = space.distance(&x_gt, &target.x_next)?;
        executed_states.push(x_gt.clone());
        executed_controls.push(target.control.clone());
        step_errors.push(step_error);
        // the record describes the edge just executed; capture it before
        // `target` is replaced with next cycle's choice
        let executed_x_next = target.x_next.values().to_vec();
        let executed_control = target.control.values().to_vec();
        let executed_source = target.source;

        let mut cycle_restarts = 0usize;
        let recosted = recalculate_costs(model, env, &x_gt, &plans);
        let arrived = goal.satisfied(space, &x_gt)?;
        let next_best = match &recosted {
            Ok(rc) if best_with_edge(rc).is_some() => Some(rc),
            _ if arrived => None, // done; no further control needed
            _ => None,            // exhausted; restart below
        };

        let (candidate_costs, best_cost) = match &recosted {
            Ok(rc) => (
                rc.iter().map(|c| c.cost).collect::<Vec<f64>>(),
                rc.best().map(|c| c.cost).unwrap_or(f64::INFINITY),
            ),
            Err(_) => (Vec::new(), f64::INFINITY),
        };

        match next_best {
            _ if failure.is_some() => {
                // crashed; the record below is the last one
            }
            Some(rc) => {
                let best = best_with_edge(rc).expect("checked above");
                target = choose_target(space, best, &table, &x_gt, config.replan_enabled);
            }
            None if arrived => {
                // loop guard exits after this record
            }
            None => {
                // candidates exhausted: restart from the observed state
                let mut recovered = false;
                while restarts_total < config.max_restarts {
                    restarts_total += 1;
                    cycle_restarts += 1;
                    let restart_start = Instant::now();
                    // vary the seed per attempt so retries explore differently
                    let mut restart_cfg = planner_cfg.clone();
                    restart_cfg.seed = planner_cfg
                        .seed
                        .wrapping_add(RESTART_STREAM.wrapping_mul(restarts_total as u64));
                    match plan_rounds(config, &restart_cfg, model, env, goal, &x_gt) {
                        Ok((p, t, rounds)) => {
                            restart_seconds += if config.deterministic {
                                rounds as f64 * config.t_init
                            } else {
                                restart_start.elapsed().as_secs_f64()
                            };
                            if let Some(best) = best_with_edge(&p) {
                                target = choose_target(
                                    space,
                                    best,
                                    &OptimizedControlTable::default(),
                                    &x_gt,
                                    true,
                                );
                                plans = p;
                                tree = t;
                                recovered = true;
                                break;
                            }
                        }
                        Err(e) => {
                            restart_seconds += if config.deterministic {
                                config.t_init
                            } else {
                                restart_start.elapsed().as_secs_f64()
                            };
                            failure = Some(format!("restart planning failed: {e}"));
                            break;
                        }
                    }
                }
                if !recovered && failure.is_none() {
                    failure = Some(format!(
                        "plan candidates exhausted after {restarts_total} restarts"
                    ));
                }
            }
        }

        let sync_seconds = sync_start.elapsed().as_secs_f64();
        if !config.deterministic {
            overhead_estimate = sync_seconds + exec_seconds;
        }
        records.push(CycleRecord {
            cycle,
            x_next: executed_x_next,
            x_gt: x_gt.values().to_vec(),
            control: executed_control,
            control_source: executed_source,
            candidate_costs,
            best_cost,
            exec_seconds: if config.deterministic { config.delta_t } else { exec_seconds },
            replan_seconds: if config.deterministic {
                replan_budget_seconds
            } else {
                replan_out.seconds
            },
            optimize_seconds: if config.deterministic { 0.0 } else { opt_seconds },
            sync_seconds: if config.deterministic { 0.0 } else { sync_seconds },
            step_error,
            restarts: cycle_restarts,
        });
        if failure.is_some() {
            break;
        }
    }

    let success = failure.is_none() && goal.satisfied(space, &x_gt)?;
    let cycles = records.len();
    let durations = vec![config.delta_t; executed_controls.len()];
    let executed = Trajectory::new(executed_states, executed_controls, durations)?;
    let executed_cost = trajectory_cost(&executed, config.cost, space);
    let tracking = TrackingError {
        total: step_errors.iter().sum(),
        per_step: step_errors,
    };
    let task_seconds = if config.deterministic {
        offline_seconds + cycles as f64 * config.delta_t + restart_seconds
    } else {
        run_start.elapsed().as_secs_f64()
    };
    if !config.deterministic {
        offline_seconds = offline_seconds.max(0.0);
    }
    Ok(ExecutionReport {
        records,
        success,
        cycles,
        task_seconds,
        offline_seconds,
        restart_seconds,
        offline_cost,
        executed_cost,
        tracking,
        restarts: restarts_total,
        executed,
        failure,
    })
}

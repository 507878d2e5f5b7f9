//! Comparison executors: open-loop playback, restart replanning, and MPPI.
//!
//! All three consume the same dynamics, environment and executor interfaces
//! as the main runtime, and derive their noise stream from the seed with the
//! same offset, so one seed pins one noise realization across methods and
//! per-step comparisons are paired.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::aura::{CycleRecord, ExecutionReport};
use crate::dynamics::DynamicsModel;
use crate::error::{PlanningError, Result};
use crate::executor::GroundTruthExecutor;
use crate::planner::{plan, Budget, PlannerConfig, DEFAULT_ITERS_PER_SECOND};
use crate::space::{Control, State};
use crate::trajectory::{trajectory_cost, CostFunction, TrackingError, Trajectory};
use crate::world::{Environment, GoalRegion};

use crate::aura::{ControlSource, NOISE_STREAM, RESTART_STREAM};

/// Restart replanning: follow the nominal plan, and whenever the step-wise
/// tracking error exceeds `tau_rr`, throw the plan away and plan again from
/// scratch at the observed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrConfig {
    /// Error threshold in state-metric units. `inf` disables triggers,
    /// reducing the method to open-loop playback.
    pub tau_rr: f64,
    /// Planning allowance per trigger, in seconds.
    pub replan_seconds: f64,
    /// Planning attempts per trigger before giving up.
    pub max_retries: usize,
    /// Cap on executed steps across all plans; prevents trigger livelock.
    pub max_steps: usize,
    /// Use iteration budgets and a virtual clock.
    pub deterministic: bool,
    /// Seconds-to-iterations conversion for deterministic budgets.
    pub ips: f64,
}

impl Default for RrConfig {
    fn default() -> Self {
        RrConfig {
            tau_rr: 0.25,
            replan_seconds: 1.0,
            max_retries: 3,
            max_steps: 1000,
            deterministic: false,
            ips: DEFAULT_ITERS_PER_SECOND,
        }
    }
}

impl RrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rr > 0.0) {
            return Err(PlanningError::InvalidSpace(format!(
                "tau_rr must be positive, got {}",
                self.tau_rr
            )));
        }
        if !(self.replan_seconds > 0.0) || !self.replan_seconds.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "replan_seconds must be positive and finite, got {}",
                self.replan_seconds
            )));
        }
        if self.max_retries == 0 || self.max_steps == 0 {
            return Err(PlanningError::InvalidSpace(
                "max_retries and max_steps must be at least 1".into(),
            ));
        }
        if !(self.ips > 0.0) {
            return Err(PlanningError::InvalidSpace(format!(
                "ips must be positive, got {}",
                self.ips
            )));
        }
        Ok(())
    }

    fn budget(&self) -> Budget {
        if self.deterministic {
            Budget::WallSeconds(self.replan_seconds).to_iterations(self.ips)
        } else {
            Budget::WallSeconds(self.replan_seconds)
        }
    }
}

/// Receding-horizon MPPI over the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    /// Lookahead length in control steps.
    pub horizon: usize,
    /// Sampled control sequences per refinement.
    pub rollouts: usize,
    /// Softmax temperature on rollout costs.
    pub lambda: f64,
    /// Per-dimension control noise std. Empty means a quarter of each
    /// control range.
    pub control_sigma: Vec<f64>,
    /// Refinement iterations per executed step.
    pub iters_per_cycle: usize,
    /// Control step duration.
    pub delta_t: f64,
    /// Executed-step cap; hitting it is reported as failure.
    pub max_steps: usize,
    /// Additive cost per colliding rollout state. Soft, so a fully blocked
    /// batch still produces usable weights.
    pub collision_penalty: f64,
    /// Scale on the terminal goal-distance term.
    pub terminal_weight: f64,
    pub seed: u64,
    /// Report a virtual clock instead of measured compute.
    pub deterministic: bool,
}

impl Default for MppiConfig {
    fn default() -> Self {
        MppiConfig {
            horizon: 20,
            rollouts: 256,
            lambda: 1.0,
            control_sigma: Vec::new(),
            iters_per_cycle: 1,
            delta_t: 0.5,
            max_steps: 200,
            collision_penalty: 1e4,
            terminal_weight: 10.0,
            seed: 0,
            deterministic: false,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.rollouts == 0 || self.iters_per_cycle == 0 {
            return Err(PlanningError::InvalidSpace(
                "horizon, rollouts and iters_per_cycle must be at least 1".into(),
            ));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.delta_t > 0.0) || !self.delta_t.is_finite() {
            return Err(PlanningError::InvalidSpace(format!(
                "delta_t must be positive, got {}",
                self.delta_t
            )));
        }
        if self.control_sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(PlanningError::InvalidSpace(
                "control_sigma entries must be non-negative".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(PlanningError::InvalidSpace(
                "max_steps must be at least 1".into(),
            ));
        }
        if !(self.collision_penalty >= 0.0) || !(self.terminal_weight >= 0.0) {
            return Err(PlanningError::InvalidSpace(
                "collision_penalty and terminal_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Exponential weighting of rollout costs, shifted by the batch minimum for
/// numerical range. The returned weights sum to one.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let beta = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|c| (-(c - beta) / lambda).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// What stopped a stretch of nominal playback.
enum Playback {
    Completed,
    Collided,
    /// Step error exceeded the trigger threshold (the step itself was
    /// executed and recorded).
    Triggered,
    StepCap,
}

struct ExecLog {
    records: Vec<CycleRecord>,
    states: Vec<State>,
    controls: Vec<Control>,
    durations: Vec<f64>,
    clock: f64,
}

impl ExecLog {
    fn new(start: State) -> Self {
        ExecLog {
            records: Vec::new(),
            states: vec![start],
            controls: Vec::new(),
            durations: Vec::new(),
            clock: 0.0,
        }
    }

    fn x_gt(&self) -> &State {
        self.states.last().expect("log always holds the start state")
    }

    fn push(&mut self, record: CycleRecord, x: State, u: Control, dur: f64) {
        self.records.push(record);
        self.states.push(x);
        self.controls.push(u);
        self.durations.push(dur);
        self.clock += dur;
    }

    fn into_report(
        self,
        model: &dyn DynamicsModel,
        cost: CostFunction,
        success: bool,
        failure: Option<String>,
        offline_seconds: f64,
        offline_cost: Option<f64>,
        restarts: usize,
        compute_seconds: f64,
    ) -> Result<ExecutionReport> {
        let per_step: Vec<f64> = self.records.iter().map(|r| r.step_error).collect();
        let total = per_step.iter().sum();
        let executed = Trajectory::new(self.states, self.controls, self.durations)?;
        let executed_cost = trajectory_cost(&executed, cost, model.state_space());
        Ok(ExecutionReport {
            cycles: self.records.len(),
            records: self.records,
            success,
            task_seconds: offline_seconds + self.clock + compute_seconds,
            offline_seconds,
            restart_seconds: compute_seconds,
            offline_cost,
            executed_cost,
            tracking: TrackingError { total, per_step },
            restarts,
            executed,
            failure,
        })
    }
}

/// Cost of the plan suffix after edge `after`, summed front to back so the
/// result is bit-identical however the caller reached this edge.
fn remaining_cost(
    plan: &Trajectory,
    after: usize,
    cost: CostFunction,
    space: &crate::space::StateSpace,
) -> f64 {
    let mut total = 0.0;
    for j in (after + 1)..plan.len() {
        total += cost.step_cost(
            space,
            &plan.states()[j],
            &plan.states()[j + 1],
            &plan.controls()[j],
            plan.durations()[j],
        );
    }
    total
}

/// Execute a plan's controls verbatim from the current log head, recording
/// one cycle per edge. Stops at completion, collision, the step cap, or the
/// first step whose error exceeds `tau`.
#[allow(clippy::too_many_arguments)]
fn play_nominal(
    model: &dyn DynamicsModel,
    env: &Environment,
    plan: &Trajectory,
    executor: &dyn GroundTruthExecutor,
    rng: &mut ChaCha8Rng,
    cost: CostFunction,
    tau: f64,
    step_cap: usize,
    log: &mut ExecLog,
) -> Result<Playback> {
    let space = model.state_space();
    for i in 0..plan.len() {
        if log.records.len() >= step_cap {
            return Ok(Playback::StepCap);
        }
        let u = plan.controls()[i].clone();
        let dur = plan.durations()[i];
        let x_nom = &plan.states()[i + 1];
        // sweep the segment too: a thin obstacle crossed between endpoint
        // checks is still a crash
        let swept_free = env.is_motion_position_free(model, log.x_gt(), &u, dur)?;
        let x_new = executor.execute(model, log.x_gt(), &u, dur, rng)?;
        let step_error = space.distance(&x_new, x_nom)?;
        let record = CycleRecord {
            cycle: log.records.len(),
            x_next: x_nom.values().to_vec(),
            x_gt: x_new.values().to_vec(),
            control: u.values().to_vec(),
            control_source: ControlSource::Nominal,
            candidate_costs: Vec::new(),
            best_cost: remaining_cost(plan, i, cost, space),
            exec_seconds: dur,
            replan_seconds: 0.0,
            optimize_seconds: 0.0,
            sync_seconds: 0.0,
            step_error,
            restarts: 0,
        };
        let collided = !swept_free || !env.is_state_valid(space, &x_new);
        log.push(record, x_new, u, dur);
        if collided {
            return Ok(Playback::Collided);
        }
        if step_error > tau {
            return Ok(Playback::Triggered);
        }
    }
    Ok(Playback::Completed)
}

/// Apply a plan's controls verbatim under the executor's noise. No feedback
/// of any kind; stops early only if the observed state collides.
pub fn run_open_loop(
    model: &dyn DynamicsModel,
    env: &Environment,
    plan_traj: &Trajectory,
    executor: &dyn GroundTruthExecutor,
    cost: CostFunction,
    seed: u64,
) -> Result<ExecutionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    let offline_cost = trajectory_cost(plan_traj, cost, model.state_space());
    let mut log = ExecLog::new(plan_traj.first_state().clone());
    let outcome = play_nominal(
        model,
        env,
        plan_traj,
        executor,
        &mut rng,
        cost,
        f64::INFINITY,
        usize::MAX,
        &mut log,
    )?;
    let (success, failure) = match outcome {
        Playback::Completed => (true, None),
        Playback::Collided => (
            false,
            Some(format!("collision at step {}", log.records.len() - 1)),
        ),
        Playback::Triggered | Playback::StepCap => unreachable!("disabled for open loop"),
    };
    log.into_report(model, cost, success, failure, 0.0, Some(offline_cost), 0, 0.0)
}

/// Plan once, play the plan open-loop, and on any step whose tracking error
/// exceeds the threshold discard everything and plan again from the observed
/// state.
#[allow(clippy::too_many_arguments)]
pub fn run_restart_replanning(
    planner: &PlannerConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
    cost: CostFunction,
    start: &State,
    executor: &dyn GroundTruthExecutor,
    rr: &RrConfig,
    offline_budget: Budget,
) -> Result<ExecutionReport> {
    planner.validate()?;
    rr.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(planner.seed ^ NOISE_STREAM);

    let budget_seconds = |b: Budget| match b {
        Budget::WallSeconds(s) => s,
        Budget::Iterations(n) => n as f64 / rr.ips,
    };

    let t0 = Instant::now();
    let (plans, _) = plan(planner, model, env, goal, cost, start, offline_budget, None)?;
    let offline_seconds = if rr.deterministic {
        budget_seconds(offline_budget)
    } else {
        t0.elapsed().as_secs_f64()
    };
    let Some(best) = plans.best() else {
        return Ok(ExecutionReport::failed(
            "offline phase found no plan".into(),
            offline_seconds,
            offline_seconds,
        ));
    };
    let offline_cost = best.cost;
    let mut current = best.trajectory.clone();

    let mut log = ExecLog::new(start.clone());
    let mut attempts_total = 0usize;
    let mut replan_total = 0.0f64;
    let (success, failure) = loop {
        match play_nominal(
            model, env, &current, executor, &mut rng, cost, rr.tau_rr, rr.max_steps, &mut log,
        )? {
            Playback::Completed => break (true, None),
            Playback::Collided => {
                break (
                    false,
                    Some(format!("collision at step {}", log.records.len() - 1)),
                )
            }
            Playback::StepCap => {
                break (false, Some(format!("step cap {} reached", rr.max_steps)))
            }
            Playback::Triggered => {
                let x_gt = log.x_gt().clone();
                let mut attempts_here = 0usize;
                let mut seconds_here = 0.0f64;
                let mut replanned = None;
                for _ in 0..rr.max_retries {
                    let mut cfg = planner.clone();
                    cfg.seed = planner
                        .seed
                        .wrapping_add(RESTART_STREAM.wrapping_mul(attempts_total as u64 + 1));
                    attempts_total += 1;
                    attempts_here += 1;
                    let t0 = Instant::now();
                    let result = plan(&cfg, model, env, goal, cost, &x_gt, rr.budget(), None);
                    seconds_here += if rr.deterministic {
                        budget_seconds(rr.budget())
                    } else {
                        t0.elapsed().as_secs_f64()
                    };
                    match result {
                        Ok((plans, _)) => {
                            if let Some(best) = plans.best() {
                                replanned = Some(best.trajectory.clone());
                                break;
                            }
                        }
                        Err(PlanningError::InvalidStart(_)) => break,
                        Err(e) => return Err(e),
                    }
                }
                replan_total += seconds_here;
                let last = log
                    .records
                    .last_mut()
                    .expect("a trigger implies at least one executed step");
                last.replan_seconds = seconds_here;
                last.restarts = attempts_here;
                match replanned {
                    Some(t) => current = t,
                    None => {
                        break (
                            false,
                            Some(format!(
                                "replanning failed after {attempts_here} attempts"
                            )),
                        )
                    }
                }
            }
        }
    };
    log.into_report(
        model,
        cost,
        success,
        failure,
        offline_seconds,
        Some(offline_cost),
        attempts_total,
        replan_total,
    )
}

/// Distinct noise substream per (step, refinement, rollout), so rollout
/// results do not depend on how the batch is scheduled across workers.
fn rollout_seed(seed: u64, step: u64, iter: u64, k: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ iter.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ k.wrapping_mul(0x1656_67b1_9e37_79f9)
}

/// Receding-horizon MPPI: per executed step, sample noisy control sequences
/// around the running mean, roll them out with the nominal model, weight
/// exponentially by cost, refresh the mean, and apply its first control.
pub fn run_mppi(
    mppi: &MppiConfig,
    model: &dyn DynamicsModel,
    env: &Environment,
    goal: &GoalRegion,
    start: &State,
    executor: &dyn GroundTruthExecutor,
    cost: CostFunction,
) -> Result<ExecutionReport> {
    mppi.validate()?;
    let space = model.state_space();
    let cs = model.control_space();
    if !env.is_state_valid(space, start) {
        return Err(PlanningError::InvalidStart(
            "mppi start state is in collision".into(),
        ));
    }
    let sigma: Vec<f64> = if mppi.control_sigma.is_empty() {
        cs.lower()
            .iter()
            .zip(cs.upper())
            .map(|(lo, hi)| 0.25 * (hi - lo))
            .collect()
    } else {
        if mppi.control_sigma.len() != cs.dims() {
            return Err(PlanningError::InvalidSpace(format!(
                "control_sigma has {} entries for a {}-dim control space",
                mppi.control_sigma.len(),
                cs.dims()
            )));
        }
        mppi.control_sigma.clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mppi.seed ^ NOISE_STREAM);
    let zero = cs.clamped(Control::new(vec![0.0; cs.dims()]));
    let mut mean: Vec<Control> = vec![zero; mppi.horizon];
    let mut log = ExecLog::new(start.clone());
    let mut compute = 0.0f64;
    let mut success = false;

    for step in 0..mppi.max_steps {
        if goal.satisfied(space, log.x_gt())? {
            success = true;
            break;
        }
        let t0 = Instant::now();
        let mut best_rollout = f64::INFINITY;
        for iter in 0..mppi.iters_per_cycle {
            let x0 = log.x_gt().clone();
            let scored: Vec<(Vec<Control>, f64)> = (0..mppi.rollouts)
                .into_par_iter()
                .map(|k| -> Result<(Vec<Control>, f64)> {
                    let mut rk = ChaCha8Rng::seed_from_u64(rollout_seed(
                        mppi.seed, step as u64, iter as u64, k as u64,
                    ));
                    let seq: Vec<Control> = mean
                        .iter()
                        .map(|u| {
                            let v: Vec<f64> = u
                                .values()
                                .iter()
                                .zip(&sigma)
                                .map(|(u_d, s)| {
                                    if *s > 0.0 {
                                        let n = Normal::new(0.0, *s).expect("validated sigma");
                                        u_d + n.sample(&mut rk)
                                    } else {
                                        *u_d
                                    }
                                })
                                .collect();
                            cs.clamped(Control::new(v))
                        })
                        .collect();
                    let mut x = x0.clone();
                    let mut c = 0.0;
                    for u in &seq {
                        let x2 = model.propagate(&x, u, mppi.delta_t)?;
                        c += cost.step_cost(space, &x, &x2, u, mppi.delta_t);
                        if !env.is_state_valid(space, &x2)
                            || !env.is_motion_position_free(model, &x, u, mppi.delta_t)?
                        {
                            c += mppi.collision_penalty;
                        }
                        x = x2;
                    }
                    c += mppi.terminal_weight * space.distance(&x, &goal.center)?;
                    Ok((seq, c))
                })
                .collect::<Result<_>>()?;
            let costs: Vec<f64> = scored.iter().map(|(_, c)| *c).collect();
            let weights = mppi_weights(&costs, mppi.lambda);
            debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            best_rollout = best_rollout.min(
                costs.iter().cloned().fold(f64::INFINITY, f64::min),
            );
            for j in 0..mppi.horizon {
                let mut v = vec![0.0; cs.dims()];
                for (k, (seq, _)) in scored.iter().enumerate() {
                    for (d, val) in seq[j].values().iter().enumerate() {
                        v[d] += weights[k] * val;
                    }
                }
                mean[j] = cs.clamped(Control::new(v));
            }
        }
        let cycle_compute = t0.elapsed().as_secs_f64();
        compute += if mppi.deterministic { 0.0 } else { cycle_compute };

        let u0 = mean[0].clone();
        let x_pred = model.propagate(log.x_gt(), &u0, mppi.delta_t)?;
        let swept_free = env.is_motion_position_free(model, log.x_gt(), &u0, mppi.delta_t)?;
        let x_new = executor.execute(model, log.x_gt(), &u0, mppi.delta_t, &mut rng)?;
        let step_error = space.distance(&x_new, &x_pred)?;
        let record = CycleRecord {
            cycle: step,
            x_next: x_pred.values().to_vec(),
            x_gt: x_new.values().to_vec(),
            control: u0.values().to_vec(),
            control_source: ControlSource::Nominal,
            candidate_costs: Vec::new(),
            best_cost: best_rollout,
            exec_seconds: mppi.delta_t,
            replan_seconds: 0.0,
            optimize_seconds: if mppi.deterministic { 0.0 } else { cycle_compute },
            sync_seconds: 0.0,
            step_error,
            restarts: 0,
        };
        let collided = !swept_free || !env.is_state_valid(space, &x_new);
        log.push(record, x_new, u0, mppi.delta_t);
        if collided {
            return log.into_report(
                model,
                cost,
                false,
                Some(format!("collision at step {step}")),
                0.0,
                None,
                0,
                compute,
            );
        }
        // shift the mean one step, repeating the final control
        let tail = mean[mppi.horizon - 1].clone();
        mean.rotate_left(1);
        mean[mppi.horizon - 1] = tail;
    }
    if !success {
        success = goal.satisfied(space, log.x_gt())?;
    }
    let failure = if success {
        None
    } else {
        Some(format!("step cap {} reached", mppi.max_steps))
    };
    log.into_report(model, cost, success, failure, 0.0, None, 0, compute)
}

#[cfg(test)]
mod tests;

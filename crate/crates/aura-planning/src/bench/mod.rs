//! Scenario files, seeded benchmark trials, and CSV reporting.
//!
//! A [`Scenario`] is a TOML description of one planning problem: system,
//! obstacles, start, goal, noise, cost. An [`ExperimentSpec`] pairs a
//! scenario with a method and a trial count; [`run_experiment`] executes the
//! trials (seeded `seed_base + trial`), writes per-cycle and per-trial CSV
//! files, and aggregates them. [`run_bench`] drives a whole suite.
//!
//! All CSV output is RFC 4180 with a header row, floats printed with 17
//! significant digits so files from `--deterministic` runs are reproducible
//! bit for bit.

pub mod render;


use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aura::{run_aura, AuraConfig, ControlSource, CycleRecord, ExecutionReport};
use crate::baselines::{run_mppi, run_open_loop, run_restart_replanning, MppiConfig, RrConfig};
use crate::dynamics::{DoubleIntegrator6D, DynamicsModel, KinematicCar};
use crate::error::{PlanningError, Result};
use crate::executor::{GroundTruthExecutor, NoiseSpec};
use crate::planner::{plan, Budget, PlannerConfig, DEFAULT_ITERS_PER_SECOND};
use crate::space::{State, StateSpace};
use crate::trajectory::{CostFunction, TrackingError, Trajectory};
use crate::world::{Environment, GoalRegion, Obstacle};

/// Dynamics selection with bounds, buildable into a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    DoubleIntegrator {
        #[serde(default = "d_pos3_lo")]
        pos_lower: [f64; 3],
        #[serde(default = "d_pos3_hi")]
        pos_upper: [f64; 3],
        #[serde(default = "d_two")]
        max_speed: f64,
        #[serde(default = "d_two")]
        max_accel: f64,
    },
    KinematicCar {
        #[serde(default = "d_pos2_lo")]
        pos_lower: [f64; 2],
        #[serde(default = "d_pos2_hi")]
        pos_upper: [f64; 2],
        #[serde(default = "d_wheelbase")]
        wheelbase: f64,
        #[serde(default = "d_one")]
        max_speed: f64,
        #[serde(default = "d_one")]
        max_steer: f64,
    },
}

fn d_pos3_lo() -> [f64; 3] {
    [-10.0; 3]
}
fn d_pos3_hi() -> [f64; 3] {
    [10.0; 3]
}
fn d_pos2_lo() -> [f64; 2] {
    [-10.0; 2]
}
fn d_pos2_hi() -> [f64; 2] {
    [10.0; 2]
}
fn d_two() -> f64 {
    2.0
}
fn d_one() -> f64 {
    1.0
}
fn d_wheelbase() -> f64 {
    0.3
}

impl SystemSpec {
    pub fn build(&self) -> Result<Box<dyn DynamicsModel>> {
        match *self {
            SystemSpec::DoubleIntegrator {
                pos_lower,
                pos_upper,
                max_speed,
                max_accel,
            } => Ok(Box::new(DoubleIntegrator6D::new(
                pos_lower, pos_upper, max_speed, max_accel,
            )?)),
            SystemSpec::KinematicCar {
                pos_lower,
                pos_upper,
                wheelbase,
                max_speed,
                max_steer,
            } => Ok(Box::new(KinematicCar::new(
                pos_lower, pos_upper, wheelbase, max_speed, max_steer,
            )?)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::DoubleIntegrator { .. } => "double_integrator",
            SystemSpec::KinematicCar { .. } => "kinematic_car",
        }
    }

    pub fn pos_dims(&self) -> usize {
        match self {
            SystemSpec::DoubleIntegrator { .. } => 3,
            SystemSpec::KinematicCar { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// One planning problem, loadable from a TOML file.
///
/// Scalar fields come before the nested tables so the serialized form is a
/// valid TOML document in struct order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub start: Vec<f64>,
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "default_cost")]
    pub cost: CostFunction,
    pub system: SystemSpec,
    pub goal: GoalSpec,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

fn default_cost() -> CostFunction {
    CostFunction::PathLength
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::None
}

impl Scenario {
    /// Parse from TOML text. `label` (usually the file path) prefixes parse
    /// errors, which carry the line and field from the TOML parser.
    pub fn parse(label: &str, text: &str) -> Result<Scenario> {
        let sc: Scenario = toml::from_str(text)
            .map_err(|e| PlanningError::Scenario(format!("{label}: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path)
            .map_err(|e| PlanningError::Scenario(format!("{}: {e}", path.display())))?;
        Scenario::parse(&path.display().to_string(), &text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| PlanningError::Scenario(format!("{}: {e}", self.name)))?;
        fs::write(path, text)
            .map_err(|e| PlanningError::Scenario(format!("{}: {e}", path.display())))
    }

    /// Structural checks that do not need to run anything: dimensions line
    /// up, the goal is well formed, obstacle geometry matches the workspace.
    pub fn validate(&self) -> Result<()> {
        let model = self.system.build()?;
        let dims = model.state_space().dims();
        let pos = self.system.pos_dims();
        let bad = |msg: String| Err(PlanningError::Scenario(format!("{}: {msg}", self.name)));
        if self.start.len() != dims {
            return bad(format!(
                "start has {} values, the {} state has {dims}",
                self.start.len(),
                self.system.name()
            ));
        }
        if self.goal.center.len() != dims {
            return bad(format!(
                "goal center has {} values, the {} state has {dims}",
                self.goal.center.len(),
                self.system.name()
            ));
        }
        if !(self.goal.radius > 0.0) || !self.goal.radius.is_finite() {
            return bad(format!("goal radius must be positive, got {}", self.goal.radius));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.start.iter().chain(&self.goal.center).any(|v| !v.is_finite()) {
            return bad("start and goal must be finite".into());
        }
        for (i, ob) in self.obstacles.iter().enumerate() {
            let ob_dims = match ob {
                Obstacle::Box { min, max } => {
                    if min.len() != max.len() {
                        return bad(format!("obstacle {i}: box min/max lengths differ"));
                    }
                    min.len()
                }
                Obstacle::Sphere { center, .. } => center.len(),
            };
            if ob_dims != pos {
                return bad(format!(
                    "obstacle {i} lives in {ob_dims}d, the workspace is {pos}d"
                ));
            }
        }
        // these repeat the constructors' own checks early, with the
        // scenario name attached
        Environment::new(pos, self.obstacles.clone(), self.margin)?;
        self.noise.build()?;
        Ok(())
    }

    pub fn model(&self) -> Result<Box<dyn DynamicsModel>> {
        self.system.build()
    }

    pub fn environment(&self) -> Result<Environment> {
        Environment::new(self.system.pos_dims(), self.obstacles.clone(), self.margin)
    }

    pub fn goal_region(&self, space: &StateSpace) -> Result<GoalRegion> {
        GoalRegion::new(space.make_state(self.goal.center.clone()), self.goal.radius)
    }

    pub fn start_state(&self, space: &StateSpace) -> State {
        space.make_state(self.start.clone())
    }

    pub fn executor(&self) -> Result<Box<dyn GroundTruthExecutor>> {
        self.noise.build()
    }
}

/// Method choice plus its configuration.
///
/// The scenario's cost function always wins over any cost embedded in a
/// method config, so one scenario file means one objective for every method
/// compared on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Aura {
        #[serde(default)]
        config: AuraConfig,
    },
    OpenLoop {
        #[serde(default)]
        planner: PlannerConfig,
        #[serde(default = "default_budget")]
        budget: Budget,
    },
    RestartReplanning {
        #[serde(default)]
        planner: PlannerConfig,
        #[serde(default)]
        rr: RrConfig,
        #[serde(default = "default_budget")]
        budget: Budget,
    },
    Mppi {
        #[serde(default)]
        config: MppiConfig,
    },
    /// Offline planning only: reports the best plan's cost with no
    /// execution. Useful for cost-versus-budget curves.
    Planner {
        #[serde(default)]
        planner: PlannerConfig,
        #[serde(default = "default_budget")]
        budget: Budget,
    },
}

fn default_budget() -> Budget {
    Budget::WallSeconds(5.0)
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Aura { .. } => "aura",
            MethodSpec::OpenLoop { .. } => "open_loop",
            MethodSpec::RestartReplanning { .. } => "restart_replanning",
            MethodSpec::Mppi { .. } => "mppi",
            MethodSpec::Planner { .. } => "planner",
        }
    }

    /// Default-configured method by name, for the CLI's `--method` flag.
    pub fn from_name(name: &str) -> Result<MethodSpec> {
        match name {
            "aura" => Ok(MethodSpec::Aura {
                config: AuraConfig::default(),
            }),
            "open_loop" => Ok(MethodSpec::OpenLoop {
                planner: PlannerConfig::default(),
                budget: default_budget(),
            }),
            "restart_replanning" | "rr" => Ok(MethodSpec::RestartReplanning {
                planner: PlannerConfig::default(),
                rr: RrConfig::default(),
                budget: default_budget(),
            }),
            "mppi" => Ok(MethodSpec::Mppi {
                config: MppiConfig::default(),
            }),
            "planner" => Ok(MethodSpec::Planner {
                planner: PlannerConfig::default(),
                budget: default_budget(),
            }),
            other => Err(PlanningError::Scenario(format!(
                "unknown method {other:?}: use aura, open_loop, restart_replanning, mppi or planner"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::Aura { config } => config.validate(),
            MethodSpec::OpenLoop { planner, .. } | MethodSpec::Planner { planner, .. } => {
                planner.validate()
            }
            MethodSpec::RestartReplanning { planner, rr, .. } => {
                planner.validate()?;
                rr.validate()
            }
            MethodSpec::Mppi { config } => config.validate(),
        }
    }
}

/// Grid axes for budget sweeps. Empty lists mean "keep the configured
/// value"; only the aura method has these knobs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub t_init: Vec<f64>,
    pub delta_t: Vec<f64>,
}

/// One experiment: a scenario, a method, and seeded trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Scenario file path, resolved against the bench file's directory.
    pub scenario: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// Force iteration budgets and virtual clocks in every method so two
    /// runs of the same spec produce identical files.
    #[serde(default)]
    pub deterministic: bool,
    pub method: MethodSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_trials() -> usize {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(PlanningError::Experiment(format!(
                "experiment name {:?} must be non-empty and path-safe",
                self.name
            )));
        }
        if self.trials == 0 {
            return Err(PlanningError::Experiment(format!(
                "{}: at least one trial required",
                self.name
            )));
        }
        self.method.validate()?;
        if let Some(sweep) = &self.sweep {
            if !matches!(self.method, MethodSpec::Aura { .. }) {
                return Err(PlanningError::Experiment(format!(
                    "{}: sweeps drive t_init and delta_t, which only the aura method has",
                    self.name
                )));
            }
            for v in sweep.t_init.iter().chain(&sweep.delta_t) {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(PlanningError::Experiment(format!(
                        "{}: sweep values must be positive, got {v}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sweep grid as (label, t_init, delta_t) cells; a single unlabeled
    /// cell when there is no sweep.
    fn grid(&self) -> Vec<GridCell> {
        let (base_t, base_d) = match &self.method {
            MethodSpec::Aura { config } => (config.t_init, config.delta_t),
            _ => (0.0, 0.0),
        };
        let Some(sweep) = &self.sweep else {
            return vec![GridCell {
                label: String::new(),
                t_init: None,
                delta_t: None,
            }];
        };
        let ts = if sweep.t_init.is_empty() {
            vec![base_t]
        } else {
            sweep.t_init.clone()
        };
        let ds = if sweep.delta_t.is_empty() {
            vec![base_d]
        } else {
            sweep.delta_t.clone()
        };
        let mut cells = Vec::with_capacity(ts.len() * ds.len());
        for &t in &ts {
            for &d in &ds {
                cells.push(GridCell {
                    label: format!("t{t}_d{d}"),
                    t_init: Some(t),
                    delta_t: Some(d),
                });
            }
        }
        cells
    }
}

struct GridCell {
    label: String,
    t_init: Option<f64>,
    delta_t: Option<f64>,
}

/// A suite of experiments, loadable from a TOML file with one
/// `[[experiment]]` block each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    #[serde(rename = "experiment")]
    pub experiments: Vec<ExperimentSpec>,
}

impl BenchSpec {
    pub fn parse(label: &str, text: &str) -> Result<BenchSpec> {
        let spec: BenchSpec = toml::from_str(text)
            .map_err(|e| PlanningError::Experiment(format!("{label}: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<BenchSpec> {
        let text = fs::read_to_string(path)
            .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))?;
        BenchSpec::parse(&path.display().to_string(), &text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(PlanningError::Experiment(
                "bench spec has no experiments".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.experiments {
            e.validate()?;
            if !seen.insert(&e.name) {
                return Err(PlanningError::Experiment(format!(
                    "duplicate experiment name {:?}: output directories would collide",
                    e.name
                )));
            }
        }
        Ok(())
    }
}

/// Run one seeded trial of a method on a scenario.
///
/// `deterministic` switches the method to iteration budgets and virtual
/// clocks on top of whatever its config says.
pub fn run_trial(
    scenario: &Scenario,
    method: &MethodSpec,
    seed: u64,
    deterministic: bool,
) -> Result<ExecutionReport> {
    let model = scenario.model()?;
    let env = scenario.environment()?;
    let goal = scenario.goal_region(model.state_space())?;
    let start = scenario.start_state(model.state_space());
    let executor = scenario.executor()?;
    let cost = scenario.cost;
    match method {
        MethodSpec::Aura { config } => {
            let mut cfg = config.clone();
            cfg.planner.seed = seed;
            cfg.cost = cost;
            cfg.deterministic |= deterministic;
            run_aura(&cfg, model.as_ref(), &env, &goal, &start, executor.as_ref())
        }
        MethodSpec::OpenLoop { planner, budget } => {
            let mut pc = planner.clone();
            pc.seed = seed;
            let (budget, offline) = offline_budget(*budget, deterministic);
            let t0 = Instant::now();
            let (plans, _) = plan(&pc, model.as_ref(), &env, &goal, cost, &start, budget, None)?;
            let offline = offline.unwrap_or_else(|| t0.elapsed().as_secs_f64());
            match plans.best() {
                None => Ok(ExecutionReport::failed(
                    "offline planning found no plan".into(),
                    offline,
                    offline,
                )),
                Some(best) => {
                    let mut report = run_open_loop(
                        model.as_ref(),
                        &env,
                        &best.trajectory,
                        executor.as_ref(),
                        cost,
                        seed,
                    )?;
                    report.offline_seconds = offline;
                    report.task_seconds += offline;
                    Ok(report)
                }
            }
        }
        MethodSpec::RestartReplanning {
            planner,
            rr,
            budget,
        } => {
            let mut pc = planner.clone();
            pc.seed = seed;
            let mut rr = rr.clone();
            rr.deterministic |= deterministic;
            let budget = if rr.deterministic {
                budget.to_iterations(rr.ips)
            } else {
                *budget
            };
            run_restart_replanning(
                &pc,
                model.as_ref(),
                &env,
                &goal,
                cost,
                &start,
                executor.as_ref(),
                &rr,
                budget,
            )
        }
        MethodSpec::Mppi { config } => {
            let mut cfg = config.clone();
            cfg.seed = seed;
            cfg.deterministic |= deterministic;
            run_mppi(
                &cfg,
                model.as_ref(),
                &env,
                &goal,
                &start,
                executor.as_ref(),
                cost,
            )
        }
        MethodSpec::Planner { planner, budget } => {
            let mut pc = planner.clone();
            pc.seed = seed;
            let (budget, offline) = offline_budget(*budget, deterministic);
            let t0 = Instant::now();
            let (plans, _) = plan(&pc, model.as_ref(), &env, &goal, cost, &start, budget, None)?;
            let offline = offline.unwrap_or_else(|| t0.elapsed().as_secs_f64());
            match plans.best() {
                None => Ok(ExecutionReport::failed(
                    "planning found no plan".into(),
                    offline,
                    offline,
                )),
                Some(best) => Ok(ExecutionReport {
                    records: Vec::new(),
                    success: true,
                    cycles: 0,
                    task_seconds: offline,
                    offline_seconds: offline,
                    restart_seconds: 0.0,
                    offline_cost: Some(best.cost),
                    executed_cost: best.cost,
                    tracking: TrackingError {
                        total: 0.0,
                        per_step: Vec::new(),
                    },
                    restarts: 0,
                    executed: best.trajectory.clone(),
                    failure: None,
                }),
            }
        }
    }
}

/// In deterministic mode, convert to iterations and return the virtual
/// seconds the converted budget stands for.
fn offline_budget(budget: Budget, deterministic: bool) -> (Budget, Option<f64>) {
    if !deterministic {
        return (budget, None);
    }
    let converted = budget.to_iterations(DEFAULT_ITERS_PER_SECOND);
    let seconds = match converted {
        Budget::Iterations(n) => n as f64 / DEFAULT_ITERS_PER_SECOND,
        Budget::WallSeconds(s) => s,
    };
    (converted, Some(seconds))
}

/// Per-trial summary row, the unit everything in `aggregate.csv` is
/// computed from.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub executed_cost: f64,
    pub offline_cost: Option<f64>,
    pub tracking_total: f64,
    pub tracking_mean_step: f64,
    pub cycles: usize,
    pub restarts: usize,
    pub task_seconds: f64,
    pub offline_seconds: f64,
    pub restart_seconds: f64,
    pub failure: Option<String>,
}

impl TrialSummary {
    pub fn from_report(trial: usize, seed: u64, r: &ExecutionReport) -> Self {
        TrialSummary {
            trial,
            seed,
            success: r.success,
            executed_cost: r.executed_cost,
            offline_cost: r.offline_cost,
            tracking_total: r.tracking.total,
            tracking_mean_step: r.tracking.mean_step(),
            cycles: r.cycles,
            restarts: r.restarts,
            task_seconds: r.task_seconds,
            offline_seconds: r.offline_seconds,
            restart_seconds: r.restart_seconds,
            failure: r.failure.clone(),
        }
    }
}

/// One row of `aggregate.csv`: statistics over the trials of a grid cell.
///
/// Cost statistics cover successful trials only (a failed trial's partial
/// cost says nothing about the objective); tracking and time statistics
/// cover every trial. [`aggregate_cell`] is the single place this rule
/// lives, so recomputing from `trials.csv` reproduces the row exactly.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub scenario: String,
    pub system: String,
    pub method: String,
    pub t_init: Option<f64>,
    pub delta_t: Option<f64>,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub cost_mean: Option<f64>,
    pub cost_median: Option<f64>,
    pub cost_std: Option<f64>,
    pub tracking_mean: f64,
    pub tracking_median: f64,
    pub tracking_std: f64,
    pub task_mean: f64,
    pub task_median: f64,
    pub task_std: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Sample standard deviation; zero for fewer than two samples.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Aggregate one grid cell's trial summaries into its `aggregate.csv` row.
pub fn aggregate_cell(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    t_init: Option<f64>,
    delta_t: Option<f64>,
    summaries: &[TrialSummary],
) -> AggregateRow {
    let costs: Vec<f64> = summaries
        .iter()
        .filter(|s| s.success)
        .map(|s| s.executed_cost)
        .collect();
    let tracking: Vec<f64> = summaries.iter().map(|s| s.tracking_mean_step).collect();
    let task: Vec<f64> = summaries.iter().map(|s| s.task_seconds).collect();
    let successes = costs.len();
    let (t_init, delta_t) = match (&spec.method, t_init) {
        // no sweep: still report the configured aura budgets
        (MethodSpec::Aura { config }, None) => (Some(config.t_init), Some(config.delta_t)),
        _ => (t_init, delta_t),
    };
    AggregateRow {
        experiment: spec.name.clone(),
        scenario: scenario.name.clone(),
        system: scenario.system.name().to_string(),
        method: spec.method.name().to_string(),
        t_init,
        delta_t,
        trials: summaries.len(),
        successes,
        success_rate: successes as f64 / summaries.len().max(1) as f64,
        cost_mean: (successes > 0).then(|| mean(&costs)),
        cost_median: (successes > 0).then(|| median(&costs)),
        cost_std: (successes > 0).then(|| std_dev(&costs)),
        tracking_mean: mean(&tracking),
        tracking_median: median(&tracking),
        tracking_std: std_dev(&tracking),
        task_mean: mean(&task),
        task_median: median(&task),
        task_std: std_dev(&task),
    }
}

/// Everything `run_experiment` produced, kept in memory for suite-level
/// reports and exit-status decisions.
pub struct ExperimentResult {
    pub rows: Vec<AggregateRow>,
    /// Per grid cell: its label ("" without a sweep) and trial summaries.
    pub cells: Vec<(String, Vec<TrialSummary>)>,
    /// Trials that did not succeed, across all cells.
    pub trial_failures: usize,
}

/// Run every trial of an experiment and write its output directory:
/// `config.toml` (effective spec and scenario), one cycles CSV per trial,
/// `trials.csv` per grid cell, and `aggregate.csv` with one row per cell.
pub fn run_experiment(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    spec.validate()?;
    scenario.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", out_dir.display())))?;
    write_effective_config(spec, scenario, &out_dir.join("config.toml"))?;

    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut trial_failures = 0;
    for cell in spec.grid() {
        let method = apply_cell(&spec.method, &cell);
        let cell_dir = if cell.label.is_empty() {
            out_dir.to_path_buf()
        } else {
            out_dir.join(&cell.label)
        };
        fs::create_dir_all(&cell_dir)
            .map_err(|e| PlanningError::Experiment(format!("{}: {e}", cell_dir.display())))?;

        // trials are independent given their seeds, so they can run in
        // parallel; a trial that errors becomes a failed report, never a
        // dropped row
        let reports: Vec<ExecutionReport> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = spec.seed_base.wrapping_add(trial as u64);
                run_trial(scenario, &method, seed, spec.deterministic).unwrap_or_else(|e| {
                    ExecutionReport::failed(format!("trial error: {e}"), 0.0, 0.0)
                })
            })
            .collect();

        let mut summaries = Vec::with_capacity(reports.len());
        for (trial, report) in reports.iter().enumerate() {
            let seed = spec.seed_base.wrapping_add(trial as u64);
            write_cycles_csv(&cell_dir.join(format!("trial_{trial:03}_cycles.csv")), report)?;
            summaries.push(TrialSummary::from_report(trial, seed, report));
        }
        trial_failures += summaries.iter().filter(|s| !s.success).count();
        write_trials_csv(&cell_dir.join("trials.csv"), &summaries)?;
        rows.push(aggregate_cell(spec, scenario, cell.t_init, cell.delta_t, &summaries));
        cells.push((cell.label, summaries));
    }
    write_aggregate_csv(&out_dir.join("aggregate.csv"), &rows)?;
    Ok(ExperimentResult {
        rows,
        cells,
        trial_failures,
    })
}

fn apply_cell(method: &MethodSpec, cell: &GridCell) -> MethodSpec {
    let mut method = method.clone();
    if let MethodSpec::Aura { config } = &mut method {
        if let Some(t) = cell.t_init {
            config.t_init = t;
        }
        if let Some(d) = cell.delta_t {
            config.delta_t = d;
        }
    }
    method
}

/// What `run_bench` hands back for exit-status and reporting decisions.
pub struct BenchOutcome {
    pub rows: Vec<AggregateRow>,
    pub trial_failures: usize,
}

/// Run a whole suite: one output directory per experiment plus suite-level
/// `aggregate.csv` and `tracking_error.csv` at the root.
pub fn run_bench(bench: &BenchSpec, scenario_root: &Path, out: &Path) -> Result<BenchOutcome> {
    bench.validate()?;
    fs::create_dir_all(out)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", out.display())))?;
    let mut rows = Vec::new();
    let mut trial_failures = 0;
    // mean step error pooled over every trial of a (system, method) pair;
    // BTreeMap so the report order does not depend on experiment order
    let mut pools: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for exp in &bench.experiments {
        let scenario = Scenario::load(&resolve_path(scenario_root, &exp.scenario))?;
        let result = run_experiment(exp, &scenario, &out.join(&exp.name))?;
        let key = (
            scenario.system.name().to_string(),
            exp.method.name().to_string(),
        );
        let pool = pools.entry(key).or_default();
        for (_, summaries) in &result.cells {
            pool.extend(summaries.iter().map(|s| s.tracking_mean_step));
        }
        rows.extend(result.rows);
        trial_failures += result.trial_failures;
    }
    write_aggregate_csv(&out.join("aggregate.csv"), &rows)?;
    write_tracking_csv(&out.join("tracking_error.csv"), &pools)?;
    Ok(BenchOutcome {
        rows,
        trial_failures,
    })
}

fn resolve_path(root: &Path, raw: &str) -> PathBuf {
    let p = Path::new(raw);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    experiment: &'a ExperimentSpec,
    scenario: &'a Scenario,
}

/// Write the spec this run actually used: the scenario's cost and the
/// experiment's deterministic flag folded into the method config.
fn write_effective_config(spec: &ExperimentSpec, scenario: &Scenario, path: &Path) -> Result<()> {
    let mut spec = spec.clone();
    match &mut spec.method {
        MethodSpec::Aura { config } => {
            config.cost = scenario.cost;
            config.deterministic |= spec.deterministic;
        }
        MethodSpec::RestartReplanning { rr, .. } => rr.deterministic |= spec.deterministic,
        MethodSpec::Mppi { config } => config.deterministic |= spec.deterministic,
        MethodSpec::OpenLoop { .. } | MethodSpec::Planner { .. } => {}
    }
    let text = toml::to_string_pretty(&ConfigEcho {
        experiment: &spec,
        scenario,
    })
    .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))?;
    fs::write(path, text)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))
}

/// 17 significant digits: enough for `f64` round trips, so deterministic
/// runs serialize identically.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))
}

fn csv_row(w: &mut csv::Writer<fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))
}

fn csv_finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))
}

fn control_source_label(r: &CycleRecord) -> String {
    match r.control_source {
        ControlSource::Nominal => "nominal".to_string(),
        ControlSource::Table { sample, child } => format!("table:{sample}:{child}"),
    }
}

pub fn write_cycles_csv(path: &Path, report: &ExecutionReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = [
        "cycle",
        "step_error",
        "best_cost",
        "exec_seconds",
        "replan_seconds",
        "optimize_seconds",
        "sync_seconds",
        "restarts",
        "control_source",
    ];
    csv_row(&mut w, path, &header.map(String::from))?;
    for r in &report.records {
        let row = [
            r.cycle.to_string(),
            fmt_f64(r.step_error),
            fmt_f64(r.best_cost),
            fmt_f64(r.exec_seconds),
            fmt_f64(r.replan_seconds),
            fmt_f64(r.optimize_seconds),
            fmt_f64(r.sync_seconds),
            r.restarts.to_string(),
            control_source_label(r),
        ];
        csv_row(&mut w, path, &row)?;
    }
    csv_finish(w, path)
}

pub const TRIALS_HEADER: [&str; 13] = [
    "trial",
    "seed",
    "success",
    "executed_cost",
    "offline_cost",
    "tracking_total",
    "tracking_mean_step",
    "cycles",
    "restarts",
    "task_seconds",
    "offline_seconds",
    "restart_seconds",
    "failure",
];

pub fn write_trials_csv(path: &Path, summaries: &[TrialSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, &TRIALS_HEADER.map(String::from))?;
    for s in summaries {
        let row = [
            s.trial.to_string(),
            s.seed.to_string(),
            s.success.to_string(),
            fmt_f64(s.executed_cost),
            fmt_opt(s.offline_cost),
            fmt_f64(s.tracking_total),
            fmt_f64(s.tracking_mean_step),
            s.cycles.to_string(),
            s.restarts.to_string(),
            fmt_f64(s.task_seconds),
            fmt_f64(s.offline_seconds),
            fmt_f64(s.restart_seconds),
            s.failure.clone().unwrap_or_default(),
        ];
        csv_row(&mut w, path, &row)?;
    }
    csv_finish(w, path)
}

pub const AGGREGATE_HEADER: [&str; 18] = [
    "experiment",
    "scenario",
    "system",
    "method",
    "t_init",
    "delta_t",
    "trials",
    "successes",
    "success_rate",
    "cost_mean",
    "cost_median",
    "cost_std",
    "tracking_mean",
    "tracking_median",
    "tracking_std",
    "task_mean",
    "task_median",
    "task_std",
];

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, &AGGREGATE_HEADER.map(String::from))?;
    for r in rows {
        let row = [
            r.experiment.clone(),
            r.scenario.clone(),
            r.system.clone(),
            r.method.clone(),
            fmt_opt(r.t_init),
            fmt_opt(r.delta_t),
            r.trials.to_string(),
            r.successes.to_string(),
            fmt_f64(r.success_rate),
            fmt_opt(r.cost_mean),
            fmt_opt(r.cost_median),
            fmt_opt(r.cost_std),
            fmt_f64(r.tracking_mean),
            fmt_f64(r.tracking_median),
            fmt_f64(r.tracking_std),
            fmt_f64(r.task_mean),
            fmt_f64(r.task_median),
            fmt_f64(r.task_std),
        ];
        csv_row(&mut w, path, &row)?;
    }
    csv_finish(w, path)
}

fn write_tracking_csv(path: &Path, pools: &BTreeMap<(String, String), Vec<f64>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        &["system", "method", "mean_step_error"].map(String::from),
    )?;
    for ((system, method), xs) in pools {
        let row = [system.clone(), method.clone(), fmt_f64(mean(xs))];
        csv_row(&mut w, path, &row)?;
    }
    csv_finish(w, path)
}

/// Load the executed, nominal, and best trajectories a `run` invocation
/// saved next to its report, for rendering.
pub fn load_trajectory_json(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)
        .map_err(|e| PlanningError::Render(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PlanningError::Render(format!("{}: {e}", path.display())))
}

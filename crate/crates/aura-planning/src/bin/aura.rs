//! Thin command-line front end over the library. Exit codes: 0 success,
//! 1 usage, 2 scenario or config error, 3 completed with failed trials.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aura_planning::bench::{
    self, load_trajectory_json,
    render::{render_svg, RenderScene},
    run_bench, run_experiment, run_trial, BenchSpec, ExperimentSpec, MethodSpec, Scenario,
    SweepSpec,
};
use aura_planning::{
    plan, AuraConfig, Budget, CycleRecord, ExecutionReport, PlanningError, State, Trajectory,
    DEFAULT_ITERS_PER_SECOND,
};

#[derive(Parser)]
#[command(name = "aura", version, about = "Kinodynamic planning and execution benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan offline and write the best trajectory as JSON
    Plan {
        #[command(flatten)]
        common: Common,
        /// Planning budget, e.g. "5s" or "10000iter"
        #[arg(long, value_parser = parse_budget, default_value = "5s")]
        budget: Budget,
        /// TOML file holding a planner config table
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Execute one method on a scenario and write its report
    Run {
        #[command(flatten)]
        common: Common,
        /// aura, open_loop, restart_replanning, mppi or planner
        #[arg(long, default_value = "aura")]
        method: String,
        /// TOML file holding a full method table; overrides --method
        #[arg(long)]
        config: Option<PathBuf>,
        /// Offline planning budget; mapped onto t_init for aura
        #[arg(long, value_parser = parse_budget)]
        budget: Option<Budget>,
    },
    /// Run an experiment suite from a bench TOML file
    Bench {
        /// Bench spec; scenario paths resolve against its directory
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "out/bench")]
        out: PathBuf,
        /// Force iteration budgets and virtual clocks in every experiment
        #[arg(long)]
        deterministic: bool,
    },
    /// Sweep aura's offline budget and cycle period on one scenario
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated offline budgets in seconds
        #[arg(long, value_delimiter = ',', default_value = "1,5,15")]
        t_init: Vec<f64>,
        /// Comma-separated cycle periods in seconds
        #[arg(long, value_delimiter = ',')]
        delta_t: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// TOML file holding an aura method table to sweep around
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render a scenario, optionally with traces from plan or run output
    Render {
        #[arg(long)]
        scenario: PathBuf,
        /// A run output directory (report.json, executed.json)
        #[arg(long)]
        run: Option<PathBuf>,
        /// A trajectory JSON file, drawn as the planned path
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Output SVG path
        #[arg(long, default_value = "out/trace.svg")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace wall-clock budgets with iteration budgets and virtual time
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_budget(s: &str) -> Result<Budget, String> {
    s.parse().map_err(|e: PlanningError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, PlanningError> {
    match cli.cmd {
        Cmd::Plan {
            common,
            budget,
            config,
        } => cmd_plan(&common, budget, config.as_deref()),
        Cmd::Run {
            common,
            method,
            config,
            budget,
        } => cmd_run(&common, &method, config.as_deref(), budget),
        Cmd::Bench {
            spec,
            out,
            deterministic,
        } => cmd_bench(&spec, &out, deterministic),
        Cmd::Sweep {
            common,
            t_init,
            delta_t,
            trials,
            config,
        } => cmd_sweep(&common, t_init, delta_t, trials, config.as_deref()),
        Cmd::Render {
            scenario,
            run,
            plan,
            out,
        } => cmd_render(&scenario, run.as_deref(), plan.as_deref(), &out),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), PlanningError> {
    fs::create_dir_all(dir)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), PlanningError> {
    fs::write(path, text).map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PlanningError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PlanningError::Experiment(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}

fn cmd_plan(
    common: &Common,
    budget: Budget,
    config: Option<&Path>,
) -> Result<ExitCode, PlanningError> {
    let scenario = Scenario::load(&common.scenario)?;
    let model = scenario.model()?;
    let env = scenario.environment()?;
    let goal = scenario.goal_region(model.state_space())?;
    let start = scenario.start_state(model.state_space());
    let mut pc = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PlanningError::Scenario(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| PlanningError::Scenario(format!("{}: {e}", path.display())))?
        }
        None => aura_planning::PlannerConfig::default(),
    };
    pc.seed = common.seed;
    let budget = if common.deterministic {
        budget.to_iterations(DEFAULT_ITERS_PER_SECOND)
    } else {
        budget
    };
    let (plans, tree) = plan(
        &pc,
        model.as_ref(),
        &env,
        &goal,
        scenario.cost,
        &start,
        budget,
        None,
    )?;
    ensure_dir(&common.out)?;
    match plans.best() {
        None => {
            println!(
                "no plan found for {} within {budget} ({} tree nodes)",
                scenario.name,
                tree.len()
            );
            Ok(ExitCode::from(3))
        }
        Some(best) => {
            let path = common.out.join("plan.json");
            write_json(&path, &best.trajectory)?;
            println!(
                "{}: cost {:.4}, {} segments, {} goal plans, {} tree nodes -> {}",
                scenario.name,
                best.cost,
                best.trajectory.len(),
                plans.len(),
                tree.len(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_method(
    name: &str,
    config: Option<&Path>,
    budget: Option<Budget>,
) -> Result<MethodSpec, PlanningError> {
    let mut method = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PlanningError::Scenario(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| PlanningError::Scenario(format!("{}: {e}", path.display())))?
        }
        None => MethodSpec::from_name(name)?,
    };
    if let Some(b) = budget {
        apply_budget(&mut method, b);
    }
    Ok(method)
}

/// `--budget` sets the offline planning allowance whatever the method calls
/// it: t_init seconds for aura, the budget field elsewhere.
fn apply_budget(method: &mut MethodSpec, b: Budget) {
    let seconds = match b {
        Budget::WallSeconds(s) => s,
        Budget::Iterations(n) => n as f64 / DEFAULT_ITERS_PER_SECOND,
    };
    match method {
        MethodSpec::Aura { config } => config.t_init = seconds,
        MethodSpec::OpenLoop { budget, .. }
        | MethodSpec::RestartReplanning { budget, .. }
        | MethodSpec::Planner { budget, .. } => *budget = b,
        MethodSpec::Mppi { .. } => {}
    }
}

#[derive(serde::Serialize)]
struct RunEcho<'a> {
    seed: u64,
    deterministic: bool,
    method: &'a MethodSpec,
    scenario: &'a Scenario,
}

fn cmd_run(
    common: &Common,
    method_name: &str,
    config: Option<&Path>,
    budget: Option<Budget>,
) -> Result<ExitCode, PlanningError> {
    let scenario = Scenario::load(&common.scenario)?;
    let method = load_method(method_name, config, budget)?;
    let report = run_trial(&scenario, &method, common.seed, common.deterministic)?;
    ensure_dir(&common.out)?;
    write_json(&common.out.join("report.json"), &report)?;
    write_json(&common.out.join("executed.json"), &report.executed)?;
    bench::write_cycles_csv(&common.out.join("cycles.csv"), &report)?;
    let echo = toml::to_string_pretty(&RunEcho {
        seed: common.seed,
        deterministic: common.deterministic,
        method: &method,
        scenario: &scenario,
    })
    .map_err(|e| PlanningError::Experiment(e.to_string()))?;
    write_text(&common.out.join("config.toml"), &echo)?;
    println!(
        "{} on {}: {} in {} cycles, cost {:.4}, mean step error {:.5}, {:.2}s task time -> {}",
        method.name(),
        scenario.name,
        if report.success { "success" } else { "FAILED" },
        report.cycles,
        report.executed_cost,
        report.tracking.mean_step(),
        report.task_seconds,
        common.out.display()
    );
    if let Some(reason) = &report.failure {
        println!("failure: {reason}");
    }
    Ok(if report.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn print_rows(rows: &[bench::AggregateRow]) {
    println!(
        "{:<18} {:<14} {:>6} {:>6} {:>9} {:>11} {:>11} {:>9}",
        "experiment", "method", "cell", "trials", "success", "cost", "tracking", "task_s"
    );
    for r in rows {
        let cell = match (r.t_init, r.delta_t) {
            (Some(t), Some(d)) => format!("t{t}/d{d}"),
            _ => "-".into(),
        };
        println!(
            "{:<18} {:<14} {:>6} {:>6} {:>8.0}% {:>11} {:>11.5} {:>9.2}",
            r.experiment,
            r.method,
            cell,
            r.trials,
            100.0 * r.success_rate,
            r.cost_mean
                .map(|c| format!("{c:.4}"))
                .unwrap_or_else(|| "-".into()),
            r.tracking_mean,
            r.task_mean,
        );
    }
}

fn cmd_bench(spec: &Path, out: &Path, deterministic: bool) -> Result<ExitCode, PlanningError> {
    let mut bench_spec = BenchSpec::load(spec)?;
    if deterministic {
        for e in &mut bench_spec.experiments {
            e.deterministic = true;
        }
    }
    let root = spec.parent().unwrap_or(Path::new("."));
    let outcome = run_bench(&bench_spec, root, out)?;
    print_rows(&outcome.rows);
    println!(
        "{} experiments, {} failed trials -> {}",
        bench_spec.experiments.len(),
        outcome.trial_failures,
        out.display()
    );
    Ok(if outcome.trial_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

fn cmd_sweep(
    common: &Common,
    t_init: Vec<f64>,
    delta_t: Vec<f64>,
    trials: usize,
    config: Option<&Path>,
) -> Result<ExitCode, PlanningError> {
    let scenario = Scenario::load(&common.scenario)?;
    let method = match config {
        Some(path) => load_method("aura", Some(path), None)?,
        None => MethodSpec::Aura {
            config: AuraConfig::default(),
        },
    };
    if !matches!(method, MethodSpec::Aura { .. }) {
        return Err(PlanningError::Experiment(
            "sweep needs an aura method config".into(),
        ));
    }
    let spec = ExperimentSpec {
        name: "sweep".into(),
        scenario: common.scenario.display().to_string(),
        trials,
        seed_base: common.seed,
        deterministic: common.deterministic,
        method,
        sweep: Some(SweepSpec { t_init, delta_t }),
    };
    let result = run_experiment(&spec, &scenario, &common.out)?;
    print_rows(&result.rows);
    println!(
        "{} cells, {} failed trials -> {}",
        result.rows.len(),
        result.trial_failures,
        common.out.display()
    );
    Ok(if result.trial_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

/// Rebuild the nominal polyline a report implies: the start plus each
/// cycle's intended next state.
fn nominal_from_records(start: &[f64], records: &[CycleRecord]) -> Option<Trajectory> {
    if records.is_empty() {
        return None;
    }
    let mut states = vec![State::new(start.to_vec())];
    states.extend(records.iter().map(|r| State::new(r.x_next.clone())));
    let n = states.len() - 1;
    let controls = records
        .iter()
        .map(|r| aura_planning::Control::new(r.control.clone()))
        .collect();
    Trajectory::new(states, controls, vec![1.0; n]).ok()
}

fn cmd_render(
    scenario_path: &Path,
    run_dir: Option<&Path>,
    plan_file: Option<&Path>,
    out: &Path,
) -> Result<ExitCode, PlanningError> {
    let scenario = Scenario::load(scenario_path)?;
    let model = scenario.model()?;
    let env = scenario.environment()?;
    let goal = scenario.goal_region(model.state_space())?;
    let space = model.state_space();
    let x_bounds = [space.lower()[0], space.upper()[0]];
    let y_bounds = [space.lower()[1], space.upper()[1]];

    let mut executed = None;
    let mut nominal = None;
    if let Some(dir) = run_dir {
        executed = Some(load_trajectory_json(&dir.join("executed.json"))?);
        let text = fs::read_to_string(dir.join("report.json"))
            .map_err(|e| PlanningError::Render(format!("{}: {e}", dir.display())))?;
        let report: ExecutionReport = serde_json::from_str(&text)
            .map_err(|e| PlanningError::Render(format!("{}: {e}", dir.display())))?;
        nominal = nominal_from_records(&scenario.start, &report.records);
    }
    let best = match plan_file {
        Some(path) => Some(load_trajectory_json(path)?),
        None => None,
    };

    let svg = render_svg(&RenderScene {
        env: &env,
        x_bounds,
        y_bounds,
        goal: Some(&goal),
        nominal: nominal.as_ref(),
        executed: executed.as_ref(),
        best: best.as_ref(),
    })?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_text(out, &svg)?;
    println!("rendered {} -> {}", scenario.name, out.display());
    Ok(ExitCode::SUCCESS)
}

//! Kinodynamic planning with runtime recovery control.

pub mod aura;
pub mod baselines;
pub mod bench;
pub mod dynamics;
pub mod error;
pub mod executor;
pub mod planner;
pub mod space;
pub mod trajectory;
pub mod world;

pub use aura::{
    optimize_batch, recalculate_costs, run_aura, sample_nearby, AuraConfig, ChildTarget,
    ControlSource, CycleRecord, ExecutionReport, OptimizedControlTable,
};
pub use baselines::{mppi_weights, run_mppi, run_open_loop, run_restart_replanning, MppiConfig, RrConfig};
pub use bench::{
    render::{render_svg, RenderScene},
    run_bench, run_experiment, run_trial, BenchSpec, ExperimentSpec, MethodSpec, Scenario,
    SweepSpec, SystemSpec,
};
pub use error::{PlanningError, Result};
pub use planner::{
    plan, Budget, PlanCandidate, PlanSet, PlanTree, PlannerConfig, PlannerVariant, TreeNode,
    DEFAULT_ITERS_PER_SECOND,
};
pub use space::{Control, ControlSpace, State, StateSpace, Topology};
pub use trajectory::{trajectory_cost, tracking_error, CostFunction, Trajectory, TrackingError};

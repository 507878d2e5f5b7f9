use super::*;
use crate::dynamics::{validate_trajectory, DoubleIntegrator6D, KinematicCar};
use crate::space::Control;
use crate::trajectory::trajectory_cost;
use crate::world::{Environment, GoalRegion, Obstacle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

fn di() -> DoubleIntegrator6D {
    DoubleIntegrator6D::new([-5.0; 3], [5.0; 3], 2.0, 2.0).unwrap()
}

fn di_goal() -> GoalRegion {
    GoalRegion::new(State::new(vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1.0).unwrap()
}

fn start6() -> State {
    State::new(vec![-2.0, 0.0, 0.0, 0.0, 0.0, 0.0])
}

fn config(variant: PlannerVariant, seed: u64) -> PlannerConfig {
    PlannerConfig {
        variant,
        seed,
        // short motions keep velocities inside bounds more often, which
        // keeps these small-budget tests reliable
        duration_range: [0.5, 1.5],
        ..PlannerConfig::default()
    }
}

fn dump_string(tree: &PlanTree) -> String {
    let mut buf = Vec::new();
    tree.dump(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn goal_around_start_solved_immediately() {
    let m = di();
    let env = Environment::empty(3);
    let goal = GoalRegion::new(start6(), 0.5).unwrap();
    for variant in [PlannerVariant::Sst, PlannerVariant::AoRrt] {
        let (plans, tree) = plan(
            &config(variant, 1),
            &m,
            &env,
            &goal,
            CostFunction::PathLength,
            &start6(),
            Budget::Iterations(10),
            None,
        )
        .unwrap();
        assert!(!plans.is_empty());
        assert_eq!(plans.best().unwrap().cost, 0.0);
        assert_eq!(plans.best().unwrap().trajectory.len(), 0);
        tree.audit().unwrap();
    }
}

#[test]
fn zero_budget_returns_input_unchanged() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    let cfg = config(PlannerVariant::Sst, 3);
    let (_, tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &start6(),
        Budget::Iterations(500),
        None,
    )
    .unwrap();
    let before = dump_string(&tree);
    let (_, tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &start6(),
        Budget::Iterations(0),
        Some(tree),
    )
    .unwrap();
    assert_eq!(before, dump_string(&tree));
}

#[test]
fn invalid_start_rejected() {
    let m = di();
    let env = Environment::new(
        3,
        vec![Obstacle::Sphere {
            center: vec![0.0, 0.0, 0.0],
            radius: 1.0,
        }],
        0.0,
    )
    .unwrap();
    let goal = di_goal();
    let inside = State::new(vec![0.0; 6]);
    let err = plan(
        &config(PlannerVariant::Sst, 0),
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &inside,
        Budget::Iterations(10),
        None,
    );
    assert!(matches!(err, Err(PlanningError::InvalidStart(_))));
}

#[test]
fn resume_requires_matching_root() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    let cfg = config(PlannerVariant::Sst, 3);
    let (_, tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &start6(),
        Budget::Iterations(50),
        None,
    )
    .unwrap();
    let other = State::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let err = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &other,
        Budget::Iterations(50),
        Some(tree),
    );
    assert!(matches!(err, Err(PlanningError::InvalidStart(_))));
}

#[test]
fn config_validation() {
    let mut c = PlannerConfig::default();
    c.s_v = 0.5; // >= s_bn
    assert!(c.validate().is_err());
    let mut c = PlannerConfig::default();
    c.goal_bias = 1.0;
    assert!(c.validate().is_err());
    let mut c = PlannerConfig::default();
    c.duration_range = [2.0, 1.0];
    assert!(c.validate().is_err());
    assert!(PlannerConfig::default().validate().is_ok());
}

#[test]
fn same_seed_same_tree_different_seed_different_tree() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    for variant in [PlannerVariant::Sst, PlannerVariant::AoRrt] {
        let run = |seed: u64| {
            let (_, tree) = plan(
                &config(variant, seed),
                &m,
                &env,
                &goal,
                CostFunction::PathLength,
                &start6(),
                Budget::Iterations(1500),
                None,
            )
            .unwrap();
            dump_string(&tree)
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }
}

#[test]
fn resume_equals_uninterrupted_run() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    for variant in [PlannerVariant::Sst, PlannerVariant::AoRrt] {
        let cfg = config(variant, 21);
        let (_, whole) = plan(
            &cfg,
            &m,
            &env,
            &goal,
            CostFunction::PathLength,
            &start6(),
            Budget::Iterations(2000),
            None,
        )
        .unwrap();
        let (first_plans, half) = plan(
            &cfg,
            &m,
            &env,
            &goal,
            CostFunction::PathLength,
            &start6(),
            Budget::Iterations(1000),
            None,
        )
        .unwrap();
        let (resumed_plans, resumed) = plan(
            &cfg,
            &m,
            &env,
            &goal,
            CostFunction::PathLength,
            &start6(),
            Budget::Iterations(1000),
            Some(half),
        )
        .unwrap();
        assert_eq!(dump_string(&whole), dump_string(&resumed));
        // retained progress: resuming can only improve the best cost
        if let Some(b) = first_plans.best() {
            assert!(resumed_plans.best().unwrap().cost <= b.cost + 1e-12);
        }
    }
}

#[test]
fn open_field_reaches_goal_and_audits_hold() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    for variant in [PlannerVariant::Sst, PlannerVariant::AoRrt] {
        let cfg = config(variant, 5);
        let mut tree: Option<PlanTree> = None;
        let mut plans = PlanSet::default();
        // grow in chunks, auditing between chunks
        for _ in 0..10 {
            let (p, t) = plan(
                &cfg,
                &m,
                &env,
                &goal,
                CostFunction::PathLength,
                &start6(),
                Budget::Iterations(2000),
                tree.take(),
            )
            .unwrap();
            t.audit().unwrap();
            plans = p;
            tree = Some(t);
        }
        let tree = tree.unwrap();
        assert!(
            !plans.is_empty(),
            "{variant:?} found no plan in 20000 iterations"
        );
        let best = plans.best().unwrap();
        assert!(best.cost > 0.0);
        validate_trajectory(&m, &best.trajectory, 1e-9).unwrap();
        let last = best.trajectory.last_state();
        assert!(goal.satisfied(m.state_space(), last).unwrap());
        if variant == PlannerVariant::Sst {
            assert!(
                tree.nodes.values().any(|n| !n.active),
                "SST never deactivated a node"
            );
        } else {
            assert!((tree.cost_bound - best.cost).abs() < 1e-12);
        }
    }
}

#[test]
fn kinematic_car_reaches_goal() {
    let m = KinematicCar::default();
    let env = Environment::empty(2);
    let goal = GoalRegion::new(
        State::new(vec![1.0, 1.0, std::f64::consts::FRAC_PI_2]),
        0.5,
    )
    .unwrap();
    let start = State::new(vec![0.0, 0.0, 0.0]);
    let cfg = config(PlannerVariant::Sst, 2);
    let (plans, tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::Duration,
        &start,
        Budget::Iterations(10_000),
        None,
    )
    .unwrap();
    tree.audit().unwrap();
    assert!(!plans.is_empty(), "car found no plan");
    validate_trajectory(&m, &plans.best().unwrap().trajectory, 1e-9).unwrap();
}

#[test]
fn more_budget_never_worse_per_seed() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    let cfg = config(PlannerVariant::Sst, 33);
    let best_at = |iters: u64| {
        let (plans, _) = plan(
            &cfg,
            &m,
            &env,
            &goal,
            CostFunction::PathLength,
            &start6(),
            Budget::Iterations(iters),
            None,
        )
        .unwrap();
        plans.best().map(|c| c.cost)
    };
    let short = best_at(2000);
    let long = best_at(6000);
    if let (Some(s), Some(l)) = (short, long) {
        assert!(l <= s + 1e-12, "cost got worse with budget: {s} -> {l}");
    } else {
        assert!(short.is_none_or(|_| long.is_some()), "solution lost");
    }
}

#[test]
fn aorrt_cost_bound_prunes_expensive_nodes() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    let cfg = config(PlannerVariant::AoRrt, 7);
    let (plans, tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &start6(),
        Budget::Iterations(20_000),
        None,
    )
    .unwrap();
    assert!(!plans.is_empty());
    let bound = tree.cost_bound;
    assert!(bound.is_finite());
    for id in tree.ids() {
        assert!(tree.node(id).unwrap().cost_to_come <= bound + 1e-9);
    }
    // the bound is exactly the best goal cost
    assert!((plans.best().unwrap().cost - bound).abs() < 1e-12);
}

// ---- tree mechanics -------------------------------------------------------

/// Random dynamically consistent tree grown by direct propagation.
fn random_tree(seed: u64, nodes: usize) -> (DoubleIntegrator6D, PlanTree) {
    let m = DoubleIntegrator6D::new([-100.0; 3], [100.0; 3], 50.0, 2.0).unwrap();
    let cfg = config(PlannerVariant::AoRrt, seed);
    let mut tree = PlanTree::new(
        cfg,
        m.state_space(),
        CostFunction::PathLength,
        State::new(vec![0.0; 6]),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut ids = vec![tree.root_id()];
    for _ in 1..nodes {
        let parent = ids[rng.random_range(0..ids.len())];
        let u = m.control_space().sample_uniform(&mut rng);
        let dur = rng.random_range(0.1..1.0);
        let state = m
            .propagate(&tree.node(parent).unwrap().state, &u, dur)
            .unwrap();
        let id = tree.add_node(parent, state, u, dur).unwrap();
        ids.push(id);
    }
    (m, tree)
}

#[test]
fn prune_identity_is_noop() {
    let (_, mut tree) = random_tree(1, 100);
    let before = dump_string(&tree);
    tree.prune_unreachable(tree.root_id()).unwrap();
    assert_eq!(before, dump_string(&tree));
}

#[test]
fn prune_chain_example() {
    let m = di();
    let cfg = config(PlannerVariant::AoRrt, 0);
    let mut tree = PlanTree::new(
        cfg,
        m.state_space(),
        CostFunction::Duration,
        State::new(vec![0.0; 6]),
    )
    .unwrap();
    let u = Control::new(vec![0.5, 0.0, 0.0]);
    let s1 = m.propagate(tree.root_state(), &u, 1.0).unwrap();
    let b = tree.add_node(tree.root_id(), s1.clone(), u.clone(), 1.0).unwrap();
    let s2 = m.propagate(&s1, &u, 2.0).unwrap();
    let c = tree.add_node(b, s2, u, 2.0).unwrap();
    assert_eq!(tree.node(c).unwrap().cost_to_come, 3.0);

    tree.prune_unreachable(b).unwrap();
    assert_eq!(tree.ids(), vec![b, c]);
    assert_eq!(tree.root_id(), b);
    assert_eq!(tree.node(b).unwrap().cost_to_come, 0.0);
    assert!(tree.node(b).unwrap().parent.is_none());
    // c's cost rebased to just the b -> c edge
    assert_eq!(tree.node(c).unwrap().cost_to_come, 2.0);
    tree.audit().unwrap();
}

#[test]
fn prune_unknown_node_errors() {
    let (_, mut tree) = random_tree(2, 50);
    assert!(matches!(
        tree.prune_unreachable(999_999),
        Err(PlanningError::UnknownNode(_))
    ));
}

#[test]
fn prune_matches_bfs_descendant_oracle() {
    // the acceptance-scale version runs in the integration suite; this is
    // the same oracle at unit scale
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..100 {
        let n = rng.random_range(20..1000);
        let (_, mut tree) = random_tree(case, n);
        let ids = tree.ids();
        let new_root = ids[rng.random_range(0..ids.len())];

        // independent adjacency snapshot from parent links only
        let mut adjacency: HashMap<u64, Vec<u64>> = HashMap::new();
        let mut old_costs: HashMap<u64, f64> = HashMap::new();
        for id in &ids {
            let node = tree.node(*id).unwrap();
            old_costs.insert(*id, node.cost_to_come);
            if let Some(p) = node.parent {
                adjacency.entry(p).or_default().push(*id);
            }
        }
        let mut expect = vec![new_root];
        let mut frontier = vec![new_root];
        while let Some(id) = frontier.pop() {
            for c in adjacency.get(&id).cloned().unwrap_or_default() {
                expect.push(c);
                frontier.push(c);
            }
        }
        expect.sort_unstable();

        tree.prune_unreachable(new_root).unwrap();
        assert_eq!(tree.ids(), expect, "case {case}: survivor set mismatch");
        let delta = old_costs[&new_root];
        for id in tree.ids() {
            let got = tree.node(id).unwrap().cost_to_come;
            let want = if id == new_root {
                0.0
            } else {
                old_costs[&id] - delta
            };
            assert_eq!(got, want, "case {case}: cost of {id} not rebased exactly");
        }
        tree.audit().unwrap();
    }
}

#[test]
fn prune_after_sst_growth_keeps_audits_green() {
    let m = di();
    let env = Environment::empty(3);
    let goal = di_goal();
    let cfg = config(PlannerVariant::Sst, 9);
    let (_, mut tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &start6(),
        Budget::Iterations(3000),
        None,
    )
    .unwrap();
    // re-root at a child of the root, as the runtime replanner does
    let child = tree.node(tree.root_id()).unwrap().children[0];
    tree.prune_unreachable(child).unwrap();
    tree.audit().unwrap();
    // and the tree still supports resumed planning from the new root
    let new_start = tree.root_state().clone();
    let (_, tree) = plan(
        &cfg,
        &m,
        &env,
        &goal,
        CostFunction::PathLength,
        &new_start,
        Budget::Iterations(1000),
        Some(tree),
    )
    .unwrap();
    tree.audit().unwrap();
}

#[test]
fn extract_trajectory_examples() {
    let (m, tree) = random_tree(8, 300);
    // leaf = root
    let t = tree.extract_trajectory(tree.root_id()).unwrap();
    assert_eq!(t.len(), 0);
    assert_eq!(t.states().len(), 1);
    // random leaves: cost cross-check and dynamic consistency
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let ids = tree.ids();
    for _ in 0..20 {
        let leaf = ids[rng.random_range(0..ids.len())];
        let traj = tree.extract_trajectory(leaf).unwrap();
        validate_trajectory(&m, &traj, 1e-9).unwrap();
        let cost = trajectory_cost(&traj, CostFunction::PathLength, m.state_space());
        assert!((cost - tree.node(leaf).unwrap().cost_to_come).abs() <= 1e-9);
    }
    assert!(tree.extract_trajectory(12_345_678).is_err());
}

#[test]
fn dump_is_parseable_and_sorted() {
    let (_, tree) = random_tree(3, 40);
    let text = dump_string(&tree);
    let mut last_id = None;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 7);
        let id: u64 = fields[0].parse().unwrap();
        if let Some(prev) = last_id {
            assert!(id > prev);
        }
        last_id = Some(id);
        assert_eq!(fields[2].split(',').count(), 6);
        let _cost: f64 = fields[5].parse().unwrap();
    }
    assert_eq!(last_id, Some(tree.ids()[tree.len() - 1]));
}

#[test]
fn budget_parsing_and_conversion() {
    assert_eq!("5s".parse::<Budget>().unwrap(), Budget::WallSeconds(5.0));
    assert_eq!("2.5s".parse::<Budget>().unwrap(), Budget::WallSeconds(2.5));
    assert_eq!(
        "10000iter".parse::<Budget>().unwrap(),
        Budget::Iterations(10_000)
    );
    assert!("5".parse::<Budget>().is_err());
    assert!("x5s".parse::<Budget>().is_err());
    assert_eq!(
        Budget::WallSeconds(5.0).to_iterations(2000.0),
        Budget::Iterations(10_000)
    );
    assert_eq!(
        Budget::Iterations(7).to_iterations(2000.0),
        Budget::Iterations(7)
    );
    assert_eq!(Budget::Iterations(10_000).to_string(), "10000iter");
    let b: Budget = "3s".parse().unwrap();
    assert!(b.scaled(0.5) == Budget::WallSeconds(1.5));
    assert!(Budget::Iterations(0).is_zero());
}

#[test]
fn plan_set_sorting_and_cap() {
    let mk = |cost: f64| PlanCandidate {
        trajectory: Trajectory::single(State::new(vec![0.0])),
        cost,
        node_path: vec![],
    };
    let set = PlanSet::new((0..100).rev().map(|i| mk(i as f64)).collect());
    assert_eq!(set.len(), PLAN_SET_CAP);
    assert_eq!(set.best().unwrap().cost, 0.0);
    let costs: Vec<f64> = set.iter().map(|c| c.cost).collect();
    assert!(costs.windows(2).all(|w| w[0] <= w[1]));
}


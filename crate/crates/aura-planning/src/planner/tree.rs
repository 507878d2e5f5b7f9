//! The persistent planning tree: nodes, costs, witnesses and re-rooting.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PlanningError, Result};
use crate::space::{Control, State, StateSpace, Topology};
use crate::trajectory::{CostFunction, Trajectory};

use super::nn::NnIndex;
use super::{PlannerConfig, PlannerVariant};

/// One tree vertex. `active` is the SST selectable flag; inactive nodes are
/// kept only while they still carry structure (children or a goal hit).
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: u64,
    pub state: State,
    pub parent: Option<u64>,
    pub control_from_parent: Option<Control>,
    pub duration_from_parent: Option<f64>,
    pub cost_to_come: f64,
    pub children: Vec<u64>,
    pub active: bool,
    /// Index of the witness this node is attached to (SST only).
    pub(crate) witness: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Witness {
    pub key: Vec<f64>,
    pub rep: u64,
}

/// Search tree shared by both planner variants, carrying everything needed
/// to resume planning later: nodes, the nearest-neighbor index over active
/// nodes, the SST witness set, the AO-RRT cost bound and the generator
/// state.
#[derive(Debug, Clone)]
pub struct PlanTree {
    pub(crate) config: PlannerConfig,
    pub(crate) cost: CostFunction,
    pub(crate) space: StateSpace,
    pub(crate) nodes: HashMap<u64, TreeNode>,
    pub(crate) root: u64,
    pub(crate) next_id: u64,
    pub(crate) nn: NnIndex,
    pub(crate) witnesses: Vec<Witness>,
    pub(crate) witness_nn: NnIndex,
    pub(crate) goal_nodes: BTreeSet<u64>,
    /// AO-RRT: cost of the best solution found so far (+inf before one
    /// exists); nodes above it are pruned away.
    pub(crate) cost_bound: f64,
    /// Largest cost-to-come in the tree; the cost-sampling ceiling while no
    /// solution bounds the search.
    pub(crate) max_cost: f64,
    pub(crate) rng: ChaCha8Rng,
    /// Total planner iterations this tree has consumed (all plan calls).
    pub(crate) iterations: u64,
}

impl PlanTree {
    pub(crate) fn new(
        config: PlannerConfig,
        space: &StateSpace,
        cost: CostFunction,
        start: State,
    ) -> Result<Self> {
        config.validate()?;
        if start.dims() != space.dims() {
            return Err(PlanningError::DimensionMismatch {
                expected: space.dims(),
                got: start.dims(),
            });
        }
        let nn = match config.variant {
            PlannerVariant::Sst => {
                NnIndex::new(space.topology().to_vec(), space.weights().to_vec())
            }
            PlannerVariant::AoRrt => {
                let mut topo = space.topology().to_vec();
                let mut weights = space.weights().to_vec();
                topo.push(Topology::Real);
                weights.push(config.cost_weight);
                NnIndex::new(topo, weights)
            }
        };
        let witness_nn = NnIndex::new(space.topology().to_vec(), space.weights().to_vec());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let start = space.make_state(start.into_values());
        let root = TreeNode {
            id: 0,
            state: start,
            parent: None,
            control_from_parent: None,
            duration_from_parent: None,
            cost_to_come: 0.0,
            children: Vec::new(),
            active: true,
            witness: None,
        };
        let mut tree = PlanTree {
            config,
            cost,
            space: space.clone(),
            nodes: HashMap::new(),
            root: 0,
            next_id: 1,
            nn,
            witnesses: Vec::new(),
            witness_nn,
            goal_nodes: BTreeSet::new(),
            cost_bound: f64::INFINITY,
            max_cost: 0.0,
            rng,
            iterations: 0,
        };
        tree.index_insert(&root);
        let key = root.state.values().to_vec();
        tree.nodes.insert(0, root);
        if tree.config.variant == PlannerVariant::Sst {
            tree.claim_witness(None, 0, key);
        }
        Ok(tree)
    }

    pub fn root_id(&self) -> u64 {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u64) -> Result<&TreeNode> {
        self.nodes.get(&id).ok_or(PlanningError::UnknownNode(id))
    }

    pub fn root_state(&self) -> &State {
        &self.nodes[&self.root].state
    }

    /// Node ids in ascending order.
    pub fn ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.nodes.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Ids of goal-reaching nodes, ascending.
    pub fn goal_node_ids(&self) -> Vec<u64> {
        self.goal_nodes.iter().copied().collect()
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub(crate) fn step_cost(
        &self,
        from: &State,
        to: &State,
        control: &Control,
        duration: f64,
    ) -> f64 {
        self.cost.step_cost(&self.space, from, to, control, duration)
    }

    fn nn_key(&self, state: &State, cost: f64) -> Vec<f64> {
        let mut key = state.values().to_vec();
        if self.config.variant == PlannerVariant::AoRrt {
            key.push(cost);
        }
        key
    }

    fn index_insert(&mut self, node: &TreeNode) {
        let key = self.nn_key(&node.state, node.cost_to_come);
        self.nn.insert(node.id, key);
    }

    /// Create a child of `parent` and index it. Goal membership and witness
    /// bookkeeping are the caller's (planner's) responsibility.
    pub(crate) fn add_node(
        &mut self,
        parent: u64,
        state: State,
        control: Control,
        duration: f64,
    ) -> Result<u64> {
        let parent_node = self.nodes.get(&parent).ok_or(PlanningError::UnknownNode(parent))?;
        let cost = parent_node.cost_to_come
            + self.step_cost(&parent_node.state, &state, &control, duration);
        let id = self.next_id;
        self.next_id += 1;
        let node = TreeNode {
            id,
            state,
            parent: Some(parent),
            control_from_parent: Some(control),
            duration_from_parent: Some(duration),
            cost_to_come: cost,
            children: Vec::new(),
            active: true,
            witness: None,
        };
        self.index_insert(&node);
        self.nodes.get_mut(&parent).unwrap().children.push(id);
        self.max_cost = self.max_cost.max(cost);
        self.nodes.insert(id, node);
        Ok(id)
    }

    pub(crate) fn mark_goal(&mut self, id: u64) {
        self.goal_nodes.insert(id);
    }

    /// Nearest witness within `s_v` of the key, if any.
    pub(crate) fn witness_lookup(&self, key: &[f64]) -> Option<usize> {
        let idx = self.witness_nn.nearest(key)? as usize;
        let d_sq: f64 = key
            .iter()
            .zip(self.witnesses[idx].key.iter())
            .zip(self.space.topology().iter().zip(self.space.weights()))
            .map(|((a, b), (t, w))| {
                let d = match t {
                    Topology::Real => a - b,
                    Topology::Angular => crate::space::wrap_angle(a - b),
                };
                w * d * d
            })
            .sum();
        (d_sq.sqrt() <= self.config.s_v).then_some(idx)
    }

    /// Make `node_id` the representative of `witness` (creating a fresh
    /// witness at `key` when `witness` is None). Returns the id of the
    /// representative that got displaced, if any.
    pub(crate) fn claim_witness(
        &mut self,
        witness: Option<usize>,
        node_id: u64,
        key: Vec<f64>,
    ) -> Option<u64> {
        match witness {
            None => {
                let idx = self.witnesses.len();
                self.witness_nn.insert(idx as u64, key.clone());
                self.witnesses.push(Witness { key, rep: node_id });
                if let Some(n) = self.nodes.get_mut(&node_id) {
                    n.witness = Some(idx);
                }
                None
            }
            Some(idx) => {
                let old = self.witnesses[idx].rep;
                self.witnesses[idx].rep = node_id;
                if let Some(n) = self.nodes.get_mut(&node_id) {
                    n.witness = Some(idx);
                }
                (old != node_id).then_some(old)
            }
        }
    }

    /// Deactivate a node (drop it from the selectable set) and garbage
    /// collect any resulting chain of inactive, childless, non-goal leaves.
    pub(crate) fn deactivate(&mut self, id: u64) {
        let node = self.nodes.get_mut(&id).expect("deactivating unknown node");
        if !node.active {
            return;
        }
        node.active = false;
        self.nn.remove(id);
        self.collect_dead_leaf(id);
    }

    fn collect_dead_leaf(&mut self, mut id: u64) {
        loop {
            if id == self.root || self.goal_nodes.contains(&id) {
                return;
            }
            let node = &self.nodes[&id];
            if node.active || !node.children.is_empty() {
                return;
            }
            let parent = node.parent.expect("non-root node must have a parent");
            self.nodes.remove(&id);
            let p = self.nodes.get_mut(&parent).expect("parent must exist");
            p.children.retain(|c| *c != id);
            id = parent;
        }
    }

    /// Remove every node whose cost-to-come exceeds the bound (AO-RRT
    /// shrink). The removal set is descendant-closed because step costs are
    /// non-negative.
    pub(crate) fn enforce_cost_bound(&mut self) {
        if !self.cost_bound.is_finite() {
            return;
        }
        let doomed: BTreeSet<u64> = self
            .nodes
            .values()
            .filter(|n| n.cost_to_come > self.cost_bound)
            .map(|n| n.id)
            .collect();
        if doomed.is_empty() {
            return;
        }
        for id in &doomed {
            let node = self.nodes.remove(id).unwrap();
            if node.active {
                self.nn.remove(*id);
            }
            if let Some(parent) = node.parent {
                if !doomed.contains(&parent) {
                    if let Some(p) = self.nodes.get_mut(&parent) {
                        p.children.retain(|c| c != id);
                    }
                }
            }
            self.goal_nodes.remove(id);
        }
        self.max_cost = self
            .nodes
            .values()
            .map(|n| n.cost_to_come)
            .fold(0.0, f64::max);
    }

    /// Ceiling for AO-RRT cost-coordinate sampling.
    pub(crate) fn cost_sampling_ceiling(&self) -> f64 {
        if self.cost_bound.is_finite() {
            self.cost_bound
        } else {
            self.max_cost + 1.0
        }
    }

    /// Re-root the tree at `new_root`: keep only its descendants, rebase
    /// costs so the new root is at zero, and rebuild the index and witness
    /// structures over the survivors.
    pub fn prune_unreachable(&mut self, new_root: u64) -> Result<()> {
        if !self.nodes.contains_key(&new_root) {
            return Err(PlanningError::UnknownNode(new_root));
        }
        if new_root == self.root {
            return Ok(());
        }
        let mut keep: BTreeSet<u64> = BTreeSet::new();
        let mut queue = VecDeque::from([new_root]);
        while let Some(id) = queue.pop_front() {
            if keep.insert(id) {
                queue.extend(self.nodes[&id].children.iter().copied());
            }
        }
        let delta = self.nodes[&new_root].cost_to_come;
        self.nodes.retain(|id, _| keep.contains(id));
        for node in self.nodes.values_mut() {
            node.cost_to_come -= delta;
            node.witness = None;
        }
        {
            let r = self.nodes.get_mut(&new_root).unwrap();
            r.parent = None;
            r.control_from_parent = None;
            r.duration_from_parent = None;
            r.cost_to_come = 0.0;
        }
        self.root = new_root;
        self.goal_nodes.retain(|id| keep.contains(id));
        self.cost_bound = self
            .goal_nodes
            .iter()
            .map(|id| self.nodes[id].cost_to_come)
            .fold(f64::INFINITY, f64::min);
        if self.config.variant == PlannerVariant::Sst && self.cost_bound.is_finite() {
            // the bound is an AO-RRT device; SST keeps everything
            self.cost_bound = f64::INFINITY;
        }
        self.max_cost = self
            .nodes
            .values()
            .map(|n| n.cost_to_come)
            .fold(0.0, f64::max);
        self.rebuild_indexes();
        Ok(())
    }

    /// Rebuild NN and witness structures from the current node set. SST
    /// re-runs witness dominance in (cost, id) order, which also reactivates
    /// nodes whose dominator did not survive.
    fn rebuild_indexes(&mut self) {
        let nn_axes = match self.config.variant {
            PlannerVariant::Sst => (
                self.space.topology().to_vec(),
                self.space.weights().to_vec(),
            ),
            PlannerVariant::AoRrt => {
                let mut topo = self.space.topology().to_vec();
                let mut weights = self.space.weights().to_vec();
                topo.push(Topology::Real);
                weights.push(self.config.cost_weight);
                (topo, weights)
            }
        };
        self.nn = NnIndex::new(nn_axes.0, nn_axes.1);
        self.witnesses.clear();
        self.witness_nn = NnIndex::new(
            self.space.topology().to_vec(),
            self.space.weights().to_vec(),
        );
        match self.config.variant {
            PlannerVariant::AoRrt => {
                for id in self.ids() {
                    let node = self.nodes.get_mut(&id).unwrap();
                    node.active = true;
                    let key = {
                        let mut k = node.state.values().to_vec();
                        k.push(node.cost_to_come);
                        k
                    };
                    self.nn.insert(id, key);
                }
            }
            PlannerVariant::Sst => {
                let mut order: Vec<(f64, u64)> = self
                    .nodes
                    .values()
                    .map(|n| (n.cost_to_come, n.id))
                    .collect();
                order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for (_, id) in order {
                    let key = self.nodes[&id].state.values().to_vec();
                    match self.witness_lookup(&key) {
                        None => {
                            self.nodes.get_mut(&id).unwrap().active = true;
                            self.nn.insert(id, key.clone());
                            self.claim_witness(None, id, key);
                        }
                        Some(idx) => {
                            // an earlier (cheaper) node owns this region
                            let n = self.nodes.get_mut(&id).unwrap();
                            n.active = false;
                            n.witness = Some(idx);
                        }
                    }
                }
            }
        }
    }

    /// Root-to-leaf node ids.
    pub fn extract_path(&self, leaf: u64) -> Result<Vec<u64>> {
        let mut path = Vec::new();
        let mut cur = leaf;
        loop {
            let node = self.node(cur)?;
            path.push(cur);
            match node.parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        path.reverse();
        if path[0] != self.root {
            return Err(PlanningError::Audit(format!(
                "path from {leaf} terminates at {} instead of the root",
                path[0]
            )));
        }
        Ok(path)
    }

    /// Materialize the root-to-leaf trajectory.
    pub fn extract_trajectory(&self, leaf: u64) -> Result<Trajectory> {
        let path = self.extract_path(leaf)?;
        let mut states = Vec::with_capacity(path.len());
        let mut controls = Vec::with_capacity(path.len().saturating_sub(1));
        let mut durations = Vec::with_capacity(path.len().saturating_sub(1));
        for (i, id) in path.iter().enumerate() {
            let node = &self.nodes[id];
            states.push(node.state.clone());
            if i > 0 {
                controls.push(node.control_from_parent.clone().expect("non-root link"));
                durations.push(node.duration_from_parent.expect("non-root link"));
            }
        }
        Trajectory::new(states, controls, durations)
    }

    /// Full-tree consistency audit: link symmetry, reachability, the cost
    /// recurrence, NN membership, witness and cost-bound invariants.
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(PlanningError::Audit(msg));
        let root = match self.nodes.get(&self.root) {
            Some(r) => r,
            None => return fail("root is not in the node store".into()),
        };
        if root.parent.is_some()
            || root.control_from_parent.is_some()
            || root.duration_from_parent.is_some()
        {
            return fail("root must have no incoming link".into());
        }
        if root.cost_to_come != 0.0 {
            return fail(format!("root cost {} != 0", root.cost_to_come));
        }
        let mut reached: BTreeSet<u64> = BTreeSet::new();
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            if !reached.insert(id) {
                return fail(format!("node {id} reached twice; cycle in children links"));
            }
            let node = match self.nodes.get(&id) {
                Some(n) => n,
                None => return fail(format!("child link to missing node {id}")),
            };
            for c in &node.children {
                match self.nodes.get(c) {
                    Some(child) if child.parent == Some(id) => {}
                    Some(_) => return fail(format!("node {c} disowns listed parent {id}")),
                    None => return fail(format!("missing child {c} of {id}")),
                }
            }
            queue.extend(node.children.iter().copied());
        }
        if reached.len() != self.nodes.len() {
            return fail(format!(
                "{} of {} nodes reachable from root",
                reached.len(),
                self.nodes.len()
            ));
        }
        for id in self.ids() {
            let node = &self.nodes[&id];
            if node.id != id {
                return fail(format!("node stored under {id} says id {}", node.id));
            }
            if let Some(p) = node.parent {
                let parent = &self.nodes[&p];
                if parent.children.iter().filter(|c| **c == id).count() != 1 {
                    return fail(format!("parent {p} lists {id} other than once"));
                }
                let step = self.step_cost(
                    &parent.state,
                    &node.state,
                    node.control_from_parent.as_ref().unwrap(),
                    node.duration_from_parent.unwrap(),
                );
                let expect = parent.cost_to_come + step;
                if (node.cost_to_come - expect).abs() > 1e-9 {
                    return fail(format!(
                        "cost recurrence broken at {id}: stored {} vs recomputed {expect}",
                        node.cost_to_come
                    ));
                }
                if node.duration_from_parent.unwrap() <= 0.0 {
                    return fail(format!("non-positive edge duration into {id}"));
                }
            } else if id != self.root {
                return fail(format!("non-root node {id} has no parent"));
            }
        }
        let active: Vec<u64> = {
            let mut v: Vec<u64> = self
                .nodes
                .values()
                .filter(|n| n.active)
                .map(|n| n.id)
                .collect();
            v.sort_unstable();
            v
        };
        if active != self.nn.ids() {
            return fail("NN index does not match the active node set".into());
        }
        for id in self.goal_nodes.iter() {
            if !self.nodes.contains_key(id) {
                return fail(format!("goal list references missing node {id}"));
            }
        }
        match self.config.variant {
            PlannerVariant::Sst => self.audit_witnesses()?,
            PlannerVariant::AoRrt => self.audit_cost_bound()?,
        }
        Ok(())
    }

    fn audit_witnesses(&self) -> Result<()> {
        let fail = |msg: String| Err(PlanningError::Audit(msg));
        let mut reps: BTreeSet<u64> = BTreeSet::new();
        for (idx, w) in self.witnesses.iter().enumerate() {
            let rep = match self.nodes.get(&w.rep) {
                Some(n) => n,
                None => return fail(format!("witness {idx} references missing rep {}", w.rep)),
            };
            if !rep.active {
                return fail(format!("witness {idx} rep {} is inactive", w.rep));
            }
            if rep.witness != Some(idx) {
                return fail(format!("rep {} does not link back to witness {idx}", w.rep));
            }
            if !reps.insert(w.rep) {
                return fail(format!("node {} represents two witnesses", w.rep));
            }
            let d = self
                .space
                .distance_unchecked(&rep.state, &State::new(w.key.clone()));
            if d > self.config.s_v + 1e-9 {
                return fail(format!(
                    "rep {} sits {d} from its witness, beyond s_v {}",
                    w.rep, self.config.s_v
                ));
            }
        }
        for node in self.nodes.values() {
            match node.witness {
                None => {
                    return fail(format!("node {} has no witness link", node.id));
                }
                Some(idx) => {
                    if idx >= self.witnesses.len() {
                        return fail(format!("node {} links to missing witness {idx}", node.id));
                    }
                    if node.active && self.witnesses[idx].rep != node.id {
                        return fail(format!(
                            "active node {} is not the rep of its witness",
                            node.id
                        ));
                    }
                    if !node.active {
                        let rep_cost = self.nodes[&self.witnesses[idx].rep].cost_to_come;
                        if rep_cost > node.cost_to_come + 1e-9 {
                            return fail(format!(
                                "inactive node {} dominated by a costlier rep ({} > {})",
                                node.id, rep_cost, node.cost_to_come
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn audit_cost_bound(&self) -> Result<()> {
        let fail = |msg: String| Err(PlanningError::Audit(msg));
        for node in self.nodes.values() {
            if node.cost_to_come > self.cost_bound + 1e-9 {
                return fail(format!(
                    "node {} cost {} exceeds bound {}",
                    node.id, node.cost_to_come, self.cost_bound
                ));
            }
            if !node.active {
                return fail(format!("AO-RRT node {} is inactive", node.id));
            }
            match self.nn.key_of(node.id) {
                None => return fail(format!("node {} missing from NN index", node.id)),
                Some(key) => {
                    if key[key.len() - 1] != node.cost_to_come {
                        return fail(format!(
                            "node {} NN cost coordinate {} != cost {}",
                            node.id,
                            key[key.len() - 1],
                            node.cost_to_come
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Line-oriented dump: `id  parent  state  control  duration  cost
    /// active`, tab separated, `-` for absent link fields, 17 significant
    /// digits, rows sorted by id.
    pub fn dump(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "# id\tparent\tstate\tcontrol\tduration\tcost\tactive")?;
        for id in self.ids() {
            let n = &self.nodes[&id];
            let join = |v: &[f64]| {
                v.iter()
                    .map(|x| format!("{x:.17e}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.17e}\t{}",
                n.id,
                n.parent.map_or("-".to_string(), |p| p.to_string()),
                join(n.state.values()),
                n.control_from_parent
                    .as_ref()
                    .map_or("-".to_string(), |c| join(c.values())),
                n.duration_from_parent
                    .map_or("-".to_string(), |d| format!("{d:.17e}")),
                n.cost_to_come,
                u8::from(n.active),
            )?;
        }
        Ok(())
    }
}

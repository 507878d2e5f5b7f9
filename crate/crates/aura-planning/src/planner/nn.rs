//! Nearest-neighbor index over weighted, possibly angular axes.
//!
//! Linear scan up to a size threshold, then a k-d tree with a pending
//! buffer for fresh insertions and tombstones for removals. All queries
//! break distance ties by lowest id, so results do not depend on which
//! backend answered them.

use std::collections::HashMap;

use crate::space::{wrap_angle, Topology};

const LINEAR_LIMIT: usize = 2000;
const PENDING_LIMIT: usize = 1024;
const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Slot {
    id: u64,
    key: Vec<f64>,
    alive: bool,
}

#[derive(Debug, Clone)]
enum Kd {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: Box<Kd>,
        right: Box<Kd>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct NnIndex {
    topo: Vec<Topology>,
    weights: Vec<f64>,
    slots: Vec<Slot>,
    by_id: HashMap<u64, usize>,
    alive: usize,
    kd: Option<Kd>,
    /// Slot indices inserted after the last k-d build; scanned linearly.
    pending: Vec<usize>,
    dead_in_kd: usize,
}

impl NnIndex {
    pub fn new(topo: Vec<Topology>, weights: Vec<f64>) -> Self {
        assert_eq!(topo.len(), weights.len());
        NnIndex {
            topo,
            weights,
            slots: Vec::new(),
            by_id: HashMap::new(),
            alive: 0,
            kd: None,
            pending: Vec::new(),
            dead_in_kd: 0,
        }
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.alive
    }

    pub fn contains(&self, id: u64) -> bool {
        self.by_id
            .get(&id)
            .is_some_and(|slot| self.slots[*slot].alive)
    }

    /// Stored key of an alive id; used by tree audits.
    pub fn key_of(&self, id: u64) -> Option<&[f64]> {
        self.by_id.get(&id).and_then(|slot| {
            let s = &self.slots[*slot];
            s.alive.then_some(s.key.as_slice())
        })
    }

    /// Alive ids in ascending order; used by tree audits.
    pub fn ids(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .slots
            .iter()
            .filter(|s| s.alive)
            .map(|s| s.id)
            .collect();
        out.sort_unstable();
        out
    }

    fn dist_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.topo.len() {
            let d = match self.topo[i] {
                Topology::Real => a[i] - b[i],
                Topology::Angular => wrap_angle(a[i] - b[i]),
            };
            acc += self.weights[i] * d * d;
        }
        acc
    }

    pub fn insert(&mut self, id: u64, key: Vec<f64>) {
        assert_eq!(key.len(), self.topo.len(), "key dimension mismatch");
        assert!(!self.contains(id), "duplicate insert of id {id}");
        let slot = self.slots.len();
        self.slots.push(Slot {
            id,
            key,
            alive: true,
        });
        self.by_id.insert(id, slot);
        self.alive += 1;
        if self.kd.is_some() {
            self.pending.push(slot);
            if self.pending.len() > PENDING_LIMIT {
                self.rebuild();
            }
        } else if self.alive > LINEAR_LIMIT {
            self.rebuild();
        }
    }

    pub fn remove(&mut self, id: u64) {
        let slot = *self.by_id.get(&id).expect("removing unknown id");
        assert!(self.slots[slot].alive, "removing dead id {id}");
        self.slots[slot].alive = false;
        self.alive -= 1;
        if self.kd.is_some() {
            if let Some(pos) = self.pending.iter().position(|s| *s == slot) {
                self.pending.remove(pos);
            } else {
                self.dead_in_kd += 1;
                if self.dead_in_kd > (self.alive / 2).max(256) {
                    self.rebuild();
                }
            }
        }
    }

    fn rebuild(&mut self) {
        let indices: Vec<usize> = (0..self.slots.len())
            .filter(|i| self.slots[*i].alive)
            .collect();
        self.pending.clear();
        self.dead_in_kd = 0;
        self.kd = Some(self.build(indices, 0));
    }

    fn build(&self, mut indices: Vec<usize>, depth: usize) -> Kd {
        if indices.len() <= LEAF_SIZE {
            return Kd::Leaf(indices);
        }
        let axis = depth % self.topo.len();
        indices.sort_unstable_by(|a, b| {
            let ka = self.slots[*a].key[axis];
            let kb = self.slots[*b].key[axis];
            ka.partial_cmp(&kb)
                .unwrap()
                .then_with(|| self.slots[*a].id.cmp(&self.slots[*b].id))
        });
        let mid = indices.len() / 2;
        let right_idx = indices.split_off(mid);
        let value = self.slots[right_idx[0]].key[axis];
        Kd::Split {
            axis,
            value,
            left: Box::new(self.build(indices, depth + 1)),
            right: Box::new(self.build(right_idx, depth + 1)),
        }
    }

    /// Conservative per-axis lower bound on the squared distance from `q`
    /// to anything on the far side of a split. Angular axes wrap, so the
    /// coordinate ordering argument fails there and the bound is zero.
    fn split_bound(&self, axis: usize, q: f64, value: f64) -> f64 {
        match self.topo[axis] {
            Topology::Real => {
                let d = q - value;
                self.weights[axis] * d * d
            }
            Topology::Angular => 0.0,
        }
    }

    fn consider(&self, slot: usize, q: &[f64], best: &mut Option<(f64, u64)>) {
        let s = &self.slots[slot];
        if !s.alive {
            return;
        }
        let d = self.dist_sq(&s.key, q);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < *bd || (d == *bd && s.id < *bid),
        };
        if better {
            *best = Some((d, s.id));
        }
    }

    fn nearest_kd(&self, kd: &Kd, q: &[f64], best: &mut Option<(f64, u64)>) {
        match kd {
            Kd::Leaf(slots) => {
                for slot in slots {
                    self.consider(*slot, q, best);
                }
            }
            Kd::Split {
                axis,
                value,
                left,
                right,
            } => {
                let (near, far) = if q[*axis] < *value {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_kd(near, q, best);
                let bound = self.split_bound(*axis, q[*axis], *value);
                // <= keeps equal-distance candidates reachable so the
                // lowest-id tie break stays exact
                if best.is_none() || bound <= best.unwrap().0 {
                    self.nearest_kd(far, q, best);
                }
            }
        }
    }

    pub fn nearest(&self, q: &[f64]) -> Option<u64> {
        let mut best: Option<(f64, u64)> = None;
        match &self.kd {
            Some(kd) => {
                self.nearest_kd(kd, q, &mut best);
                for slot in &self.pending {
                    self.consider(*slot, q, &mut best);
                }
            }
            None => {
                for slot in 0..self.slots.len() {
                    self.consider(slot, q, &mut best);
                }
            }
        }
        best.map(|(_, id)| id)
    }

    fn within_kd(&self, kd: &Kd, q: &[f64], r_sq: f64, out: &mut Vec<u64>) {
        match kd {
            Kd::Leaf(slots) => {
                for slot in slots {
                    let s = &self.slots[*slot];
                    if s.alive && self.dist_sq(&s.key, q) <= r_sq {
                        out.push(s.id);
                    }
                }
            }
            Kd::Split {
                axis,
                value,
                left,
                right,
            } => {
                let (near, far) = if q[*axis] < *value {
                    (left, right)
                } else {
                    (right, left)
                };
                self.within_kd(near, q, r_sq, out);
                if self.split_bound(*axis, q[*axis], *value) <= r_sq {
                    self.within_kd(far, q, r_sq, out);
                }
            }
        }
    }

    /// Alive ids within `radius` (inclusive), sorted ascending.
    pub fn within(&self, q: &[f64], radius: f64) -> Vec<u64> {
        let r_sq = radius * radius;
        let mut out = Vec::new();
        match &self.kd {
            Some(kd) => {
                self.within_kd(kd, q, r_sq, &mut out);
                for slot in &self.pending {
                    let s = &self.slots[*slot];
                    if s.alive && self.dist_sq(&s.key, q) <= r_sq {
                        out.push(s.id);
                    }
                }
            }
            None => {
                for s in &self.slots {
                    if s.alive && self.dist_sq(&s.key, q) <= r_sq {
                        out.push(s.id);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

//! Tree-valued branching dynamics with genealogy.
//!
//! The state is a finite rooted tree whose leaves are the living individuals
//! and whose internal vertices are dead ancestors kept only to encode kinship.
//! A leaf branches by gaining `k >= 1` children (it dies, they live); a leaf
//! dying childless triggers pruning: the tree is cut back to the union of the
//! paths from the surviving leaves to their most recent common ancestor,
//! which becomes the new root. The empty tree is the absorbing state.
//!
//! A [`GenealogyRecord`] logs every event with stable vertex ids so ancestry
//! queries (descendant counts, sole-survivor tests) replay offline without
//! the pruned structure.

use crate::offspring::OffspringDistribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BpgError {
    #[error("vertex {label} is not an alive leaf")]
    NotALeaf { label: u64 },
    #[error("vertex {label} does not exist in the record at the queried time")]
    UnknownVertex { label: u64 },
    #[error("operation undefined on the empty tree")]
    EmptyTree,
    #[error("malformed tree encoding at byte {at}")]
    ParseError { at: usize },
}

#[derive(Debug, Clone)]
struct Node {
    label: u64,
    parent: Option<usize>,
    children: Vec<usize>,
    // Position in the alive-leaf list; None for internal (dead) vertices.
    leaf_idx: Option<usize>,
}

/// Finite rooted tree; leaves alive, internal vertices dead, `∅` = absorbed.
#[derive(Debug, Clone)]
pub struct RootedTree {
    slots: Vec<Option<Node>>,
    free: Vec<usize>,
    root: Option<usize>,
    leaves: Vec<usize>,
    next_label: u64,
}

/// What one event did to the tree: labels created (births) and removed
/// (the dying leaf plus everything pruned with it).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventOutcome {
    pub created: Vec<u64>,
    pub pruned: Vec<u64>,
}

impl RootedTree {
    /// The single-vertex tree (one alive root).
    pub fn single() -> Self {
        let mut t = RootedTree::empty();
        let slot = t.alloc(None);
        t.root = Some(slot);
        t.register_leaf(slot);
        t
    }

    /// A path of `n >= 1` vertices: root at one end, the only leaf at the other.
    pub fn path(n: usize) -> Self {
        assert!(n >= 1, "path needs at least one vertex");
        let mut t = RootedTree::empty();
        let mut prev = t.alloc(None);
        t.root = Some(prev);
        for _ in 1..n {
            let v = t.alloc(Some(prev));
            t.slots[prev].as_mut().unwrap().children.push(v);
            prev = v;
        }
        t.register_leaf(prev);
        t
    }

    /// A root with `k >= 1` leaf children.
    pub fn star(k: usize) -> Self {
        assert!(k >= 1, "star needs at least one leaf");
        let mut t = RootedTree::empty();
        let root = t.alloc(None);
        t.root = Some(root);
        for _ in 0..k {
            let v = t.alloc(Some(root));
            t.slots[root].as_mut().unwrap().children.push(v);
            t.register_leaf(v);
        }
        t
    }

    fn empty() -> Self {
        RootedTree { slots: Vec::new(), free: Vec::new(), root: None, leaves: Vec::new(), next_label: 0 }
    }

    fn alloc(&mut self, parent: Option<usize>) -> usize {
        let node = Node { label: self.next_label, parent, children: Vec::new(), leaf_idx: None };
        self.next_label += 1;
        if let Some(slot) = self.free.pop() {
            self.slots[slot] = Some(node);
            slot
        } else {
            self.slots.push(Some(node));
            self.slots.len() - 1
        }
    }

    fn release(&mut self, slot: usize) {
        self.slots[slot] = None;
        self.free.push(slot);
    }

    fn register_leaf(&mut self, slot: usize) {
        self.slots[slot].as_mut().unwrap().leaf_idx = Some(self.leaves.len());
        self.leaves.push(slot);
    }

    fn unregister_leaf(&mut self, slot: usize) {
        let idx = self.slots[slot].as_mut().unwrap().leaf_idx.take().unwrap();
        let last = self.leaves.len() - 1;
        self.leaves.swap_remove(idx);
        if idx <= last && idx < self.leaves.len() {
            let moved = self.leaves[idx];
            self.slots[moved].as_mut().unwrap().leaf_idx = Some(idx);
        }
    }

    fn node(&self, slot: usize) -> &Node {
        self.slots[slot].as_ref().unwrap()
    }

    fn slot_of(&self, label: u64) -> Option<usize> {
        self.slots
            .iter()
            .position(|n| n.as_ref().map_or(false, |n| n.label == label))
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.slots.len() - self.free.len()
    }

    pub fn root_label(&self) -> Option<u64> {
        self.root.map(|r| self.node(r).label)
    }

    pub fn leaf_labels(&self) -> Vec<u64> {
        self.leaves.iter().map(|&s| self.node(s).label).collect()
    }

    pub fn is_leaf(&self, label: u64) -> bool {
        self.slot_of(label)
            .map_or(false, |s| self.node(s).leaf_idx.is_some())
    }

    /// A uniformly random alive leaf label, None on the empty tree.
    pub fn pick_uniform_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        if self.leaves.is_empty() {
            return None;
        }
        let idx = rng.gen_range(0..self.leaves.len());
        Some(self.node(self.leaves[idx]).label)
    }

    /// Attaches `k` fresh leaves to `leaf`, which becomes internal.
    /// `k = 0` is a childless death and is routed to [`apply_death`].
    ///
    /// [`apply_death`]: RootedTree::apply_death
    pub fn apply_branching(&mut self, leaf: u64, k: u32) -> Result<EventOutcome, BpgError> {
        if k == 0 {
            let pruned = self.apply_death(leaf)?;
            return Ok(EventOutcome { created: Vec::new(), pruned });
        }
        let slot = self
            .slot_of(leaf)
            .filter(|&s| self.node(s).leaf_idx.is_some())
            .ok_or(BpgError::NotALeaf { label: leaf })?;
        self.unregister_leaf(slot);
        let mut created = Vec::with_capacity(k as usize);
        for _ in 0..k {
            let c = self.alloc(Some(slot));
            self.slots[slot].as_mut().unwrap().children.push(c);
            self.register_leaf(c);
            created.push(self.node(c).label);
        }
        Ok(EventOutcome { created, pruned: Vec::new() })
    }

    /// Kills the leaf and prunes: the result is the union of the paths from
    /// the surviving leaves to their most recent common ancestor R, re-rooted
    /// at R (the whole tree when R is the old root). Removing exactly the
    /// vertices left without living descendants keeps the alive-iff-leaf
    /// invariant even when the dying leaf sat below R. Returns all removed
    /// labels; the tree becomes empty when no leaf survives.
    pub fn apply_death(&mut self, leaf: u64) -> Result<Vec<u64>, BpgError> {
        let slot = self
            .slot_of(leaf)
            .filter(|&s| self.node(s).leaf_idx.is_some())
            .ok_or(BpgError::NotALeaf { label: leaf })?;
        self.unregister_leaf(slot);
        let mut pruned = vec![self.node(slot).label];
        if let Some(p) = self.node(slot).parent {
            self.slots[p].as_mut().unwrap().children.retain(|&c| c != slot);
        }
        self.release(slot);

        if self.leaves.is_empty() {
            // The dying leaf may have been the root itself (already freed).
            let mut stack: Vec<usize> = self.root.into_iter().filter(|&r| r != slot).collect();
            while let Some(v) = stack.pop() {
                stack.extend(self.node(v).children.iter().copied());
                pruned.push(self.node(v).label);
                self.release(v);
            }
            self.root = None;
            return Ok(pruned);
        }

        let r = self.mrca_of_leaves();
        let mut keep: HashSet<usize> = HashSet::new();
        for &l in &self.leaves {
            let mut v = l;
            loop {
                if !keep.insert(v) || v == r {
                    break;
                }
                v = self.node(v).parent.expect("leaf not below its MRCA");
            }
        }
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        let mut doomed = Vec::new();
        while let Some(v) = stack.pop() {
            stack.extend(self.node(v).children.iter().copied());
            if !keep.contains(&v) {
                doomed.push(v);
            }
        }
        for v in doomed {
            pruned.push(self.node(v).label);
            self.release(v);
        }
        for &v in &keep {
            self.slots[v].as_mut().unwrap().children.retain(|c| keep.contains(c));
        }
        self.slots[r].as_mut().unwrap().parent = None;
        self.root = Some(r);
        Ok(pruned)
    }

    fn depth(&self, mut v: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.node(v).parent {
            v = p;
            d += 1;
        }
        d
    }

    fn mrca_of_leaves(&self) -> usize {
        let mut it = self.leaves.iter().copied();
        let mut m = it.next().expect("mrca needs at least one leaf");
        for v in it {
            m = self.pair_mrca(m, v);
        }
        m
    }

    fn pair_mrca(&self, mut a: usize, mut b: usize) -> usize {
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        while da > db {
            a = self.node(a).parent.unwrap();
            da -= 1;
        }
        while db > da {
            b = self.node(b).parent.unwrap();
            db -= 1;
        }
        while a != b {
            a = self.node(a).parent.unwrap();
            b = self.node(b).parent.unwrap();
        }
        a
    }

    /// Order-insensitive encoding: "()" for a leaf, children encodings sorted
    /// and concatenated inside parentheses otherwise; "∅" for the empty tree.
    /// Two trees encode equally iff they are root-isomorphic.
    pub fn canonical_encoding(&self) -> String {
        let Some(root) = self.root else {
            return "∅".to_string();
        };
        let order = self.breadth_first(root);
        let mut enc: HashMap<usize, String> = HashMap::new();
        for &v in order.iter().rev() {
            let mut parts: Vec<String> = self
                .node(v)
                .children
                .iter()
                .map(|c| enc.remove(c).unwrap())
                .collect();
            parts.sort_unstable();
            let mut s = String::with_capacity(2 + parts.iter().map(String::len).sum::<usize>());
            s.push('(');
            for p in &parts {
                s.push_str(p);
            }
            s.push(')');
            enc.insert(v, s);
        }
        enc.remove(&root).unwrap()
    }

    /// Parses the output of [`canonical_encoding`]; labels are assigned in
    /// preorder. "∅" parses to the empty tree.
    ///
    /// [`canonical_encoding`]: RootedTree::canonical_encoding
    pub fn from_encoding(s: &str) -> Result<RootedTree, BpgError> {
        if s == "∅" {
            return Ok(RootedTree::empty());
        }
        let mut t = RootedTree::empty();
        let mut stack: Vec<usize> = Vec::new();
        for (at, b) in s.bytes().enumerate() {
            match b {
                b'(' => {
                    let parent = stack.last().copied();
                    let v = t.alloc(parent);
                    if let Some(p) = parent {
                        t.slots[p].as_mut().unwrap().children.push(v);
                    } else {
                        if t.root.is_some() {
                            return Err(BpgError::ParseError { at });
                        }
                        t.root = Some(v);
                    }
                    stack.push(v);
                }
                b')' => {
                    let v = stack.pop().ok_or(BpgError::ParseError { at })?;
                    if t.node(v).children.is_empty() {
                        t.register_leaf(v);
                    }
                }
                _ => return Err(BpgError::ParseError { at }),
            }
        }
        if !stack.is_empty() || t.root.is_none() {
            return Err(BpgError::ParseError { at: s.len() });
        }
        Ok(t)
    }

    /// Longest undirected path length, by two breadth-first sweeps.
    pub fn diameter(&self) -> Result<usize, BpgError> {
        let root = self.root.ok_or(BpgError::EmptyTree)?;
        let (far, _) = self.farthest_from(root);
        let (_, dist) = self.farthest_from(far);
        Ok(dist)
    }

    fn farthest_from(&self, start: usize) -> (usize, usize) {
        let mut dist: HashMap<usize, usize> = HashMap::new();
        dist.insert(start, 0);
        let mut queue = std::collections::VecDeque::from([start]);
        let mut best = (start, 0);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            if d > best.1 {
                best = (v, d);
            }
            let node = self.node(v);
            let neighbors = node.children.iter().copied().chain(node.parent);
            for u in neighbors {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(u) {
                    e.insert(d + 1);
                    queue.push_back(u);
                }
            }
        }
        best
    }

    fn breadth_first(&self, start: usize) -> Vec<usize> {
        let mut order = vec![start];
        let mut i = 0;
        while i < order.len() {
            order.extend(self.node(order[i]).children.iter().copied());
            i += 1;
        }
        order
    }

    /// Label-explicit structure dump for debugging, e.g. `0(1,2(3))`.
    pub fn adjacency_dump(&self) -> String {
        let Some(root) = self.root else {
            return "∅".to_string();
        };
        let order = self.breadth_first(root);
        let mut enc: HashMap<usize, String> = HashMap::new();
        for &v in order.iter().rev() {
            let node = self.node(v);
            let mut s = node.label.to_string();
            if !node.children.is_empty() {
                s.push('(');
                for (i, c) in node.children.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    s.push_str(&enc.remove(c).unwrap());
                }
                s.push(')');
            }
            enc.insert(v, s);
        }
        enc.remove(&root).unwrap()
    }

    fn snapshot(&self) -> Vec<InitialVertex> {
        let Some(root) = self.root else {
            return Vec::new();
        };
        self.breadth_first(root)
            .into_iter()
            .map(|v| InitialVertex {
                label: self.node(v).label,
                parent: self.node(v).parent.map(|p| self.node(p).label),
            })
            .collect()
    }

    #[cfg(test)]
    fn shuffle_children<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        use rand::seq::SliceRandom;
        for n in self.slots.iter_mut().flatten() {
            n.children.shuffle(rng);
        }
    }
}

/// One vertex of the initial tree: its label and its parent's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialVertex {
    pub label: u64,
    pub parent: Option<u64>,
}

/// One logged event of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpgEvent {
    pub time: f64,
    pub actor: u64,
    pub k: u32,
    pub created: Vec<u64>,
    pub pruned: Vec<u64>,
}

/// Full event log of one trajectory plus the initial tree, with stable ids:
/// pruning removes vertices from the live tree but never from the record, so
/// ancestry queries replay against the complete genealogy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenealogyRecord {
    pub initial: Vec<InitialVertex>,
    pub events: Vec<BpgEvent>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    initial: Vec<InitialVertex>,
}

impl GenealogyRecord {
    /// Newline-delimited JSON: a header line with the initial tree, then one
    /// line per event.
    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&HeaderLine { initial: self.initial.clone() })
            .expect("record serializes");
        for e in &self.events {
            out.push('\n');
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
        }
        out
    }

    pub fn from_ndjson(s: &str) -> Result<GenealogyRecord, serde_json::Error> {
        let mut lines = s.lines();
        let header: HeaderLine = serde_json::from_str(lines.next().unwrap_or("{}"))?;
        let events = lines.map(serde_json::from_str).collect::<Result<Vec<_>, _>>()?;
        Ok(GenealogyRecord { initial: header.initial, events })
    }

    fn parent_map_and_births(&self, t: f64) -> (HashMap<u64, u64>, HashMap<u64, f64>) {
        let mut parent = HashMap::new();
        let mut born = HashMap::new();
        for v in &self.initial {
            born.insert(v.label, 0.0);
            if let Some(p) = v.parent {
                parent.insert(v.label, p);
            }
        }
        for e in &self.events {
            if e.time > t {
                break;
            }
            for &c in &e.created {
                parent.insert(c, e.actor);
                born.insert(c, e.time);
            }
        }
        (parent, born)
    }

    fn alive_at(&self, t: f64) -> HashSet<u64> {
        let mut alive: HashSet<u64> = self.initial_leaves().into_iter().collect();
        for e in &self.events {
            if e.time > t {
                break;
            }
            alive.remove(&e.actor);
            alive.extend(e.created.iter().copied());
        }
        alive
    }

    /// Labels of the alive (leaf) vertices of the initial tree.
    pub fn initial_leaves(&self) -> Vec<u64> {
        let parents: HashSet<u64> = self.initial.iter().filter_map(|v| v.parent).collect();
        self.initial
            .iter()
            .map(|v| v.label)
            .filter(|l| !parents.contains(l))
            .collect()
    }

    /// Number of alive individuals at time `t` descending from `y`
    /// (`y` counts as its own ancestor and descendant).
    pub fn descendants_at(&self, y: u64, t: f64) -> Result<usize, BpgError> {
        let (parent, born) = self.parent_map_and_births(t);
        match born.get(&y) {
            Some(&b) if b <= t => {}
            _ => return Err(BpgError::UnknownVertex { label: y }),
        }
        let alive = self.alive_at(t);
        let mut count = 0;
        for &leaf in &alive {
            let mut v = leaf;
            loop {
                if v == y {
                    count += 1;
                    break;
                }
                match parent.get(&v) {
                    Some(&p) => v = p,
                    None => break,
                }
            }
        }
        Ok(count)
    }

    /// True iff exactly one leaf of the initial tree has alive descendants
    /// at `t`; false in particular after absorption.
    pub fn sole_survivor(&self, t: f64) -> bool {
        let initial_set: HashSet<u64> = self.initial.iter().map(|v| v.label).collect();
        let (parent, _) = self.parent_map_and_births(t);
        let mut ancestors = HashSet::new();
        for &leaf in &self.alive_at(t) {
            let mut v = leaf;
            loop {
                if initial_set.contains(&v) {
                    ancestors.insert(v);
                    break;
                }
                match parent.get(&v) {
                    Some(&p) => v = p,
                    None => break,
                }
            }
            if ancestors.len() > 1 {
                return false;
            }
        }
        ancestors.len() == 1
    }
}

/// Exact event-driven trajectory over `[0, horizon]` from `tree0`.
///
/// One exponential clock at the aggregate rate `#leaves * event_rate` drives
/// the simulation; the actor leaf is uniform and its offspring count is drawn
/// from `offspring`. Deterministic given the rng state.
pub fn simulate_bpg<R: Rng + ?Sized>(
    tree0: &RootedTree,
    offspring: &OffspringDistribution,
    horizon: f64,
    rng: &mut R,
) -> (RootedTree, GenealogyRecord) {
    let mut tree = tree0.clone();
    let mut record = GenealogyRecord { initial: tree.snapshot(), events: Vec::new() };
    let mut clock = 0.0;
    loop {
        let n = tree.num_leaves();
        if n == 0 {
            break;
        }
        let total = n as f64 * offspring.event_rate();
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        clock += -u.ln() / total;
        if clock > horizon {
            break;
        }
        let actor = tree.pick_uniform_leaf(rng).expect("leaf exists");
        let k = offspring.sample(rng);
        let outcome = if k == 0 {
            EventOutcome { created: Vec::new(), pruned: tree.apply_death(actor).expect("alive actor") }
        } else {
            tree.apply_branching(actor, k).expect("alive actor")
        };
        record.events.push(BpgEvent {
            time: clock,
            actor,
            k,
            created: outcome.created,
            pruned: outcome.pruned,
        });
    }
    (tree, record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TruncatedKernel;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn dist(entries: &[(u32, f64)], rate: f64) -> OffspringDistribution {
        let pmf: BTreeMap<u32, f64> = entries.iter().copied().collect();
        OffspringDistribution::new_relaxed(pmf, None, rate).unwrap()
    }

    #[test]
    fn branching_single_vertex() {
        let mut t = RootedTree::single();
        let root = t.root_label().unwrap();
        let out = t.apply_branching(root, 2).unwrap();
        assert_eq!(out.created.len(), 2);
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.num_vertices(), 3);
        assert_eq!(t.canonical_encoding(), "(()())");

        let mut p = RootedTree::single();
        p.apply_branching(p.root_label().unwrap(), 1).unwrap();
        assert_eq!(p.canonical_encoding(), RootedTree::path(2).canonical_encoding());
    }

    #[test]
    fn branching_star_leaf() {
        let mut t = RootedTree::star(3);
        let leaf = t.leaf_labels()[0];
        t.apply_branching(leaf, 3).unwrap();
        assert_eq!(t.num_leaves(), 5);
        // Edge count in a tree is vertex count minus one.
        assert_eq!(t.num_vertices() - 1, 6);
    }

    #[test]
    fn branching_rejects_internal_and_unknown() {
        let mut t = RootedTree::star(2);
        let root = t.root_label().unwrap();
        assert_eq!(t.apply_branching(root, 2), Err(BpgError::NotALeaf { label: root }));
        assert_eq!(t.apply_branching(999, 2), Err(BpgError::NotALeaf { label: 999 }));
        assert_eq!(t.apply_death(root), Err(BpgError::NotALeaf { label: root }));
    }

    #[test]
    fn zero_offspring_routes_to_death() {
        let mut t = RootedTree::star(2);
        let leaf = t.leaf_labels()[0];
        let out = t.apply_branching(leaf, 0).unwrap();
        assert!(out.created.is_empty());
        assert!(out.pruned.contains(&leaf));
        assert_eq!(t.num_vertices(), 1);
    }

    #[test]
    fn death_of_only_leaf_absorbs() {
        let mut t = RootedTree::single();
        let leaf = t.root_label().unwrap();
        let pruned = t.apply_death(leaf).unwrap();
        assert!(t.is_empty());
        assert_eq!(pruned, vec![leaf]);
        assert_eq!(t.canonical_encoding(), "∅");

        // A dead chain above the last leaf goes with it.
        let mut p = RootedTree::path(3);
        let leaf = p.leaf_labels()[0];
        let mut pruned = p.apply_death(leaf).unwrap();
        pruned.sort_unstable();
        assert_eq!(pruned, vec![0, 1, 2]);
        assert!(p.is_empty());
    }

    #[test]
    fn death_reroots_at_sibling() {
        // Root with leaf children {a, b}; b dies; survivor a is the new root.
        let mut t = RootedTree::single();
        let root = t.root_label().unwrap();
        let out = t.apply_branching(root, 2).unwrap();
        let (a, b) = (out.created[0], out.created[1]);
        let mut pruned = t.apply_death(b).unwrap();
        pruned.sort_unstable();
        assert_eq!(pruned, vec![root, b]);
        assert_eq!(t.num_vertices(), 1);
        assert_eq!(t.root_label(), Some(a));
        assert_eq!(t.canonical_encoding(), "()");
    }

    #[test]
    fn death_keeps_root_when_it_stays_mrca() {
        // Root r has leaf a and internal s with leaves {c, d}; c dies.
        // The MRCA of {a, d} is r: only c is removed.
        let mut t = RootedTree::single();
        let r = t.root_label().unwrap();
        let out = t.apply_branching(r, 2).unwrap();
        let (a, s) = (out.created[0], out.created[1]);
        let out = t.apply_branching(s, 2).unwrap();
        let (c, d) = (out.created[0], out.created[1]);
        let pruned = t.apply_death(c).unwrap();
        assert_eq!(pruned, vec![c]);
        assert_eq!(t.root_label(), Some(r));
        assert_eq!(t.num_vertices(), 4);
        assert!(t.is_leaf(a) && t.is_leaf(d));
        assert_eq!(t.canonical_encoding(), "((())())");
    }

    #[test]
    fn death_prunes_old_root_when_mrca_descends() {
        // r -> c (only child); c has leaves {a, b, x}; x dies.
        // MRCA of {a, b} is c: r is cut and c becomes the root.
        let mut t = RootedTree::single();
        let r = t.root_label().unwrap();
        let c = t.apply_branching(r, 1).unwrap().created[0];
        let out = t.apply_branching(c, 3).unwrap();
        let (a, b, x) = (out.created[0], out.created[1], out.created[2]);
        let mut pruned = t.apply_death(x).unwrap();
        pruned.sort_unstable();
        assert_eq!(pruned, vec![r, x]);
        assert_eq!(t.root_label(), Some(c));
        assert_eq!(t.num_vertices(), 3);
        assert!(t.is_leaf(a) && t.is_leaf(b));
        assert_eq!(t.canonical_encoding(), "(()())");
    }

    #[test]
    fn death_prunes_dead_chain_below_new_root() {
        // r -> m; m has leaves {a, b} and internal p whose only child is x.
        // x dies: keeping only the leaf-to-MRCA paths removes r, p, and x.
        let mut t = RootedTree::single();
        let r = t.root_label().unwrap();
        let m = t.apply_branching(r, 1).unwrap().created[0];
        let out = t.apply_branching(m, 3).unwrap();
        let (a, b, p) = (out.created[0], out.created[1], out.created[2]);
        let x = t.apply_branching(p, 1).unwrap().created[0];
        let mut pruned = t.apply_death(x).unwrap();
        pruned.sort_unstable();
        let mut expect = vec![r, p, x];
        expect.sort_unstable();
        assert_eq!(pruned, expect);
        assert_eq!(t.root_label(), Some(m));
        assert_eq!(t.num_vertices(), 3);
        assert!(t.is_leaf(a) && t.is_leaf(b));
    }

    #[test]
    fn pruning_never_touches_other_alive_leaves() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (mut tree, _) = simulate_bpg(&RootedTree::single(), &d, 1.5, &mut rng);
            if tree.num_leaves() < 2 {
                continue;
            }
            let before: HashSet<u64> = tree.leaf_labels().into_iter().collect();
            let victim = tree.leaf_labels()[0];
            let pruned = tree.apply_death(victim).unwrap();
            let after: HashSet<u64> = tree.leaf_labels().into_iter().collect();
            for l in before {
                if l != victim {
                    assert!(after.contains(&l), "alive leaf {l} vanished");
                }
            }
            assert!(pruned.contains(&victim));
        }
    }

    #[test]
    fn post_death_every_vertex_supports_a_leaf() {
        // Each surviving vertex must be an ancestor of some alive leaf, and
        // the root must be the MRCA of the alive leaves.
        let d = dist(&[(0, 0.55), (1, 0.1), (2, 0.25), (3, 0.1)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ancestors_of_leaves = |tree: &RootedTree| {
            let mut support: HashSet<u64> = HashSet::new();
            for leaf in tree.leaf_labels() {
                let mut slot = tree.slot_of(leaf).unwrap();
                loop {
                    support.insert(tree.node(slot).label);
                    match tree.node(slot).parent {
                        Some(p) => slot = p,
                        None => break,
                    }
                }
            }
            support
        };
        for _ in 0..300 {
            let (mut tree, _) = simulate_bpg(&RootedTree::single(), &d, 2.0, &mut rng);
            if tree.is_empty() {
                continue;
            }
            assert_eq!(ancestors_of_leaves(&tree).len(), tree.num_vertices());
            if tree.num_leaves() < 2 {
                continue;
            }
            // Right after a death the root must again be the leaves' MRCA and
            // every surviving vertex must sit on a leaf-to-root path.
            let victim = tree.leaf_labels()[0];
            tree.apply_death(victim).unwrap();
            assert_eq!(ancestors_of_leaves(&tree).len(), tree.num_vertices());
            assert_eq!(tree.node(tree.mrca_of_leaves()).label, tree.root_label().unwrap());
        }
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(RootedTree::path(3).canonical_encoding(), "((()))");
        assert_eq!(RootedTree::star(2).canonical_encoding(), "(()())");
        assert_eq!(RootedTree::path(4).canonical_encoding(), "(((())))");
    }

    #[test]
    fn encoding_round_trips() {
        for enc in ["()", "(()())", "((())())", "(((())))", "∅"] {
            let t = RootedTree::from_encoding(enc).unwrap();
            assert_eq!(t.canonical_encoding(), enc);
        }
        assert!(RootedTree::from_encoding("(()").is_err());
        assert!(RootedTree::from_encoding("())(").is_err());
        assert!(RootedTree::from_encoding("(a)").is_err());
        assert!(RootedTree::from_encoding("()()").is_err());
        assert!(RootedTree::from_encoding("").is_err());
    }

    #[test]
    fn adjacency_dump_shows_labels() {
        let mut t = RootedTree::single();
        let root = t.root_label().unwrap();
        let out = t.apply_branching(root, 2).unwrap();
        t.apply_branching(out.created[1], 1).unwrap();
        assert_eq!(t.adjacency_dump(), "0(1,2(3))");
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(RootedTree::single().diameter().unwrap(), 0);
        assert_eq!(RootedTree::path(4).diameter().unwrap(), 3);
        assert_eq!(RootedTree::star(2).diameter().unwrap(), 2);
        assert_eq!(RootedTree::star(5).diameter().unwrap(), 2);
        let empty = {
            let mut t = RootedTree::single();
            t.apply_death(t.root_label().unwrap()).unwrap();
            t
        };
        assert_eq!(empty.diameter(), Err(BpgError::EmptyTree));
    }

    // Rooted trees on n vertices as parent sequences (parent[i] < i), the
    // standard exhaustive enumeration for small n.
    fn all_parent_sequences(n: usize) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = vec![vec![]];
        for i in 1..n {
            let mut next = Vec::new();
            for seq in &out {
                for p in 0..i {
                    let mut s = seq.clone();
                    s.push(p);
                    next.push(s);
                }
            }
            out = next;
        }
        out
    }

    fn tree_from_parents(parents: &[usize]) -> RootedTree {
        let n = parents.len() + 1;
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &p) in parents.iter().enumerate() {
            children[p].push(i + 1);
        }
        let mut t = RootedTree::single();
        let mut label_of = vec![0u64; n];
        label_of[0] = t.root_label().unwrap();
        // Breadth-first construction keeps every vertex a leaf until it branches.
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            if children[v].is_empty() {
                continue;
            }
            let out = t.apply_branching(label_of[v], children[v].len() as u32).unwrap();
            for (c, l) in children[v].iter().zip(out.created) {
                label_of[*c] = l;
                queue.push_back(*c);
            }
        }
        t
    }

    // Brute-force root-preserving isomorphism by recursive bijection search,
    // independent of the encoding algorithm.
    fn iso(a: &RootedTree, b: &RootedTree, va: usize, vb: usize) -> bool {
        let ca = &a.node(va).children;
        let cb = &b.node(vb).children;
        if ca.len() != cb.len() {
            return false;
        }
        if ca.is_empty() {
            return true;
        }
        let mut used = vec![false; cb.len()];
        fn try_match(
            a: &RootedTree,
            b: &RootedTree,
            ca: &[usize],
            cb: &[usize],
            used: &mut [bool],
            i: usize,
        ) -> bool {
            if i == ca.len() {
                return true;
            }
            for j in 0..cb.len() {
                if !used[j] && iso(a, b, ca[i], cb[j]) {
                    used[j] = true;
                    if try_match(a, b, ca, cb, used, i + 1) {
                        return true;
                    }
                    used[j] = false;
                }
            }
            false
        }
        try_match(a, b, ca, cb, &mut used, 0)
    }

    #[test]
    fn encoding_matches_isomorphism_up_to_seven_vertices() {
        for n in 1..=7 {
            let trees: Vec<RootedTree> =
                all_parent_sequences(n).iter().map(|s| tree_from_parents(s)).collect();
            let encs: Vec<String> = trees.iter().map(|t| t.canonical_encoding()).collect();
            for i in 0..trees.len() {
                for j in (i + 1)..trees.len() {
                    let same_enc = encs[i] == encs[j];
                    let same_iso = iso(
                        &trees[i],
                        &trees[j],
                        trees[i].root.unwrap(),
                        trees[j].root.unwrap(),
                    );
                    assert_eq!(same_enc, same_iso, "n={n} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn simulate_zero_horizon_is_identity() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let t0 = RootedTree::star(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, rec) = simulate_bpg(&t0, &d, 0.0, &mut rng);
        assert_eq!(t.canonical_encoding(), t0.canonical_encoding());
        assert!(rec.events.is_empty());
        assert_eq!(rec.initial.len(), 4);
    }

    #[test]
    fn pure_death_survival_is_exponential() {
        let d = dist(&[(0, 1.0)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 1_000_000;
        let mut alive = 0u32;
        for _ in 0..runs {
            let (t, _) = simulate_bpg(&RootedTree::single(), &d, 1.0, &mut rng);
            alive += u32::from(!t.is_empty());
        }
        let p = alive as f64 / runs as f64;
        assert!((p - (-1.0_f64).exp()).abs() < 0.01, "p = {p}");
    }

    #[test]
    fn subcritical_mean_decays_exponentially() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let runs = 300_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..runs {
            let (t, _) = simulate_bpg(&RootedTree::single(), &d, 5.0, &mut rng);
            let n = t.num_leaves() as f64;
            sum += n;
            sumsq += n * n;
        }
        let mean = sum / runs as f64;
        let var = (sumsq / runs as f64 - mean * mean).max(0.0);
        let se = (var / runs as f64).sqrt();
        let expect = (-0.2 * 5.0_f64).exp();
        assert!((mean - expect).abs() <= 3.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn leaf_counts_match_exact_semigroup() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let kernel = TruncatedKernel::build_kernel(&d, 200).unwrap();
        let row = kernel.matrix_exp_row(1, 2.0).unwrap();
        let runs = 200_000usize;
        let mut counts: HashMap<usize, u64> = HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..runs {
            let (t, _) = simulate_bpg(&RootedTree::single(), &d, 2.0, &mut rng);
            *counts.entry(t.num_leaves()).or_insert(0) += 1;
        }
        let absorbed = 1.0 - row.iter().sum::<f64>();
        let mut tv = (counts.get(&0).copied().unwrap_or(0) as f64 / runs as f64 - absorbed).abs();
        for j in 1..=200 {
            let emp = counts.get(&j).copied().unwrap_or(0) as f64 / runs as f64;
            tv += (emp - row[j - 1]).abs();
        }
        assert!(tv / 2.0 <= 0.01, "tv {}", tv / 2.0);
    }

    #[test]
    fn record_replay_examples() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (tree, rec) = simulate_bpg(&RootedTree::single(), &d, 2.5, &mut rng);
        assert_eq!(rec.descendants_at(0, 2.5).unwrap(), tree.num_leaves());
        assert_eq!(rec.sole_survivor(2.5), !tree.is_empty());
        assert!(matches!(
            rec.descendants_at(10_000, 2.5),
            Err(BpgError::UnknownVertex { .. })
        ));
        // A vertex that died childless has no descendants afterwards.
        if let Some(e) = rec.events.iter().find(|e| e.k == 0) {
            assert_eq!(rec.descendants_at(e.actor, e.time + 0.01).unwrap(), 0);
        }
    }

    #[test]
    fn two_surviving_lines_defeat_sole_survivor() {
        let rec = GenealogyRecord {
            initial: vec![
                InitialVertex { label: 0, parent: None },
                InitialVertex { label: 1, parent: Some(0) },
                InitialVertex { label: 2, parent: Some(0) },
            ],
            events: vec![],
        };
        assert!(!rec.sole_survivor(1.0));
        assert_eq!(rec.descendants_at(1, 1.0).unwrap(), 1);
        assert_eq!(rec.descendants_at(0, 1.0).unwrap(), 2);

        // One line dying flips the event.
        let mut one_line = rec.clone();
        one_line.events.push(BpgEvent {
            time: 0.5,
            actor: 2,
            k: 0,
            created: vec![],
            pruned: vec![2, 0],
        });
        assert!(one_line.sole_survivor(1.0));
        assert!(!one_line.sole_survivor(0.4));
    }

    #[test]
    fn ndjson_round_trip() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, rec) = simulate_bpg(&RootedTree::star(2), &d, 2.0, &mut rng);
        let text = rec.to_ndjson();
        let back = GenealogyRecord::from_ndjson(&text).unwrap();
        assert_eq!(rec, back);
        assert!(text.lines().next().unwrap().contains("initial"));
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let d = dist(&[(0, 0.6), (2, 0.4)], 1.0);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, rec) = simulate_bpg(&RootedTree::single(), &d, 3.0, &mut rng);
            (t.canonical_encoding(), rec.to_ndjson())
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7).1, run(8).1);
    }

    #[test]
    fn event_times_strictly_increase() {
        let d = dist(&[(0, 0.5), (2, 0.3), (3, 0.2)], 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (_, rec) = simulate_bpg(&RootedTree::star(3), &d, 4.0, &mut rng);
        for w in rec.events.windows(2) {
            assert!(w[0].time < w[1].time);
        }
    }

    proptest! {
        #[test]
        fn encoding_invariant_under_child_shuffle(
            seq in proptest::collection::vec(0usize..6, 0..9),
            shuffle_seed in 0u64..1000,
        ) {
            let parents: Vec<usize> = seq.iter().enumerate().map(|(i, &p)| p % (i + 1)).collect();
            let mut t = tree_from_parents(&parents);
            let before = t.canonical_encoding();
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
            t.shuffle_children(&mut rng);
            prop_assert_eq!(before, t.canonical_encoding());
        }

        #[test]
        fn encoding_parse_round_trip(seq in proptest::collection::vec(0usize..6, 0..9)) {
            let parents: Vec<usize> = seq.iter().enumerate().map(|(i, &p)| p % (i + 1)).collect();
            let t = tree_from_parents(&parents);
            let enc = t.canonical_encoding();
            let back = RootedTree::from_encoding(&enc).unwrap();
            prop_assert_eq!(back.canonical_encoding(), enc);
        }

        #[test]
        fn initial_leaf_descendants_partition_the_living(
            seed in 0u64..500,
            horizon in 0.0f64..3.0,
            start in 1usize..4,
        ) {
            let d = dist(&[(0, 0.55), (2, 0.35), (3, 0.1)], 1.0);
            let tree0 = if start == 1 { RootedTree::single() } else { RootedTree::star(start) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (tree, rec) = simulate_bpg(&tree0, &d, horizon, &mut rng);
            let total: usize = rec
                .initial_leaves()
                .iter()
                .map(|&y| rec.descendants_at(y, horizon).unwrap())
                .sum();
            prop_assert_eq!(total, tree.num_leaves());
        }
    }
}

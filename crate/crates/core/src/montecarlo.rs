//! Conditioned-on-survival estimation and distribution statistics.
//!
//! One tabulation engine serves every process in this crate through the
//! [`ConditionedProcess`] trait: a state, an alive count (the event weight),
//! a per-individual event rate, a single-event transition, and a canonical
//! string key. Two estimators target the law at time `t` conditioned on
//! non-absorption:
//!
//! - [`yaglom_estimate_direct`] runs independent replicas and keeps the
//!   survivors; exact but starved when survival is exponentially rare;
//! - [`fleming_viot`] evolves an interacting ensemble where every absorbed
//!   particle instantly restarts as a copy of a uniformly chosen survivor.
//!
//! Replicas are embarrassingly parallel with one counter-mode rng stream per
//! replica index, so results are identical for every worker count (and with
//! the `parallel` feature disabled). The Fleming-Viot ensemble is a single
//! global-clock simulation: resampling couples the particles, so it runs
//! sequentially and is exact rather than batched.

use crate::bpg::{GenealogyRecord, RootedTree};
use crate::brw::{CanonicalConfig, LatticeConfig};
use crate::offspring::OffspringDistribution;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("no replica survived to the horizon (direct method starved)")]
    AllAbsorbed,
    #[error("distribution has no mass")]
    EmptyDistribution,
    #[error("estimate support too small: total count {total} < 1000")]
    InsufficientSupport { total: u64 },
    #[error("state key {key:?} did not parse: {reason}")]
    BadStateKey { key: String, reason: String },
}

/// A killed Markov process driven by per-individual exponential clocks.
///
/// `weight` is the number of living individuals: the total event rate is
/// `weight * event_rate`, and zero weight means absorbed. `key` must be
/// canonical (equal distributions produce equal key histograms) and
/// `state_from_key` must invert it on canonical keys.
pub trait ConditionedProcess: Sync {
    type State: Clone + Send + Sync;

    fn weight(&self, state: &Self::State) -> u64;
    fn event_rate(&self) -> f64;
    fn apply_event<R: Rng + ?Sized>(&self, state: &mut Self::State, rng: &mut R);
    fn key(&self, state: &Self::State) -> String;
    fn state_from_key(&self, key: &str) -> Result<Self::State, McError>;
}

/// The population-size projection: state is the living count alone.
#[derive(Debug, Clone)]
pub struct SizeProcess {
    pub offspring: OffspringDistribution,
}

impl ConditionedProcess for SizeProcess {
    type State = u32;

    fn weight(&self, state: &u32) -> u64 {
        *state as u64
    }

    fn event_rate(&self) -> f64 {
        self.offspring.event_rate()
    }

    fn apply_event<R: Rng + ?Sized>(&self, state: &mut u32, rng: &mut R) {
        let k = self.offspring.sample(rng);
        *state = *state - 1 + k;
    }

    fn key(&self, state: &u32) -> String {
        state.to_string()
    }

    fn state_from_key(&self, key: &str) -> Result<u32, McError> {
        key.parse().map_err(|e: std::num::ParseIntError| McError::BadStateKey {
            key: key.to_string(),
            reason: e.to_string(),
        })
    }
}

/// The tree-valued process keyed by canonical encoding.
#[derive(Debug, Clone)]
pub struct BpgProcess {
    pub offspring: OffspringDistribution,
}

impl ConditionedProcess for BpgProcess {
    type State = RootedTree;

    fn weight(&self, state: &RootedTree) -> u64 {
        state.num_leaves() as u64
    }

    fn event_rate(&self) -> f64 {
        self.offspring.event_rate()
    }

    fn apply_event<R: Rng + ?Sized>(&self, state: &mut RootedTree, rng: &mut R) {
        let leaf = state.pick_uniform_leaf(rng).expect("event on non-absorbed state");
        let k = self.offspring.sample(rng);
        state.apply_branching(leaf, k).expect("picked leaf is alive");
    }

    fn key(&self, state: &RootedTree) -> String {
        state.canonical_encoding()
    }

    fn state_from_key(&self, key: &str) -> Result<RootedTree, McError> {
        RootedTree::from_encoding(key).map_err(|e| McError::BadStateKey {
            key: key.to_string(),
            reason: e.to_string(),
        })
    }
}

/// The lattice process keyed by translation-canonical configuration.
#[derive(Debug, Clone)]
pub struct BrwProcess {
    pub lambda: f64,
    pub d: usize,
}

impl ConditionedProcess for BrwProcess {
    type State = LatticeConfig;

    fn weight(&self, state: &LatticeConfig) -> u64 {
        state.num_particles() as u64
    }

    fn event_rate(&self) -> f64 {
        1.0 + self.lambda
    }

    fn apply_event<R: Rng + ?Sized>(&self, state: &mut LatticeConfig, rng: &mut R) {
        let is_birth = rng.gen::<f64>() < self.lambda / (1.0 + self.lambda);
        let ids = state.particle_ids();
        let actor = ids[rng.gen_range(0..ids.len())];
        if is_birth {
            let axis = rng.gen_range(0..state.d());
            let step: i32 = if rng.gen::<bool>() { 1 } else { -1 };
            let mut site = state.site_of(actor).expect("actor exists").clone();
            site[axis] += step;
            state.spawn(site);
        } else {
            state.kill(actor);
        }
    }

    fn key(&self, state: &LatticeConfig) -> String {
        state.canonicalize().expect("key of non-absorbed state").to_key_json()
    }

    fn state_from_key(&self, key: &str) -> Result<LatticeConfig, McError> {
        let canon = CanonicalConfig::from_key_json(key).map_err(|e| McError::BadStateKey {
            key: key.to_string(),
            reason: e.to_string(),
        })?;
        Ok(canon.to_lattice())
    }
}

/// Phase of the alternation scanner: how many completed (visit 1, then
/// visit 2) pairs so far, and which value it is waiting for next.
/// `2 * cap` is the saturated "done" phase.
fn advance_phase(phase: u8, arrived: u32, cap: u8) -> u8 {
    if phase == 2 * cap {
        return phase;
    }
    let waiting_for_two = phase % 2 == 1;
    if waiting_for_two && arrived == 2 {
        phase + 1
    } else if !waiting_for_two && arrived == 1 {
        phase + 1
    } else {
        phase
    }
}

/// Size-chain state augmented with the alternation phase, so ensemble
/// methods can estimate alternation-count probabilities at horizons where
/// direct simulation cannot reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhasedState {
    pub n: u32,
    pub phase: u8,
}

#[derive(Debug, Clone)]
pub struct PhasedSizeProcess {
    pub offspring: OffspringDistribution,
    pub cap: u8,
}

impl PhasedSizeProcess {
    /// Initial phase for a chain started at `n0` (the start counts as the
    /// first visit of the scan).
    pub fn initial_state(&self, n0: u32) -> PhasedState {
        PhasedState { n: n0, phase: advance_phase(0, n0, self.cap) }
    }

    pub fn is_done(&self, state: &PhasedState) -> bool {
        state.phase == 2 * self.cap
    }

    pub fn done_phase(&self) -> u8 {
        2 * self.cap
    }
}

impl ConditionedProcess for PhasedSizeProcess {
    type State = PhasedState;

    fn weight(&self, state: &PhasedState) -> u64 {
        state.n as u64
    }

    fn event_rate(&self) -> f64 {
        self.offspring.event_rate()
    }

    fn apply_event<R: Rng + ?Sized>(&self, state: &mut PhasedState, rng: &mut R) {
        let k = self.offspring.sample(rng);
        state.n = state.n - 1 + k;
        if state.n > 0 {
            state.phase = advance_phase(state.phase, state.n, self.cap);
        }
    }

    fn key(&self, state: &PhasedState) -> String {
        format!("{}|{}", state.n, state.phase)
    }

    fn state_from_key(&self, key: &str) -> Result<PhasedState, McError> {
        let bad = |reason: &str| McError::BadStateKey {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let (n, phase) = key.split_once('|').ok_or_else(|| bad("missing separator"))?;
        Ok(PhasedState {
            n: n.parse().map_err(|_| bad("bad size"))?,
            phase: phase.parse().map_err(|_| bad("bad phase"))?,
        })
    }
}

/// Histogram over canonical state keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: BTreeMap<String, u64>) -> Self {
        let total = counts.values().sum();
        EmpiricalDistribution { counts, total }
    }

    pub fn add(&mut self, key: String) {
        self.add_count(key, 1);
    }

    pub fn add_count(&mut self, key: String, count: u64) {
        if count > 0 {
            *self.counts.entry(key).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn merge(&mut self, other: &EmpiricalDistribution) {
        for (k, &c) in &other.counts {
            self.add_count(k.clone(), c);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn probability(&self, key: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.total as f64
    }

    /// Plug-in total variation against reference probabilities (any mass of
    /// `probs` outside the empirical support is counted in full).
    pub fn tv_to_probs(&self, probs: &BTreeMap<String, f64>) -> Result<f64, McError> {
        if self.total == 0 {
            return Err(McError::EmptyDistribution);
        }
        let mut sum = 0.0;
        for (k, &c) in &self.counts {
            let p = probs.get(k).copied().unwrap_or(0.0);
            sum += (c as f64 / self.total as f64 - p).abs();
        }
        for (k, &p) in probs {
            if !self.counts.contains_key(k) {
                sum += p.abs();
            }
        }
        Ok(sum / 2.0)
    }
}

/// Plug-in total variation between two histograms.
pub fn tv_distance(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64, McError> {
    if p.total == 0 || q.total == 0 {
        return Err(McError::EmptyDistribution);
    }
    let mut sum = 0.0;
    for (k, &c) in &p.counts {
        let pq = q.probability(k);
        sum += (c as f64 / p.total as f64 - pq).abs();
    }
    for (k, &c) in &q.counts {
        if !p.counts.contains_key(k) {
            sum += c as f64 / q.total as f64;
        }
    }
    Ok(sum / 2.0)
}

/// Result of the direct (independent-replica) estimator. The survivor count
/// is the effective sample size; below 1000 the estimate is flagged rather
/// than trusted.
#[derive(Debug, Clone, Serialize)]
pub struct DirectEstimate {
    pub distribution: EmpiricalDistribution,
    pub survivors: u64,
    pub replicas: u64,
}

impl DirectEstimate {
    pub fn is_reliable(&self) -> bool {
        self.survivors >= 1000
    }
}

/// Effective-sample-size floor shared by all estimators.
pub const ESS_FLOOR: u64 = 1000;

fn evolve<P: ConditionedProcess, R: Rng + ?Sized>(
    process: &P,
    state: &mut P::State,
    horizon: f64,
    rng: &mut R,
) {
    let mut clock = 0.0;
    loop {
        let w = process.weight(state);
        if w == 0 {
            return;
        }
        let total = w as f64 * process.event_rate();
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        clock += -u.ln() / total;
        if clock > horizon {
            return;
        }
        process.apply_event(state, rng);
    }
}

fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

fn run_replica<P: ConditionedProcess>(
    process: &P,
    initial: &P::State,
    horizon: f64,
    seed: u64,
    replica: u64,
) -> Option<String> {
    let mut rng = replica_rng(seed, replica);
    let mut state = initial.clone();
    evolve(process, &mut state, horizon, &mut rng);
    (process.weight(&state) > 0).then(|| process.key(&state))
}

fn finish_direct(
    counts: BTreeMap<String, u64>,
    replicas: u64,
) -> Result<DirectEstimate, McError> {
    let distribution = EmpiricalDistribution::from_counts(counts);
    let survivors = distribution.total();
    if survivors == 0 {
        return Err(McError::AllAbsorbed);
    }
    Ok(DirectEstimate { distribution, survivors, replicas })
}

/// Law at `horizon` conditioned on survival, from independent replicas.
/// Replica `r` uses rng stream `r` of `seed`, so the histogram is identical
/// for every worker count.
pub fn yaglom_estimate_direct<P: ConditionedProcess>(
    process: &P,
    initial: &P::State,
    horizon: f64,
    replicas: u64,
    seed: u64,
) -> Result<DirectEstimate, McError> {
    #[cfg(feature = "parallel")]
    {
        let counts = (0..replicas)
            .into_par_iter()
            .fold(BTreeMap::new, |mut acc: BTreeMap<String, u64>, r| {
                if let Some(key) = run_replica(process, initial, horizon, seed, r) {
                    *acc.entry(key).or_insert(0) += 1;
                }
                acc
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (k, c) in b {
                    *a.entry(k).or_insert(0) += c;
                }
                a
            });
        finish_direct(counts, replicas)
    }
    #[cfg(not(feature = "parallel"))]
    {
        yaglom_estimate_direct_sequential(process, initial, horizon, replicas, seed)
    }
}

/// Single-threaded twin of [`yaglom_estimate_direct`]; same replica streams,
/// same histogram, used as the baseline in throughput comparisons.
pub fn yaglom_estimate_direct_sequential<P: ConditionedProcess>(
    process: &P,
    initial: &P::State,
    horizon: f64,
    replicas: u64,
    seed: u64,
) -> Result<DirectEstimate, McError> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in 0..replicas {
        if let Some(key) = run_replica(process, initial, horizon, seed, r) {
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    finish_direct(counts, replicas)
}

/// Fenwick tree over per-particle weights, for O(log n) proportional picks.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(weights: &[u64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] = tree[i + 1].wrapping_add(w);
            let j = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if j <= n {
                let v = tree[i + 1];
                tree[j] += v;
            }
        }
        Fenwick { tree }
    }

    fn add(&mut self, mut i: usize, delta: i64) {
        i += 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i64 + delta) as u64;
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self) -> u64 {
        let mut i = self.tree.len() - 1;
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }

    /// Smallest index whose prefix sum exceeds `target` (target < total).
    fn find(&self, mut target: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step /= 2;
        }
        pos
    }
}

/// Fleming-Viot snapshot: the particle histogram at one grid time.
#[derive(Debug, Clone, Serialize)]
pub struct FvEstimate {
    pub time: f64,
    pub distribution: EmpiricalDistribution,
    pub resamplings: u64,
}

/// Interacting-ensemble estimate of the conditioned law at each grid time.
///
/// `n_particles` copies of `initial` evolve under one global exponential
/// clock (rate = total weight x event rate); an absorbed particle is
/// immediately replaced by a copy of a uniformly chosen other particle.
/// Snapshots are taken at each grid time before applying the first event
/// scheduled beyond it. The grid must be strictly increasing.
pub fn fleming_viot_grid<P: ConditionedProcess>(
    process: &P,
    initial: &P::State,
    grid: &[f64],
    n_particles: usize,
    seed: u64,
) -> Vec<FvEstimate> {
    assert!(n_particles >= 2, "ensemble needs at least two particles");
    assert!(grid.windows(2).all(|w| w[0] < w[1]), "grid must be strictly increasing");
    assert!(process.weight(initial) > 0, "initial state must not be absorbed");
    let mut states: Vec<P::State> = vec![initial.clone(); n_particles];
    let mut weights: Vec<u64> = vec![process.weight(initial); n_particles];
    let mut fenwick = Fenwick::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clock = 0.0;
    let mut resamplings = 0u64;
    let mut out = Vec::with_capacity(grid.len());
    let mut g = 0;
    loop {
        let total_weight = fenwick.total();
        let rate = total_weight as f64 * process.event_rate();
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        let t_next = clock + -u.ln() / rate;
        while g < grid.len() && grid[g] < t_next {
            let mut dist = EmpiricalDistribution::new();
            for s in &states {
                dist.add(process.key(s));
            }
            out.push(FvEstimate { time: grid[g], distribution: dist, resamplings });
            g += 1;
        }
        if g == grid.len() {
            break;
        }
        clock = t_next;
        let target = rng.gen_range(0..total_weight);
        let i = fenwick.find(target);
        process.apply_event(&mut states[i], &mut rng);
        let new_w = process.weight(&states[i]);
        if new_w == 0 {
            resamplings += 1;
            let mut j = rng.gen_range(0..n_particles - 1);
            if j >= i {
                j += 1;
            }
            states[i] = states[j].clone();
            let w = weights[j];
            fenwick.add(i, w as i64 - weights[i] as i64);
            weights[i] = w;
        } else {
            fenwick.add(i, new_w as i64 - weights[i] as i64);
            weights[i] = new_w;
        }
    }
    out
}

/// Single-horizon convenience wrapper around [`fleming_viot_grid`].
pub fn fleming_viot<P: ConditionedProcess>(
    process: &P,
    initial: &P::State,
    horizon: f64,
    n_particles: usize,
    seed: u64,
) -> FvEstimate {
    fleming_viot_grid(process, initial, &[horizon], n_particles, seed)
        .pop()
        .expect("one grid point yields one snapshot")
}

/// Completed (visit 1, then later visit 2) alternations in a size path,
/// by a greedy scan over the visited values (initial value included).
pub fn count_g_events(path: &[u32]) -> u32 {
    let mut pairs = 0;
    let mut want = 1;
    for &v in path {
        if v == want {
            if want == 1 {
                want = 2;
            } else {
                pairs += 1;
                want = 1;
            }
        }
    }
    pairs
}

/// Visited population sizes of one simulated size chain on `[0, horizon]`,
/// starting value included.
pub fn simulate_size_path<R: Rng + ?Sized>(
    offspring: &OffspringDistribution,
    n0: u32,
    horizon: f64,
    rng: &mut R,
) -> Vec<u32> {
    let mut path = vec![n0];
    let mut n = n0;
    let mut clock = 0.0;
    while n > 0 {
        let total = n as f64 * offspring.event_rate();
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        clock += -u.ln() / total;
        if clock > horizon {
            break;
        }
        n = n - 1 + offspring.sample(rng);
        path.push(n);
    }
    path
}

/// Visited leaf counts of a recorded tree trajectory.
pub fn size_trajectory(record: &GenealogyRecord) -> Vec<u32> {
    let mut n = record.initial_leaves().len() as u32;
    let mut path = vec![n];
    for e in &record.events {
        n = n - 1 + e.k;
        path.push(n);
    }
    path
}

/// Generator of the size chain augmented with the alternation phase, for
/// exact (uniformization) alternation probabilities. States are
/// `(n, phase)` with `n` in `1..=n_max`; moves above `n_max` and to zero
/// leak out.
pub struct GEventGenerator {
    q: DMatrix<f64>,
    n_max: usize,
    cap: u8,
}

impl GEventGenerator {
    pub fn build(offspring: &OffspringDistribution, n_max: usize, cap: u8) -> Self {
        let phases = 2 * cap as usize + 1;
        let dim = n_max * phases;
        let rate = offspring.event_rate();
        let mut q = DMatrix::zeros(dim, dim);
        let idx = |n: usize, phase: u8| (n - 1) * phases + phase as usize;
        for n in 1..=n_max {
            let total = n as f64 * rate;
            for phase in 0..phases as u8 {
                let row = idx(n, phase);
                q[(row, row)] = -total;
                let k_cap = (n_max + 1 - n) as u32;
                for k in 0..=k_cap {
                    let p = offspring.pmf_at(k);
                    if p == 0.0 {
                        continue;
                    }
                    let target = n - 1 + k as usize;
                    if target == 0 {
                        continue;
                    }
                    let next_phase = advance_phase(phase, target as u32, cap);
                    q[(row, idx(target, next_phase))] += total * p;
                }
            }
        }
        GEventGenerator { q, n_max, cap }
    }

    /// (P(alternation count saturated and alive), P(alive)) at `t` from `n0`.
    pub fn probabilities_from(&self, n0: u32, t: f64) -> (f64, f64) {
        let phases = 2 * self.cap as usize + 1;
        assert!(n0 >= 1 && (n0 as usize) <= self.n_max);
        let mut v0 = vec![0.0; self.n_max * phases];
        let phase0 = advance_phase(0, n0, self.cap);
        v0[(n0 as usize - 1) * phases + phase0 as usize] = 1.0;
        let w = crate::spectral::sub_markov_exp_vec(&self.q, &v0, t);
        let done_phase = 2 * self.cap as usize;
        let mut done = 0.0;
        let mut alive = 0.0;
        for (i, &mass) in w.iter().enumerate() {
            alive += mass;
            if i % phases == done_phase {
                done += mass;
            }
        }
        (done, alive)
    }
}

/// Outcome of one empirical fixed-point test.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    pub tv: f64,
    pub survivors: u64,
    pub replicas: u64,
}

/// Empirical quasi-stationarity certificate: sample initial states from the
/// estimate, evolve for `step`, condition on survival, and return the total
/// variation between the estimate and what it evolved into.
pub fn qsd_fixed_point_check<P: ConditionedProcess>(
    process: &P,
    estimate: &EmpiricalDistribution,
    step: f64,
    replicas: u64,
    seed: u64,
) -> Result<FixedPointReport, McError> {
    if estimate.total() < ESS_FLOOR {
        return Err(McError::InsufficientSupport { total: estimate.total() });
    }
    // Parse the support once; replicas then only clone states.
    let mut support: Vec<(P::State, u64)> = Vec::with_capacity(estimate.counts().len());
    let mut cumulative = 0u64;
    for (key, &count) in estimate.counts() {
        cumulative += count;
        support.push((process.state_from_key(key)?, cumulative));
    }
    let total = estimate.total();
    let pick = |u: u64| -> &P::State {
        let i = support.partition_point(|(_, c)| *c <= u);
        &support[i].0
    };
    let one = |r: u64| -> Option<String> {
        let mut rng = replica_rng(seed, r);
        let u = rng.gen_range(0..total);
        let mut state = pick(u).clone();
        evolve(process, &mut state, step, &mut rng);
        (process.weight(&state) > 0).then(|| process.key(&state))
    };
    #[cfg(feature = "parallel")]
    let counts = (0..replicas)
        .into_par_iter()
        .fold(BTreeMap::new, |mut acc: BTreeMap<String, u64>, r| {
            if let Some(key) = one(r) {
                *acc.entry(key).or_insert(0) += 1;
            }
            acc
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, c) in b {
                *a.entry(k).or_insert(0) += c;
            }
            a
        });
    #[cfg(not(feature = "parallel"))]
    let counts = {
        let mut acc: BTreeMap<String, u64> = BTreeMap::new();
        for r in 0..replicas {
            if let Some(key) = one(r) {
                *acc.entry(key).or_insert(0) += 1;
            }
        }
        acc
    };
    let evolved = EmpiricalDistribution::from_counts(counts);
    if evolved.total() == 0 {
        return Err(McError::AllAbsorbed);
    }
    let tv = tv_distance(estimate, &evolved)?;
    Ok(FixedPointReport { tv, survivors: evolved.total(), replicas })
}

/// Sole-survivor indicator for lattice genealogies, mirroring
/// [`GenealogyRecord::sole_survivor`].
pub fn brw_sole_survivor(genealogy: &crate::brw::BrwGenealogy, t: f64) -> bool {
    genealogy.surviving_ancestors(t).len() == 1
}

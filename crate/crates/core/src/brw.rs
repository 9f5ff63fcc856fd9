//! Branching random walk on the integer lattice with genealogy.
//!
//! Particles sit on Z^d and never move: each one dies at rate 1 and, at rate
//! `lambda`, places a child on a uniformly chosen nearest neighbor. States
//! are compared modulo translation by shifting the lexicographically first
//! occupied site to the origin.
//!
//! A [`BrwGenealogy`] logs births (with sites) and deaths so that ancestry
//! queries replay offline, including the walker construction: starting from
//! an initial particle, the walker hops to a newborn child exactly when that
//! child still has living descendants at the horizon, tracing a path whose
//! jumps are uniform nearest-neighbor steps.

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

/// Lattice coordinates; inline storage covers every dimension used here.
pub type Site = SmallVec<[i32; 4]>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrwError {
    #[error("configuration has no particles")]
    EmptyConfiguration,
    #[error("site dimension {got} does not match configuration dimension {d}")]
    DimensionMismatch { got: usize, d: usize },
    #[error("particle {particle} is not part of the initial configuration")]
    UnknownParticle { particle: u64 },
    #[error("particle {particle} has no alive descendant at the horizon")]
    NoSurvivingDescendant { particle: u64 },
    #[error("malformed configuration key: {reason}")]
    BadKey { reason: String },
}

/// Finite particle configuration on Z^d with stable particle ids.
#[derive(Debug, Clone)]
pub struct LatticeConfig {
    d: usize,
    ids: Vec<u64>,
    idx_of: HashMap<u64, usize>,
    site_of: HashMap<u64, Site>,
    occupancy: BTreeMap<Site, u32>,
    next_id: u64,
}

/// A configuration modulo translation: the lexicographically smallest
/// occupied site is pinned to the origin. Particle identity is erased;
/// this is the tabulation key for distribution estimates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalConfig {
    d: usize,
    sites: BTreeMap<Site, u32>,
}

#[derive(Serialize, Deserialize)]
struct KeySchema {
    d: usize,
    sites: BTreeMap<String, u32>,
}

impl LatticeConfig {
    /// A configuration from explicit site counts.
    pub fn new(d: usize, sites: &[(Vec<i32>, u32)]) -> Result<Self, BrwError> {
        let mut config = LatticeConfig {
            d,
            ids: Vec::new(),
            idx_of: HashMap::new(),
            site_of: HashMap::new(),
            occupancy: BTreeMap::new(),
            next_id: 0,
        };
        for (site, count) in sites {
            if site.len() != d {
                return Err(BrwError::DimensionMismatch { got: site.len(), d });
            }
            for _ in 0..*count {
                config.spawn(Site::from_slice(site));
            }
        }
        Ok(config)
    }

    /// One particle at the origin.
    pub fn single(d: usize) -> Self {
        LatticeConfig::new(d, &[(vec![0; d], 1)]).expect("origin matches d")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_particles(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn particle_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn site_of(&self, id: u64) -> Option<&Site> {
        self.site_of.get(&id)
    }

    pub fn occupancy(&self) -> &BTreeMap<Site, u32> {
        &self.occupancy
    }

    pub(crate) fn spawn(&mut self, site: Site) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.idx_of.insert(id, self.ids.len());
        self.ids.push(id);
        *self.occupancy.entry(site.clone()).or_insert(0) += 1;
        self.site_of.insert(id, site);
        id
    }

    pub(crate) fn kill(&mut self, id: u64) {
        let idx = self.idx_of.remove(&id).expect("particle exists");
        self.ids.swap_remove(idx);
        if idx < self.ids.len() {
            self.idx_of.insert(self.ids[idx], idx);
        }
        let site = self.site_of.remove(&id).expect("particle has a site");
        let count = self.occupancy.get_mut(&site).expect("occupied site");
        *count -= 1;
        if *count == 0 {
            self.occupancy.remove(&site);
        }
    }

    fn pick_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.ids[rng.gen_range(0..self.ids.len())]
    }

    /// Translation representative with the lexicographically first occupied
    /// site at the origin.
    pub fn canonicalize(&self) -> Result<CanonicalConfig, BrwError> {
        let shift = self.occupancy.keys().next().ok_or(BrwError::EmptyConfiguration)?.clone();
        let sites = self
            .occupancy
            .iter()
            .map(|(site, &count)| {
                let shifted: Site = site.iter().zip(&shift).map(|(a, b)| a - b).collect();
                (shifted, count)
            })
            .collect();
        Ok(CanonicalConfig { d: self.d, sites })
    }

    /// Largest coordinate spread over occupied sites (L-infinity diameter).
    pub fn diameter(&self) -> Result<usize, BrwError> {
        linf_diameter(self.d, self.occupancy.keys())
    }
}

impl CanonicalConfig {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sites(&self) -> &BTreeMap<Site, u32> {
        &self.sites
    }

    pub fn num_particles(&self) -> usize {
        self.sites.values().map(|&c| c as usize).sum()
    }

    pub fn diameter(&self) -> Result<usize, BrwError> {
        linf_diameter(self.d, self.sites.keys())
    }

    /// Stable JSON key, e.g. `{"d":1,"sites":{"[0]":1,"[2]":2}}`.
    pub fn to_key_json(&self) -> String {
        let sites = self
            .sites
            .iter()
            .map(|(site, &count)| {
                let coords: Vec<i32> = site.to_vec();
                (serde_json::to_string(&coords).expect("coords serialize"), count)
            })
            .collect();
        serde_json::to_string(&KeySchema { d: self.d, sites }).expect("key serializes")
    }

    pub fn from_key_json(key: &str) -> Result<CanonicalConfig, BrwError> {
        let schema: KeySchema =
            serde_json::from_str(key).map_err(|e| BrwError::BadKey { reason: e.to_string() })?;
        let mut sites = BTreeMap::new();
        for (coords, count) in schema.sites {
            let parsed: Vec<i32> = serde_json::from_str(&coords)
                .map_err(|e| BrwError::BadKey { reason: e.to_string() })?;
            if parsed.len() != schema.d {
                return Err(BrwError::BadKey {
                    reason: format!("site {coords} has dimension {} in d={}", parsed.len(), schema.d),
                });
            }
            if count == 0 {
                return Err(BrwError::BadKey { reason: format!("site {coords} has count 0") });
            }
            sites.insert(Site::from_vec(parsed), count);
        }
        if sites.is_empty() {
            return Err(BrwError::BadKey { reason: "no sites".to_string() });
        }
        Ok(CanonicalConfig { d: schema.d, sites })
    }

    /// Re-materializes particles (fresh ids) at these sites.
    pub fn to_lattice(&self) -> LatticeConfig {
        let sites: Vec<(Vec<i32>, u32)> =
            self.sites.iter().map(|(s, &c)| (s.to_vec(), c)).collect();
        LatticeConfig::new(self.d, &sites).expect("canonical sites are consistent")
    }
}

fn linf_diameter<'a>(d: usize, sites: impl Iterator<Item = &'a Site>) -> Result<usize, BrwError> {
    let mut lo = vec![i32::MAX; d];
    let mut hi = vec![i32::MIN; d];
    let mut seen = false;
    for site in sites {
        seen = true;
        for (axis, &c) in site.iter().enumerate() {
            lo[axis] = lo[axis].min(c);
            hi[axis] = hi[axis].max(c);
        }
    }
    if !seen {
        return Err(BrwError::EmptyConfiguration);
    }
    Ok((0..d).map(|a| (hi[a] - lo[a]) as usize).max().unwrap_or(0))
}

/// One logged lattice event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BrwEvent {
    Birth { time: f64, parent: u64, child: u64, site: Vec<i32> },
    Death { time: f64, particle: u64 },
}

impl BrwEvent {
    pub fn time(&self) -> f64 {
        match self {
            BrwEvent::Birth { time, .. } | BrwEvent::Death { time, .. } => *time,
        }
    }
}

/// One nearest-neighbor hop of a walker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerJump {
    pub time: f64,
    pub direction: Vec<i32>,
    pub to: u64,
}

/// The walker of an initial particle: the chain of switches to surviving
/// newborn lines. Every switch target has alive descendants at the horizon,
/// so the final particle is alive there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerPath {
    pub start: u64,
    pub end: u64,
    pub jumps: Vec<WalkerJump>,
}

/// Event log of one lattice trajectory plus the initial particles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BrwGenealogy {
    pub d: usize,
    pub initial: Vec<(u64, Vec<i32>)>,
    pub events: Vec<BrwEvent>,
}

#[derive(Serialize, Deserialize)]
struct BrwHeader {
    d: usize,
    initial: Vec<(u64, Vec<i32>)>,
}

impl BrwGenealogy {
    pub fn to_ndjson(&self) -> String {
        let mut out =
            serde_json::to_string(&BrwHeader { d: self.d, initial: self.initial.clone() })
                .expect("header serializes");
        for e in &self.events {
            out.push('\n');
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
        }
        out
    }

    pub fn from_ndjson(s: &str) -> Result<BrwGenealogy, serde_json::Error> {
        let mut lines = s.lines();
        let header: BrwHeader = serde_json::from_str(lines.next().unwrap_or("{}"))?;
        let events = lines.map(serde_json::from_str).collect::<Result<Vec<_>, _>>()?;
        Ok(BrwGenealogy { d: header.d, initial: header.initial, events })
    }

    fn alive_at(&self, t: f64) -> HashSet<u64> {
        let mut alive: HashSet<u64> = self.initial.iter().map(|(id, _)| *id).collect();
        for e in &self.events {
            if e.time() > t {
                break;
            }
            match e {
                BrwEvent::Birth { child, .. } => {
                    alive.insert(*child);
                }
                BrwEvent::Death { particle, .. } => {
                    alive.remove(particle);
                }
            }
        }
        alive
    }

    fn parent_map(&self, t: f64) -> HashMap<u64, u64> {
        let mut parent = HashMap::new();
        for e in &self.events {
            if e.time() > t {
                break;
            }
            if let BrwEvent::Birth { parent: p, child, .. } = e {
                parent.insert(*child, *p);
            }
        }
        parent
    }

    /// Site of every particle ever created up to `t` (particles never move).
    fn site_map(&self, t: f64) -> HashMap<u64, Vec<i32>> {
        let mut sites: HashMap<u64, Vec<i32>> =
            self.initial.iter().map(|(id, s)| (*id, s.clone())).collect();
        for e in &self.events {
            if e.time() > t {
                break;
            }
            if let BrwEvent::Birth { child, site, .. } = e {
                sites.insert(*child, site.clone());
            }
        }
        sites
    }

    /// Particles (of any generation) that still have alive descendants at `t`:
    /// the alive set and all its ancestors.
    fn has_alive_descendant(&self, t: f64) -> HashSet<u64> {
        let parent = self.parent_map(t);
        let mut marked = HashSet::new();
        for leaf in self.alive_at(t) {
            let mut v = leaf;
            while marked.insert(v) {
                match parent.get(&v) {
                    Some(&p) => v = p,
                    None => break,
                }
            }
        }
        marked
    }

    /// Initial particles with alive descendants at `t`, ascending.
    pub fn surviving_ancestors(&self, t: f64) -> Vec<u64> {
        let marked = self.has_alive_descendant(t);
        let mut out: Vec<u64> = self
            .initial
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| marked.contains(id))
            .collect();
        out.sort_unstable();
        out
    }

    /// Replays the walker of initial particle `x` over `[0, t]`: on each birth
    /// by the current walker, switch to the child iff the child's line
    /// reaches `t`, recording the hop direction.
    pub fn walker_path(&self, x: u64, t: f64) -> Result<WalkerPath, BrwError> {
        if !self.initial.iter().any(|(id, _)| *id == x) {
            return Err(BrwError::UnknownParticle { particle: x });
        }
        let marked = self.has_alive_descendant(t);
        if !marked.contains(&x) {
            return Err(BrwError::NoSurvivingDescendant { particle: x });
        }
        let sites = self.site_map(t);
        let mut cur = x;
        let mut jumps = Vec::new();
        for e in &self.events {
            if e.time() > t {
                break;
            }
            if let BrwEvent::Birth { time, parent, child, site } = e {
                if *parent == cur && marked.contains(child) {
                    let from = &sites[&cur];
                    let direction: Vec<i32> =
                        site.iter().zip(from).map(|(a, b)| a - b).collect();
                    jumps.push(WalkerJump { time: *time, direction, to: *child });
                    cur = *child;
                }
            }
        }
        Ok(WalkerPath { start: x, end: cur, jumps })
    }
}

/// Exact event-driven trajectory over `[0, horizon]`.
///
/// Aggregate clock at rate `(1 + lambda) * #particles`; the event is a birth
/// with probability `lambda / (1 + lambda)` (uniform particle, uniform
/// neighbor) and otherwise the death of a uniform particle. Deterministic
/// given the rng state.
pub fn simulate_brw<R: Rng + ?Sized>(
    config0: &LatticeConfig,
    lambda: f64,
    horizon: f64,
    rng: &mut R,
) -> (LatticeConfig, BrwGenealogy) {
    assert!(lambda > 0.0 && lambda < 1.0, "lambda must lie in (0, 1)");
    let mut config = config0.clone();
    let mut genealogy = BrwGenealogy {
        d: config.d,
        initial: config.ids.iter().map(|id| (*id, config.site_of[id].to_vec())).collect(),
        events: Vec::new(),
    };
    let mut clock = 0.0;
    loop {
        let n = config.num_particles();
        if n == 0 {
            break;
        }
        let total = (1.0 + lambda) * n as f64;
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        clock += -u.ln() / total;
        if clock > horizon {
            break;
        }
        let is_birth = rng.gen::<f64>() < lambda / (1.0 + lambda);
        let actor = config.pick_uniform(rng);
        if is_birth {
            let axis = rng.gen_range(0..config.d);
            let step: i32 = if rng.gen::<bool>() { 1 } else { -1 };
            let mut site = config.site_of[&actor].clone();
            site[axis] += step;
            let child = config.spawn(site.clone());
            genealogy.events.push(BrwEvent::Birth {
                time: clock,
                parent: actor,
                child,
                site: site.to_vec(),
            });
        } else {
            config.kill(actor);
            genealogy.events.push(BrwEvent::Death { time: clock, particle: actor });
        }
    }
    (config, genealogy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringDistribution;
    use crate::spectral::TruncatedKernel;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonicalize_examples() {
        let c = LatticeConfig::new(2, &[(vec![3, 2], 1), (vec![5, 2], 2)]).unwrap();
        let canon = c.canonicalize().unwrap();
        let sites: Vec<(Vec<i32>, u32)> =
            canon.sites().iter().map(|(s, &n)| (s.to_vec(), n)).collect();
        assert_eq!(sites, vec![(vec![0, 0], 1), (vec![2, 0], 2)]);

        let shifted = LatticeConfig::new(2, &[(vec![10, -2], 1), (vec![12, -2], 2)]).unwrap();
        assert_eq!(shifted.canonicalize().unwrap(), canon);

        let single = LatticeConfig::new(3, &[(vec![-4, 9, 1], 1)]).unwrap();
        let canon = single.canonicalize().unwrap();
        assert_eq!(canon.sites().keys().next().unwrap().to_vec(), vec![0, 0, 0]);
        assert_eq!(canon.num_particles(), 1);
    }

    #[test]
    fn canonicalize_rejects_empty() {
        let mut c = LatticeConfig::single(1);
        let id = c.particle_ids()[0];
        c.kill(id);
        assert_eq!(c.canonicalize(), Err(BrwError::EmptyConfiguration));
        assert_eq!(c.diameter(), Err(BrwError::EmptyConfiguration));
    }

    #[test]
    fn new_rejects_dimension_mismatch() {
        assert!(matches!(
            LatticeConfig::new(2, &[(vec![0], 1)]),
            Err(BrwError::DimensionMismatch { got: 1, d: 2 })
        ));
    }

    #[test]
    fn diameter_examples() {
        let single = LatticeConfig::single(2);
        assert_eq!(single.diameter().unwrap(), 0);
        let pair = LatticeConfig::new(2, &[(vec![0, 0], 1), (vec![2, 0], 1)]).unwrap();
        assert_eq!(pair.diameter().unwrap(), 2);
        let skew = LatticeConfig::new(2, &[(vec![0, 0], 1), (vec![3, 4], 1)]).unwrap();
        assert_eq!(skew.diameter().unwrap(), 4);
    }

    #[test]
    fn key_json_schema() {
        let c = LatticeConfig::new(1, &[(vec![0], 1), (vec![2], 2)]).unwrap();
        let key = c.canonicalize().unwrap().to_key_json();
        assert_eq!(key, r#"{"d":1,"sites":{"[0]":1,"[2]":2}}"#);
        let back = CanonicalConfig::from_key_json(&key).unwrap();
        assert_eq!(back, c.canonicalize().unwrap());
        assert_eq!(back.to_lattice().num_particles(), 3);

        assert!(CanonicalConfig::from_key_json(r#"{"d":2,"sites":{"[0]":1}}"#).is_err());
        assert!(CanonicalConfig::from_key_json(r#"{"d":1,"sites":{}}"#).is_err());
        assert!(CanonicalConfig::from_key_json("junk").is_err());
    }

    #[test]
    fn simulate_zero_horizon_is_identity() {
        let c0 = LatticeConfig::new(1, &[(vec![0], 1), (vec![2], 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, g) = simulate_brw(&c0, 0.5, 0.0, &mut rng);
        assert_eq!(c.canonicalize().unwrap(), c0.canonicalize().unwrap());
        assert!(g.events.is_empty());
        assert_eq!(g.initial.len(), 2);
    }

    #[test]
    fn particle_count_mean_matches_linear_birth_death() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let runs = 1_000_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..runs {
            let (c, _) = simulate_brw(&LatticeConfig::single(1), 0.5, 4.0, &mut rng);
            let n = c.num_particles() as f64;
            sum += n;
            sumsq += n * n;
        }
        let mean = sum / runs as f64;
        let var = (sumsq / runs as f64 - mean * mean).max(0.0);
        let se = (var / runs as f64).sqrt();
        let expect = (-0.5 * 4.0_f64).exp();
        assert!((mean - expect).abs() <= 3.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn survival_matches_exact_semigroup() {
        let offspring = OffspringDistribution::brw_offspring(0.5).unwrap();
        let kernel = TruncatedKernel::build_kernel(&offspring, 200).unwrap();
        let exact = kernel.survival(1, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let runs = 1_000_000;
        let mut alive = 0u64;
        for _ in 0..runs {
            let (c, _) = simulate_brw(&LatticeConfig::single(1), 0.5, 2.0, &mut rng);
            alive += u64::from(!c.is_empty());
        }
        let p = alive as f64 / runs as f64;
        assert!((p - exact).abs() <= 0.005, "p {p} vs exact {exact}");
    }

    #[test]
    fn particle_counts_match_exact_semigroup() {
        let offspring = OffspringDistribution::brw_offspring(0.5).unwrap();
        let kernel = TruncatedKernel::build_kernel(&offspring, 200).unwrap();
        let row = kernel.matrix_exp_row(1, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let runs = 200_000usize;
        let mut counts: HashMap<usize, u64> = HashMap::new();
        for _ in 0..runs {
            let (c, _) = simulate_brw(&LatticeConfig::single(1), 0.5, 2.0, &mut rng);
            *counts.entry(c.num_particles()).or_insert(0) += 1;
        }
        let absorbed = 1.0 - row.iter().sum::<f64>();
        let mut tv = (counts.get(&0).copied().unwrap_or(0) as f64 / runs as f64 - absorbed).abs();
        for j in 1..=200 {
            let emp = counts.get(&j).copied().unwrap_or(0) as f64 / runs as f64;
            tv += (emp - row[j - 1]).abs();
        }
        assert!(tv / 2.0 <= 0.01, "tv {}", tv / 2.0);
    }

    fn hand_genealogy() -> BrwGenealogy {
        // 0 at the origin; 1 = child of 0 at +1; 2 = child of 1 back at 0;
        // 3 = child of 2 at +1; the older line dies off, 3 survives.
        BrwGenealogy {
            d: 1,
            initial: vec![(0, vec![0])],
            events: vec![
                BrwEvent::Birth { time: 0.2, parent: 0, child: 1, site: vec![1] },
                BrwEvent::Birth { time: 0.4, parent: 1, child: 2, site: vec![0] },
                BrwEvent::Death { time: 0.5, particle: 0 },
                BrwEvent::Birth { time: 0.6, parent: 2, child: 3, site: vec![1] },
                BrwEvent::Death { time: 0.7, particle: 1 },
                BrwEvent::Death { time: 0.8, particle: 2 },
            ],
        }
    }

    #[test]
    fn walker_follows_surviving_lines() {
        let g = hand_genealogy();
        let path = g.walker_path(0, 1.0).unwrap();
        assert_eq!(path.start, 0);
        assert_eq!(path.end, 3);
        assert_eq!(path.jumps.len(), 3);
        let dirs: Vec<Vec<i32>> = path.jumps.iter().map(|j| j.direction.clone()).collect();
        assert_eq!(dirs, vec![vec![1], vec![-1], vec![1]]);
        let times: Vec<f64> = path.jumps.iter().map(|j| j.time).collect();
        assert_eq!(times, vec![0.2, 0.4, 0.6]);
    }

    #[test]
    fn walker_one_jump_when_own_line_dies() {
        let g = BrwGenealogy {
            d: 1,
            initial: vec![(0, vec![0])],
            events: vec![
                BrwEvent::Birth { time: 0.5, parent: 0, child: 1, site: vec![-1] },
                BrwEvent::Death { time: 0.8, particle: 0 },
            ],
        };
        let path = g.walker_path(0, 2.0).unwrap();
        assert_eq!(path.jumps.len(), 1);
        assert_eq!(path.jumps[0].time, 0.5);
        assert_eq!(path.jumps[0].direction, vec![-1]);
        assert_eq!(path.end, 1);
    }

    #[test]
    fn walker_stays_when_child_line_dies() {
        let g = BrwGenealogy {
            d: 1,
            initial: vec![(0, vec![0])],
            events: vec![
                BrwEvent::Birth { time: 0.3, parent: 0, child: 1, site: vec![1] },
                BrwEvent::Death { time: 0.6, particle: 1 },
            ],
        };
        let path = g.walker_path(0, 1.0).unwrap();
        assert!(path.jumps.is_empty());
        assert_eq!(path.end, 0);
    }

    #[test]
    fn walker_requires_survival_and_known_start() {
        let g = BrwGenealogy {
            d: 1,
            initial: vec![(0, vec![0])],
            events: vec![BrwEvent::Death { time: 0.1, particle: 0 }],
        };
        assert_eq!(g.walker_path(0, 1.0), Err(BrwError::NoSurvivingDescendant { particle: 0 }));
        assert_eq!(g.walker_path(7, 1.0), Err(BrwError::UnknownParticle { particle: 7 }));
        // Before the death the line is its own alive descendant.
        assert!(g.walker_path(0, 0.05).is_ok());
    }

    #[test]
    fn surviving_ancestors_examples() {
        let g = hand_genealogy();
        assert_eq!(g.surviving_ancestors(1.0), vec![0]);

        let dead = BrwGenealogy {
            d: 1,
            initial: vec![(0, vec![0])],
            events: vec![BrwEvent::Death { time: 0.1, particle: 0 }],
        };
        assert!(dead.surviving_ancestors(1.0).is_empty());

        let two = BrwGenealogy {
            d: 1,
            initial: vec![(0, vec![0]), (1, vec![5])],
            events: vec![],
        };
        assert_eq!(two.surviving_ancestors(1.0), vec![0, 1]);
    }

    #[test]
    fn ndjson_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c0 = LatticeConfig::new(2, &[(vec![0, 0], 1), (vec![1, 1], 1)]).unwrap();
        let (_, g) = simulate_brw(&c0, 0.5, 2.0, &mut rng);
        let text = g.to_ndjson();
        assert_eq!(BrwGenealogy::from_ndjson(&text).unwrap(), g);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, g) = simulate_brw(&LatticeConfig::single(1), 0.5, 3.0, &mut rng);
            (c.canonicalize().map(|c| c.to_key_json()).ok(), g.to_ndjson())
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).1, run(6).1);
    }

    #[test]
    fn walker_jumps_are_uniform_and_independent() {
        // Conditioned on the jump happening, each direction must be a fair
        // coin in d=1, independent across the first two jumps. Chi-square
        // thresholds at significance 1e-3: 10.828 for 1 degree of freedom.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let runs = 600_000;
        let mut survivors = 0u64;
        let mut first = [0u64; 2];
        let mut second = [0u64; 2];
        let mut third = [0u64; 2];
        let mut pair = [[0u64; 2]; 2];
        for _ in 0..runs {
            let (c, g) = simulate_brw(&LatticeConfig::single(1), 0.5, 2.5, &mut rng);
            if c.is_empty() {
                continue;
            }
            survivors += 1;
            let path = g.walker_path(0, 2.5).unwrap();
            let dir = |i: usize| usize::from(path.jumps[i].direction[0] > 0);
            if !path.jumps.is_empty() {
                first[dir(0)] += 1;
            }
            if path.jumps.len() >= 2 {
                second[dir(1)] += 1;
                pair[dir(0)][dir(1)] += 1;
            }
            if path.jumps.len() >= 3 {
                third[dir(2)] += 1;
            }
        }
        let uniform_chi2 = |c: [u64; 2]| {
            let n = (c[0] + c[1]) as f64;
            let d = c[0] as f64 - c[1] as f64;
            d * d / n
        };
        assert!(survivors > 100_000, "not enough conditioned runs: {survivors}");
        for (name, c) in [("first", first), ("second", second), ("third", third)] {
            let chi2 = uniform_chi2(c);
            assert!(chi2 < 10.828, "{name} jump direction biased: chi2 {chi2} counts {c:?}");
        }
        let (a, b, c2, d2) =
            (pair[0][0] as f64, pair[0][1] as f64, pair[1][0] as f64, pair[1][1] as f64);
        let n = a + b + c2 + d2;
        let chi2 = n * (a * d2 - b * c2).powi(2)
            / ((a + b) * (c2 + d2) * (a + c2) * (b + d2));
        assert!(chi2 < 10.828, "jumps correlated: chi2 {chi2}");
    }

    #[test]
    fn walker_separation_bounds_diameter() {
        let c0 = LatticeConfig::new(1, &[(vec![0], 1), (vec![2], 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut checked = 0;
        for _ in 0..200_000 {
            let (c, g) = simulate_brw(&c0, 0.5, 3.0, &mut rng);
            let survivors = g.surviving_ancestors(3.0);
            if survivors.len() != 2 {
                continue;
            }
            checked += 1;
            let end_site = |x: u64| {
                let path = g.walker_path(x, 3.0).unwrap();
                c.site_of(path.end).expect("walker ends alive").to_vec()
            };
            let sx = end_site(survivors[0]);
            let sy = end_site(survivors[1]);
            let sep = sx
                .iter()
                .zip(&sy)
                .map(|(a, b)| (a - b).unsigned_abs() as usize)
                .max()
                .unwrap();
            assert!(c.diameter().unwrap() >= sep, "diameter < walker separation");
        }
        assert!(checked > 2_000, "too few two-line survivals: {checked}");
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent_and_orbit_constant(
            coords in proptest::collection::vec((-20i32..20, -20i32..20), 1..6),
            shift in (-50i32..50, -50i32..50),
        ) {
            let sites: Vec<(Vec<i32>, u32)> =
                coords.iter().map(|&(x, y)| (vec![x, y], 1)).collect();
            let base = LatticeConfig::new(2, &sites).unwrap();
            let shifted_sites: Vec<(Vec<i32>, u32)> = coords
                .iter()
                .map(|&(x, y)| (vec![x + shift.0, y + shift.1], 1))
                .collect();
            let shifted = LatticeConfig::new(2, &shifted_sites).unwrap();
            let canon = base.canonicalize().unwrap();
            prop_assert_eq!(&shifted.canonicalize().unwrap(), &canon);
            // Canonicalizing a canonical form changes nothing.
            let again = canon.to_lattice().canonicalize().unwrap();
            prop_assert_eq!(&again, &canon);
            // The representative pins the lexicographic minimum at the origin.
            prop_assert_eq!(canon.sites().keys().next().unwrap().to_vec(), vec![0, 0]);
        }

        #[test]
        fn diameter_is_translation_invariant(
            coords in proptest::collection::vec(-30i32..30, 1..6),
            shift in -100i32..100,
        ) {
            let sites: Vec<(Vec<i32>, u32)> = coords.iter().map(|&x| (vec![x], 1)).collect();
            let moved: Vec<(Vec<i32>, u32)> =
                coords.iter().map(|&x| (vec![x + shift], 1)).collect();
            let a = LatticeConfig::new(1, &sites).unwrap();
            let b = LatticeConfig::new(1, &moved).unwrap();
            prop_assert_eq!(a.diameter().unwrap(), b.diameter().unwrap());
        }
    }
}

//! Offspring distributions: the reproduction law sampled at every branching
//! event, shared by the tree-valued process, the lattice branching random
//! walk, and their population-size projections.
//!
//! A distribution is a finite pmf over offspring counts, optionally extended
//! by a geometric tail, together with the per-individual event rate. The
//! strict constructor enforces the regime every estimator in this crate is
//! designed for (subcritical, non-degenerate branching); the relaxed
//! constructor admits boundary cases such as the pure-death law used by
//! analytic oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Absolute tolerance for the pmf normalization check.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffspringError {
    #[error("pmf entry p[{k}] = {p} is not a finite non-negative probability")]
    InvalidEntry { k: u32, p: f64 },
    #[error("pmf is empty")]
    EmptyPmf,
    #[error("probabilities sum to {sum:.17}, not 1 (tolerance {NORMALIZATION_TOL:e})")]
    NotNormalized { sum: f64 },
    #[error("mean offspring {mean} is not subcritical (need m < 1)")]
    Supercritical { mean: f64 },
    #[error("p0 + p1 = {mass} admits no branching (need p0 + p1 < 1)")]
    DegenerateOffspring { mass: f64 },
    #[error("geometric tail ratio {ratio} has no exponential moment (need 0 < r < 1)")]
    NoExponentialMoment { ratio: f64 },
    #[error("event rate {rate} must be finite and positive")]
    InvalidEventRate { rate: f64 },
    #[error("birth rate lambda = {lambda} outside (0, 1)")]
    LambdaOutOfRange { lambda: f64 },
}

/// Wire format: `{"pmf": {"0": 0.6, "2": 0.4}, "tail_ratio": null, "event_rate": 1.0}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OffspringSpec {
    pmf: BTreeMap<u32, f64>,
    tail_ratio: Option<f64>,
    event_rate: f64,
}

/// Validated offspring law with cached moments and sampling tables.
///
/// Immutable after construction; safe to share across parallel replicas.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "OffspringSpec", into = "OffspringSpec")]
pub struct OffspringDistribution {
    pmf: BTreeMap<u32, f64>,
    tail_ratio: Option<f64>,
    event_rate: f64,
    mean: f64,
    // Cumulative weights over the explicit support, in key order.
    cumulative: Vec<(u32, f64)>,
    explicit_mass: f64,
}

impl TryFrom<OffspringSpec> for OffspringDistribution {
    type Error = OffspringError;
    fn try_from(s: OffspringSpec) -> Result<Self, Self::Error> {
        Self::validate(s.pmf, s.tail_ratio, s.event_rate)
    }
}

impl From<OffspringDistribution> for OffspringSpec {
    fn from(d: OffspringDistribution) -> Self {
        OffspringSpec { pmf: d.pmf, tail_ratio: d.tail_ratio, event_rate: d.event_rate }
    }
}

impl OffspringDistribution {
    /// Builds a distribution enforcing the full contract: normalized pmf,
    /// subcritical mean, non-degenerate branching (`p0 + p1 < 1`), and a
    /// structurally finite exponential moment (finite support or geometric
    /// tail with ratio in (0, 1)).
    pub fn validate(
        pmf: BTreeMap<u32, f64>,
        tail_ratio: Option<f64>,
        event_rate: f64,
    ) -> Result<Self, OffspringError> {
        let d = Self::new_relaxed(pmf, tail_ratio, event_rate)?;
        if d.mean >= 1.0 {
            return Err(OffspringError::Supercritical { mean: d.mean });
        }
        let low_mass = d.pmf_at(0) + d.pmf_at(1);
        if low_mass >= 1.0 - NORMALIZATION_TOL {
            return Err(OffspringError::DegenerateOffspring { mass: low_mass });
        }
        Ok(d)
    }

    /// Builds a distribution checking only well-formedness (finite entries,
    /// normalization, valid tail ratio, positive event rate). Admits laws the
    /// strict constructor rejects, such as pure death `{0: 1}`; used by exact
    /// oracles and boundary-case tests.
    pub fn new_relaxed(
        pmf: BTreeMap<u32, f64>,
        tail_ratio: Option<f64>,
        event_rate: f64,
    ) -> Result<Self, OffspringError> {
        if pmf.is_empty() {
            return Err(OffspringError::EmptyPmf);
        }
        for (&k, &p) in &pmf {
            if !p.is_finite() || p < 0.0 {
                return Err(OffspringError::InvalidEntry { k, p });
            }
        }
        if !event_rate.is_finite() || event_rate <= 0.0 {
            return Err(OffspringError::InvalidEventRate { rate: event_rate });
        }
        if let Some(r) = tail_ratio {
            if !r.is_finite() || r <= 0.0 || r >= 1.0 {
                return Err(OffspringError::NoExponentialMoment { ratio: r });
            }
        }

        let explicit_mass: f64 = pmf.values().sum();
        let (&k_max, &p_max) = pmf.iter().next_back().expect("non-empty pmf");
        // Tail: p_{k_max + j} = p_max * r^j for j >= 1, total p_max * r/(1-r).
        let tail_mass = tail_ratio.map_or(0.0, |r| p_max * r / (1.0 - r));
        let total = explicit_mass + tail_mass;
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(OffspringError::NotNormalized { sum: total });
        }

        let explicit_mean: f64 = pmf.iter().map(|(&k, &p)| f64::from(k) * p).sum();
        // Tail mean: sum_{j>=1} (k_max + j) p_max r^j.
        let tail_mean = tail_ratio.map_or(0.0, |r| {
            p_max * (f64::from(k_max) * r / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)))
        });
        let mean = explicit_mean + tail_mean;

        let mut cumulative = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for (&k, &p) in &pmf {
            acc += p;
            cumulative.push((k, acc));
        }

        Ok(OffspringDistribution { pmf, tail_ratio, event_rate, mean, cumulative, explicit_mass })
    }

    /// The supported-on-{0,2} law projected out of a branching random walk
    /// with birth rate `lambda` and death rate 1: each event is a death with
    /// probability `1/(1+lambda)` or a two-for-one branching with probability
    /// `lambda/(1+lambda)`, at per-individual event rate `1+lambda`.
    pub fn brw_offspring(lambda: f64) -> Result<Self, OffspringError> {
        if !lambda.is_finite() || lambda <= 0.0 || lambda >= 1.0 {
            return Err(OffspringError::LambdaOutOfRange { lambda });
        }
        let mut pmf = BTreeMap::new();
        pmf.insert(0, 1.0 / (1.0 + lambda));
        pmf.insert(2, lambda / (1.0 + lambda));
        Self::validate(pmf, None, 1.0 + lambda)
    }

    /// Same law with a different per-individual event rate attached.
    pub fn with_event_rate(mut self, event_rate: f64) -> Result<Self, OffspringError> {
        if !event_rate.is_finite() || event_rate <= 0.0 {
            return Err(OffspringError::InvalidEventRate { rate: event_rate });
        }
        self.event_rate = event_rate;
        Ok(self)
    }

    /// Draws one offspring count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen::<f64>();
        if u < self.explicit_mass {
            for &(k, acc) in &self.cumulative {
                if u < acc {
                    return k;
                }
            }
        }
        match self.tail_ratio {
            Some(r) => {
                // Conditional tail law: k_max + j with P(j) = (1-r) r^{j-1}.
                let v: f64 = rng.gen::<f64>();
                let j = ((1.0 - v).ln() / r.ln()).floor() as u32 + 1;
                self.max_explicit() + j
            }
            // Rounding fallthrough: attribute the sliver to the last key.
            None => self.max_explicit(),
        }
    }

    /// Probability of exactly `k` offspring, including the geometric tail.
    pub fn pmf_at(&self, k: u32) -> f64 {
        if let Some(&p) = self.pmf.get(&k) {
            return p;
        }
        match self.tail_ratio {
            Some(r) if k > self.max_explicit() => {
                let (&k_max, &p_max) = self.pmf.iter().next_back().expect("non-empty pmf");
                p_max * r.powi((k - k_max) as i32)
            }
            _ => 0.0,
        }
    }

    /// Total mass strictly above `k`.
    pub fn mass_above(&self, k: u32) -> f64 {
        let explicit: f64 = self.pmf.range(k + 1..).map(|(_, &p)| p).sum();
        let tail = match self.tail_ratio {
            Some(r) => {
                let (&k_max, &p_max) = self.pmf.iter().next_back().expect("non-empty pmf");
                if k <= k_max {
                    p_max * r / (1.0 - r)
                } else {
                    // Geometric remainder beyond k >= k_max.
                    p_max * r.powi((k - k_max) as i32) * r / (1.0 - r)
                }
            }
            None => 0.0,
        };
        explicit + tail
    }

    /// Mean offspring count `m`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Per-individual total event rate.
    pub fn event_rate(&self) -> f64 {
        self.event_rate
    }

    /// Largest key of the explicit pmf.
    pub fn max_explicit(&self) -> u32 {
        *self.pmf.keys().next_back().expect("non-empty pmf")
    }

    /// Explicit pmf entries in key order (tail not included).
    pub fn explicit_entries(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.pmf.iter().map(|(&k, &p)| (k, p))
    }

    pub fn tail_ratio(&self) -> Option<f64> {
        self.tail_ratio
    }

    pub fn has_tail(&self) -> bool {
        self.tail_ratio.is_some()
    }
}

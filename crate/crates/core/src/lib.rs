//! Continuous-time branching processes conditioned on survival.
//!
//! The crate has five layers:
//!
//! - [`offspring`]: validated offspring distributions (the reproduction law
//!   shared by every process here).
//! - [`bpg`]: the branching process with genealogy, a rooted-tree-valued
//!   chain whose leaves are the alive particles and whose internal vertices
//!   record the surviving ancestry.
//! - [`brw`]: binary branching random walks on `Z^d`, observed modulo
//!   translation.
//! - [`spectral`]: exact finite-truncation analysis of the absorbed
//!   population-size chain (decay rate, quasi-stationary distribution,
//!   survival eigenfunction, conditioned laws, the one-parameter
//!   quasi-stationary family, and the chain conditioned to never die out).
//! - [`montecarlo`]: estimators for conditioned laws (direct conditioning and
//!   Fleming-Viot particle ensembles), genealogical event counters, and the
//!   supporting statistics.
//!
//! With the default `parallel` feature, replica sweeps fan out over a rayon
//! pool; results are identical to the sequential driver because every replica
//! owns an RNG stream derived from `(seed, replica index)`.

pub mod bpg;
pub mod brw;
pub mod montecarlo;
pub mod offspring;
pub mod spectral;

pub use offspring::OffspringDistribution;

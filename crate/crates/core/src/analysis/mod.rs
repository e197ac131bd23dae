//! Audits of realized matchings: stability under individual rationality,
//! justified envy, and comparison with deferred acceptance.

mod da;
mod fairness;
mod stability;

pub use da::{classify_lattice, deferred_acceptance, LatticeClass, Proposer};
pub use fairness::{check_fairness, EnvyTriple, FairnessReport};
pub use stability::{agent_prefers, check_stability, BlockReason, BlockingPair, IrFilter, StabilityReport};

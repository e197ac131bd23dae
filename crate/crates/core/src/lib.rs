//! Calibrated decentralized matching under uncertain preferences.
//!
//! This crate holds the pure algorithmic part of the simulator: market
//! types and payoff arithmetic, the acceptance-probability learner, the
//! cutoff strategy with its state calibrations and baselines, single-stage
//! market realization, and the stability/fairness checks. It is `no_std`
//! and only needs `alloc`; file formats, the experiment harness and the
//! command line live in the `cdm` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod acceptance;
pub mod analysis;
mod error;
pub mod learner;
pub mod linalg;
pub mod market;
pub mod rng;
pub mod sim;
pub mod strategy;

pub use acceptance::{AcceptanceFn, ProbTable};
pub use error::{Error, Result};
pub use market::{
    anova_decompose, AnovaParts, AttributeMatrix, Market, MarketConfig, MatchOutcome, PreferenceProfile,
    RawUtilityTensor, UnitRescale,
};

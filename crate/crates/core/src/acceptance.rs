//! Acceptance-probability surfaces `pi_i(s, v)` as seen by one agent.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Probability that an arm accepts the agent when the agent's state is `s`.
///
/// `arm` lets injected per-arm tables bypass the score; fitted models only
/// look at `score`.
pub trait AcceptanceFn {
    fn prob(&self, s: f64, arm: usize, score: f64) -> f64;

    /// Probabilities of every arm at state `s`.
    fn probs_at(&self, s: f64, scores: &[f64]) -> Vec<f64> {
        scores.iter().enumerate().map(|(j, &v)| self.prob(s, j, v)).collect()
    }
}

impl<T: AcceptanceFn + ?Sized> AcceptanceFn for &T {
    fn prob(&self, s: f64, arm: usize, score: f64) -> f64 {
        (**self).prob(s, arm, score)
    }

    fn probs_at(&self, s: f64, scores: &[f64]) -> Vec<f64> {
        (**self).probs_at(s, scores)
    }
}

impl<T: AcceptanceFn + ?Sized> AcceptanceFn for alloc::boxed::Box<T> {
    fn prob(&self, s: f64, arm: usize, score: f64) -> f64 {
        (**self).prob(s, arm, score)
    }

    fn probs_at(&self, s: f64, scores: &[f64]) -> Vec<f64> {
        (**self).probs_at(s, scores)
    }
}

/// Wraps a closure `(s, arm, score) -> probability`.
#[derive(Clone, Copy)]
pub struct FnAcceptance<F>(pub F);

impl<F: Fn(f64, usize, f64) -> f64> AcceptanceFn for FnAcceptance<F> {
    fn prob(&self, s: f64, arm: usize, score: f64) -> f64 {
        (self.0)(s, arm, score)
    }
}

/// Injected per-arm probabilities that do not depend on the state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbTable {
    probs: Vec<f64>,
}

impl ProbTable {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs)?;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl AcceptanceFn for ProbTable {
    fn prob(&self, _s: f64, arm: usize, _score: f64) -> f64 {
        self.probs[arm]
    }
}

/// Per-arm probabilities tabulated at a few states; between tabulated
/// states the table of the nearest state at or below `s` applies (the
/// lowest table below the first state).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateTable {
    states: Vec<f64>,
    tables: Vec<Vec<f64>>,
}

impl StateTable {
    pub fn new(mut rows: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("state table"));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = rows[0].1.len();
        for (s, probs) in &rows {
            if !s.is_finite() {
                return Err(crate::error::invalid!("state {s} is not finite"));
            }
            if probs.len() != n {
                return Err(Error::Shape(alloc::format!(
                    "state table rows have {} and {n} arms",
                    probs.len()
                )));
            }
            check_probs(probs)?;
        }
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(crate::error::invalid!("state table repeats a state"));
        }
        let (states, tables) = rows.into_iter().unzip();
        Ok(Self { states, tables })
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn table(&self, k: usize) -> &[f64] {
        &self.tables[k]
    }

    fn row(&self, s: f64) -> &[f64] {
        let k = self.states.partition_point(|&t| t <= s);
        &self.tables[k.saturating_sub(1)]
    }
}

impl AcceptanceFn for StateTable {
    fn prob(&self, s: f64, arm: usize, _score: f64) -> f64 {
        self.row(s)[arm]
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    match probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(arm) => Err(Error::Probability { arm, value: probs[arm] }),
        None => Ok(()),
    }
}

use alloc::vec::Vec;

use super::calibrate::AgentProblem;
use crate::acceptance::AcceptanceFn;
use crate::learner::StateModel;

pub const MAX_ROUNDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleResult {
    pub pull_set: Vec<usize>,
    /// Utility threshold of each arm at the last round.
    pub thresholds: Vec<f64>,
    /// Probability that the final set over-enrolls.
    pub over_probability: f64,
    pub rounds: usize,
    pub converged: bool,
}

/// Oracle arm set: the fixed point of
/// `B = { j : u_j >= gamma P(s* in O_B) E[pi_j | s* in O_B] / E[pi_j] }`
/// where `O_B` holds the states under which `B` over-enrolls, iterated from
/// the full arm set. `problem.acceptance` must be the true surface under the
/// opponents' strategies.
pub fn oracle_set<A: AcceptanceFn + ?Sized>(problem: &AgentProblem<'_, A>, model: &StateModel) -> OracleResult {
    let n = problem.utils.len();
    let q = f64::from(problem.quota);
    let atoms: Vec<(f64, Vec<f64>)> = model
        .atoms()
        .into_iter()
        .filter(|a| a.1 > 0.0)
        .map(|(s, w)| (w, problem.probs(s)))
        .collect();
    let mean: Vec<f64> = (0..n).map(|j| atoms.iter().map(|(w, p)| w * p[j]).sum()).collect();
    let mut set: Vec<usize> = (0..n).collect();
    let mut thresholds = alloc::vec![0.0; n];
    let mut over_probability = 0.0;
    for round in 1..=MAX_ROUNDS {
        let over: Vec<&(f64, Vec<f64>)> = atoms
            .iter()
            .filter(|(_, p)| set.iter().map(|&j| p[j]).sum::<f64>() > q)
            .collect();
        over_probability = over.iter().map(|a| a.0).sum();
        for j in 0..n {
            let joint: f64 = over.iter().map(|(w, p)| w * p[j]).sum();
            thresholds[j] = if mean[j] > 0.0 {
                problem.penalty * joint / mean[j]
            } else {
                0.0
            };
        }
        let next: Vec<usize> = (0..n).filter(|&j| problem.utils[j] >= thresholds[j]).collect();
        if next == set {
            return OracleResult {
                pull_set: set,
                thresholds,
                over_probability,
                rounds: round,
                converged: true,
            };
        }
        set = next;
    }
    log::warn!("oracle set did not converge in {MAX_ROUNDS} rounds");
    OracleResult {
        pull_set: set,
        thresholds,
        over_probability,
        rounds: MAX_ROUNDS,
        converged: false,
    }
}

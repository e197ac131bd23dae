use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::stability::{agent_prefers, check_stability};
use crate::error::Result;
use crate::market::{Market, MatchOutcome, PreferenceProfile};
use crate::sim::utility_order;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Proposer {
    Agents,
    Arms,
}

/// Gale-Shapley with agent quotas. Agents rank arms by latent utility and
/// find every arm acceptable; arms find only the agents they rank
/// acceptable. Proposals are processed in ascending index order.
pub fn deferred_acceptance(market: &Market, prefs: &PreferenceProfile, proposer: Proposer) -> Result<MatchOutcome> {
    let (m, n) = (market.agents(), market.arms());
    let mut assignment: Vec<Option<usize>> = alloc::vec![None; n];
    match proposer {
        Proposer::Agents => {
            let lists: Vec<Vec<usize>> = (0..m).map(|i| utility_order(market.attrs(), i)).collect();
            let mut next = alloc::vec![0usize; m];
            let mut held = alloc::vec![0usize; m];
            let mut queue: VecDeque<usize> = (0..m).collect();
            while let Some(i) = queue.pop_front() {
                while held[i] < market.quota(i) as usize && next[i] < n {
                    let j = lists[i][next[i]];
                    next[i] += 1;
                    if !prefs.prefers_to(j, i, assignment[j]) {
                        continue;
                    }
                    if let Some(rival) = assignment[j].replace(i) {
                        held[rival] -= 1;
                        queue.push_back(rival);
                    }
                    held[i] += 1;
                }
            }
        }
        Proposer::Arms => {
            let mut next = alloc::vec![0usize; n];
            let mut holding: Vec<Vec<usize>> = alloc::vec![Vec::new(); m];
            let mut queue: VecDeque<usize> = (0..n).collect();
            while let Some(j) = queue.pop_front() {
                let order = prefs.order(j);
                while assignment[j].is_none() && next[j] < order.len() {
                    let i = order[next[j]];
                    next[j] += 1;
                    let q = market.quota(i) as usize;
                    if holding[i].len() < q {
                        holding[i].push(j);
                        assignment[j] = Some(i);
                        continue;
                    }
                    let worst = (0..holding[i].len())
                        .min_by(|&a, &b| {
                            let (ja, jb) = (holding[i][a], holding[i][b]);
                            if agent_prefers(market, i, ja, jb) {
                                core::cmp::Ordering::Greater
                            } else {
                                core::cmp::Ordering::Less
                            }
                        })
                        .expect("quota is positive");
                    let dropped = holding[i][worst];
                    if agent_prefers(market, i, j, dropped) {
                        holding[i][worst] = j;
                        assignment[j] = Some(i);
                        assignment[dropped] = None;
                        queue.push_back(dropped);
                    }
                }
            }
        }
    }
    let mut pulls: Vec<Vec<usize>> = alloc::vec![Vec::new(); m];
    for (j, a) in assignment.iter().enumerate() {
        if let Some(i) = a {
            pulls[*i].push(j);
        }
    }
    MatchOutcome::from_assignment(market, pulls, assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatticeClass {
    pub agent_optimal: bool,
    pub arm_optimal: bool,
    pub stable_classical: bool,
}

/// Places an outcome relative to the two extremes of the stable lattice.
pub fn classify_lattice(outcome: &MatchOutcome, market: &Market, prefs: &PreferenceProfile) -> Result<LatticeClass> {
    let by_agents = deferred_acceptance(market, prefs, Proposer::Agents)?;
    let by_arms = deferred_acceptance(market, prefs, Proposer::Arms)?;
    Ok(LatticeClass {
        agent_optimal: outcome.assignment == by_agents.assignment,
        arm_optimal: outcome.assignment == by_arms.assignment,
        stable_classical: check_stability(outcome, market, prefs, None).stable,
    })
}

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::market::{Market, MatchOutcome, PreferenceProfile};

/// Single-stage decentralized matching: every arm accepts the agent it
/// ranks highest among those that pulled it.
pub fn realize_matching(
    market: &Market,
    prefs: &PreferenceProfile,
    mut pulls: Vec<Vec<usize>>,
) -> Result<MatchOutcome> {
    let n = market.arms();
    if prefs.arms() != n || prefs.agents() != market.agents() {
        return Err(Error::Shape(alloc::format!(
            "preferences cover {} arms and {} agents, market has {n} and {}",
            prefs.arms(),
            prefs.agents(),
            market.agents()
        )));
    }
    let mut pullers: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    for (i, set) in pulls.iter_mut().enumerate() {
        set.sort_unstable();
        set.dedup();
        for &j in set.iter() {
            if j >= n {
                return Err(Error::ArmOutOfRange(j));
            }
            pullers[j].push(i);
        }
    }
    let assignment = (0..n)
        .map(|j| prefs.best_among(j, pullers[j].iter().copied()))
        .collect();
    MatchOutcome::from_assignment(market, pulls, assignment)
}

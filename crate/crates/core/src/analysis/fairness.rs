use alloc::vec::Vec;

use crate::market::{Market, MatchOutcome, PreferenceProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvyTriple {
    /// The envious arm.
    pub arm: usize,
    /// Agent the arm prefers to its own match.
    pub agent: usize,
    /// Lower-utility arm the agent was matched with instead.
    pub displacing_arm: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FairnessReport {
    pub fair: bool,
    pub envy_triples: Vec<EnvyTriple>,
}

/// Arm `j` has justified envy toward `j'` when it prefers agent `i'` to its
/// own match while `i'` holds `j'` of lower latent utility than `j`.
pub fn check_fairness(outcome: &MatchOutcome, market: &Market, prefs: &PreferenceProfile) -> FairnessReport {
    let mut envy_triples = Vec::new();
    for j in 0..market.arms() {
        for i in 0..market.agents() {
            if !prefs.prefers_to(j, i, outcome.assignment[j]) || outcome.assignment[j] == Some(i) {
                continue;
            }
            let u = market.utility(i, j);
            for &k in &outcome.accepted[i] {
                if market.utility(i, k) < u {
                    envy_triples.push(EnvyTriple {
                        arm: j,
                        agent: i,
                        displacing_arm: k,
                    });
                }
            }
        }
    }
    FairnessReport {
        fair: envy_triples.is_empty(),
        envy_triples,
    }
}

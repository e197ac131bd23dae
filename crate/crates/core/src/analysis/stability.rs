use alloc::vec::Vec;

use crate::acceptance::AcceptanceFn;
use crate::error::{Error, Result};
use crate::market::{Market, MatchOutcome, PreferenceProfile};
use crate::strategy::{individually_rational, PullPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockReason {
    /// The agent would drop one of its matched arms for this one.
    PrefersToMatched,
    /// The agent has room left and the arm is acceptable.
    UnfilledQuota,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockingPair {
    pub agent: usize,
    pub arm: usize,
    pub reason: BlockReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityReport {
    pub stable: bool,
    pub blocking_pairs: Vec<BlockingPair>,
    /// `(agent, arm)` pairs that would block but fail individual rationality.
    pub ir_filtered: Vec<(usize, usize)>,
}

/// What each agent expected from its own strategy: the acceptance mass of
/// its pull set and the acceptance probability of every arm, both at its
/// calibrated state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IrFilter {
    pub expected_accepts: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

impl IrFilter {
    pub fn from_plans<A: AcceptanceFn>(market: &Market, plans: &[PullPlan], views: &[A]) -> Result<Self> {
        if plans.len() != market.agents() || views.len() != market.agents() {
            return Err(Error::Shape(alloc::format!(
                "{} plans and {} surfaces for {} agents",
                plans.len(),
                views.len(),
                market.agents()
            )));
        }
        let scores = market.attrs().scores();
        let probs: Vec<Vec<f64>> = plans
            .iter()
            .zip(views)
            .map(|(p, v)| v.probs_at(p.s_cal, scores))
            .collect();
        let expected_accepts = plans
            .iter()
            .zip(&probs)
            .map(|(p, pr)| p.pull_set.iter().map(|&j| pr[j]).sum())
            .collect();
        Ok(Self {
            expected_accepts,
            probs,
        })
    }
}

/// Strict preference of `agent` for arm `a` over arm `b`: higher latent
/// utility, lower index on ties.
pub fn agent_prefers(market: &Market, agent: usize, a: usize, b: usize) -> bool {
    let (ua, ub) = (market.utility(agent, a), market.utility(agent, b));
    ua > ub || (ua == ub && a < b)
}

/// Enumerates blocking pairs. Without `filter` this is the classical
/// check; with it, pairs that rely on unfilled quota must also pass
/// individual rationality.
pub fn check_stability(
    outcome: &MatchOutcome,
    market: &Market,
    prefs: &PreferenceProfile,
    filter: Option<&IrFilter>,
) -> StabilityReport {
    let mut blocking_pairs = Vec::new();
    let mut ir_filtered = Vec::new();
    for i in 0..market.agents() {
        let matched = &outcome.accepted[i];
        let room = matched.len() < market.quota(i) as usize;
        for j in 0..market.arms() {
            let current = outcome.assignment[j];
            if current == Some(i) || !prefs.prefers_to(j, i, current) {
                continue;
            }
            if matched.iter().any(|&k| agent_prefers(market, i, j, k)) {
                blocking_pairs.push(BlockingPair {
                    agent: i,
                    arm: j,
                    reason: BlockReason::PrefersToMatched,
                });
            } else if room {
                let passes = filter.is_none_or(|f| {
                    individually_rational(
                        market.utility(i, j),
                        f.probs[i][j],
                        f.expected_accepts[i],
                        market.quota(i),
                        market.penalty(i),
                    )
                });
                if passes {
                    blocking_pairs.push(BlockingPair {
                        agent: i,
                        arm: j,
                        reason: BlockReason::UnfilledQuota,
                    });
                } else {
                    ir_filtered.push((i, j));
                }
            }
        }
    }
    StabilityReport {
        stable: blocking_pairs.is_empty(),
        blocking_pairs,
        ir_filtered,
    }
}

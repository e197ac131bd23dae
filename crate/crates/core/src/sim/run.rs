use alloc::vec::Vec;

use super::matching::realize_matching;
use super::scenario::{Period, ScenarioSpec};
use crate::acceptance::AcceptanceFn;
use crate::error::{Error, Result};
use crate::learner::StateModel;
use crate::market::MatchOutcome;
use crate::strategy::{plan, CalibrationResult, PullPlan, Strategy};

/// A test market together with everything needed to audit it.
#[derive(Debug, Clone)]
pub struct MarketRun {
    pub period: Period,
    pub plans: Vec<PullPlan>,
    pub calibrations: Vec<Option<CalibrationResult>>,
    pub outcome: MatchOutcome,
}

/// Draws test market `replication`, lets every agent pull according to its
/// strategy and realizes the matching.
///
/// `views[i]` is agent `i`'s acceptance surface and `state_models[i]` its
/// belief about its state.
pub fn run_market<A: AcceptanceFn>(
    spec: &ScenarioSpec,
    strategies: &[Strategy],
    views: &[A],
    state_models: &[StateModel],
    seed: u64,
    replication: u64,
) -> Result<MarketRun> {
    let m = spec.agents();
    if strategies.len() != m || views.len() != m || state_models.len() != m {
        return Err(Error::Shape(alloc::format!(
            "{m} agents but {} strategies, {} surfaces and {} state models",
            strategies.len(),
            views.len(),
            state_models.len()
        )));
    }
    let period = spec.draw_test(seed, replication)?;
    let mut plans = Vec::with_capacity(m);
    let mut calibrations = Vec::with_capacity(m);
    for i in 0..m {
        let (p, cal) = plan(&period.market, i, strategies[i], &views[i], &state_models[i])?;
        plans.push(p);
        calibrations.push(cal);
    }
    let pulls = plans.iter().map(|p| p.pull_set.clone()).collect();
    let outcome = realize_matching(&period.market, &period.prefs, pulls)?;
    Ok(MarketRun {
        period,
        plans,
        calibrations,
        outcome,
    })
}

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::calibrate::{
    expectation_calibrate, expectation_result, maximin_calibrate, mean_calibrate, AgentProblem, CalibrationMode,
    CalibrationResult,
};
use super::cutoff::{greedy_action, simple_cutoff};
use super::oracle::oracle_set;
use crate::acceptance::AcceptanceFn;
use crate::error::{invalid, Error, Result};
use crate::learner::StateModel;
use crate::market::Market;

/// Per-agent output of a strategy.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PullPlan {
    pub agent: usize,
    pub s_cal: f64,
    /// Utility cutoff, for cutoff-type strategies.
    pub b_hat: Option<f64>,
    pub pull_set: Vec<usize>,
    /// Expected acceptances of `pull_set` at `s_cal`.
    pub expected_acceptances: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    CdmMean,
    CdmMaximin,
    SimpleCutoff,
    Greedy,
    Expectation,
    Oracle,
    PullAll,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::CdmMean,
        Strategy::CdmMaximin,
        Strategy::SimpleCutoff,
        Strategy::Greedy,
        Strategy::Expectation,
        Strategy::Oracle,
        Strategy::PullAll,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::CdmMean => "cdm-mean",
            Strategy::CdmMaximin => "cdm-maximin",
            Strategy::SimpleCutoff => "simple-cutoff",
            Strategy::Greedy => "greedy",
            Strategy::Expectation => "expectation",
            Strategy::Oracle => "oracle",
            Strategy::PullAll => "all",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.tag() == s)
            .ok_or_else(|| invalid!("unknown strategy tag {s:?}"))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.tag())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let tag = <alloc::string::String as serde::Deserialize>::deserialize(deserializer)?;
        tag.parse().map_err(serde::de::Error::custom)
    }
}

/// Pull plan of `agent` under `strategy`, with the calibration that produced
/// it when there is one.
///
/// `acceptance` is the agent's view of its acceptance surface. Greedy and
/// the plain cutoff evaluate it at the mean state.
pub fn plan<A: AcceptanceFn + ?Sized>(
    market: &Market,
    agent: usize,
    strategy: Strategy,
    acceptance: &A,
    state_model: &StateModel,
) -> Result<(PullPlan, Option<CalibrationResult>)> {
    let problem = AgentProblem::new(market, agent, acceptance)?;
    let finish = |s_cal: f64, b_hat: Option<f64>, pull_set: Vec<usize>| {
        let probs = problem.probs(s_cal);
        let expected_acceptances = pull_set.iter().map(|&j| probs[j]).sum();
        PullPlan {
            agent,
            s_cal,
            b_hat,
            pull_set,
            expected_acceptances,
        }
    };
    let calibrated = |cal: CalibrationResult| {
        let cut = problem.cutoff_at(cal.s_cal);
        let plan = PullPlan {
            agent,
            s_cal: cal.s_cal,
            b_hat: Some(cut.b_hat),
            pull_set: cut.pull_set,
            expected_acceptances: cut.expected_acceptances,
        };
        (plan, Some(cal))
    };
    Ok(match strategy {
        Strategy::CdmMean => calibrated(mean_calibrate(&problem, state_model)),
        Strategy::CdmMaximin => calibrated(maximin_calibrate(&problem, state_model)),
        Strategy::Expectation => calibrated(expectation_result(&problem, state_model)),
        Strategy::SimpleCutoff => {
            let s = expectation_calibrate(state_model);
            (finish(s, None, simple_cutoff(&problem.utils, problem.quota)), None)
        }
        Strategy::Greedy => {
            let s = expectation_calibrate(state_model);
            let probs = problem.probs(s);
            let set = greedy_action(&problem.utils, &probs, problem.quota, problem.penalty);
            (finish(s, None, set), None)
        }
        Strategy::Oracle => {
            let s = expectation_calibrate(state_model);
            (finish(s, None, oracle_set(&problem, state_model).pull_set), None)
        }
        Strategy::PullAll => {
            let s = expectation_calibrate(state_model);
            (finish(s, Some(0.0), (0..market.arms()).collect()), None)
        }
    })
}

/// Calibrated decentralized matching: every agent calibrates its state
/// and pulls its cutoff set.
pub fn cdm<A: AcceptanceFn>(
    market: &Market,
    acceptance: &[A],
    state_models: &[StateModel],
    mode: CalibrationMode,
) -> Result<Vec<PullPlan>> {
    let m = market.agents();
    if acceptance.len() != m || state_models.len() != m {
        return Err(Error::Shape(alloc::format!(
            "{m} agents but {} acceptance surfaces and {} state models",
            acceptance.len(),
            state_models.len()
        )));
    }
    let strategy = match mode {
        CalibrationMode::Mean => Strategy::CdmMean,
        CalibrationMode::Maximin => Strategy::CdmMaximin,
        CalibrationMode::Expectation => Strategy::Expectation,
    };
    (0..m)
        .map(|i| plan(market, i, strategy, &acceptance[i], &state_models[i]).map(|p| p.0))
        .collect()
}

//! Pull-set strategies: the calibrated cutoff rule and the baselines it is
//! compared against.

mod calibrate;
mod cdm;
mod cutoff;
mod oracle;

pub use calibrate::{
    average_payoff, expectation_calibrate, expectation_result, maximin_calibrate, mean_calibrate, worst_payoff,
    AgentProblem, CalibrationMode, CalibrationResult, BISECTION_TOL,
};
pub use cdm::{cdm, plan, PullPlan, Strategy};
pub use cutoff::{
    cutoff_strategy, expected_acceptance_curve, greedy_action, individually_rational, simple_cutoff, CutoffBranch,
    CutoffResult, QUOTA_TOL,
};
pub use oracle::{oracle_set, OracleResult, MAX_ROUNDS};

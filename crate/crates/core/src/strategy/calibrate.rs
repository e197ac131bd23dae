use alloc::vec::Vec;

use super::cutoff::{cutoff_strategy, CutoffResult};
use crate::acceptance::AcceptanceFn;
use crate::error::{Error, Result};
use crate::learner::{grid_point, StateModel, GRID_STEPS};
use crate::market::{payoff_from_parts, Market};

/// Bisection tolerance of the maximin calibration.
pub const BISECTION_TOL: f64 = 1e-4;

/// One agent's decision problem: utilities, quota, penalty and its view of
/// the acceptance surface.
pub struct AgentProblem<'a, A: AcceptanceFn + ?Sized> {
    pub utils: Vec<f64>,
    pub scores: Vec<f64>,
    pub quota: u32,
    pub penalty: f64,
    pub acceptance: &'a A,
}

impl<'a, A: AcceptanceFn + ?Sized> AgentProblem<'a, A> {
    pub fn new(market: &Market, agent: usize, acceptance: &'a A) -> Result<Self> {
        if agent >= market.agents() {
            return Err(Error::AgentOutOfRange(agent));
        }
        Ok(Self {
            utils: market.attrs().utilities(agent),
            scores: market.attrs().scores().to_vec(),
            quota: market.quota(agent),
            penalty: market.penalty(agent),
            acceptance,
        })
    }

    pub fn probs(&self, s: f64) -> Vec<f64> {
        self.acceptance.probs_at(s, &self.scores)
    }

    pub fn cutoff_with(&self, probs: &[f64]) -> CutoffResult {
        cutoff_strategy(&self.utils, probs, self.quota, self.penalty)
    }

    pub fn cutoff_at(&self, s: f64) -> CutoffResult {
        self.cutoff_with(&self.probs(s))
    }

    /// Expected payoff of pulling `set` when arms accept with `probs`.
    pub fn payoff(&self, set: &[usize], probs: &[f64]) -> f64 {
        payoff_from_parts(set.iter().map(|&j| (self.utils[j], probs[j])), self.quota, self.penalty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CalibrationMode {
    Mean,
    Maximin,
    Expectation,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationResult {
    pub s_cal: f64,
    pub mode: CalibrationMode,
    /// Value of the defining equation at `s_cal`: the balance of marginal
    /// utility against marginal penalty (mean, continuous), the payoff
    /// change of one grid step down (discrete support), or the gap between
    /// the two extreme-state payoffs (maximin, continuous).
    pub residual: f64,
    /// Average-case or worst-case expected payoff of the selected set.
    pub objective: f64,
    /// `(s, value)` pairs visited by the search.
    pub trace: Vec<(f64, f64)>,
    /// The search found no root and fell back to the better boundary.
    pub fallback: bool,
}

/// Arm-acceptance probabilities at each atom of the state model.
struct Atoms {
    states: Vec<f64>,
    weights: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

impl Atoms {
    fn new<A: AcceptanceFn + ?Sized>(problem: &AgentProblem<'_, A>, model: &StateModel) -> Self {
        let (states, weights): (Vec<f64>, Vec<f64>) = model.atoms().into_iter().unzip();
        let probs = states.iter().map(|&s| problem.probs(s)).collect();
        Self { states, weights, probs }
    }

    fn average<A: AcceptanceFn + ?Sized>(&self, problem: &AgentProblem<'_, A>, set: &[usize]) -> f64 {
        self.weights
            .iter()
            .zip(&self.probs)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, p)| w * problem.payoff(set, p))
            .sum()
    }

    fn worst<A: AcceptanceFn + ?Sized>(&self, problem: &AgentProblem<'_, A>, set: &[usize]) -> f64 {
        self.weights
            .iter()
            .zip(&self.probs)
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, p)| problem.payoff(set, p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Candidate states for the discrete-support searches: the grid plus the
/// support points, ordered from `anchor` downwards and then upwards.
fn scan_order(support: &[f64], anchor: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=GRID_STEPS)
        .map(grid_point)
        .chain(support.iter().copied())
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let split = pts.partition_point(|&s| s <= anchor);
    let mut order: Vec<f64> = pts[..split].iter().rev().copied().collect();
    order.extend_from_slice(&pts[split..]);
    order
}

/// Exhaustive search over candidate states, maximizing `objective` of the
/// induced pull set. Ties keep the earlier candidate in scan order.
fn scan_argmax<A: AcceptanceFn + ?Sized>(
    problem: &AgentProblem<'_, A>,
    model: &StateModel,
    mode: CalibrationMode,
    objective: impl Fn(&[usize]) -> f64,
) -> CalibrationResult {
    let support: Vec<f64> = model.atoms().into_iter().map(|a| a.0).collect();
    let anchor = model.bounds().1;
    let mut best: Option<(f64, f64)> = None;
    let mut trace = Vec::new();
    let mut last_set: Option<Vec<usize>> = None;
    let mut last_value = 0.0;
    for s in scan_order(&support, anchor) {
        let set = problem.cutoff_at(s).pull_set;
        let value = if last_set.as_ref() == Some(&set) {
            last_value
        } else {
            let v = objective(&set);
            last_set = Some(set);
            last_value = v;
            v
        };
        trace.push((s, value));
        match best {
            Some((_, b)) if value <= b + 1e-12 * (1.0 + b.abs()) => {}
            _ => best = Some((s, value)),
        }
    }
    let (s_cal, value) = best.expect("scan visits at least one state");
    let below = (s_cal - 1.0 / GRID_STEPS as f64).max(0.0);
    let residual = objective(&problem.cutoff_at(below).pull_set) - value;
    CalibrationResult {
        s_cal,
        mode,
        residual,
        objective: value,
        trace,
        fallback: false,
    }
}

/// Mean calibration: maximizes the average-case expected payoff of the
/// cutoff set over the state distribution.
///
/// For a continuous model the calibrated state is the largest grid point in
/// `(0, 1)` where the marginal utility of the arms added by lowering the
/// state, `E[sum_{j in dB} u_j pi_j(s*)]`, no longer covers their marginal
/// penalty `gamma E[sum_{j in dB} pi_j(s*); s* > s]`. For a discrete model
/// the average payoff is evaluated exactly on the grid and at the support
/// points, scanning down from the largest support point.
pub fn mean_calibrate<A: AcceptanceFn + ?Sized>(
    problem: &AgentProblem<'_, A>,
    model: &StateModel,
) -> CalibrationResult {
    let atoms = Atoms::new(problem, model);
    if model.is_discrete() {
        return scan_argmax(problem, model, CalibrationMode::Mean, |set| atoms.average(problem, set));
    }
    // Continuous atoms are the grid nodes themselves.
    let sets: Vec<CutoffResult> = atoms.probs.iter().map(|p| problem.cutoff_with(p)).collect();
    let mut trace = Vec::new();
    for k in (1..GRID_STEPS).rev() {
        let marginal: Vec<usize> = sets[k - 1]
            .pull_set
            .iter()
            .copied()
            .filter(|&j| !sets[k].contains(j))
            .collect();
        if marginal.is_empty() {
            continue;
        }
        let s = atoms.states[k];
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for (a, p) in atoms.probs.iter().enumerate() {
            let w = atoms.weights[a];
            let mass: f64 = marginal.iter().map(|&j| p[j]).sum();
            lhs += w * marginal.iter().map(|&j| problem.utils[j] * p[j]).sum::<f64>();
            if atoms.states[a] > s {
                rhs += w * mass;
            }
        }
        let residual = lhs - problem.penalty * rhs;
        trace.push((s, residual));
        if residual < 0.0 {
            return CalibrationResult {
                s_cal: s,
                mode: CalibrationMode::Mean,
                residual,
                objective: atoms.average(problem, &sets[k].pull_set),
                trace,
                fallback: false,
            };
        }
    }
    let lo = atoms.average(problem, &sets[1].pull_set);
    let hi = atoms.average(problem, &sets[GRID_STEPS - 1].pull_set);
    let (s_cal, objective) = if lo > hi {
        (grid_point(1), lo)
    } else {
        (grid_point(GRID_STEPS - 1), hi)
    };
    log::debug!("mean calibration found no sign change; using s = {s_cal}");
    CalibrationResult {
        s_cal,
        mode: CalibrationMode::Mean,
        residual: trace.last().map_or(0.0, |t| t.1),
        objective,
        trace,
        fallback: true,
    }
}

/// Maximin calibration: maximizes the worst-case expected payoff over the
/// state distribution.
///
/// For a continuous model the worst case sits at `s* = 0` (unfilled quota)
/// or `s* = 1` (over-enrollment); the calibrated state equalizes the two
/// by bisection. A discrete model is searched exactly as in
/// [`mean_calibrate`].
pub fn maximin_calibrate<A: AcceptanceFn + ?Sized>(
    problem: &AgentProblem<'_, A>,
    model: &StateModel,
) -> CalibrationResult {
    if model.is_discrete() {
        let atoms = Atoms::new(problem, model);
        return scan_argmax(problem, model, CalibrationMode::Maximin, |set| {
            atoms.worst(problem, set)
        });
    }
    let (bot, top) = model.bounds();
    let p_bot = problem.probs(bot);
    let p_top = problem.probs(top);
    let eval = |s: f64| {
        let set = problem.cutoff_at(s).pull_set;
        let under = problem.payoff(&set, &p_bot);
        let over = problem.payoff(&set, &p_top);
        (over - under, under.min(over))
    };
    let mut trace = Vec::new();
    let (d_bot, w_bot) = eval(bot);
    trace.push((bot, d_bot));
    let result = |s_cal, residual, objective, trace| CalibrationResult {
        s_cal,
        mode: CalibrationMode::Maximin,
        residual,
        objective,
        trace,
        fallback: false,
    };
    if d_bot >= 0.0 {
        return result(bot, d_bot, w_bot, trace);
    }
    let (d_top, w_top) = eval(top);
    trace.push((top, d_top));
    if d_top < 0.0 {
        return result(top, d_top, w_top, trace);
    }
    let (mut lo, mut hi) = (bot, top);
    let (mut lo_val, mut hi_val) = ((d_bot, w_bot), (d_top, w_top));
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let val = eval(mid);
        trace.push((mid, val.0));
        if val.0 < 0.0 {
            lo = mid;
            lo_val = val;
        } else {
            hi = mid;
            hi_val = val;
        }
    }
    if lo_val.1 > hi_val.1 {
        result(lo, lo_val.0, lo_val.1, trace)
    } else {
        result(hi, hi_val.0, hi_val.1, trace)
    }
}

/// Naive calibration at the mean of the state distribution.
pub fn expectation_calibrate(model: &StateModel) -> f64 {
    model.mean()
}

/// [`expectation_calibrate`] packaged like the other calibrations.
pub fn expectation_result<A: AcceptanceFn + ?Sized>(
    problem: &AgentProblem<'_, A>,
    model: &StateModel,
) -> CalibrationResult {
    let s_cal = expectation_calibrate(model).clamp(0.0, 1.0);
    let atoms = Atoms::new(problem, model);
    let set = problem.cutoff_at(s_cal).pull_set;
    CalibrationResult {
        s_cal,
        mode: CalibrationMode::Expectation,
        residual: 0.0,
        objective: atoms.average(problem, &set),
        trace: Vec::new(),
        fallback: false,
    }
}

/// Average-case expected payoff of `set` under `model`.
pub fn average_payoff<A: AcceptanceFn + ?Sized>(
    problem: &AgentProblem<'_, A>,
    model: &StateModel,
    set: &[usize],
) -> f64 {
    Atoms::new(problem, model).average(problem, set)
}

/// Worst-case expected payoff of `set` over the atoms of `model`.
pub fn worst_payoff<A: AcceptanceFn + ?Sized>(problem: &AgentProblem<'_, A>, model: &StateModel, set: &[usize]) -> f64 {
    Atoms::new(problem, model).worst(problem, set)
}

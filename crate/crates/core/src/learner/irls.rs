use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::features::FeatureMap;
use crate::acceptance::AcceptanceFn;
use crate::error::{invalid, Error, Result};
use crate::linalg::solve_spd;
use crate::rng::rng_from;

pub const PROB_CLAMP: f64 = 1e-12;
const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

/// One pull of arm `j` by agent `i` in period `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistoryRecord {
    pub t: u32,
    pub agent: usize,
    /// Agent's state in period `t`, revealed afterwards.
    pub s: f64,
    /// Score of the pulled arm.
    pub v: f64,
    /// Whether the arm accepted.
    pub y: bool,
}

impl HistoryRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.s) || !(0.0..=1.0).contains(&self.v) {
            return Err(invalid!(
                "record (t={}, i={}) has s={} v={}; both must lie in [0, 1]",
                self.t,
                self.agent,
                self.s,
                self.v
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Number of random features.
    pub p: usize,
    /// Candidate ridge weights; a single entry skips cross-validation.
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            p: 256,
            lambdas: log_grid(1e-4, 1.0, 5),
            folds: 5,
            seed: 0,
        }
    }
}

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (libm::log(lo), libm::log(hi));
    (0..count)
        .map(|k| libm::exp(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// `(lambda, mean held-out negative log-likelihood)` per grid value.
    pub cv_scores: Vec<(f64, f64)>,
    /// Objective at the start and after every accepted Newton step of the
    /// final fit.
    pub trace: Vec<f64>,
}

/// Kernel logistic regression in a random-feature span.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcceptanceModel {
    pub features: FeatureMap,
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub diagnostics: FitDiagnostics,
}

impl AcceptanceModel {
    /// Zero surface, `pi = 0.5` everywhere.
    pub fn zero(p: usize, seed: u64) -> Self {
        Self {
            features: FeatureMap::new(p, seed),
            theta: vec![0.0; p],
            lambda: f64::INFINITY,
            diagnostics: FitDiagnostics {
                iterations: 0,
                objective: 0.0,
                converged: true,
                cv_scores: Vec::new(),
                trace: Vec::new(),
            },
        }
    }

    pub fn log_odds(&self, s: f64, v: f64) -> f64 {
        dot(&self.features.eval(s, v), &self.theta)
    }

    pub fn predict(&self, s: f64, v: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&v) {
            return Err(invalid!("prediction inputs s={s}, v={v} must lie in [0, 1]"));
        }
        Ok(clamped_sigmoid(self.log_odds(s, v)))
    }

    /// Precomputes the score side of the features for a fixed arm set, so
    /// probabilities at many states cost `n p` multiplications each.
    pub fn bind(&self, scores: &[f64]) -> BoundModel<'_> {
        let p = self.features.dim();
        let mut weights = Vec::with_capacity(scores.len() * p);
        for &v in scores {
            let phi = self.features.score_part(v);
            weights.extend(phi.iter().zip(&self.theta).map(|(g, t)| g * t));
        }
        BoundModel {
            model: self,
            scores: scores.to_vec(),
            weights,
        }
    }
}

impl AcceptanceFn for AcceptanceModel {
    fn prob(&self, s: f64, _arm: usize, score: f64) -> f64 {
        clamped_sigmoid(self.log_odds(s, score))
    }
}

/// An [`AcceptanceModel`] specialized to one arm set.
#[derive(Debug, Clone)]
pub struct BoundModel<'a> {
    model: &'a AcceptanceModel,
    scores: Vec<f64>,
    weights: Vec<f64>,
}

impl AcceptanceFn for BoundModel<'_> {
    fn prob(&self, s: f64, arm: usize, score: f64) -> f64 {
        if self.scores.get(arm) == Some(&score) {
            let p = self.model.features.dim();
            let phi = self.model.features.state_part(s);
            clamped_sigmoid(dot(&phi, &self.weights[arm * p..(arm + 1) * p]))
        } else {
            self.model.prob(s, arm, score)
        }
    }

    fn probs_at(&self, s: f64, scores: &[f64]) -> Vec<f64> {
        if scores != self.scores.as_slice() {
            return self.model.probs_at(s, scores);
        }
        let p = self.model.features.dim();
        let phi = self.model.features.state_part(s);
        self.weights
            .chunks_exact(p)
            .map(|w| clamped_sigmoid(dot(&phi, w)))
            .collect()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + libm::exp(-f))
    } else {
        let e = libm::exp(f);
        e / (1.0 + e)
    }
}

pub fn clamped_sigmoid(f: f64) -> f64 {
    sigmoid(f).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `log(1 + e^f)` without overflow.
pub fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + libm::log1p(libm::exp(-f))
    } else {
        libm::log1p(libm::exp(f))
    }
}

/// Design matrix (row-major, one row per record) and labels.
struct Design {
    rows: usize,
    p: usize,
    phi: Vec<f64>,
    y: Vec<f64>,
}

impl Design {
    fn new(features: &FeatureMap, records: &[HistoryRecord]) -> Self {
        let p = features.dim();
        let mut phi = vec![0.0; records.len() * p];
        for (r, rec) in records.iter().enumerate() {
            features.eval_into(rec.s, rec.v, &mut phi[r * p..(r + 1) * p]);
        }
        Self {
            rows: records.len(),
            p,
            phi,
            y: records.iter().map(|r| if r.y { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let p = self.p;
        let mut phi = Vec::with_capacity(idx.len() * p);
        for &r in idx {
            phi.extend_from_slice(self.row(r));
        }
        Self {
            rows: idx.len(),
            p,
            phi,
            y: idx.iter().map(|&r| self.y[r]).collect(),
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.phi[r * self.p..(r + 1) * self.p]
    }

    fn log_odds(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), theta)).collect()
    }

    fn nll(&self, theta: &[f64]) -> f64 {
        self.log_odds(theta)
            .iter()
            .zip(&self.y)
            .map(|(&f, &y)| softplus(f) - y * f)
            .sum()
    }
}

/// Penalized negative log-likelihood
/// `sum_r [softplus(f_r) - y_r f_r] + N lambda |theta|^2 / 2`.
fn objective(design: &Design, theta: &[f64], lambda: f64) -> f64 {
    design.nll(theta) + 0.5 * design.rows as f64 * lambda * dot(theta, theta)
}

struct Solution {
    theta: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Damped Newton (IRLS) iterations from `start`.
fn newton(design: &Design, lambda: f64, start: Vec<f64>) -> Result<Solution> {
    let (n, p) = (design.rows, design.p);
    let ridge = n as f64 * lambda;
    let mut theta = start;
    let mut obj = objective(design, &theta, lambda);
    let mut trace = vec![obj];
    let mut hess = vec![0.0; p * p];
    let mut grad = vec![0.0; p];
    for iter in 1..=MAX_ITER {
        hess.iter_mut().for_each(|h| *h = 0.0);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let f = design.log_odds(&theta);
        for (r, &fr) in f.iter().enumerate() {
            let pi = sigmoid(fr);
            let w = pi * (1.0 - pi);
            let resid = pi - design.y[r];
            let row = design.row(r);
            for a in 0..p {
                grad[a] += resid * row[a];
                let wa = w * row[a];
                if wa != 0.0 {
                    let h = &mut hess[a * p..a * p + a + 1];
                    for (b, hb) in h.iter_mut().enumerate() {
                        *hb += wa * row[b];
                    }
                }
            }
        }
        for a in 0..p {
            grad[a] += ridge * theta[a];
            hess[a * p + a] += ridge;
            for b in 0..a {
                hess[b * p + a] = hess[a * p + b];
            }
        }
        let step = solve_spd(&hess, p, &grad)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t - scale * d).collect();
            let cand_obj = objective(design, &cand, lambda);
            if cand_obj <= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, cand_obj)) = accepted else {
            return Ok(Solution {
                theta,
                objective: obj,
                iterations: iter,
                converged: true,
                trace,
            });
        };
        let change = obj - cand_obj;
        theta = cand;
        obj = cand_obj;
        trace.push(obj);
        if change < TOL {
            return Ok(Solution {
                theta,
                objective: obj,
                iterations: iter,
                converged: true,
                trace,
            });
        }
    }
    log::warn!("IRLS stopped after {MAX_ITER} iterations without converging");
    Ok(Solution {
        theta,
        objective: obj,
        iterations: MAX_ITER,
        converged: false,
        trace,
    })
}

/// Fits the acceptance surface of one agent.
///
/// With several candidate `lambdas` the ridge weight is picked by k-fold
/// cross-validation on held-out negative log-likelihood; ties go to the
/// larger weight.
pub fn fit(records: &[HistoryRecord], config: &FitConfig) -> Result<AcceptanceModel> {
    if records.is_empty() {
        return Err(Error::Empty("history"));
    }
    if config.p == 0 {
        return Err(invalid!("feature count must be positive"));
    }
    if config.lambdas.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    if let Some(l) = config.lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(invalid!("ridge weight {l} must be finite and >= 0"));
    }
    for r in records {
        r.validate()?;
    }
    let features = FeatureMap::new(config.p, config.seed);
    let design = Design::new(&features, records);

    let mut lambdas = config.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let folds = config.folds.min(records.len());
    let mut cv_scores = Vec::new();
    let lambda = if lambdas.len() == 1 || folds < 2 {
        lambdas[0]
    } else {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng_from(config.seed, &[0xcf01d5]));
        let mut totals = vec![0.0; lambdas.len()];
        for k in 0..folds {
            let (test, train): (Vec<usize>, Vec<usize>) =
                order
                    .iter()
                    .enumerate()
                    .fold((Vec::new(), Vec::new()), |(mut te, mut tr), (pos, &r)| {
                        if pos % folds == k {
                            te.push(r)
                        } else {
                            tr.push(r)
                        }
                        (te, tr)
                    });
            let train_d = design.subset(&train);
            let test_d = design.subset(&test);
            let mut warm = vec![0.0; config.p];
            for (li, &lambda) in lambdas.iter().enumerate() {
                let sol = newton(&train_d, lambda, warm)?;
                totals[li] += test_d.nll(&sol.theta);
                warm = sol.theta;
            }
        }
        let n = records.len() as f64;
        cv_scores = lambdas.iter().zip(&totals).map(|(&l, &t)| (l, t / n)).collect();
        let mut best = 0;
        for li in 1..lambdas.len() {
            if totals[li] < totals[best] {
                best = li;
            }
        }
        lambdas[best]
    };
    let sol = newton(&design, lambda, vec![0.0; config.p])?;
    Ok(AcceptanceModel {
        features,
        theta: sol.theta,
        lambda,
        diagnostics: FitDiagnostics {
            iterations: sol.iterations,
            objective: sol.objective,
            converged: sol.converged,
            cv_scores,
            trace: sol.trace,
        },
    })
}

/// Value of the fitting objective at `theta`, for external checks.
pub fn penalized_objective(features: &FeatureMap, records: &[HistoryRecord], theta: &[f64], lambda: f64) -> f64 {
    objective(&Design::new(features, records), theta, lambda)
}

/// Fraction of grid pairs `(s, s')`, `s < s'`, on which the fitted
/// probability does not decrease in `s`, over a grid of scores.
pub fn monotonicity_in_state(model: &AcceptanceModel, grid: usize) -> f64 {
    let pts: Vec<f64> = (0..grid).map(|k| k as f64 / (grid - 1).max(1) as f64).collect();
    let (mut ok, mut total) = (0usize, 0usize);
    for &v in &pts {
        let probs: Vec<f64> = pts.iter().map(|&s| model.prob(s, 0, v)).collect();
        for a in 0..grid {
            for b in a + 1..grid {
                total += 1;
                if probs[b] >= probs[a] {
                    ok += 1;
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, y: impl Fn(usize) -> bool) -> Vec<HistoryRecord> {
        (0..n)
            .map(|k| HistoryRecord {
                t: k as u32,
                agent: 0,
                s: (k % 7) as f64 / 6.0,
                v: (k % 5) as f64 / 4.0,
                y: y(k),
            })
            .collect()
    }

    #[test]
    fn all_positive_labels_push_probabilities_up() {
        let recs = records(40, |_| true);
        let cfg = FitConfig {
            p: 32,
            lambdas: vec![0.1],
            folds: 5,
            seed: 3,
        };
        let model = fit(&recs, &cfg).unwrap();
        assert!(model.diagnostics.converged);
        for r in &recs {
            assert!(model.predict(r.s, r.v).unwrap() > 0.5);
        }
    }

    #[test]
    fn prediction_edges() {
        let mut model = AcceptanceModel::zero(8, 1);
        assert_eq!(model.predict(0.2, 0.4).unwrap(), 0.5);
        assert!(model.predict(1.2, 0.4).is_err());
        model.theta = vec![1e6; 8];
        let p = model.prob(0.0, 0, 0.0);
        assert!(p < 1.0 && p > 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(fit(&[], &FitConfig::default()).unwrap_err(), Error::Empty("history"));
        let mut recs = records(3, |k| k == 0);
        recs[0].s = 2.0;
        assert!(fit(&recs, &FitConfig::default()).is_err());
    }

    #[test]
    fn bound_model_agrees() {
        let recs = records(60, |k| k % 3 != 0);
        let cfg = FitConfig {
            p: 24,
            lambdas: vec![0.01, 0.1],
            folds: 3,
            seed: 11,
        };
        let model = fit(&recs, &cfg).unwrap();
        assert_eq!(model.diagnostics.cv_scores.len(), 2);
        let scores = [0.1, 0.5, 0.9];
        let bound = model.bind(&scores);
        let fast = bound.probs_at(0.4, &scores);
        let slow = model.probs_at(0.4, &scores);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

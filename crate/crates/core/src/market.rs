//! Market primitives: attributes, configuration, arm preferences, outcomes
//! and the payoff arithmetic every strategy builds on.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Scores `v_j` shared by all agents and agent-specific fits `e_ij`.
///
/// Fits live in `[0, fit_cap]` with `fit_cap <= 1`. Scores must be finite
/// and nonnegative; they are usually in `[0, 1]` but hand-built fixtures
/// may use a wider range.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributeMatrix {
    scores: Vec<f64>,
    /// Row-major `agents x arms`.
    fits: Vec<f64>,
    agents: usize,
    fit_cap: f64,
}

impl AttributeMatrix {
    pub fn new(scores: Vec<f64>, fits: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_fit_cap(scores, fits, 1.0)
    }

    /// Like [`AttributeMatrix::new`] but restricts fits to `[0, fit_cap]`.
    pub fn with_fit_cap(scores: Vec<f64>, fits: Vec<Vec<f64>>, fit_cap: f64) -> Result<Self> {
        if !(fit_cap > 0.0 && fit_cap <= 1.0) {
            return Err(invalid!("fit cap {fit_cap} must lie in (0, 1]"));
        }
        let n = scores.len();
        if n == 0 {
            return Err(Error::Empty("score vector"));
        }
        if fits.is_empty() {
            return Err(Error::Empty("fit matrix"));
        }
        for (j, &v) in scores.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid!("score of arm {j} is {v}; scores must be finite and >= 0"));
            }
        }
        let agents = fits.len();
        let mut flat = Vec::with_capacity(agents * n);
        for (i, row) in fits.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(alloc::format!(
                    "fit row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &e) in row.iter().enumerate() {
                if !e.is_finite() || e < 0.0 || e > fit_cap {
                    return Err(invalid!("fit e[{i}][{j}] = {e} outside [0, {fit_cap}]"));
                }
            }
            flat.extend(row);
        }
        Ok(Self {
            scores,
            fits: flat,
            agents,
            fit_cap,
        })
    }

    /// Affinely maps raw scores and fits onto `[0, 1]` with one common scale,
    /// so every agent's ranking of arms by `v + e` is preserved.
    pub fn rescaled(scores: &[f64], fits: &[Vec<f64>]) -> Result<(Self, UnitRescale)> {
        let finite = |x: &f64| x.is_finite();
        if !scores.iter().all(finite) || !fits.iter().flatten().all(finite) {
            return Err(invalid!("raw attributes must be finite"));
        }
        let (v_lo, v_hi) = min_max(scores.iter().copied()).ok_or(Error::Empty("score vector"))?;
        let (e_lo, e_hi) = min_max(fits.iter().flatten().copied()).ok_or(Error::Empty("fit matrix"))?;
        let span = (v_hi - v_lo).max(e_hi - e_lo);
        let transform = UnitRescale {
            scale: if span > 0.0 { 1.0 / span } else { 1.0 },
            score_shift: v_lo,
            fit_shift: e_lo,
        };
        let scores = scores.iter().map(|&v| transform.score(v)).collect();
        let fits = fits
            .iter()
            .map(|row| row.iter().map(|&e| transform.fit(e)).collect())
            .collect();
        Ok((Self::new(scores, fits)?, transform))
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn arms(&self) -> usize {
        self.scores.len()
    }

    pub fn fit_cap(&self) -> f64 {
        self.fit_cap
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score(&self, arm: usize) -> f64 {
        self.scores[arm]
    }

    pub fn fit(&self, agent: usize, arm: usize) -> f64 {
        self.fits[agent * self.arms() + arm]
    }

    pub fn fit_row(&self, agent: usize) -> &[f64] {
        let n = self.arms();
        &self.fits[agent * n..(agent + 1) * n]
    }

    /// Latent utility `v_j + e_ij`, unchecked.
    #[inline]
    pub fn utility(&self, agent: usize, arm: usize) -> f64 {
        self.scores[arm] + self.fit(agent, arm)
    }

    /// Latent utilities of every arm for one agent.
    pub fn utilities(&self, agent: usize) -> Vec<f64> {
        (0..self.arms()).map(|j| self.utility(agent, j)).collect()
    }

    pub fn max_utility(&self, agent: usize) -> f64 {
        (0..self.arms())
            .map(|j| self.utility(agent, j))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checked latent utility.
    pub fn latent_utility(&self, agent: usize, arm: usize) -> Result<f64> {
        if agent >= self.agents {
            return Err(Error::AgentOutOfRange(agent));
        }
        if arm >= self.arms() {
            return Err(Error::ArmOutOfRange(arm));
        }
        Ok(self.utility(agent, arm))
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, x| match acc {
        None => Some((x, x)),
        Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
    })
}

/// Record of the affine map applied by [`AttributeMatrix::rescaled`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitRescale {
    pub scale: f64,
    pub score_shift: f64,
    pub fit_shift: f64,
}

impl UnitRescale {
    pub fn score(&self, raw: f64) -> f64 {
        (raw - self.score_shift) * self.scale
    }

    pub fn fit(&self, raw: f64) -> f64 {
        (raw - self.fit_shift) * self.scale
    }

    /// Maps a rescaled latent utility back to raw units.
    pub fn raw_utility(&self, utility: f64) -> f64 {
        utility / self.scale + self.score_shift + self.fit_shift
    }
}

/// Quotas, penalties and the seed for one market.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarketConfig {
    pub quotas: Vec<u32>,
    pub penalties: Vec<f64>,
    pub seed: u64,
}

impl MarketConfig {
    pub fn new(quotas: Vec<u32>, penalties: Vec<f64>, seed: u64) -> Result<Self> {
        if quotas.is_empty() {
            return Err(Error::Empty("agent list"));
        }
        if quotas.len() != penalties.len() {
            return Err(Error::Shape(alloc::format!(
                "{} quotas but {} penalties",
                quotas.len(),
                penalties.len()
            )));
        }
        if let Some(i) = quotas.iter().position(|&q| q == 0) {
            return Err(invalid!("quota of agent {i} must be at least 1"));
        }
        if let Some(i) = penalties.iter().position(|g| !g.is_finite() || *g <= 0.0) {
            return Err(invalid!("penalty of agent {i} must be positive and finite"));
        }
        Ok(Self {
            quotas,
            penalties,
            seed,
        })
    }

    pub fn uniform(agents: usize, quota: u32, penalty: f64, seed: u64) -> Result<Self> {
        Self::new(vec![quota; agents], vec![penalty; agents], seed)
    }

    pub fn agents(&self) -> usize {
        self.quotas.len()
    }
}

/// A validated market: configuration plus the attributes it is played on.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    config: MarketConfig,
    attrs: AttributeMatrix,
}

impl Market {
    pub fn new(config: MarketConfig, attrs: AttributeMatrix) -> Result<Self> {
        let m = config.agents();
        if attrs.agents() != m {
            return Err(Error::Shape(alloc::format!(
                "config has {m} agents, attributes have {}",
                attrs.agents()
            )));
        }
        let n = attrs.arms();
        let total: u64 = config.quotas.iter().map(|&q| u64::from(q)).sum();
        if total > n as u64 {
            return Err(invalid!("total quota {total} exceeds the {n} arms"));
        }
        for i in 0..m {
            let max_utility = attrs.max_utility(i);
            let penalty = config.penalties[i];
            if penalty <= max_utility {
                return Err(Error::Penalty {
                    agent: i,
                    penalty,
                    max_utility,
                });
            }
        }
        Ok(Self { config, attrs })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn attrs(&self) -> &AttributeMatrix {
        &self.attrs
    }

    pub fn agents(&self) -> usize {
        self.config.agents()
    }

    pub fn arms(&self) -> usize {
        self.attrs.arms()
    }

    pub fn quota(&self, agent: usize) -> u32 {
        self.config.quotas[agent]
    }

    pub fn penalty(&self, agent: usize) -> f64 {
        self.config.penalties[agent]
    }

    pub fn utility(&self, agent: usize, arm: usize) -> f64 {
        self.attrs.utility(agent, arm)
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent < self.agents() {
            Ok(())
        } else {
            Err(Error::AgentOutOfRange(agent))
        }
    }

    /// `sum_{j in B} (v_j + e_ij) pi_j - gamma_i * max(sum_{j in B} pi_j - q_i, 0)`.
    ///
    /// `probs` is indexed by arm; only entries for arms in `pull_set` are read.
    pub fn expected_payoff(&self, agent: usize, pull_set: &[usize], probs: &[f64]) -> Result<f64> {
        self.check_agent(agent)?;
        if probs.len() != self.arms() {
            return Err(Error::Shape(alloc::format!(
                "{} probabilities for {} arms",
                probs.len(),
                self.arms()
            )));
        }
        for &j in pull_set {
            if j >= self.arms() {
                return Err(Error::ArmOutOfRange(j));
            }
            let p = probs[j];
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Probability { arm: j, value: p });
            }
        }
        let utils = self.attrs.utilities(agent);
        Ok(payoff_from_parts(
            pull_set.iter().map(|&j| (utils[j], probs[j])),
            self.quota(agent),
            self.penalty(agent),
        ))
    }

    /// Payoff actually received when `accepted` arms took the offer.
    pub fn realized_payoff(&self, agent: usize, accepted: &[usize]) -> f64 {
        let utility: f64 = accepted.iter().map(|&j| self.utility(agent, j)).sum();
        let excess = accepted.len().saturating_sub(self.quota(agent) as usize);
        utility - self.penalty(agent) * excess as f64
    }
}

/// Expected payoff from `(utility, probability)` pairs of the pulled arms.
pub(crate) fn payoff_from_parts(pulled: impl Iterator<Item = (f64, f64)>, quota: u32, penalty: f64) -> f64 {
    let (value, mass) = pulled.fold((0.0, 0.0), |(v, n), (u, p)| (v + u * p, n + p));
    value - penalty * (mass - f64::from(quota)).max(0.0)
}

/// Arm-side strict rankings of agents. Agents an arm does not rank are
/// unacceptable to it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreferenceProfile {
    agents: usize,
    /// Per arm, agents from most to least preferred.
    order: Vec<Vec<usize>>,
    /// Per arm and agent, 0-based position in `order`.
    position: Vec<Vec<Option<u32>>>,
}

impl PreferenceProfile {
    /// Builds a profile from per-arm orderings, most preferred first.
    pub fn from_orders(agents: usize, order: Vec<Vec<usize>>) -> Result<Self> {
        let mut position = vec![vec![None; agents]; order.len()];
        for (j, list) in order.iter().enumerate() {
            for (pos, &i) in list.iter().enumerate() {
                if i >= agents {
                    return Err(Error::AgentOutOfRange(i));
                }
                if position[j][i].is_some() {
                    return Err(invalid!("arm {j} ranks agent {i} twice"));
                }
                position[j][i] = Some(pos as u32);
            }
        }
        Ok(Self {
            agents,
            order,
            position,
        })
    }

    /// Builds a profile from rank numbers (1 = most preferred); `None` marks
    /// an unacceptable agent. Ranks must be exactly `1..=k` for the `k`
    /// ranked agents.
    pub fn from_ranks(agents: usize, ranks: &[Vec<Option<u32>>]) -> Result<Self> {
        let mut order = Vec::with_capacity(ranks.len());
        for (j, row) in ranks.iter().enumerate() {
            if row.len() != agents {
                return Err(Error::Shape(alloc::format!(
                    "arm {j} ranks {} agents, expected {agents}",
                    row.len()
                )));
            }
            let mut ranked: Vec<(u32, usize)> = row.iter().enumerate().filter_map(|(i, r)| r.map(|r| (r, i))).collect();
            ranked.sort_unstable();
            for (k, &(r, _)) in ranked.iter().enumerate() {
                if r as usize != k + 1 {
                    return Err(invalid!(
                        "ranks of arm {j} must be a permutation of 1..={}",
                        ranked.len()
                    ));
                }
            }
            order.push(ranked.into_iter().map(|(_, i)| i).collect());
        }
        Self::from_orders(agents, order)
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn arms(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self, arm: usize) -> &[usize] {
        &self.order[arm]
    }

    /// 0-based position of `agent` in `arm`'s ranking.
    pub fn position(&self, arm: usize, agent: usize) -> Option<u32> {
        self.position[arm][agent]
    }

    /// Rank numbers with 1 = most preferred.
    pub fn to_ranks(&self) -> Vec<Vec<Option<u32>>> {
        self.position
            .iter()
            .map(|row| row.iter().map(|p| p.map(|p| p + 1)).collect())
            .collect()
    }

    /// Whether `arm` strictly prefers `agent` to its current partner.
    /// Unmatched arms prefer any agent they rank.
    pub fn prefers_to(&self, arm: usize, agent: usize, current: Option<usize>) -> bool {
        match (self.position(arm, agent), current) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(a), Some(c)) => match self.position(arm, c) {
                Some(c) => a < c,
                None => true,
            },
        }
    }

    /// The most preferred acceptable agent among `candidates`.
    pub fn best_among(&self, arm: usize, candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
        candidates
            .into_iter()
            .filter_map(|i| self.position(arm, i).map(|p| (p, i)))
            .min()
            .map(|(_, i)| i)
    }
}

/// A realized single-stage matching with per-agent bookkeeping.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchOutcome {
    /// Arm -> agent it accepted.
    pub assignment: Vec<Option<usize>>,
    /// Arms each agent pulled.
    pub pulls: Vec<Vec<usize>>,
    /// Arms that accepted each agent, ascending.
    pub accepted: Vec<Vec<usize>>,
    pub payoffs: Vec<f64>,
    /// Acceptances above quota per agent.
    pub over_quota: Vec<u32>,
}

impl MatchOutcome {
    pub fn from_assignment(market: &Market, pulls: Vec<Vec<usize>>, assignment: Vec<Option<usize>>) -> Result<Self> {
        let m = market.agents();
        if pulls.len() != m {
            return Err(Error::Shape(alloc::format!("{} pull sets for {m} agents", pulls.len())));
        }
        if assignment.len() != market.arms() {
            return Err(Error::Shape(alloc::format!(
                "assignment covers {} arms, market has {}",
                assignment.len(),
                market.arms()
            )));
        }
        let mut accepted = vec![Vec::new(); m];
        for (j, a) in assignment.iter().enumerate() {
            if let Some(i) = *a {
                if i >= m {
                    return Err(Error::AgentOutOfRange(i));
                }
                if !pulls[i].contains(&j) {
                    return Err(invalid!("arm {j} is assigned to agent {i} which did not pull it"));
                }
                accepted[i].push(j);
            }
        }
        let payoffs = (0..m).map(|i| market.realized_payoff(i, &accepted[i])).collect();
        let over_quota = (0..m)
            .map(|i| accepted[i].len().saturating_sub(market.quota(i) as usize) as u32)
            .collect();
        Ok(Self {
            assignment,
            pulls,
            accepted,
            payoffs,
            over_quota,
        })
    }

    pub fn total_payoff(&self) -> f64 {
        self.payoffs.iter().sum()
    }

    pub fn matches(&self) -> usize {
        self.assignment.iter().flatten().count()
    }

    /// `(arm, agent)` pairs, by arm.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(j, a)| a.map(|i| (j, i)))
            .collect()
    }
}

/// Monte-Carlo utility samples `U[i][j][k]` of agent `i` for arm `j` under
/// draw `k` of the private covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUtilityTensor {
    agents: usize,
    arms: usize,
    draws: usize,
    values: Vec<f64>,
}

impl RawUtilityTensor {
    pub fn new(agents: usize, arms: usize, draws: usize, values: Vec<f64>) -> Result<Self> {
        if agents == 0 || arms == 0 || draws == 0 {
            return Err(Error::Empty("utility tensor"));
        }
        if values.len() != agents * arms * draws {
            return Err(Error::Shape(alloc::format!(
                "{} values for a {agents}x{arms}x{draws} tensor",
                values.len()
            )));
        }
        if values.iter().any(|u| !u.is_finite()) {
            return Err(invalid!("utilities must be finite"));
        }
        Ok(Self {
            agents,
            arms,
            draws,
            values,
        })
    }

    pub fn from_fn(agents: usize, arms: usize, draws: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(agents * arms * draws);
        for i in 0..agents {
            for j in 0..arms {
                for k in 0..draws {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(agents, arms, draws, values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.agents, self.arms, self.draws)
    }

    pub fn get(&self, agent: usize, arm: usize, draw: usize) -> f64 {
        self.values[(agent * self.arms + arm) * self.draws + draw]
    }
}

/// Separable split of raw utilities: a common score, an agent-specific
/// adjustment of the public part and the private residual of each draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaParts {
    agents: usize,
    arms: usize,
    draws: usize,
    scores: Vec<f64>,
    adjustment: Vec<f64>,
    residual: Vec<f64>,
}

impl AnovaParts {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// `e†_ij`: agent `i`'s mean utility for arm `j` minus the arm's score.
    pub fn adjustment(&self, agent: usize, arm: usize) -> f64 {
        self.adjustment[agent * self.arms + arm]
    }

    /// `e‡_ijk`: draw `k` minus agent `i`'s mean utility for arm `j`.
    pub fn residual(&self, agent: usize, arm: usize, draw: usize) -> f64 {
        self.residual[(agent * self.arms + arm) * self.draws + draw]
    }

    /// Total fit `e_ij = e† + e‡` under draw `k`.
    pub fn fit(&self, agent: usize, arm: usize, draw: usize) -> f64 {
        self.adjustment(agent, arm) + self.residual(agent, arm, draw)
    }

    pub fn reconstruct(&self, agent: usize, arm: usize, draw: usize) -> f64 {
        self.scores[arm] + self.fit(agent, arm, draw)
    }

    /// Attributes of the market realized under draw `k`, mapped onto `[0, 1]`.
    pub fn to_attributes(&self, draw: usize) -> Result<(AttributeMatrix, UnitRescale)> {
        if draw >= self.draws {
            return Err(invalid!("draw {draw} out of range"));
        }
        let fits: Vec<Vec<f64>> = (0..self.agents)
            .map(|i| (0..self.arms).map(|j| self.fit(i, j, draw)).collect())
            .collect();
        AttributeMatrix::rescaled(&self.scores, &fits)
    }
}

/// Splits sampled utilities into `v_j + e†_ij + e‡_ijk`, with expectations
/// over the private covariate taken as sample means.
pub fn anova_decompose(raw: &RawUtilityTensor) -> AnovaParts {
    let (m, n, k) = raw.shape();
    let mut means = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let sum: f64 = (0..k).map(|d| raw.get(i, j, d)).sum();
            means[i * n + j] = sum / k as f64;
        }
    }
    let scores: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| means[i * n + j]).sum::<f64>() / m as f64)
        .collect();
    let adjustment: Vec<f64> = (0..m * n).map(|ij| means[ij] - scores[ij % n]).collect();
    let mut residual = Vec::with_capacity(m * n * k);
    for i in 0..m {
        for j in 0..n {
            for d in 0..k {
                residual.push(raw.get(i, j, d) - means[i * n + j]);
            }
        }
    }
    AnovaParts {
        agents: m,
        arms: n,
        draws: k,
        scores,
        adjustment,
        residual,
    }
}

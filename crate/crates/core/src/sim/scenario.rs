use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::acceptance::StateTable;
use crate::error::{invalid, Error, Result};
use crate::market::{AttributeMatrix, Market, MarketConfig, PreferenceProfile};
use crate::rng::{rng_from, Rng};

/// Scores drawn uniformly from `[lo, hi)` for `count` arms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreStratum {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AttributeSource {
    /// The same attributes every period.
    Fixed(AttributeMatrix),
    /// Fresh attributes every period: scores from the strata (or `U[0, 1)`
    /// when there are none) and fits from `U[0, fit_cap)`.
    Uniform {
        arms: usize,
        strata: Vec<ScoreStratum>,
        fit_cap: f64,
    },
}

impl AttributeSource {
    pub fn arms(&self) -> usize {
        match self {
            AttributeSource::Fixed(a) => a.arms(),
            AttributeSource::Uniform { arms, .. } => *arms,
        }
    }

    pub fn draw(&self, agents: usize, rng: &mut Rng) -> Result<AttributeMatrix> {
        match self {
            AttributeSource::Fixed(a) => Ok(a.clone()),
            AttributeSource::Uniform { arms, strata, fit_cap } => {
                let scores: Vec<f64> = if strata.is_empty() {
                    (0..*arms).map(|_| rng.random::<f64>()).collect()
                } else {
                    strata
                        .iter()
                        .flat_map(|st| {
                            (0..st.count)
                                .map(|_| st.lo + (st.hi - st.lo) * rng.random::<f64>())
                                .collect::<Vec<_>>()
                        })
                        .collect()
                };
                let fits = (0..agents)
                    .map(|_| (0..*arms).map(|_| fit_cap * rng.random::<f64>()).collect())
                    .collect();
                AttributeMatrix::with_fit_cap(scores, fits, *fit_cap)
            }
        }
    }
}

/// How arms rank agents given the agents' realized states.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PreferenceRule {
    Fixed(PreferenceProfile),
    /// Each arm ranks agents by `strength * s_i + G`, `G` standard Gumbel.
    Popularity {
        strength: f64,
    },
    /// Agents in earlier tiers always come first; within a tier as in
    /// `Popularity`.
    Tiered {
        tiers: Vec<Vec<usize>>,
        strength: f64,
    },
    /// Agent 0 is ranked first with probability
    /// `clamp(intercept_k + slope_k * v_j, 0, 1)` and last otherwise, where
    /// `k` is agent 0's state index; the others are in random order.
    FirstAgent {
        mu: Vec<(f64, f64)>,
    },
}

impl PreferenceRule {
    /// Realizes the arms' preferences for one period.
    pub fn realize(
        &self,
        agents: usize,
        attrs: &AttributeMatrix,
        agent_states: &[f64],
        state_index: &[usize],
        rng: &mut Rng,
    ) -> Result<PreferenceProfile> {
        let n = attrs.arms();
        let gumbel = |rng: &mut Rng| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            -libm::log(-libm::log(u))
        };
        let by_key = |members: &[usize], strength: f64, rng: &mut Rng| -> Vec<usize> {
            let mut keyed: Vec<(f64, usize)> = members
                .iter()
                .map(|&i| (strength * agent_states[i] + gumbel(rng), i))
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().map(|(_, i)| i).collect()
        };
        let all: Vec<usize> = (0..agents).collect();
        let order: Vec<Vec<usize>> = match self {
            PreferenceRule::Fixed(p) => return Ok(p.clone()),
            PreferenceRule::Popularity { strength } => (0..n).map(|_| by_key(&all, *strength, rng)).collect(),
            PreferenceRule::Tiered { tiers, strength } => (0..n)
                .map(|_| tiers.iter().flat_map(|tier| by_key(tier, *strength, rng)).collect())
                .collect(),
            PreferenceRule::FirstAgent { mu } => {
                let (a, b) = mu[state_index[0]];
                (0..n)
                    .map(|j| {
                        let mu_j = (a + b * attrs.score(j)).clamp(0.0, 1.0);
                        let mut rest: Vec<usize> = (1..agents).collect();
                        rest.shuffle(rng);
                        if rng.random::<f64>() < mu_j {
                            rest.insert(0, 0);
                        } else {
                            rest.push(0);
                        }
                        rest
                    })
                    .collect()
            }
        };
        PreferenceProfile::from_orders(agents, order)
    }
}

/// A market generator: configuration, attribute and preference sources and
/// the distribution of states.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioSpec {
    pub quotas: Vec<u32>,
    pub penalties: Vec<f64>,
    pub seed: u64,
    pub attributes: AttributeSource,
    /// State support `s_1, ..., s_K`.
    pub states: Vec<f64>,
    pub state_weights: Vec<f64>,
    pub preference_rule: PreferenceRule,
    /// Per-agent acceptance tables that replace the learner when present.
    pub acceptance_tables: Option<Vec<StateTable>>,
}

/// Stream tags for seed derivation.
pub(crate) mod stream {
    pub const STATE: u64 = 1;
    pub const ATTRS: u64 = 2;
    pub const PREFS: u64 = 3;
    pub const PULLS: u64 = 4;
    pub const PERMUTE: u64 = 5;
    pub const TEST: u64 = 6;
}

impl ScenarioSpec {
    pub fn agents(&self) -> usize {
        self.quotas.len()
    }

    pub fn arms(&self) -> usize {
        self.attributes.arms()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.agents();
        MarketConfig::new(self.quotas.clone(), self.penalties.clone(), self.seed)?;
        if self.states.is_empty() {
            return Err(Error::Empty("state support"));
        }
        if self.states.len() != self.state_weights.len() {
            return Err(Error::Shape(alloc::format!(
                "{} states but {} weights",
                self.states.len(),
                self.state_weights.len()
            )));
        }
        if let Some(s) = self.states.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(invalid!("state {s} outside [0, 1]"));
        }
        if self.state_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid!("state weights must be nonnegative"));
        }
        let total: f64 = self.state_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid!("state weights sum to {total}, expected 1"));
        }
        match &self.attributes {
            AttributeSource::Fixed(a) => {
                Market::new(
                    MarketConfig::new(self.quotas.clone(), self.penalties.clone(), self.seed)?,
                    a.clone(),
                )?;
            }
            AttributeSource::Uniform { arms, strata, fit_cap } => {
                if *arms == 0 {
                    return Err(Error::Empty("arm set"));
                }
                if !(*fit_cap > 0.0 && *fit_cap <= 1.0) {
                    return Err(invalid!("fit cap {fit_cap} must lie in (0, 1]"));
                }
                if !strata.is_empty() && strata.iter().map(|s| s.count).sum::<usize>() != *arms {
                    return Err(invalid!("score strata must cover all {arms} arms"));
                }
                if strata.iter().any(|s| !(0.0 <= s.lo && s.lo <= s.hi && s.hi <= 1.0)) {
                    return Err(invalid!("score strata must lie in [0, 1]"));
                }
                let total: u64 = self.quotas.iter().map(|&q| u64::from(q)).sum();
                if total > *arms as u64 {
                    return Err(invalid!("total quota {total} exceeds the {arms} arms"));
                }
                let top = strata
                    .iter()
                    .map(|s| s.hi)
                    .fold(if strata.is_empty() { 1.0 } else { 0.0 }, f64::max);
                if let Some(i) = self.penalties.iter().position(|&g| g < top + fit_cap) {
                    return Err(invalid!(
                        "penalty of agent {i} does not exceed the largest possible utility"
                    ));
                }
            }
        }
        match &self.preference_rule {
            PreferenceRule::Fixed(p) => {
                if p.agents() != m || p.arms() != self.arms() {
                    return Err(Error::Shape(alloc::format!(
                        "preference profile is {}x{}, market is {m}x{}",
                        p.agents(),
                        p.arms(),
                        self.arms()
                    )));
                }
            }
            PreferenceRule::Tiered { tiers, .. } => {
                let mut seen = alloc::vec![false; m];
                for &i in tiers.iter().flatten() {
                    if i >= m {
                        return Err(Error::AgentOutOfRange(i));
                    }
                    if seen[i] {
                        return Err(invalid!("agent {i} appears in more than one tier slot"));
                    }
                    seen[i] = true;
                }
                if seen.iter().any(|s| !s) {
                    return Err(invalid!("tiers must cover every agent"));
                }
            }
            PreferenceRule::FirstAgent { mu } => {
                if mu.len() != self.states.len() {
                    return Err(Error::Shape(alloc::format!(
                        "{} acceptance curves for {} states",
                        mu.len(),
                        self.states.len()
                    )));
                }
            }
            PreferenceRule::Popularity { .. } => {}
        }
        if let Some(tables) = &self.acceptance_tables {
            if tables.len() != m {
                return Err(Error::Shape(alloc::format!(
                    "{} acceptance tables for {m} agents",
                    tables.len()
                )));
            }
            if tables.iter().any(|t| t.table(0).len() != self.arms()) {
                return Err(Error::Shape(alloc::format!(
                    "acceptance tables must cover {} arms",
                    self.arms()
                )));
            }
        }
        Ok(())
    }

    /// Index into `states` of agent `i`'s state when the market is in
    /// structure `k`. Each agent sees the structures through its own fixed
    /// permutation, so agents differ in popularity within a structure.
    /// Agent 0 sees them unpermuted.
    pub fn agent_state_index(&self, agent: usize, k: usize) -> usize {
        if agent == 0 || self.states.len() == 1 {
            return k;
        }
        let mut perm: Vec<usize> = (0..self.states.len()).collect();
        perm.shuffle(&mut rng_from(self.seed, &[stream::PERMUTE, agent as u64]));
        perm[k]
    }

    pub fn sample_structure(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.state_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.state_weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Realizes one period: attributes, agent states and arm preferences.
    pub fn draw_period(&self, seed: u64, tag: u64, period: u64) -> Result<Period> {
        let m = self.agents();
        let structure = self.sample_structure(&mut rng_from(seed, &[tag, stream::STATE, period]));
        let attrs = self
            .attributes
            .draw(m, &mut rng_from(seed, &[tag, stream::ATTRS, period]))?;
        let market = Market::new(
            MarketConfig::new(self.quotas.clone(), self.penalties.clone(), self.seed)?,
            attrs,
        )?;
        let state_index: Vec<usize> = (0..m).map(|i| self.agent_state_index(i, structure)).collect();
        let agent_states: Vec<f64> = state_index.iter().map(|&k| self.states[k]).collect();
        let mut pref_rng = rng_from(seed, &[tag, stream::PREFS, period, structure as u64]);
        let prefs = self
            .preference_rule
            .realize(m, market.attrs(), &agent_states, &state_index, &mut pref_rng)?;
        Ok(Period {
            market,
            structure,
            state_index,
            agent_states,
            prefs,
        })
    }

    /// Test market of replication `replication`.
    pub fn draw_test(&self, seed: u64, replication: u64) -> Result<Period> {
        self.draw_period(seed, stream::TEST, replication)
    }
}

/// One realized market period.
#[derive(Debug, Clone, PartialEq)]
pub struct Period {
    pub market: Market,
    pub structure: usize,
    pub state_index: Vec<usize>,
    pub agent_states: Vec<f64>,
    pub prefs: PreferenceProfile,
}

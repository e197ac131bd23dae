use alloc::vec::Vec;

use rand::Rng as _;

use super::matching::realize_matching;
use super::scenario::{stream, ScenarioSpec};
use crate::error::{invalid, Result};
use crate::learner::HistoryRecord;
use crate::market::AttributeMatrix;
use crate::rng::{rng_from, Rng};

/// Pull rule used while generating training data.
pub enum ProposalRule<'a> {
    /// A uniformly random number of arms, `1..=min(max, n)`, taken from the
    /// top of the agent's utility ranking.
    RandomPrefix { max: usize },
    /// `(agent, attributes, rng) -> pulled arms`.
    Custom(&'a dyn Fn(usize, &AttributeMatrix, &mut Rng) -> Vec<usize>),
}

/// Arms sorted by decreasing latent utility of `agent`, lower index first
/// on ties.
pub fn utility_order(attrs: &AttributeMatrix, agent: usize) -> Vec<usize> {
    let utils = attrs.utilities(agent);
    let mut order: Vec<usize> = (0..utils.len()).collect();
    order.sort_by(|&a, &b| utils[b].total_cmp(&utils[a]).then(a.cmp(&b)));
    order
}

pub fn random_prefix(attrs: &AttributeMatrix, agent: usize, max: usize, rng: &mut Rng) -> Vec<usize> {
    let n = attrs.arms();
    let size = rng.random_range(1..=max.clamp(1, n));
    let mut set = utility_order(attrs, agent);
    set.truncate(size);
    set.sort_unstable();
    set
}

/// Historical pulls and outcomes of every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
    /// `states[t][i]`: state of agent `i` in period `t`.
    pub states: Vec<Vec<f64>>,
}

impl TrainingHistory {
    pub fn periods(&self) -> usize {
        self.states.len()
    }

    pub fn agent_records(&self, agent: usize) -> Vec<HistoryRecord> {
        self.records.iter().filter(|r| r.agent == agent).copied().collect()
    }

    pub fn agent_states(&self, agent: usize) -> Vec<f64> {
        self.states.iter().map(|row| row[agent]).collect()
    }

    /// Share of `agent`'s pulls that were accepted.
    pub fn acceptance_rate(&self, agent: usize) -> Option<f64> {
        let recs = self.agent_records(agent);
        if recs.is_empty() {
            return None;
        }
        Some(recs.iter().filter(|r| r.y).count() as f64 / recs.len() as f64)
    }
}

/// Simulates `periods` markets of the scenario and records every pull.
/// `rules` holds one proposal rule per agent, or a single rule for all.
pub fn generate_history(
    spec: &ScenarioSpec,
    periods: usize,
    rules: &[ProposalRule<'_>],
    seed: u64,
) -> Result<TrainingHistory> {
    if periods == 0 {
        return Err(invalid!("history needs at least one period"));
    }
    spec.validate()?;
    let m = spec.agents();
    if rules.len() != 1 && rules.len() != m {
        return Err(invalid!("{} proposal rules for {m} agents", rules.len()));
    }
    let mut records = Vec::new();
    let mut states = Vec::with_capacity(periods);
    for t in 0..periods {
        let period = spec.draw_period(seed, 0, t as u64)?;
        let attrs = period.market.attrs();
        let pulls: Vec<Vec<usize>> = (0..m)
            .map(|i| {
                let mut rng = rng_from(seed, &[stream::PULLS, t as u64, i as u64]);
                let rule = &rules[if rules.len() == 1 { 0 } else { i }];
                match rule {
                    ProposalRule::RandomPrefix { max } => random_prefix(attrs, i, *max, &mut rng),
                    ProposalRule::Custom(f) => f(i, attrs, &mut rng),
                }
            })
            .collect();
        let outcome = realize_matching(&period.market, &period.prefs, pulls)?;
        for i in 0..m {
            for &j in &outcome.pulls[i] {
                records.push(HistoryRecord {
                    t: t as u32,
                    agent: i,
                    s: period.agent_states[i],
                    v: attrs.score(j),
                    y: outcome.assignment[j] == Some(i),
                });
            }
        }
        states.push(period.agent_states);
    }
    Ok(TrainingHistory { records, states })
}

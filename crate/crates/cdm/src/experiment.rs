//! Seeded experiments: train every agent on simulated history, then play
//! replicated test markets under several strategy profiles.
//!
//! Profiles share their test markets (common random numbers), so payoff
//! differences between profiles come from the strategies alone.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdm_core::acceptance::{AcceptanceFn, StateTable};
use cdm_core::analysis::{check_fairness, check_stability, IrFilter};
use cdm_core::learner::{
    fit, fit_state_distribution, log_grid, monotonicity_in_state, AcceptanceModel, BoundModel, DiscreteSupport,
    FitConfig, StateMode, StateModel,
};
use cdm_core::rng::mix;
use cdm_core::sim::{generate_history, realize_matching, ProposalRule, ScenarioSpec};
use cdm_core::strategy::{plan, CalibrationResult, PullPlan, Strategy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{read_json, write_json, MarketFile, ModelFile, OutcomeFile, ScenarioFile};

/// Grid size of the monotonicity diagnostic.
pub const MONOTONICITY_GRID: usize = 21;
/// Monotone share below which `cdm run` warns.
pub const MONOTONE_WARNING: f64 = 0.9;

/// A scenario given inline or as a path relative to the experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Path(PathBuf),
    Inline(Box<ScenarioFile>),
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::CdmMean]
}
fn default_focal() -> Vec<usize> {
    vec![0]
}
fn default_periods() -> usize {
    20
}
fn default_reps() -> usize {
    100
}
fn default_features() -> usize {
    64
}
fn default_lambdas() -> Vec<f64> {
    log_grid(1e-4, 1.0, 5)
}
fn default_folds() -> usize {
    5
}
fn default_state_mode() -> StateMode {
    StateMode::Continuous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: ScenarioRef,
    /// Strategy of every agent, or one strategy shared by all.
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Agents whose strategy is swapped in turn for each variant.
    #[serde(default = "default_focal")]
    pub focal_agents: Vec<usize>,
    /// Strategies tried by the focal agents; empty runs `strategies` as is.
    #[serde(default)]
    pub variants: Vec<Strategy>,
    /// Every agent switches to each variant together.
    #[serde(default)]
    pub joint: bool,
    /// Training periods.
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Training pulls are capped at this multiple of the quota; `None`
    /// allows every arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_pulls: Option<f64>,
    /// Random features per acceptance model.
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_state_mode")]
    pub state_mode: StateMode,
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioRef) -> Self {
        Self {
            scenario,
            strategies: default_strategies(),
            focal_agents: default_focal(),
            variants: Vec::new(),
            joint: false,
            periods: default_periods(),
            reps: default_reps(),
            seed: 0,
            out: None,
            training_pulls: None,
            features: default_features(),
            lambdas: default_lambdas(),
            folds: default_folds(),
            state_mode: default_state_mode(),
        }
    }

    /// Reads an experiment file and inlines its scenario.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: Self = read_json(path)?;
        if let ScenarioRef::Path(rel) = &spec.scenario {
            let base = path.parent().unwrap_or(Path::new("."));
            let file: ScenarioFile = read_json(&base.join(rel))?;
            spec.scenario = ScenarioRef::Inline(Box::new(file));
        }
        Ok(spec)
    }

    pub fn scenario_file(&self) -> Result<&ScenarioFile> {
        match &self.scenario {
            ScenarioRef::Inline(f) => Ok(f),
            ScenarioRef::Path(p) => bail!("scenario {} has not been loaded", p.display()),
        }
    }

    /// Named strategy profiles, each a strategy per agent.
    pub fn profiles(&self, agents: usize) -> Result<Vec<(String, Vec<Strategy>)>> {
        let base = match self.strategies.len() {
            1 => vec![self.strategies[0]; agents],
            k if k == agents => self.strategies.clone(),
            k => bail!("{k} strategies for {agents} agents"),
        };
        if self.variants.is_empty() {
            return Ok(vec![("base".into(), base)]);
        }
        if self.joint {
            return Ok(self
                .variants
                .iter()
                .map(|&v| (v.tag().to_string(), vec![v; agents]))
                .collect());
        }
        if self.focal_agents.is_empty() {
            bail!("variants need at least one focal agent");
        }
        let mut out = Vec::new();
        for &f in &self.focal_agents {
            if f >= agents {
                bail!("focal agent {f} out of range for {agents} agents");
            }
            for &v in &self.variants {
                let mut s = base.clone();
                s[f] = v;
                let name = if self.focal_agents.len() == 1 {
                    v.tag().to_string()
                } else {
                    format!("{}@{f}", v.tag())
                };
                out.push((name, s));
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            bail!("reps must be at least 1");
        }
        if self.periods == 0 {
            bail!("periods must be at least 1");
        }
        if self.features == 0 || self.folds < 2 || self.lambdas.is_empty() {
            bail!("features must be positive, folds at least 2 and the lambda grid nonempty");
        }
        if self.training_pulls.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
            bail!("training_pulls must be a positive multiple of the quota");
        }
        Ok(())
    }

    /// SHA-256 of the spec with its scenario inlined.
    pub fn digest(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out = None;
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub profile: String,
    pub replication: u64,
    pub agent: usize,
    pub strategy: Strategy,
    pub payoff: f64,
    pub matches: usize,
    pub over_quota: u32,
    pub stable: bool,
    pub fair: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub profile: String,
    pub agent: usize,
    pub strategy: Strategy,
    pub reps: usize,
    pub payoff: f64,
    pub payoff_sd: f64,
    pub matches: f64,
    pub over_quota: f64,
    pub stable: f64,
    pub fair: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub profile: String,
    pub replication: u64,
    pub agent: usize,
    pub strategy: Strategy,
    pub s_cal: f64,
    pub b_hat: Option<f64>,
    pub expected_acceptances: f64,
    /// Pulled arms separated by spaces.
    pub pull_set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTraining {
    pub agent: usize,
    pub records: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub state_mean: f64,
    /// Share of state-ordered grid pairs on which the fitted surface does
    /// not decrease.
    pub monotone_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub reps: usize,
    pub periods: usize,
    pub spec_sha256: String,
    pub version: String,
    pub profiles: Vec<String>,
    pub training: Vec<AgentTraining>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ReplicationRow>,
    pub plans: Vec<PlanRow>,
    pub provenance: Provenance,
    /// First replication of every profile, in auditable form.
    pub outcomes: Vec<(String, OutcomeFile)>,
    pub models: Vec<Option<AcceptanceModel>>,
}

impl ExperimentResult {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        aggregate(&self.rows)
    }

    /// Mean payoff of `agent` under `profile`.
    pub fn mean_payoff(&self, profile: &str, agent: usize) -> Option<f64> {
        self.aggregate()
            .into_iter()
            .find(|r| r.profile == profile && r.agent == agent)
            .map(|r| r.payoff)
    }

    /// Writes `replications.csv`, `aggregate.csv`, `plans.csv`,
    /// `provenance.json`, the audited outcomes and the fitted models.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_csv(&dir.join("replications.csv"), &self.rows)?;
        write_csv(&dir.join("aggregate.csv"), &self.aggregate())?;
        write_csv(&dir.join("plans.csv"), &self.plans)?;
        write_json(&dir.join("provenance.json"), &self.provenance)?;
        for (profile, outcome) in &self.outcomes {
            write_json(&dir.join(format!("outcome-{}.json", file_safe(profile))), outcome)?;
        }
        for (i, model) in self.models.iter().enumerate() {
            if let Some(model) = model {
                write_json(&dir.join(format!("model-{i}.json")), &ModelFile::from_model(model))?;
            }
        }
        Ok(())
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Means per `(profile, agent, strategy)` in first-seen order.
pub fn aggregate(rows: &[ReplicationRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, usize, Strategy)> = Vec::new();
    let mut groups: BTreeMap<(String, usize, String), Vec<&ReplicationRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.profile.clone(), r.agent, r.strategy.tag().to_string());
        let entry = groups.entry(key).or_default();
        if entry.is_empty() {
            order.push((r.profile.clone(), r.agent, r.strategy));
        }
        entry.push(r);
    }
    order
        .into_iter()
        .map(|(profile, agent, strategy)| {
            let g = &groups[&(profile.clone(), agent, strategy.tag().to_string())];
            let k = g.len() as f64;
            let mean = |f: &dyn Fn(&ReplicationRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / k;
            let payoff = mean(&|r| r.payoff);
            let var = if g.len() > 1 {
                g.iter().map(|r| (r.payoff - payoff).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            AggregateRow {
                profile,
                agent,
                strategy,
                reps: g.len(),
                payoff,
                payoff_sd: var.sqrt(),
                matches: mean(&|r| r.matches as f64),
                over_quota: mean(&|r| f64::from(r.over_quota)),
                stable: mean(&|r| f64::from(u8::from(r.stable))),
                fair: mean(&|r| f64::from(u8::from(r.fair))),
            }
        })
        .collect()
}

/// An agent's acceptance surface in one test market.
pub enum View<'a> {
    Table(&'a StateTable),
    Model(BoundModel<'a>),
}

impl AcceptanceFn for View<'_> {
    fn prob(&self, s: f64, arm: usize, score: f64) -> f64 {
        match self {
            View::Table(t) => t.prob(s, arm, score),
            View::Model(m) => m.prob(s, arm, score),
        }
    }

    fn probs_at(&self, s: f64, scores: &[f64]) -> Vec<f64> {
        match self {
            View::Table(t) => t.probs_at(s, scores),
            View::Model(m) => m.probs_at(s, scores),
        }
    }
}

/// What every agent believes after training: an acceptance surface
/// (fitted model or injected table) and a state distribution.
pub struct Beliefs {
    pub models: Vec<Option<AcceptanceModel>>,
    pub tables: Option<Vec<StateTable>>,
    pub state_models: Vec<StateModel>,
    pub training: Vec<AgentTraining>,
}

impl Beliefs {
    /// Acceptance surfaces bound to a market's scores.
    pub fn views<'a>(&'a self, scores: &[f64]) -> Vec<View<'a>> {
        match &self.tables {
            Some(tables) => tables.iter().map(View::Table).collect(),
            None => self
                .models
                .iter()
                .map(|m| View::Model(m.as_ref().expect("every agent has a model").bind(scores)))
                .collect(),
        }
    }
}

/// Injected tables: each agent knows the state distribution exactly.
fn known_states(spec: &ScenarioSpec) -> Result<Vec<StateModel>> {
    (0..spec.agents())
        .map(|i| {
            let points = (0..spec.states.len())
                .map(|k| spec.states[spec.agent_state_index(i, k)])
                .collect();
            Ok(StateModel::Discrete(DiscreteSupport::new(
                points,
                spec.state_weights.clone(),
            )?))
        })
        .collect()
}

pub fn train(spec: &ScenarioSpec, exp: &ExperimentSpec) -> Result<Beliefs> {
    if let Some(tables) = &spec.acceptance_tables {
        let state_models = known_states(spec)?;
        let training = state_models
            .iter()
            .enumerate()
            .map(|(agent, sm)| AgentTraining {
                agent,
                records: 0,
                lambda: 0.0,
                iterations: 0,
                converged: true,
                state_mean: sm.mean(),
                monotone_share: 1.0,
            })
            .collect();
        return Ok(Beliefs {
            models: vec![None; spec.agents()],
            tables: Some(tables.clone()),
            state_models,
            training,
        });
    }
    let rules: Vec<ProposalRule<'_>> = spec
        .quotas
        .iter()
        .map(|&q| ProposalRule::RandomPrefix {
            max: exp
                .training_pulls
                .map_or(usize::MAX, |f| (f * f64::from(q)).ceil() as usize),
        })
        .collect();
    let history = generate_history(spec, exp.periods, &rules, exp.seed)?;
    let fitted: Vec<(AcceptanceModel, StateModel, AgentTraining)> = (0..spec.agents())
        .into_par_iter()
        .map(|agent| -> Result<_> {
            let records = history.agent_records(agent);
            let config = FitConfig {
                p: exp.features,
                lambdas: exp.lambdas.clone(),
                folds: exp.folds,
                seed: mix(exp.seed, &[agent as u64]),
            };
            let model = fit(&records, &config).with_context(|| format!("fitting agent {agent}"))?;
            let states = fit_state_distribution(&history.agent_states(agent), exp.state_mode)?;
            let training = AgentTraining {
                agent,
                records: records.len(),
                lambda: model.lambda,
                iterations: model.diagnostics.iterations,
                converged: model.diagnostics.converged,
                state_mean: states.mean(),
                monotone_share: monotonicity_in_state(&model, MONOTONICITY_GRID),
            };
            Ok((model, states, training))
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::new();
    let mut state_models = Vec::new();
    let mut training = Vec::new();
    for (m, s, t) in fitted {
        models.push(Some(m));
        state_models.push(s);
        training.push(t);
    }
    Ok(Beliefs {
        models,
        tables: None,
        state_models,
        training,
    })
}

struct ProfileRun {
    rows: Vec<ReplicationRow>,
    plans: Vec<PlanRow>,
    outcome: OutcomeFile,
}

fn replicate(
    spec: &ScenarioSpec,
    beliefs: &Beliefs,
    profiles: &[(String, Vec<Strategy>)],
    seed: u64,
    replication: u64,
) -> Result<Vec<ProfileRun>> {
    let period = spec.draw_test(seed, replication)?;
    let market = &period.market;
    let views = beliefs.views(market.attrs().scores());
    let mut cache: BTreeMap<(usize, &'static str), (PullPlan, Option<CalibrationResult>)> = BTreeMap::new();
    let mut runs = Vec::with_capacity(profiles.len());
    for (name, strategies) in profiles {
        let mut plans = Vec::with_capacity(strategies.len());
        for (i, &s) in strategies.iter().enumerate() {
            let key = (i, s.tag());
            if let Entry::Vacant(slot) = cache.entry(key) {
                slot.insert(plan(market, i, s, &views[i], &beliefs.state_models[i])?);
            }
            plans.push(cache[&key].0.clone());
        }
        let pulls: Vec<Vec<usize>> = plans.iter().map(|p| p.pull_set.clone()).collect();
        let outcome = realize_matching(market, &period.prefs, pulls)?;
        let filter = IrFilter::from_plans(market, &plans, &views)?;
        let stable = check_stability(&outcome, market, &period.prefs, Some(&filter)).stable;
        let fair = check_fairness(&outcome, market, &period.prefs).fair;
        let rows = (0..strategies.len())
            .map(|i| ReplicationRow {
                profile: name.clone(),
                replication,
                agent: i,
                strategy: strategies[i],
                payoff: outcome.payoffs[i],
                matches: outcome.accepted[i].len(),
                over_quota: outcome.over_quota[i],
                stable,
                fair,
            })
            .collect();
        let plan_rows = plans
            .iter()
            .zip(strategies)
            .map(|(p, &s)| PlanRow {
                profile: name.clone(),
                replication,
                agent: p.agent,
                strategy: s,
                s_cal: p.s_cal,
                b_hat: p.b_hat,
                expected_acceptances: p.expected_acceptances,
                pull_set: p.pull_set.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" "),
            })
            .collect();
        let audit = OutcomeFile {
            market: MarketFile::from_market(market, Some(&period.prefs)),
            pulls: outcome.pulls.clone(),
            assignment: outcome.assignment.clone(),
            ir: Some(filter),
        };
        runs.push(ProfileRun {
            rows,
            plans: plan_rows,
            outcome: audit,
        });
    }
    Ok(runs)
}

/// Trains, replicates and collects the result tables. Output does not
/// depend on the number of worker threads.
pub fn run_experiment(exp: &ExperimentSpec) -> Result<ExperimentResult> {
    exp.validate()?;
    let spec = exp.scenario_file()?.to_spec()?;
    let profiles = exp.profiles(spec.agents())?;
    let beliefs = train(&spec, exp)?;
    let reps: Vec<Vec<ProfileRun>> = (0..exp.reps as u64)
        .into_par_iter()
        .map(|r| replicate(&spec, &beliefs, &profiles, exp.seed, r))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut plans = Vec::new();
    let mut outcomes = Vec::new();
    for (p, (name, _)) in profiles.iter().enumerate() {
        for (r, runs) in reps.iter().enumerate() {
            rows.extend(runs[p].rows.iter().cloned());
            plans.extend(runs[p].plans.iter().cloned());
            if r == 0 {
                outcomes.push((name.clone(), runs[p].outcome.clone()));
            }
        }
    }
    let provenance = Provenance {
        seed: exp.seed,
        reps: exp.reps,
        periods: exp.periods,
        spec_sha256: exp.digest()?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        profiles: profiles.iter().map(|p| p.0.clone()).collect(),
        training: beliefs.training,
    };
    Ok(ExperimentResult {
        rows,
        plans,
        provenance,
        outcomes,
        models: beliefs.models,
    })
}

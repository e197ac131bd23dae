//! JSON and CSV formats: markets, scenarios, histories, fitted models,
//! pull plans and audited outcomes.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cdm_core::acceptance::StateTable;
use cdm_core::learner::{AcceptanceModel, FeatureMap, FitDiagnostics, HistoryRecord};
use cdm_core::sim::{AttributeSource, PreferenceRule, ScenarioSpec, ScoreStratum};
use cdm_core::strategy::PullPlan;
use cdm_core::{AttributeMatrix, Market, MarketConfig, MatchOutcome, PreferenceProfile};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A single market with its attributes and, optionally, arm preferences.
/// Preferences are rank numbers per arm (1 = most preferred, `null` =
/// unacceptable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketFile {
    pub m: usize,
    pub n: usize,
    pub quotas: Vec<u32>,
    pub penalties: Vec<f64>,
    pub scores: Vec<f64>,
    pub fits: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<Vec<Vec<Option<u32>>>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_cap: Option<f64>,
}

impl MarketFile {
    pub fn from_market(market: &Market, prefs: Option<&PreferenceProfile>) -> Self {
        let attrs = market.attrs();
        Self {
            m: market.agents(),
            n: market.arms(),
            quotas: market.config().quotas.clone(),
            penalties: market.config().penalties.clone(),
            scores: attrs.scores().to_vec(),
            fits: (0..market.agents()).map(|i| attrs.fit_row(i).to_vec()).collect(),
            preferences: prefs.map(PreferenceProfile::to_ranks),
            seed: market.config().seed,
            fit_cap: (attrs.fit_cap() < 1.0).then_some(attrs.fit_cap()),
        }
    }

    fn check_counts(&self) -> Result<()> {
        if self.quotas.len() != self.m || self.fits.len() != self.m {
            bail!(
                "m = {} but {} quotas and {} fit rows",
                self.m,
                self.quotas.len(),
                self.fits.len()
            );
        }
        if self.scores.len() != self.n {
            bail!("n = {} but {} scores", self.n, self.scores.len());
        }
        Ok(())
    }

    pub fn attributes(&self) -> Result<AttributeMatrix> {
        self.check_counts()?;
        Ok(AttributeMatrix::with_fit_cap(
            self.scores.clone(),
            self.fits.clone(),
            self.fit_cap.unwrap_or(1.0),
        )?)
    }

    pub fn market(&self) -> Result<Market> {
        let config = MarketConfig::new(self.quotas.clone(), self.penalties.clone(), self.seed)?;
        Ok(Market::new(config, self.attributes()?)?)
    }

    pub fn preferences(&self) -> Result<Option<PreferenceProfile>> {
        match &self.preferences {
            None => Ok(None),
            Some(ranks) => {
                if ranks.len() != self.n {
                    bail!("preferences list {} arms, expected {}", ranks.len(), self.n);
                }
                Ok(Some(PreferenceProfile::from_ranks(self.m, ranks)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleFile {
    Fixed,
    Popularity { strength: f64 },
    Tiered { strength: f64 },
    FirstAgent { mu: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributeFile {
    Uniform {
        #[serde(default)]
        strata: Vec<ScoreStratum>,
        #[serde(default = "one")]
        fit_cap: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub state: f64,
    pub probs: Vec<f64>,
}

/// Market file plus the scenario generator fields. Either `scores` and
/// `fits` or `attributes` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub m: usize,
    pub n: usize,
    pub quotas: Vec<u32>,
    pub penalties: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fits: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preferences: Option<Vec<Vec<Option<u32>>>>,
    #[serde(default)]
    pub seed: u64,
    pub states: Vec<f64>,
    pub state_weights: Vec<f64>,
    pub preference_rule: RuleFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiers: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_tables: Option<Vec<Vec<TableRow>>>,
}

impl ScenarioFile {
    pub fn to_spec(&self) -> Result<ScenarioSpec> {
        if self.quotas.len() != self.m {
            bail!("m = {} but {} quotas", self.m, self.quotas.len());
        }
        let attributes = match (&self.scores, &self.fits, &self.attributes) {
            (Some(scores), Some(fits), None) => {
                let file = MarketFile {
                    m: self.m,
                    n: self.n,
                    quotas: self.quotas.clone(),
                    penalties: self.penalties.clone(),
                    scores: scores.clone(),
                    fits: fits.clone(),
                    preferences: None,
                    seed: self.seed,
                    fit_cap: self.fit_cap,
                };
                AttributeSource::Fixed(file.attributes()?)
            }
            (None, None, Some(AttributeFile::Uniform { strata, fit_cap })) => AttributeSource::Uniform {
                arms: self.n,
                strata: strata.clone(),
                fit_cap: *fit_cap,
            },
            _ => bail!("a scenario needs either scores and fits or an attribute generator"),
        };
        let preference_rule = match &self.preference_rule {
            RuleFile::Fixed => {
                let ranks = self
                    .preferences
                    .as_ref()
                    .context("fixed preference rule needs \"preferences\"")?;
                if ranks.len() != self.n {
                    bail!("preferences list {} arms, expected {}", ranks.len(), self.n);
                }
                PreferenceRule::Fixed(PreferenceProfile::from_ranks(self.m, ranks)?)
            }
            RuleFile::Popularity { strength } => PreferenceRule::Popularity { strength: *strength },
            RuleFile::Tiered { strength } => PreferenceRule::Tiered {
                tiers: self.tiers.clone().context("tiered preference rule needs \"tiers\"")?,
                strength: *strength,
            },
            RuleFile::FirstAgent { mu } => PreferenceRule::FirstAgent { mu: mu.clone() },
        };
        let acceptance_tables = match &self.acceptance_tables {
            None => None,
            Some(tables) => Some(
                tables
                    .iter()
                    .map(|rows| StateTable::new(rows.iter().map(|r| (r.state, r.probs.clone())).collect()))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let spec = ScenarioSpec {
            quotas: self.quotas.clone(),
            penalties: self.penalties.clone(),
            seed: self.seed,
            attributes,
            states: self.states.clone(),
            state_weights: self.state_weights.clone(),
            preference_rule,
            acceptance_tables,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        let (scores, fits, fit_cap, attributes) = match &spec.attributes {
            AttributeSource::Fixed(a) => (
                Some(a.scores().to_vec()),
                Some((0..a.agents()).map(|i| a.fit_row(i).to_vec()).collect()),
                (a.fit_cap() < 1.0).then_some(a.fit_cap()),
                None,
            ),
            AttributeSource::Uniform { strata, fit_cap, .. } => (
                None,
                None,
                None,
                Some(AttributeFile::Uniform {
                    strata: strata.clone(),
                    fit_cap: *fit_cap,
                }),
            ),
        };
        let (preference_rule, preferences, tiers) = match &spec.preference_rule {
            PreferenceRule::Fixed(p) => (RuleFile::Fixed, Some(p.to_ranks()), None),
            PreferenceRule::Popularity { strength } => (RuleFile::Popularity { strength: *strength }, None, None),
            PreferenceRule::Tiered { tiers, strength } => {
                (RuleFile::Tiered { strength: *strength }, None, Some(tiers.clone()))
            }
            PreferenceRule::FirstAgent { mu } => (RuleFile::FirstAgent { mu: mu.clone() }, None, None),
        };
        let acceptance_tables = spec.acceptance_tables.as_ref().map(|tables| {
            tables
                .iter()
                .map(|t| {
                    t.states()
                        .iter()
                        .enumerate()
                        .map(|(k, &state)| TableRow {
                            state,
                            probs: t.table(k).to_vec(),
                        })
                        .collect()
                })
                .collect()
        });
        Self {
            m: spec.agents(),
            n: spec.arms(),
            quotas: spec.quotas.clone(),
            penalties: spec.penalties.clone(),
            scores,
            fits,
            fit_cap,
            attributes,
            preferences,
            seed: spec.seed,
            states: spec.states.clone(),
            state_weights: spec.state_weights.clone(),
            preference_rule,
            tiers,
            acceptance_tables,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct HistoryRow {
    t: u32,
    i: usize,
    s: f64,
    v: f64,
    y: u8,
}

pub fn write_history(path: &Path, records: &[HistoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in records {
        w.serialize(HistoryRow {
            t: r.t,
            i: r.agent,
            s: r.s,
            v: r.v,
            y: u8::from(r.y),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (line, row) in r.deserialize::<HistoryRow>().enumerate() {
        let row = row.with_context(|| format!("{}: record {}", path.display(), line + 1))?;
        if row.y > 1 {
            bail!(
                "{}: record {} has y = {}, expected 0 or 1",
                path.display(),
                line + 1,
                row.y
            );
        }
        let rec = HistoryRecord {
            t: row.t,
            agent: row.i,
            s: row.s,
            v: row.v,
            y: row.y == 1,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Serialized [`AcceptanceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub seed: u64,
    pub p: usize,
    pub kernel: String,
    pub length_scale: f64,
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub freq_s: Vec<f64>,
    pub phase_s: Vec<f64>,
    pub freq_v: Vec<f64>,
    pub phase_v: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

impl ModelFile {
    pub fn from_model(model: &AcceptanceModel) -> Self {
        let (freq_s, phase_s, freq_v, phase_v) = model.features.parts();
        Self {
            seed: model.features.seed(),
            p: model.features.dim(),
            kernel: "rbf".into(),
            length_scale: 1.0,
            lambda: model.lambda,
            theta: model.theta.clone(),
            freq_s: freq_s.to_vec(),
            phase_s: phase_s.to_vec(),
            freq_v: freq_v.to_vec(),
            phase_v: phase_v.to_vec(),
            iterations: model.diagnostics.iterations,
            objective: model.diagnostics.objective,
            converged: model.diagnostics.converged,
        }
    }

    pub fn to_model(&self) -> Result<AcceptanceModel> {
        if self.kernel != "rbf" || self.length_scale != 1.0 {
            bail!("only the unit-length RBF kernel is supported");
        }
        let features = FeatureMap::from_parts(
            self.seed,
            self.freq_s.clone(),
            self.phase_s.clone(),
            self.freq_v.clone(),
            self.phase_v.clone(),
        )
        .context("feature draws have inconsistent lengths")?;
        if features.dim() != self.p || self.theta.len() != self.p {
            bail!(
                "model declares p = {} but stores {} coefficients",
                self.p,
                self.theta.len()
            );
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            bail!("model coefficients must be finite");
        }
        Ok(AcceptanceModel {
            features,
            theta: self.theta.clone(),
            lambda: self.lambda,
            diagnostics: FitDiagnostics {
                iterations: self.iterations,
                objective: self.objective,
                converged: self.converged,
                cv_scores: Vec::new(),
                trace: Vec::new(),
            },
        })
    }
}

/// `{agent, s_cal, b_hat, pull_set, expected_acceptances}` per agent.
pub fn write_plans(path: &Path, plans: &[PullPlan]) -> Result<()> {
    write_json(path, &plans)
}

/// What `cdm check` audits: a market with preferences, the pulls and the
/// realized assignment, and optionally each agent's expected acceptances
/// and acceptance probabilities for the individual-rationality filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFile {
    pub market: MarketFile,
    pub pulls: Vec<Vec<usize>>,
    pub assignment: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<cdm_core::analysis::IrFilter>,
}

impl OutcomeFile {
    pub fn outcome(&self, market: &Market) -> Result<MatchOutcome> {
        Ok(MatchOutcome::from_assignment(
            market,
            self.pulls.clone(),
            self.assignment.clone(),
        )?)
    }
}

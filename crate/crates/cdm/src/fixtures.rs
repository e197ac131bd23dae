//! Built-in scenarios: the two worked examples, the random-preference
//! market, the graduate admission market and an unfairness construction.

use anyhow::{bail, Result};
use cdm_core::sim::ScoreStratum;
use cdm_core::strategy::Strategy;

use crate::experiment::{ExperimentSpec, ScenarioRef};
use crate::io::{AttributeFile, RuleFile, ScenarioFile, TableRow};

/// Number of arm preference structures in the generated markets.
pub const STATES: usize = 10;
/// Weight of an agent's state in the arms' ranking noise.
pub const POPULARITY_STRENGTH: f64 = 4.0;

pub const RANDOM_MARKET_ARMS: [usize; 6] = [50, 70, 90, 110, 130, 150];
pub const RANDOM_MARKET_PENALTIES: [f64; 3] = [2.0, 2.5, 3.0];
pub const ADMISSION_STUDENTS: [usize; 6] = [250, 260, 270, 280, 290, 300];

fn evenly_spaced_states() -> (Vec<f64>, Vec<f64>) {
    let states = (0..STATES).map(|k| (2 * k + 1) as f64 / (2 * STATES) as f64).collect();
    (states, vec![1.0 / STATES as f64; STATES])
}

/// A three-agent, three-arm market with unit quotas, scores equal to 2 and
/// fixed arm rankings, whose acceptance probabilities are injected.
fn small_market(utils: [[f64; 3]; 3], ranks: [[u32; 3]; 3], probs: [[f64; 3]; 3], penalty: f64) -> ScenarioFile {
    ScenarioFile {
        m: 3,
        n: 3,
        quotas: vec![1; 3],
        penalties: vec![penalty; 3],
        scores: Some(vec![2.0; 3]),
        fits: Some(utils.iter().map(|row| row.iter().map(|u| u - 2.0).collect()).collect()),
        fit_cap: None,
        attributes: None,
        preferences: Some(ranks.iter().map(|r| r.iter().map(|&x| Some(x)).collect()).collect()),
        seed: 0,
        states: vec![0.5],
        state_weights: vec![1.0],
        preference_rule: RuleFile::Fixed,
        tiers: None,
        acceptance_tables: Some(
            probs
                .iter()
                .map(|p| {
                    vec![TableRow {
                        state: 0.5,
                        probs: p.to_vec(),
                    }]
                })
                .collect(),
        ),
    }
}

/// Three agents and three arms; acceptance probabilities are expected
/// utilities divided by utilities.
pub fn worked_example() -> ScenarioFile {
    small_market(
        [[2.0, 3.0, 2.5], [2.0, 2.5, 3.0], [2.5, 2.0, 3.0]],
        [[3, 2, 1], [2, 3, 1], [1, 3, 2]],
        [
            [0.52 / 2.0, 1.99 / 3.0, 1.0],
            [0.67 / 2.0, 0.0, 0.0],
            [1.0, 1.0, 1.05 / 3.0],
        ],
        10.0,
    )
}

/// Preference structure `k` in `1..=4` of the second worked example.
pub fn structure_example(k: usize) -> Result<ScenarioFile> {
    Ok(match k {
        1 => small_market(
            [[2.5, 3.0, 2.0], [3.0, 2.5, 2.0], [3.0, 2.5, 2.0]],
            [[1, 2, 3], [2, 3, 1], [1, 2, 3]],
            [[1.0, 0.34, 1.0], [0.35, 0.0, 0.65], [0.0, 1.0, 0.45]],
            5.0,
        ),
        2 => small_market(
            [[3.0, 2.5, 2.0], [2.5, 3.0, 2.0], [2.5, 2.0, 3.0]],
            [[3, 1, 2], [1, 2, 3], [2, 3, 1]],
            [[0.10, 1.0, 0.0], [1.0, 0.35, 0.0], [0.32, 0.0, 1.0]],
            5.0,
        ),
        3 => small_market(
            [[2.0, 3.0, 2.5], [2.5, 2.0, 3.0], [3.0, 2.5, 2.0]],
            [[1, 2, 3], [3, 1, 2], [2, 3, 1]],
            [[1.0, 0.22, 0.67], [0.66, 1.0, 0.24], [0.22, 0.66, 1.0]],
            5.0,
        ),
        4 => small_market(
            [[3.0, 2.0, 2.5], [2.0, 2.5, 3.0], [2.0, 2.5, 3.0]],
            [[3, 2, 1], [2, 1, 3], [1, 3, 2]],
            [[0.43, 0.29, 1.0], [0.69, 1.0, 0.0], [1.0, 0.22, 0.35]],
            5.0,
        ),
        _ => bail!("structure {k} does not exist; choose 1 to 4"),
    })
}

/// Ten agents with quota 5 and penalty `penalty` competing for `arms` arms
/// with uniform scores and fits. Arms rank agents by popularity, and the
/// agents' popularities are permuted across the ten structures.
pub fn random_market(penalty: f64, arms: usize) -> ScenarioFile {
    let (states, state_weights) = evenly_spaced_states();
    ScenarioFile {
        m: 10,
        n: arms,
        quotas: vec![5; 10],
        penalties: vec![penalty; 10],
        scores: None,
        fits: None,
        fit_cap: None,
        attributes: Some(AttributeFile::Uniform {
            strata: Vec::new(),
            fit_cap: 1.0,
        }),
        preferences: None,
        seed: 0,
        states,
        state_weights,
        preference_rule: RuleFile::Popularity {
            strength: POPULARITY_STRENGTH,
        },
        tiers: None,
        acceptance_tables: None,
    }
}

/// Fifty colleges in tiers of 5, 10 and 35 with quota 5 and penalty 2.5;
/// ten students score in `[0.9, 1]`, a hundred in `[0.7, 0.9)` and the rest
/// in `[0, 0.7)`.
pub fn admission_market(students: usize) -> Result<ScenarioFile> {
    if students < 110 {
        bail!("the admission market needs at least 110 students");
    }
    let (states, state_weights) = evenly_spaced_states();
    let strata = vec![
        ScoreStratum {
            lo: 0.9,
            hi: 1.0,
            count: 10,
        },
        ScoreStratum {
            lo: 0.7,
            hi: 0.9,
            count: 100,
        },
        ScoreStratum {
            lo: 0.0,
            hi: 0.7,
            count: students - 110,
        },
    ];
    Ok(ScenarioFile {
        m: 50,
        n: students,
        quotas: vec![5; 50],
        penalties: vec![2.5; 50],
        scores: None,
        fits: None,
        fit_cap: None,
        attributes: Some(AttributeFile::Uniform { strata, fit_cap: 1.0 }),
        preferences: None,
        seed: 0,
        states,
        state_weights,
        preference_rule: RuleFile::Tiered {
            strength: POPULARITY_STRENGTH,
        },
        tiers: Some(vec![(0..5).collect(), (5..15).collect(), (15..50).collect()]),
        acceptance_tables: None,
    })
}

pub const UNFAIR_SCORES: [f64; 8] = [0.18, 0.2, 0.67, 0.81, 0.89, 0.96, 0.97, 0.98];
pub const UNFAIR_FITS: [f64; 8] = [0.87, 0.88, 0.62, 0.52, 0.2, 0.52, 0.29, 0.13];
/// `(intercept, slope)` of the first agent's acceptance probability in
/// score when it is unpopular and when it is popular.
pub const UNFAIR_CURVES: [(f64, f64); 2] = [(0.9, -0.8), (0.9, -0.2)];

/// Two agents and eight arms. The second agent pulls everything, and an
/// arm accepts the first agent with probability `a_k + b_k v` in state
/// `k`. Acceptance falls less steeply in score when the first agent is
/// popular, so over-enrollment concentrates on high-score arms and the
/// oracle set skips some arms that a utility threshold would keep.
pub fn unfair_market() -> ScenarioFile {
    let utils: Vec<f64> = UNFAIR_SCORES.iter().zip(UNFAIR_FITS).map(|(v, e)| v + e).collect();
    let penalty = utils.iter().copied().fold(f64::MIN, f64::max) + 0.05;
    let states = vec![0.2, 0.8];
    let table = |first: bool| -> Vec<TableRow> {
        states
            .iter()
            .zip(UNFAIR_CURVES)
            .map(|(&state, (a, b))| TableRow {
                state,
                probs: UNFAIR_SCORES
                    .iter()
                    .map(|v| {
                        let mu = (a + b * v).clamp(0.0, 1.0);
                        if first {
                            mu
                        } else {
                            1.0 - mu
                        }
                    })
                    .collect(),
            })
            .collect()
    };
    let acceptance_tables = Some(vec![table(true), table(false)]);
    ScenarioFile {
        m: 2,
        n: 8,
        quotas: vec![3, 3],
        penalties: vec![penalty; 2],
        scores: Some(UNFAIR_SCORES.to_vec()),
        fits: Some(vec![UNFAIR_FITS.to_vec(), vec![0.5; 8]]),
        fit_cap: None,
        attributes: None,
        preferences: None,
        seed: 0,
        states,
        state_weights: vec![0.5, 0.5],
        preference_rule: RuleFile::FirstAgent {
            mu: UNFAIR_CURVES.to_vec(),
        },
        tiers: None,
        acceptance_tables,
    }
}

/// Named experiment set written by `cdm fixtures`.
pub fn experiments(name: &str) -> Result<Vec<(String, ExperimentSpec)>> {
    let inline = |file: ScenarioFile| ScenarioRef::Inline(Box::new(file));
    Ok(match name {
        "5.1" => vec![(
            "fixture-51".into(),
            ExperimentSpec {
                variants: vec![Strategy::CdmMean, Strategy::Greedy],
                joint: true,
                reps: 1,
                ..ExperimentSpec::new(inline(worked_example()))
            },
        )],
        "5.2" => (1..=4)
            .map(|k| {
                Ok((
                    format!("fixture-52-s{k}"),
                    ExperimentSpec {
                        reps: 1,
                        ..ExperimentSpec::new(inline(structure_example(k)?))
                    },
                ))
            })
            .collect::<Result<_>>()?,
        "5.3" => RANDOM_MARKET_PENALTIES
            .iter()
            .flat_map(|&g| RANDOM_MARKET_ARMS.iter().map(move |&n| (g, n)))
            .map(|(g, n)| {
                (
                    format!("fixture-53-g{}-n{n}", g.to_string().replace('.', "p")),
                    ExperimentSpec {
                        variants: vec![
                            Strategy::CdmMean,
                            Strategy::Greedy,
                            Strategy::SimpleCutoff,
                            Strategy::Expectation,
                        ],
                        ..ExperimentSpec::new(inline(random_market(g, n)))
                    },
                )
            })
            .collect(),
        "5.4" => ADMISSION_STUDENTS
            .iter()
            .map(|&n| {
                Ok((
                    format!("fixture-54-n{n}"),
                    ExperimentSpec {
                        focal_agents: vec![0, 5, 15],
                        variants: vec![Strategy::CdmMean, Strategy::Greedy, Strategy::SimpleCutoff],
                        ..ExperimentSpec::new(inline(admission_market(n)?))
                    },
                ))
            })
            .collect::<Result<_>>()?,
        "thm9" => vec![(
            "fixture-thm9".into(),
            ExperimentSpec {
                strategies: vec![Strategy::CdmMean, Strategy::PullAll],
                variants: vec![Strategy::Oracle, Strategy::CdmMean],
                reps: 50,
                ..ExperimentSpec::new(inline(unfair_market()))
            },
        )],
        other => bail!("unknown fixture {other:?}; choose 5.1, 5.2, 5.3, 5.4 or thm9"),
    })
}

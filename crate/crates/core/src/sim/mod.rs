//! Single-stage market realization and synthetic training histories.

mod history;
mod matching;
mod run;
mod scenario;

pub use history::{generate_history, random_prefix, utility_order, ProposalRule, TrainingHistory};
pub use matching::realize_matching;
pub use run::{run_market, MarketRun};
pub use scenario::{AttributeSource, Period, PreferenceRule, ScenarioSpec, ScoreStratum};

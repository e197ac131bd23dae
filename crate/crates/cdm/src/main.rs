use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use cdm::experiment::{run_experiment, ExperimentSpec, MONOTONE_WARNING};
use cdm::fixtures;
use cdm::io::{read_json, write_json, OutcomeFile};
use cdm_core::analysis::{check_fairness, check_stability, classify_lattice, BlockReason};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cdm", version, about = "Calibrated decentralized matching simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on simulated history and play replicated test markets.
    Run {
        /// Experiment file.
        #[arg(long)]
        spec: PathBuf,
        /// Replications (overrides the file).
        #[arg(long)]
        reps: Option<usize>,
        /// Seed (overrides the file).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write built-in experiment files.
    Fixtures {
        /// 5.1, 5.2, 5.3, 5.4 or thm9.
        #[arg(long)]
        name: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Audit a realized matching for stability and fairness.
    Check {
        #[arg(long)]
        outcome: PathBuf,
        /// Fail when the matching is unstable or unfair.
        #[arg(long)]
        strict: bool,
    },
}

fn run(spec: PathBuf, reps: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<bool> {
    let mut exp = ExperimentSpec::load(&spec)?;
    if let Some(r) = reps {
        exp.reps = r;
    }
    if let Some(s) = seed {
        exp.seed = s;
    }
    let out = out.or_else(|| exp.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let result = run_experiment(&exp)?;
    for t in &result.provenance.training {
        if t.monotone_share < MONOTONE_WARNING {
            eprintln!(
                "warning: fitted acceptance of agent {} rises with the state on only {:.0}% of grid pairs",
                t.agent,
                100.0 * t.monotone_share
            );
        }
    }
    result.write(&out)?;
    let focal: Vec<usize> = if exp.variants.is_empty() {
        Vec::new()
    } else {
        exp.focal_agents.clone()
    };
    println!(
        "{:<20} {:>5} {:<14} {:>10} {:>8} {:>8} {:>7} {:>7}",
        "profile", "agent", "strategy", "payoff", "matches", "over", "stable", "fair"
    );
    for row in result.aggregate() {
        if !focal.is_empty() && !focal.contains(&row.agent) {
            continue;
        }
        println!(
            "{:<20} {:>5} {:<14} {:>10.4} {:>8.3} {:>8.3} {:>7.3} {:>7.3}",
            row.profile,
            row.agent,
            row.strategy.tag(),
            row.payoff,
            row.matches,
            row.over_quota,
            row.stable,
            row.fair
        );
    }
    println!("wrote {}", out.display());
    Ok(true)
}

fn write_fixtures(name: &str, out: PathBuf) -> Result<bool> {
    std::fs::create_dir_all(&out)?;
    for (file, exp) in fixtures::experiments(name)? {
        let path = out.join(format!("{file}.json"));
        write_json(&path, &exp)?;
        println!("{}", path.display());
    }
    Ok(true)
}

fn check(path: PathBuf, strict: bool) -> Result<bool> {
    let file: OutcomeFile = read_json(&path)?;
    let market = file.market.market()?;
    let Some(prefs) = file.market.preferences()? else {
        anyhow::bail!("the outcome's market has no arm preferences to audit against");
    };
    let outcome = file.outcome(&market)?;
    let stability = check_stability(&outcome, &market, &prefs, file.ir.as_ref());
    let fairness = check_fairness(&outcome, &market, &prefs);
    let lattice = classify_lattice(&outcome, &market, &prefs)?;
    println!("matching:");
    for (arm, agent) in outcome.pairs() {
        println!("  A{} - P{}", arm + 1, agent + 1);
    }
    println!("payoffs: {:?} (total {})", outcome.payoffs, outcome.total_payoff());
    if stability.stable {
        println!("stable: yes");
    } else {
        println!("stable: no");
        for b in &stability.blocking_pairs {
            let why = match b.reason {
                BlockReason::PrefersToMatched => "prefers the arm to one of its matches",
                BlockReason::UnfilledQuota => "has unfilled quota",
            };
            println!("  blocking pair (A{}, P{}): agent {why}", b.arm + 1, b.agent + 1);
        }
    }
    for (agent, arm) in &stability.ir_filtered {
        println!(
            "  (A{}, P{}) not individually rational for the agent",
            arm + 1,
            agent + 1
        );
    }
    if fairness.fair {
        println!("fair: yes");
    } else {
        println!("fair: no");
        for t in &fairness.envy_triples {
            println!("  A{} envies A{} at P{}", t.arm + 1, t.displacing_arm + 1, t.agent + 1);
        }
    }
    println!(
        "classically stable: {}, agent-optimal: {}, arm-optimal: {}",
        lattice.stable_classical, lattice.agent_optimal, lattice.arm_optimal
    );
    Ok(!strict || (stability.stable && fairness.fair))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { spec, reps, seed, out } => run(spec, reps, seed, out),
        Command::Fixtures { name, out } => write_fixtures(&name, out),
        Command::Check { outcome, strict } => check(outcome, strict),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

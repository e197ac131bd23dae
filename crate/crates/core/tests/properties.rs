//! Randomized invariants of the market arithmetic, the strategies, the
//! learner and the matching audits.

use cdm_core::acceptance::FnAcceptance;
use cdm_core::analysis::{check_fairness, check_stability, deferred_acceptance, Proposer};
use cdm_core::learner::{clamped_sigmoid, fit, AcceptanceModel, FeatureMap, FitConfig, HistoryRecord, Kde};
use cdm_core::sim::realize_matching;
use cdm_core::strategy::{cutoff_strategy, AgentProblem, CutoffBranch};
use cdm_core::{
    anova_decompose, AttributeMatrix, Market, MarketConfig, MatchOutcome, PreferenceProfile, RawUtilityTensor,
};
use proptest::prelude::*;

/// A market of `m` agents and `n` arms with random attributes, a random
/// strict preference profile and unit-or-larger quotas.
#[derive(Debug, Clone)]
struct Instance {
    market: Market,
    prefs: PreferenceProfile,
}

fn instance(max_agents: usize, max_arms: usize) -> impl Strategy<Value = Instance> {
    (1..=max_agents)
        .prop_flat_map(move |m| (Just(m), m..=max_arms.max(m)))
        .prop_flat_map(|(m, n)| {
            (
                Just(m),
                Just(n),
                prop::collection::vec(0.0..1.0f64, n),
                prop::collection::vec(prop::collection::vec(0.0..1.0f64, n), m),
                prop::collection::vec(Just((0..m).collect::<Vec<usize>>()).prop_shuffle(), n),
                prop::collection::vec(1u32..=3, m),
            )
        })
        .prop_map(|(m, n, scores, fits, orders, quotas)| {
            let quotas = if quotas.iter().sum::<u32>() as usize > n {
                vec![1; m]
            } else {
                quotas
            };
            let attrs = AttributeMatrix::new(scores, fits).unwrap();
            let config = MarketConfig::new(quotas, vec![2.5; m], 0).unwrap();
            Instance {
                market: Market::new(config, attrs).unwrap(),
                prefs: PreferenceProfile::from_orders(m, orders).unwrap(),
            }
        })
}

/// Classical blocking pairs by exhaustive scan: the arm prefers the agent
/// to its match and the agent either has room or prefers the arm to a
/// matched arm.
fn classical_blocking_pairs(outcome: &MatchOutcome, market: &Market, prefs: &PreferenceProfile) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..market.agents() {
        let held: Vec<usize> = (0..market.arms())
            .filter(|&j| outcome.assignment[j] == Some(i))
            .collect();
        for j in 0..market.arms() {
            if outcome.assignment[j] == Some(i) {
                continue;
            }
            let Some(rank_i) = prefs.position(j, i) else { continue };
            let arm_wants = match outcome.assignment[j] {
                None => true,
                Some(k) => prefs.position(j, k).is_none_or(|rk| rank_i < rk),
            };
            let agent_wants = held.len() < market.quota(i) as usize
                || held.iter().any(|&k| {
                    let (a, b) = (market.utility(i, j), market.utility(i, k));
                    a > b || (a == b && j < k)
                });
            if arm_wants && agent_wants {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn utilities_and_probs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0..2.0f64, n),
        prop::collection::vec(0.0..=1.0f64, n),
    )
}

fn expected(u: &[f64], p: &[f64], set: &[usize], q: u32, g: f64) -> f64 {
    let value: f64 = set.iter().map(|&j| u[j] * p[j]).sum();
    let mass: f64 = set.iter().map(|&j| p[j]).sum();
    value - g * (mass - f64::from(q)).max(0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn anova_is_exact(m in 1usize..5, n in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
        let raw = RawUtilityTensor::from_fn(m, n, k, |i, j, d| {
            let x = (seed ^ ((i * 31 + j) * 17 + d) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            (x >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 1.0
        })
        .unwrap();
        let parts = anova_decompose(&raw);
        for j in 0..n {
            let col: f64 = (0..m).map(|i| parts.adjustment(i, j)).sum();
            prop_assert!(col.abs() < 1e-12);
            for i in 0..m {
                for d in 0..k {
                    prop_assert!((parts.reconstruct(i, j, d) - raw.get(i, j, d)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn latent_utility_is_score_plus_fit(inst in instance(3, 6)) {
        let a = inst.market.attrs();
        for i in 0..a.agents() {
            for j in 0..a.arms() {
                prop_assert_eq!(a.latent_utility(i, j).unwrap(), a.score(j) + a.fit(i, j));
            }
        }
    }

    #[test]
    fn expected_payoff_grows_with_fit(
        scores in prop::collection::vec(0.0..1.0f64, 4),
        fits in prop::collection::vec(0.0..0.9f64, 4),
        probs in prop::collection::vec(0.0..=1.0f64, 4),
        bump in 0.0..0.1f64,
        arm in 0usize..4,
        mask in 1u8..16,
    ) {
        let set: Vec<usize> = (0..4).filter(|j| mask & (1 << j) != 0).collect();
        let config = MarketConfig::new(vec![1], vec![2.5], 0).unwrap();
        let before = Market::new(config.clone(), AttributeMatrix::new(scores.clone(), vec![fits.clone()]).unwrap()).unwrap();
        let mut raised = fits;
        raised[arm] += bump;
        let after = Market::new(config, AttributeMatrix::new(scores, vec![raised]).unwrap()).unwrap();
        let lo = before.expected_payoff(0, &set, &probs).unwrap();
        let hi = after.expected_payoff(0, &set, &probs).unwrap();
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn realized_payoff_within_quota_is_utility_sum(inst in instance(2, 6), mask in any::<u16>()) {
        let m = &inst.market;
        let q = m.quota(0) as usize;
        let accepted: Vec<usize> = (0..m.arms()).filter(|j| mask & (1 << j) != 0).take(q).collect();
        let plain: f64 = accepted.iter().map(|&j| m.utility(0, j)).sum();
        prop_assert_eq!(m.realized_payoff(0, &accepted), plain);
    }

    #[test]
    fn cutoff_membership_is_a_utility_threshold(
        (u, p) in (1usize..12).prop_flat_map(utilities_and_probs),
        q in 1u32..4,
    ) {
        let r = cutoff_strategy(&u, &p, q, 2.5);
        for (j, &uj) in u.iter().enumerate() {
            prop_assert_eq!(r.pull_set.contains(&j), uj >= r.b_hat, "arm {} u={} b={}", j, uj, r.b_hat);
        }
        if r.branch == CutoffBranch::Minus {
            prop_assert!(r.expected_acceptances <= f64::from(q) + 1e-12);
        }
        let mass: f64 = r.pull_set.iter().map(|&j| p[j]).sum();
        prop_assert!((mass - r.expected_acceptances).abs() < 1e-12);
    }

    #[test]
    fn cutoff_is_optimal_with_common_probability(
        u in prop::collection::vec(0.0..2.0f64, 1..11),
        pi in 0.0..=1.0f64,
        q in 1u32..4,
        extra in 0.01..3.0f64,
    ) {
        let p = vec![pi; u.len()];
        let g = 2.0 + extra;
        let r = cutoff_strategy(&u, &p, q, g);
        let got = expected(&u, &p, &r.pull_set, q, g);
        let n = u.len();
        let best = (0u32..1 << n)
            .map(|mask| {
                let set: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
                expected(&u, &p, &set, q, g)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((got - best).abs() < 1e-9, "cutoff {} best {}", got, best);
    }

    #[test]
    fn pull_sets_shrink_as_state_rises(
        u in prop::collection::vec(0.0..2.0f64, 1..12),
        base in prop::collection::vec(0.0..0.5f64, 12),
        slope in prop::collection::vec(0.0..0.5f64, 12),
        q in 1u32..4,
        s_lo in 0.0..1.0f64,
        ds in 0.0..0.5f64,
    ) {
        let n = u.len();
        let scores = vec![0.5; n];
        let fits: Vec<f64> = u.iter().map(|x| x / 2.0).collect();
        let attrs = AttributeMatrix::new(scores, vec![fits]).unwrap();
        let market = Market::new(MarketConfig::new(vec![q.min(n as u32)], vec![2.6], 0).unwrap(), attrs).unwrap();
        let acc = FnAcceptance(|s: f64, j: usize, _v: f64| (base[j] + slope[j] * s).min(1.0));
        let problem = AgentProblem::new(&market, 0, &acc).unwrap();
        let s_hi = (s_lo + ds).min(1.0);
        let high = problem.cutoff_at(s_hi).pull_set;
        let low = problem.cutoff_at(s_lo).pull_set;
        prop_assert!(high.iter().all(|j| low.contains(j)), "B({}) = {:?} not inside B({}) = {:?}", s_hi, high, s_lo, low);
    }

    #[test]
    fn predictions_stay_inside_the_unit_interval(
        theta in prop::collection::vec(-1e6..1e6f64, 8),
        s in 0.0..=1.0f64,
        v in 0.0..=1.0f64,
    ) {
        let mut model = AcceptanceModel::zero(8, 3);
        model.theta = theta;
        let p = model.predict(s, v).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!((1e-12..=1.0 - 1e-12).contains(&p));
        prop_assert_eq!(p, clamped_sigmoid(model.log_odds(s, v)));
    }

    #[test]
    fn features_are_reproducible(p in 1usize..64, seed in any::<u64>(), s in 0.0..=1.0f64, v in 0.0..=1.0f64) {
        let a = FeatureMap::new(p, seed).eval(s, v);
        let b = FeatureMap::new(p, seed).eval(s, v);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn kde_is_a_density_on_the_unit_interval(samples in prop::collection::vec(0.0..=1.0f64, 1..200)) {
        let kde = Kde::new(samples).unwrap();
        // Composite Simpson rule on 2000 panels.
        let panels = 2000;
        let h = 1.0 / panels as f64;
        let mut total = kde.density(0.0) + kde.density(1.0);
        for k in 1..panels {
            let x = k as f64 * h;
            let d = kde.density(x);
            prop_assert!(d >= 0.0);
            total += if k % 2 == 1 { 4.0 * d } else { 2.0 * d };
        }
        let integral = total * h / 3.0;
        prop_assert!((integral - 1.0).abs() < 1e-6, "integral {}", integral);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn deferred_acceptance_is_classically_stable(inst in instance(4, 8)) {
        for proposer in [Proposer::Agents, Proposer::Arms] {
            let out = deferred_acceptance(&inst.market, &inst.prefs, proposer).unwrap();
            prop_assert!(classical_blocking_pairs(&out, &inst.market, &inst.prefs).is_empty());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn proposing_side_does_at_least_as_well(inst in instance(4, 8)) {
        let a = deferred_acceptance(&inst.market, &inst.prefs, Proposer::Agents).unwrap();
        let b = deferred_acceptance(&inst.market, &inst.prefs, Proposer::Arms).unwrap();
        for i in 0..inst.market.agents() {
            prop_assert!(a.payoffs[i] >= b.payoffs[i] - 1e-12);
        }
    }

    #[test]
    fn unfiltered_stability_is_the_classical_scan(inst in instance(3, 7), masks in prop::collection::vec(any::<u8>(), 3)) {
        let m = &inst.market;
        let pulls: Vec<Vec<usize>> = (0..m.agents())
            .map(|i| (0..m.arms()).filter(|&j| masks[i] & (1 << j) != 0).collect())
            .collect();
        let out = realize_matching(m, &inst.prefs, pulls).unwrap();
        let report = check_stability(&out, m, &inst.prefs, None);
        let mut got: Vec<(usize, usize)> = report.blocking_pairs.iter().map(|b| (b.agent, b.arm)).collect();
        got.sort_unstable();
        let mut want = classical_blocking_pairs(&out, m, &inst.prefs);
        want.sort_unstable();
        prop_assert_eq!(got, want);
        prop_assert_eq!(report.stable, report.blocking_pairs.is_empty());
    }

    #[test]
    fn threshold_pulls_cause_no_envy(inst in instance(4, 8), cut in prop::collection::vec(0.0..2.0f64, 4)) {
        let m = &inst.market;
        let pulls: Vec<Vec<usize>> = (0..m.agents())
            .map(|i| (0..m.arms()).filter(|&j| m.utility(i, j) >= cut[i]).collect())
            .collect();
        let out = realize_matching(m, &inst.prefs, pulls).unwrap();
        prop_assert!(check_fairness(&out, m, &inst.prefs).fair);
    }

    #[test]
    fn arms_accept_their_best_puller(inst in instance(4, 8), masks in prop::collection::vec(any::<u8>(), 4)) {
        let m = &inst.market;
        let pulls: Vec<Vec<usize>> = (0..m.agents())
            .map(|i| (0..m.arms()).filter(|&j| masks[i] & (1 << j) != 0).collect())
            .collect();
        let out = realize_matching(m, &inst.prefs, pulls.clone()).unwrap();
        for j in 0..m.arms() {
            let pullers: Vec<usize> = (0..m.agents()).filter(|&i| pulls[i].contains(&j)).collect();
            let best = pullers.iter().copied().min_by_key(|&i| inst.prefs.position(j, i).unwrap_or(u32::MAX));
            prop_assert_eq!(out.assignment[j], best);
            if let Some(i) = out.assignment[j] {
                prop_assert!(pulls[i].contains(&j));
            }
        }
        let accepted: usize = out.accepted.iter().map(Vec::len).sum();
        prop_assert_eq!(out.matches(), accepted);
        prop_assert!(accepted <= m.arms());
        for i in 0..m.agents() {
            prop_assert!((out.payoffs[i] - m.realized_payoff(i, &out.accepted[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_never_increases_the_objective(seed in any::<u64>(), lambda in 1e-4..1.0f64) {
        let records: Vec<HistoryRecord> = (0..60u64)
            .map(|t| {
                let h = (seed ^ t).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let s = (h >> 40) as f64 / (1u64 << 24) as f64;
                let v = ((h >> 16) & 0xff_ffff) as f64 / (1u64 << 24) as f64;
                HistoryRecord { t: t as u32, agent: 0, s, v, y: h & 1 == 1 }
            })
            .collect();
        let model = fit(&records, &FitConfig { p: 16, lambdas: vec![lambda], folds: 5, seed }).unwrap();
        let trace = &model.diagnostics.trace;
        prop_assert!(!trace.is_empty());
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*trace.last().unwrap(), model.diagnostics.objective);
    }
}

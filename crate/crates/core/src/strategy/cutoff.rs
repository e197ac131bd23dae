use alloc::vec::Vec;

/// Tolerance for deciding that `Pi(b)` hits the quota exactly.
pub const QUOTA_TOL: f64 = 1e-12;

/// Which rule fixed the cutoff level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CutoffBranch {
    /// Some level has `Pi(b) = q`.
    Exact,
    /// `Pi(b) < q` for every `b >= 0`; every arm is pulled.
    Unsaturated,
    /// The boundary arms were worth their expected penalty (`b+`).
    Plus,
    /// The boundary arms were rejected (`b-`).
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CutoffResult {
    /// Latent-utility threshold: arm `j` is pulled iff `v_j + e_ij >= b_hat`.
    pub b_hat: f64,
    pub branch: CutoffBranch,
    /// Pulled arms, ascending.
    pub pull_set: Vec<usize>,
    /// `sum_{j in pull_set} pi_j`.
    pub expected_acceptances: f64,
}

impl CutoffResult {
    pub fn chose_plus(&self) -> bool {
        self.branch == CutoffBranch::Plus
    }

    /// Fit threshold `e_hat(v) = clip(b_hat - v, 0, 1)`.
    pub fn fit_cutoff(&self, v: f64) -> f64 {
        (self.b_hat - v).clamp(0.0, 1.0)
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.pull_set.binary_search(&arm).is_ok()
    }
}

/// `Pi(b)`: expected acceptances among arms with latent utility at least `b`.
pub fn expected_acceptance_curve(utils: &[f64], probs: &[f64], b: f64) -> f64 {
    utils.iter().zip(probs).filter(|(u, _)| **u >= b).map(|(_, p)| p).sum()
}

/// Whether an extra arm with utility `u` and acceptance probability `pi`
/// covers its expected over-quota penalty given `expected_accepts` already.
pub fn individually_rational(u: f64, pi: f64, expected_accepts: f64, quota: u32, penalty: f64) -> bool {
    u * pi >= penalty * (expected_accepts + pi - f64::from(quota)).max(0.0)
}

/// Distinct utility levels, descending.
fn levels(utils: &[f64]) -> Vec<f64> {
    let mut lv = utils.to_vec();
    lv.sort_by(|a, b| b.total_cmp(a));
    lv.dedup();
    lv
}

/// Optimal cutoff for one agent given per-arm utilities and acceptance
/// probabilities at a fixed state.
pub fn cutoff_strategy(utils: &[f64], probs: &[f64], quota: u32, penalty: f64) -> CutoffResult {
    debug_assert_eq!(utils.len(), probs.len());
    let q = f64::from(quota);
    let lv = levels(utils);
    // cum[k] = Pi(lv[k]); mass[k] = mass of arms exactly at lv[k].
    let mut mass = alloc::vec![0.0; lv.len()];
    let mut value = alloc::vec![0.0; lv.len()];
    for (&u, &p) in utils.iter().zip(probs) {
        let k = lv.partition_point(|&l| l > u);
        mass[k] += p;
        value[k] += u * p;
    }
    let mut cum = Vec::with_capacity(lv.len());
    let mut acc = 0.0;
    for m in &mass {
        acc += m;
        cum.push(acc);
    }
    let finish = |b_hat: f64, branch| {
        let pull_set: Vec<usize> = (0..utils.len()).filter(|&j| utils[j] >= b_hat).collect();
        let expected_acceptances = pull_set.iter().map(|&j| probs[j]).sum();
        CutoffResult {
            b_hat,
            branch,
            pull_set,
            expected_acceptances,
        }
    };
    if lv.is_empty() {
        return finish(0.0, CutoffBranch::Unsaturated);
    }
    let last = lv.len() - 1;

    if let Some(first) = cum.iter().position(|&c| (c - q).abs() <= QUOTA_TOL) {
        // Levels carrying no mass keep Pi at q; take the lowest of them.
        let mut k = first;
        while k < last && mass[k + 1] == 0.0 {
            k += 1;
        }
        let b_hat = if k == last { 0.0 } else { lv[k] };
        return finish(b_hat, CutoffBranch::Exact);
    }
    let Some(plus) = cum.iter().position(|&c| c > q) else {
        return finish(0.0, CutoffBranch::Unsaturated);
    };
    let keep_boundary = value[plus] >= penalty * (cum[plus] - q);
    if keep_boundary {
        let b_hat = if plus == last { 0.0 } else { lv[plus] };
        finish(b_hat, CutoffBranch::Plus)
    } else {
        let b_hat = if plus == 0 { lv[0] + 1.0 } else { lv[plus - 1] };
        finish(b_hat, CutoffBranch::Minus)
    }
}

/// The `quota` arms with highest latent utility, lower index first on ties.
pub fn simple_cutoff(utils: &[f64], quota: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..utils.len()).collect();
    order.sort_by(|&a, &b| utils[b].total_cmp(&utils[a]).then(a.cmp(&b)));
    order.truncate(quota as usize);
    order.sort_unstable();
    order
}

/// Greedy by expected utility: arms in decreasing order of `u pi` are added
/// while the expected acceptances stay within the quota. Arms with zero
/// acceptance probability are appended afterwards since they are
/// individually rational at no cost.
pub fn greedy_action(utils: &[f64], probs: &[f64], quota: u32, penalty: f64) -> Vec<usize> {
    let q = f64::from(quota);
    let mut order: Vec<usize> = (0..utils.len()).collect();
    order.sort_by(|&a, &b| (utils[b] * probs[b]).total_cmp(&(utils[a] * probs[a])).then(a.cmp(&b)));
    let mut chosen = Vec::new();
    let mut cum = 0.0;
    for &j in &order {
        if cum + probs[j] > q + QUOTA_TOL {
            break;
        }
        cum += probs[j];
        chosen.push(j);
    }
    for j in 0..utils.len() {
        if probs[j] == 0.0 && !chosen.contains(&j) && individually_rational(utils[j], 0.0, cum, quota, penalty) {
            chosen.push(j);
        }
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const U1: [f64; 3] = [2.0, 3.0, 2.5];
    const PI1: [f64; 3] = [0.26, 1.99 / 3.0, 1.0];

    #[test]
    fn table1_agent1() {
        let c = cutoff_strategy(&U1, &PI1, 1, 10.0);
        assert_eq!(c.pull_set, vec![1]);
        assert_eq!(c.branch, CutoffBranch::Minus);
        assert_eq!(c.b_hat, 3.0);
        assert!((expected_acceptance_curve(&U1, &PI1, 2.8) - 0.663).abs() < 1e-3);
        assert_eq!(greedy_action(&U1, &PI1, 1, 10.0), vec![2]);
        assert_eq!(simple_cutoff(&U1, 1), vec![1]);
    }

    #[test]
    fn table1_agent2_unsaturated() {
        let c = cutoff_strategy(&[2.0, 2.5, 3.0], &[0.335, 0.0, 0.0], 1, 10.0);
        assert_eq!(c.pull_set, vec![0, 1, 2]);
        assert_eq!(c.branch, CutoffBranch::Unsaturated);
        assert_eq!(
            greedy_action(&[2.0, 2.5, 3.0], &[0.335, 0.0, 0.0], 1, 10.0),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn curve_edges() {
        assert!((expected_acceptance_curve(&U1, &PI1, 0.0) - PI1.iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(expected_acceptance_curve(&U1, &PI1, 4.1), 0.0);
    }

    #[test]
    fn quota_never_binds() {
        let c = cutoff_strategy(&[0.5, 0.7, 0.2], &[1.0; 3], 3, 2.0);
        assert_eq!(c.pull_set, vec![0, 1, 2]);
        assert_eq!(c.b_hat, 0.0);
        assert_eq!(simple_cutoff(&[0.5, 0.7, 0.2], 3), vec![0, 1, 2]);
        assert_eq!(simple_cutoff(&[0.5, 0.5, 0.2], 1), vec![0]);
        assert_eq!(greedy_action(&[0.3, 0.4], &[0.0, 0.0], 1, 2.0), vec![0, 1]);
    }

    #[test]
    fn individual_rationality_examples() {
        assert!(!individually_rational(2.0, 0.5, 1.0, 1, 10.0));
        assert!(individually_rational(2.0, 0.0, 1.0, 1, 10.0));
        assert!(individually_rational(2.0, 0.5, 0.3, 1, 10.0));
    }

    #[test]
    fn first_level_exceeds_quota() {
        let c = cutoff_strategy(&[1.0, 0.5], &[1.0, 1.0], 0, 2.0);
        assert_eq!(c.branch, CutoffBranch::Minus);
        assert!(c.pull_set.is_empty());
        assert_eq!(c.b_hat, 2.0);
        assert_eq!(c.fit_cutoff(0.5), 1.0);
    }
}

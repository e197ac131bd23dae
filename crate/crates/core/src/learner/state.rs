use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{invalid, Error, Result};

/// Spacing of the state grid shared by the calibrators.
pub const GRID_STEPS: usize = 1000;
pub const MIN_BANDWIDTH: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StateMode {
    Continuous,
    Discrete,
}

/// Estimated distribution of an agent's unknown state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StateModel {
    Kde(Kde),
    Discrete(DiscreteSupport),
}

/// Gaussian kernel density on `[0, 1]` with reflection at both ends,
/// renormalized so it integrates to exactly one on the interval.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscreteSupport {
    points: Vec<f64>,
    weights: Vec<f64>,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

fn std_normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * PI)
}

/// Silverman's rule of thumb, floored at [`MIN_BANDWIDTH`].
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return MIN_BANDWIDTH;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let sd = libm::sqrt(var);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * libm::pow(n, -0.2)).max(MIN_BANDWIDTH)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Kde {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        check_states(&samples)?;
        let h = silverman_bandwidth(&samples);
        Self::with_bandwidth(samples, h)
    }

    pub fn with_bandwidth(samples: Vec<f64>, bandwidth: f64) -> Result<Self> {
        check_states(&samples)?;
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid!("bandwidth {bandwidth} must be positive"));
        }
        let mut kde = Self {
            samples,
            bandwidth,
            norm: 1.0,
        };
        kde.norm = kde.raw_cdf(1.0);
        Ok(kde)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn centers(x: f64) -> [f64; 3] {
        [x, -x, 2.0 - x]
    }

    fn raw_cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let total: f64 = self
            .samples
            .iter()
            .flat_map(|&c| Self::centers(c))
            .map(|c| std_normal_cdf((x - c) / h) - std_normal_cdf(-c / h))
            .sum();
        total / self.samples.len() as f64
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let h = self.bandwidth;
        let total: f64 = self
            .samples
            .iter()
            .flat_map(|&c| Self::centers(c))
            .map(|c| std_normal_pdf((x - c) / h))
            .sum();
        total / (self.samples.len() as f64 * h * self.norm)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            (self.raw_cdf(x) / self.norm).clamp(0.0, 1.0)
        }
    }
}

impl DiscreteSupport {
    /// Empirical weights over the distinct observed values.
    pub fn empirical(states: &[f64]) -> Result<Self> {
        check_states(states)?;
        let mut sorted = states.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut points: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for s in sorted {
            if points.last() == Some(&s) {
                *counts.last_mut().expect("counts tracks points") += 1;
            } else {
                points.push(s);
                counts.push(1);
            }
        }
        let weights = counts.into_iter().map(|c| c as f64 / n).collect();
        Ok(Self { points, weights })
    }

    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_states(&points)?;
        if points.len() != weights.len() {
            return Err(Error::Shape(alloc::format!(
                "{} support points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid!("state weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid!("state weights sum to {total}, expected 1"));
        }
        let mut pairs: Vec<(f64, f64)> = points.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid!("support points must be distinct"));
        }
        let (points, weights) = pairs.into_iter().unzip();
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_states(states: &[f64]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Empty("state sample"));
    }
    if let Some(s) = states.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(invalid!("state {s} outside [0, 1]"));
    }
    Ok(())
}

/// Estimates the distribution of the next state from historical states.
pub fn fit_state_distribution(states: &[f64], mode: StateMode) -> Result<StateModel> {
    Ok(match mode {
        StateMode::Continuous => StateModel::Kde(Kde::new(states.to_vec())?),
        StateMode::Discrete => StateModel::Discrete(DiscreteSupport::empirical(states)?),
    })
}

/// State of grid node `k`.
#[inline]
pub fn grid_point(k: usize) -> f64 {
    k as f64 / GRID_STEPS as f64
}

impl StateModel {
    pub fn point_mass(s: f64) -> Result<Self> {
        Ok(Self::Discrete(DiscreteSupport::new(alloc::vec![s], alloc::vec![1.0])?))
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete(_))
    }

    /// Quadrature `(state, weight)` pairs with weights summing to one.
    /// A KDE is represented by the calibration grid, each node carrying the
    /// exact mass of its cell.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Discrete(d) => d.points.iter().copied().zip(d.weights.iter().copied()).collect(),
            Self::Kde(k) => {
                let half = 0.5 / GRID_STEPS as f64;
                let mut prev = 0.0;
                (0..=GRID_STEPS)
                    .map(|i| {
                        let s = grid_point(i);
                        let upper = if i == GRID_STEPS { 1.0 } else { k.cdf(s + half) };
                        let w = upper - prev;
                        prev = upper;
                        (s, w)
                    })
                    .collect()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms().iter().map(|(s, w)| s * w).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Kde(k) => k.cdf(x),
            Self::Discrete(d) => d
                .points
                .iter()
                .zip(&d.weights)
                .filter(|(p, _)| **p <= x)
                .map(|(_, w)| w)
                .sum(),
        }
    }

    /// Smallest and largest state the model can produce.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Kde(_) => (0.0, 1.0),
            Self::Discrete(d) => (d.points[0], d.points[d.points.len() - 1]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn discrete_counts() {
        let m = fit_state_distribution(&[0.2, 0.2, 0.8], StateMode::Discrete).unwrap();
        let atoms = m.atoms();
        assert_eq!(atoms.len(), 2);
        assert_eq!(atoms[0].0, 0.2);
        assert!((atoms[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((atoms[1].1 - 1.0 / 3.0).abs() < 1e-15);
        let single = fit_state_distribution(&[0.5], StateMode::Discrete).unwrap();
        assert_eq!(single.atoms(), vec![(0.5, 1.0)]);
        assert!(fit_state_distribution(&[], StateMode::Continuous).is_err());
    }

    #[test]
    fn kde_cdf_and_atoms() {
        let kde = Kde::new(vec![0.05, 0.3, 0.31, 0.9, 0.99]).unwrap();
        assert_eq!(kde.cdf(0.0), 0.0);
        assert_eq!(kde.cdf(1.0), 1.0);
        let m = StateModel::Kde(kde);
        let total: f64 = m.atoms().iter().map(|a| a.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.atoms().iter().all(|a| a.1 >= 0.0));
    }

    #[test]
    fn expectation_of_discrete() {
        let m = StateModel::Discrete(DiscreteSupport::new(vec![0.8, 0.2], vec![0.5, 0.5]).unwrap());
        assert!((m.mean() - 0.5).abs() < 1e-15);
        assert!((StateModel::point_mass(0.4).unwrap().mean() - 0.4).abs() < 1e-15);
    }
}

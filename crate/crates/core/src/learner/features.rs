use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::rng_from;

/// Random Fourier features for the product kernel `K^s(s, s') K^v(v, v')`
/// with Gaussian `K^s` and `K^v` of unit length-scale.
///
/// Feature `l` is `p^{-1/2} phi^s_l(s) phi^v_l(v)` where
/// `phi(x) = sqrt(2) cos(w x + b)`, `w ~ N(0, 1)` and `b ~ U[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureMap {
    seed: u64,
    freq_s: Vec<f64>,
    phase_s: Vec<f64>,
    freq_v: Vec<f64>,
    phase_v: Vec<f64>,
}

impl FeatureMap {
    pub fn new(p: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[0x5eed_f0a7]);
        let mut draw = |n: usize| -> (Vec<f64>, Vec<f64>) {
            let freq = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let phase = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
            (freq, phase)
        };
        let (freq_s, phase_s) = draw(p);
        let (freq_v, phase_v) = draw(p);
        Self {
            seed,
            freq_s,
            phase_s,
            freq_v,
            phase_v,
        }
    }

    /// Rebuilds a map from stored draws.
    pub fn from_parts(
        seed: u64,
        freq_s: Vec<f64>,
        phase_s: Vec<f64>,
        freq_v: Vec<f64>,
        phase_v: Vec<f64>,
    ) -> Option<Self> {
        let p = freq_s.len();
        if p == 0 || phase_s.len() != p || freq_v.len() != p || phase_v.len() != p {
            return None;
        }
        Some(Self {
            seed,
            freq_s,
            phase_s,
            freq_v,
            phase_v,
        })
    }

    pub fn dim(&self) -> usize {
        self.freq_s.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parts(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.freq_s, &self.phase_s, &self.freq_v, &self.phase_v)
    }

    /// `phi^s(s)` scaled by `p^{-1/2}`.
    pub fn state_part(&self, s: f64) -> Vec<f64> {
        let scale = SQRT_2 / libm::sqrt(self.dim() as f64);
        self.freq_s
            .iter()
            .zip(&self.phase_s)
            .map(|(w, b)| scale * libm::cos(w * s + b))
            .collect()
    }

    /// `phi^v(v)`.
    pub fn score_part(&self, v: f64) -> Vec<f64> {
        self.freq_v
            .iter()
            .zip(&self.phase_v)
            .map(|(w, b)| SQRT_2 * libm::cos(w * v + b))
            .collect()
    }

    pub fn eval(&self, s: f64, v: f64) -> Vec<f64> {
        let mut out = self.state_part(s);
        for (o, g) in out.iter_mut().zip(self.score_part(v)) {
            *o *= g;
        }
        out
    }

    pub fn eval_into(&self, s: f64, v: f64, out: &mut [f64]) {
        let scale = 2.0 / libm::sqrt(self.dim() as f64);
        for (l, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = scale
                * libm::cos(self.freq_s[l] * s + self.phase_s[l])
                * libm::cos(self.freq_v[l] * v + self.phase_v[l]);
        }
    }
}

/// Exact kernel the features approximate.
pub fn rbf_kernel(s: f64, v: f64, s2: f64, v2: f64) -> f64 {
    libm::exp(-0.5 * ((s - s2) * (s - s2) + (v - v2) * (v - v2)))
}

//! Sum-rate evaluation and precoder design.
//!
//! Channels enter the received signal unconjugated, `y_j = h_j^T x`, so the
//! SINR of user `j` uses `|h_j^T v_i|^2` and the precoder updates carry
//! `conj(h_j)`.

mod sampler;
mod wmmse;

pub use sampler::{sample_channels, GaussianSampler};
pub use wmmse::{
    matched_filter, solve_power_constrained, swmmse, swmmse_with, wmmse, SwmmseOutput, WmmseOutput,
};

use crate::linalg::{dot_t, norm_sqr, CMat, CVec, C64};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub vectors: Vec<CVec>,
    pub rho: f64,
}

impl PrecoderSet {
    pub fn total_power(&self) -> f64 {
        self.vectors.iter().map(norm_sqr).sum()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecoderConfig {
    pub i_max: usize,
    pub rho: f64,
    /// WMMSE stops once the sum-rate moved less than `tol` over
    /// `tol_window` iterations.
    pub tol: f64,
    pub tol_window: usize,
    /// Fresh channel samples per user per SWMMSE iteration.
    pub swmmse_samples: usize,
}

impl Default for PrecoderConfig {
    fn default() -> Self {
        Self {
            i_max: 300,
            rho: 1.0,
            tol: 1e-6,
            tol_window: 5,
            swmmse_samples: 1,
        }
    }
}

impl PrecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.i_max < 1 {
            return Err(Error::invalid("i_max must be at least 1"));
        }
        if !(self.rho > 0.0) {
            return Err(Error::invalid("transmit power must be positive"));
        }
        if self.swmmse_samples < 1 {
            return Err(Error::invalid(
                "swmmse needs at least one sample per iteration",
            ));
        }
        Ok(())
    }
}

/// Gaussian description `CN(mu, cov)` of one user's channel. `c` holds the
/// structured-covariance parameters when `cov = Q^H diag(c) Q + eps I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    pub mu: CVec,
    pub c: Option<Vec<f64>>,
    pub cov: CMat,
}

impl ChannelStatistics {
    pub fn new(mu: CVec, cov: CMat) -> Result<Self> {
        if cov.nrows() != mu.len() || cov.ncols() != mu.len() {
            return Err(Error::dim("covariance", mu.len(), cov.nrows()));
        }
        Ok(Self { mu, c: None, cov })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }
}

/// What the BS knows about one user.
#[derive(Debug, Clone, PartialEq)]
pub enum UserChannelInfo {
    Point(CVec),
    Statistics(ChannelStatistics),
}

/// `sum_j log2(1 + |h_j^T v_j|^2 / (sum_{i != j} |h_j^T v_i|^2 + sigma^2))`.
pub fn sum_rate(channels: &[CVec], precoders: &PrecoderSet, noise_var: f64) -> f64 {
    debug_assert_eq!(channels.len(), precoders.len());
    channels
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (i, v) in precoders.vectors.iter().enumerate() {
                let g = dot_t(h, v).norm_sqr();
                if i == j {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            (1.0 + signal / (interference + noise_var)).log2()
        })
        .sum()
}

/// Mean sum-rate over channel realisations `draws[k][j]`.
pub fn expected_sum_rate(draws: &[Vec<CVec>], precoders: &PrecoderSet, noise_var: f64) -> f64 {
    draws
        .iter()
        .map(|hs| sum_rate(hs, precoders, noise_var))
        .sum::<f64>()
        / draws.len() as f64
}

pub(crate) fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;
    use crate::rng::{complex_normal_vec, seeded};

    fn set(vs: Vec<CVec>) -> PrecoderSet {
        PrecoderSet {
            vectors: vs,
            rho: 1.0,
        }
    }

    #[test]
    fn single_user_scalar() {
        let h = vec![CVec::from_vec(vec![c64(1.0, 0.0)])];
        let v = set(vec![CVec::from_vec(vec![c64(1.0, 0.0)])]);
        assert!((sum_rate(&h, &v, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_users() {
        let e0 = CVec::from_vec(vec![c64(1.0, 0.0), zero()]);
        let e1 = CVec::from_vec(vec![zero(), c64(1.0, 0.0)]);
        let r = sum_rate(&[e0.clone(), e1.clone()], &set(vec![e0, e1]), 1.0);
        assert!((r - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_scratch_formula() {
        let mut rng = seeded(17);
        let h: Vec<CVec> = (0..2)
            .map(|_| complex_normal_vec(&mut rng, 2, 1.0))
            .collect();
        let v: Vec<CVec> = (0..2)
            .map(|_| complex_normal_vec(&mut rng, 2, 0.5))
            .collect();
        let g = |a: &CVec, b: &CVec| {
            let s = a[0] * b[0] + a[1] * b[1];
            s.re * s.re + s.im * s.im
        };
        let want = (1.0 + g(&h[0], &v[0]) / (g(&h[0], &v[1]) + 0.3)).log2()
            + (1.0 + g(&h[1], &v[1]) / (g(&h[1], &v[0]) + 0.3)).log2();
        let got = sum_rate(&h, &set(v), 0.3);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_phase_and_relabeling() {
        let mut rng = seeded(3);
        let h: Vec<CVec> = (0..3)
            .map(|_| complex_normal_vec(&mut rng, 4, 1.0))
            .collect();
        let v: Vec<CVec> = (0..3)
            .map(|_| complex_normal_vec(&mut rng, 4, 0.3))
            .collect();
        let base = sum_rate(&h, &set(v.clone()), 0.1);
        let mut rotated = v.clone();
        rotated[1] *= C64::from_polar(1.0, 1.234);
        assert!((sum_rate(&h, &set(rotated), 0.1) - base).abs() < 1e-12);
        let perm = [2, 0, 1];
        let hp: Vec<CVec> = perm.iter().map(|&k| h[k].clone()).collect();
        let vp: Vec<CVec> = perm.iter().map(|&k| v[k].clone()).collect();
        assert!((sum_rate(&hp, &set(vp), 0.1) - base).abs() < 1e-12);
    }
}

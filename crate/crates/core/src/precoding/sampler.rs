use rand::Rng;

use super::ChannelStatistics;
use crate::linalg::{psd_factor, CMat, CVec};
use crate::rng::complex_normal_vec;
use crate::Result;

/// Draws `h = mu + L w` with `L L^H = cov` and `w ~ CN(0, I)`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mu: CVec,
    factor: CMat,
}

impl GaussianSampler {
    pub fn new(stats: &ChannelStatistics) -> Result<Self> {
        Ok(Self {
            mu: stats.mu.clone(),
            factor: psd_factor(&stats.cov)?,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec {
        let w = complex_normal_vec(rng, self.mu.len(), 1.0);
        &self.mu + &self.factor * w
    }

    pub fn mean(&self) -> &CVec {
        &self.mu
    }
}

pub fn sample_channels<R: Rng + ?Sized>(
    stats: &ChannelStatistics,
    count: usize,
    rng: &mut R,
) -> Result<Vec<CVec>> {
    let s = GaussianSampler::new(stats)?;
    Ok((0..count).map(|_| s.draw(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, CMat};
    use crate::rng::seeded;

    #[test]
    fn zero_covariance_returns_mean() {
        let mu = CVec::from_vec(vec![c64(1.0, 2.0), c64(-0.5, 0.0)]);
        let stats = ChannelStatistics::new(mu.clone(), CMat::zeros(2, 2)).unwrap();
        for h in sample_channels(&stats, 10, &mut seeded(1)).unwrap() {
            assert_eq!(h, mu);
        }
    }

    #[test]
    fn identity_covariance_monte_carlo() {
        let n = 8;
        let stats = ChannelStatistics::new(CVec::zeros(n), CMat::identity(n, n)).unwrap();
        let draws = sample_channels(&stats, 100_000, &mut seeded(2)).unwrap();
        let mut cov = CMat::zeros(n, n);
        for h in &draws {
            cov += h * h.adjoint();
        }
        cov /= c64(draws.len() as f64, 0.0);
        let err = (cov - CMat::identity(n, n)).norm() / (n as f64).sqrt();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn seeded_draws_repeat() {
        let stats = ChannelStatistics::new(CVec::zeros(3), CMat::identity(3, 3)).unwrap();
        let a = sample_channels(&stats, 5, &mut seeded(4)).unwrap();
        let b = sample_channels(&stats, 5, &mut seeded(4)).unwrap();
        assert_eq!(a, b);
    }
}

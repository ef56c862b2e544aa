//! Iterative WMMSE and its stochastic variant.
//!
//! With receive scaling `s_hat_j = conj(u_j) y_j`, one iteration computes
//!
//! - `u_j = h_j^T v_j / (sum_i |h_j^T v_i|^2 + sigma^2)`
//! - `w_j = 1 / (1 - conj(u_j) h_j^T v_j)`
//! - `v_j = (A + lambda I)^{-1} b_j` with `A = sum_i w_i |u_i|^2 conj(h_i) h_i^T`,
//!   `b_j = w_j u_j conj(h_j)` and `lambda >= 0` set by bisection so that the
//!   total power equals `rho`.

use rand::Rng;

use super::{
    sampler::GaussianSampler, sum_rate, zero, ChannelStatistics, PrecoderConfig, PrecoderSet,
};
use crate::linalg::{dot_t, hermitian_eigen, norm_sqr, CMat, CVec, C64};
use crate::{Error, Result};

const BISECTION_STEPS: usize = 64;

#[derive(Debug, Clone)]
pub struct WmmseOutput {
    pub precoders: PrecoderSet,
    /// Sum-rate of the initial precoders followed by one entry per iteration.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SwmmseOutput {
    pub precoders: PrecoderSet,
    /// Total transmit power after each iteration.
    pub powers: Vec<f64>,
}

/// Matched filters `conj(h_j) / ||h_j||` scaled to share `rho` equally among
/// the nonzero channels.
pub fn matched_filter(channels: &[CVec], rho: f64) -> Result<PrecoderSet> {
    let active = channels.iter().filter(|h| norm_sqr(h) > 0.0).count();
    if active == 0 {
        return Err(Error::invalid("all channels are zero"));
    }
    let scale = (rho / active as f64).sqrt();
    let vectors = channels
        .iter()
        .map(|h| {
            let p = norm_sqr(h);
            if p > 0.0 {
                h.map(|z| z.conj()) * C64::new(scale / p.sqrt(), 0.0)
            } else {
                CVec::zeros(h.len())
            }
        })
        .collect();
    Ok(PrecoderSet { vectors, rho })
}

/// Receivers `u_j` and MSE weights `w_j` for channels `h` and precoders `v`.
pub(crate) fn receivers_and_weights(
    h: &[CVec],
    v: &[CVec],
    noise_var: f64,
) -> (Vec<C64>, Vec<f64>) {
    h.iter()
        .enumerate()
        .map(|(j, hj)| {
            let mut total = noise_var;
            let mut own = zero();
            for (i, vi) in v.iter().enumerate() {
                let g = dot_t(hj, vi);
                total += g.norm_sqr();
                if i == j {
                    own = g;
                }
            }
            let u = own / total;
            // 1 - conj(u) g = (interference + sigma^2) / total
            let w = total / (total - own.norm_sqr());
            (u, w)
        })
        .unzip()
}

/// Adds `scale * sum_j w_j |u_j|^2 conj(h_j) h_j^T` to `a` and
/// `scale * w_j u_j conj(h_j)` to `b[j]`.
pub(crate) fn accumulate_surrogate(
    a: &mut CMat,
    b: &mut [CVec],
    h: &[CVec],
    u: &[C64],
    w: &[f64],
    scale: f64,
) {
    for (j, hj) in h.iter().enumerate() {
        let hc = hj.map(|z| z.conj());
        let coeff = C64::new(scale * w[j] * u[j].norm_sqr(), 0.0);
        a.gerc(coeff, &hc, &hc, C64::new(1.0, 0.0));
        b[j].axpy(u[j] * (scale * w[j]), &hc, C64::new(1.0, 0.0));
    }
}

/// `v_j = (A + lambda I)^{-1} b_j` with `lambda` from bisection so that
/// `sum_j ||v_j||^2 = rho`. When the unregularised solution already fits the
/// budget it is used and scaled up to full power, which never lowers the
/// sum-rate.
pub fn solve_power_constrained(a: &CMat, b: &[CVec], rho: f64) -> Vec<CVec> {
    let (vals, vecs) = hermitian_eigen(a);
    let uh = vecs.adjoint();
    let d: Vec<CVec> = b.iter().map(|bj| &uh * bj).collect();
    let lam_max = vals.iter().fold(0.0f64, |m, &x| m.max(x));
    let floor = 1e-12 * lam_max;
    let total: f64 = d.iter().map(norm_sqr).sum();
    if total == 0.0 {
        return b.iter().map(|bj| CVec::zeros(bj.len())).collect();
    }

    let power = |lambda: f64| -> f64 {
        d.iter()
            .map(|dj| {
                dj.iter()
                    .zip(&vals)
                    .map(|(z, &s)| {
                        let den = s.max(0.0) + lambda;
                        if den > 0.0 {
                            z.norm_sqr() / (den * den)
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            })
            .sum()
    };

    let null_energy: f64 = d
        .iter()
        .map(|dj| {
            dj.iter()
                .zip(&vals)
                .filter(|(_, &s)| s <= floor)
                .map(|(z, _)| z.norm_sqr())
                .sum::<f64>()
        })
        .sum();

    let pseudo = |lambda: f64| -> Vec<CVec> {
        d.iter()
            .map(|dj| {
                let scaled = CVec::from_fn(dj.len(), |i, _| {
                    let den = vals[i].max(0.0) + lambda;
                    if lambda == 0.0 && vals[i] <= floor {
                        zero()
                    } else {
                        dj[i] / den
                    }
                });
                &vecs * scaled
            })
            .collect()
    };

    let mut v = if null_energy <= 1e-24 * total && {
        let p0: f64 = d
            .iter()
            .map(|dj| {
                dj.iter()
                    .zip(&vals)
                    .filter(|(_, &s)| s > floor)
                    .map(|(z, &s)| z.norm_sqr() / (s * s))
                    .sum::<f64>()
            })
            .sum();
        p0 <= rho
    } {
        pseudo(0.0)
    } else {
        let mut hi = floor.max(f64::MIN_POSITIVE.sqrt());
        while power(hi) > rho {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if power(mid) > rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        pseudo(hi)
    };

    let p: f64 = v.iter().map(norm_sqr).sum();
    if p > 0.0 {
        let s = C64::new((rho / p).sqrt(), 0.0);
        v.iter_mut().for_each(|vj| *vj *= s);
    }
    v
}

/// WMMSE on point estimates of the user channels.
pub fn wmmse(channels: &[CVec], noise_var: f64, cfg: &PrecoderConfig) -> Result<WmmseOutput> {
    cfg.validate()?;
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let n = channels.first().map(|h| h.len()).unwrap_or(0);
    let mut current = matched_filter(channels, cfg.rho)?;
    let mut trace = vec![sum_rate(channels, &current, noise_var)];
    for it in 1..=cfg.i_max {
        let (u, w) = receivers_and_weights(channels, &current.vectors, noise_var);
        let mut a = CMat::zeros(n, n);
        let mut b = vec![CVec::zeros(n); channels.len()];
        accumulate_surrogate(&mut a, &mut b, channels, &u, &w, 1.0);
        current.vectors = solve_power_constrained(&a, &b, cfg.rho);
        trace.push(sum_rate(channels, &current, noise_var));
        if it >= cfg.tol_window && (trace[it] - trace[it - cfg.tol_window]).abs() < cfg.tol {
            break;
        }
    }
    Ok(WmmseOutput {
        precoders: current,
        trace,
    })
}

/// Stochastic WMMSE with a caller-supplied sampler `draw(user, rng)`.
///
/// Iteration `r` draws fresh samples for every user, evaluates receivers and
/// weights on them for the current precoders and folds the resulting
/// surrogate into running averages with step `1 / r`.
pub fn swmmse_with<R, F>(
    means: &[CVec],
    noise_var: f64,
    cfg: &PrecoderConfig,
    rng: &mut R,
    mut draw: F,
) -> Result<SwmmseOutput>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut R) -> CVec,
{
    cfg.validate()?;
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    let n = means.first().map(|h| h.len()).unwrap_or(0);
    let users = means.len();
    let mut current = matched_filter(means, cfg.rho)?;
    let mut a = CMat::zeros(n, n);
    let mut b = vec![CVec::zeros(n); users];
    let mut powers = Vec::with_capacity(cfg.i_max);
    let per_sample = 1.0 / cfg.swmmse_samples as f64;
    for r in 1..=cfg.i_max {
        let alpha = 1.0 / r as f64;
        a *= C64::new(1.0 - alpha, 0.0);
        b.iter_mut()
            .for_each(|bj| *bj *= C64::new(1.0 - alpha, 0.0));
        for _ in 0..cfg.swmmse_samples {
            let sampled: Vec<CVec> = (0..users).map(|j| draw(j, rng)).collect();
            let (u, w) = receivers_and_weights(&sampled, &current.vectors, noise_var);
            accumulate_surrogate(&mut a, &mut b, &sampled, &u, &w, alpha * per_sample);
        }
        current.vectors = solve_power_constrained(&a, &b, cfg.rho);
        powers.push(current.total_power());
    }
    Ok(SwmmseOutput {
        precoders: current,
        powers,
    })
}

/// Stochastic WMMSE fed by samples from `CN(mu_j, C_j)`, initialised with
/// matched filters on the means.
pub fn swmmse<R: Rng + ?Sized>(
    stats: &[ChannelStatistics],
    noise_var: f64,
    cfg: &PrecoderConfig,
    rng: &mut R,
) -> Result<SwmmseOutput> {
    let samplers = stats
        .iter()
        .map(GaussianSampler::new)
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<CVec> = stats.iter().map(|s| s.mu.clone()).collect();
    swmmse_with(&means, noise_var, cfg, rng, |j, r| samplers[j].draw(r))
}

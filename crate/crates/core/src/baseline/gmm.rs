//! Gaussian-mixture channel prior and its conditional-mean estimator.
//!
//! Components are zero-mean with the same structured covariance family as the
//! VQ-VAE head, `C_k = Q^H diag(c_k) Q`, so the M-step reduces to averaging
//! Q-domain power vectors.

use std::fs;
use std::path::Path;

use nalgebra::Cholesky;
use rand::Rng;
use rayon::prelude::*;

use crate::array::{Observation, PilotMatrix, QTransform, UraGeometry};
use crate::channel::ChannelDataset;
use crate::codec::{put_f64s, put_u32, ByteReader};
use crate::linalg::{c64, CMat, CVec, C64};
use crate::rng::{substream, tags};
use crate::vqvae::structured_cov;
use crate::{Error, Result};

pub const PRIOR_MAGIC: &[u8; 4] = b"FDGM";
pub const PRIOR_VERSION: u32 = 1;

const LN_PI: f64 = 1.144_729_885_849_400_2;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    /// Stop once the per-sample log-likelihood gain falls below this.
    pub tol: f64,
    /// Lower clip for the covariance parameters.
    pub floor: f64,
    pub kmeans_iter: usize,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 16,
            max_iter: 100,
            tol: 1e-6,
            floor: 1e-6,
            kmeans_iter: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    geometry: UraGeometry,
    weights: Vec<f64>,
    c: Vec<Vec<f64>>,
    covs: Vec<CMat>,
    floor: f64,
    log_likelihood: Vec<f64>,
}

/// Cholesky factor and log-determinant of one component covariance.
struct Factor {
    chol: Cholesky<C64, nalgebra::Dyn>,
    logdet: f64,
}

fn factor(m: &CMat, what: &str) -> Result<Factor> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Factorization(format!("{what} is not positive definite")))?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.re.ln())
            .sum::<f64>();
    Ok(Factor { chol, logdet })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into probabilities; returns the log normalizer.
fn softmax_in_place(v: &mut [f64]) -> f64 {
    let lse = log_sum_exp(v);
    for x in v.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}

impl GmmPrior {
    /// Prior from explicit weights and strictly positive covariance parameters.
    pub fn from_parts(
        q: &QTransform,
        weights: Vec<f64>,
        c: Vec<Vec<f64>>,
        floor: f64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != c.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} components",
                weights.len(),
                c.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(
                "mixture weights must have a positive finite sum",
            ));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        for (k, ck) in c.iter().enumerate() {
            if let Some(m) = ck.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!(
                    "component {k}: covariance parameter c[{m}] = {} is not positive",
                    ck[m]
                )));
            }
        }
        let covs = c
            .iter()
            .map(|ck| structured_cov(ck, q, 0.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            geometry: q.geometry(),
            weights,
            c,
            covs,
            floor,
            log_likelihood: Vec::new(),
        })
    }

    pub fn geometry(&self) -> UraGeometry {
        self.geometry
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.c
    }

    pub fn covariance(&self, k: usize) -> &CMat {
        &self.covs[k]
    }

    /// Mean per-sample log-likelihood after initialisation and after each EM step.
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood
    }

    fn factors(&self) -> Result<Vec<Factor>> {
        self.covs
            .iter()
            .enumerate()
            .map(|(k, c)| factor(c, &format!("GMM component {k} covariance")))
            .collect()
    }

    /// Posterior component probabilities for a noiseless channel `h`.
    pub fn responsibilities(&self, h: &CVec) -> Result<Vec<f64>> {
        if h.len() != self.geometry.n() {
            return Err(Error::dim("channel", self.geometry.n(), h.len()));
        }
        let f = self.factors()?;
        let mut r = component_log_densities(&self.weights, &f, h);
        softmax_in_place(&mut r);
        Ok(r)
    }

    /// Precomputes the per-component LMMSE filters for one pilot matrix and noise level.
    pub fn estimator(&self, pilots: &PilotMatrix, noise_var: f64) -> Result<GmmEstimator> {
        if pilots.n_antennas() != self.geometry.n() {
            return Err(Error::dim(
                "pilot matrix columns",
                self.geometry.n(),
                pilots.n_antennas(),
            ));
        }
        if !(noise_var > 0.0) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        let p = pilots.entries();
        let comps = self
            .covs
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(k, (cov, &w))| {
                let pc = p * cov;
                let mut s = &pc * p.adjoint();
                for i in 0..s.nrows() {
                    s[(i, i)] += c64(noise_var, 0.0);
                }
                let f = factor(&s, &format!("observation covariance of component {k}"))?;
                Ok(EstimatorComponent {
                    log_prior: w.ln() - f.logdet,
                    chol: f.chol,
                    gain: pc.adjoint(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmEstimator {
            comps,
            n_pilots: p.nrows(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PRIOR_MAGIC);
        put_u32(&mut out, PRIOR_VERSION);
        put_u32(&mut out, self.geometry.n_v() as u32);
        put_u32(&mut out, self.geometry.n_h() as u32);
        put_u32(&mut out, self.components() as u32);
        put_f64s(&mut out, &[self.floor]);
        put_f64s(&mut out, &self.weights);
        for ck in &self.c {
            put_f64s(&mut out, ck);
        }
        put_u32(&mut out, self.log_likelihood.len() as u32);
        put_f64s(&mut out, &self.log_likelihood);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_prior(&fs::read(path)?)
    }
}

pub fn write_prior(prior: &GmmPrior) -> Vec<u8> {
    prior.to_bytes()
}

pub fn read_prior(bytes: &[u8]) -> Result<GmmPrior> {
    let mut r = ByteReader::new(bytes);
    r.magic(PRIOR_MAGIC)?;
    let version = r.u32()?;
    if version != PRIOR_VERSION {
        return Err(r.parse_err(format!("unsupported GMM prior version {version}")));
    }
    let n_v = r.u32()? as usize;
    let n_h = r.u32()? as usize;
    let geom = UraGeometry::new(n_v, n_h).map_err(|e| r.parse_err(e.to_string()))?;
    let k = r.u32()? as usize;
    let dim = 4 * geom.n();
    r.require(8 * (1 + k + k * dim))?;
    let floor = r.f64()?;
    let weights = r.f64_vec(k)?;
    let c = (0..k).map(|_| r.f64_vec(dim)).collect::<Result<Vec<_>>>()?;
    let len = r.u32()? as usize;
    r.require(8 * len)?;
    let trace = r.f64_vec(len)?;
    r.finish()?;
    let mut prior = GmmPrior::from_parts(&QTransform::build(geom), weights, c, floor)?;
    prior.log_likelihood = trace;
    Ok(prior)
}

struct EstimatorComponent {
    log_prior: f64,
    chol: Cholesky<C64, nalgebra::Dyn>,
    /// `C_k P^H`.
    gain: CMat,
}

/// Posterior-weighted LMMSE estimator bound to one pilot matrix and noise level.
pub struct GmmEstimator {
    comps: Vec<EstimatorComponent>,
    n_pilots: usize,
}

impl GmmEstimator {
    pub fn estimate(&self, y: &CVec) -> Result<CVec> {
        if y.len() != self.n_pilots {
            return Err(Error::dim("observation", self.n_pilots, y.len()));
        }
        let solved: Vec<CVec> = self.comps.iter().map(|c| c.chol.solve(y)).collect();
        let mut logp: Vec<f64> = self
            .comps
            .iter()
            .zip(&solved)
            .map(|(c, a)| c.log_prior - y.dotc(a).re)
            .collect();
        softmax_in_place(&mut logp);
        let n = self.comps[0].gain.nrows();
        let mut h = CVec::zeros(n);
        for ((c, a), p) in self.comps.iter().zip(&solved).zip(&logp) {
            if *p > 0.0 {
                h += (&c.gain * a) * c64(*p, 0.0);
            }
        }
        Ok(h)
    }
}

/// `sum_k p(k|y) C_k P^H (P C_k P^H + sigma^2 I)^{-1} y`.
pub fn gmm_estimate(prior: &GmmPrior, obs: &Observation, pilots: &PilotMatrix) -> Result<CVec> {
    prior.estimator(pilots, obs.noise_var)?.estimate(&obs.y)
}

fn component_log_densities(weights: &[f64], factors: &[Factor], h: &CVec) -> Vec<f64> {
    let n = h.len() as f64;
    weights
        .iter()
        .zip(factors)
        .map(|(w, f)| {
            let t = f
                .chol
                .l_dirty()
                .solve_lower_triangular(h)
                .expect("Cholesky factor has a nonzero diagonal");
            // l_dirty may hold stale values above the diagonal; only the lower part is read
            w.ln() - n * LN_PI - f.logdet - t.norm_squared()
        })
        .collect()
}

/// Mean log-likelihood and row-major `N x K` responsibilities.
fn e_step(
    samples: &[CVec],
    weights: &[f64],
    c: &[Vec<f64>],
    q: &QTransform,
) -> Result<(f64, Vec<f64>)> {
    let factors = c
        .iter()
        .enumerate()
        .map(|(k, ck)| {
            factor(
                &structured_cov(ck, q, 0.0)?,
                &format!("GMM component {k} covariance"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(f64, Vec<f64>)> = samples
        .par_iter()
        .with_min_len(64)
        .map(|h| {
            let mut r = component_log_densities(weights, &factors, h);
            let ll = softmax_in_place(&mut r);
            (ll, r)
        })
        .collect();
    let mut ll = 0.0;
    let mut resp = Vec::with_capacity(samples.len() * weights.len());
    for (l, r) in rows {
        ll += l;
        resp.extend(r);
    }
    Ok((ll / samples.len() as f64, resp))
}

fn component_mass(resp: &[f64], k: usize, kk: usize) -> f64 {
    resp.iter().skip(k).step_by(kk).sum()
}

/// `c_k = diag(Q S_k Q^H)` from the responsibility-weighted power vectors.
fn moment_step(
    power: &[Vec<f64>],
    resp: &[f64],
    prev: &[Vec<f64>],
    floor: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let kk = prev.len();
    let n_samples = power.len() as f64;
    let mut weights = Vec::with_capacity(kk);
    let mut c = Vec::with_capacity(kk);
    for k in 0..kk {
        let mass = component_mass(resp, k, kk);
        weights.push(mass / n_samples);
        if mass < 1e-12 {
            c.push(prev[k].clone());
            continue;
        }
        let mut acc = vec![0.0; prev[k].len()];
        for (i, p) in power.iter().enumerate() {
            let r = resp[i * kk + k];
            for (a, v) in acc.iter_mut().zip(p) {
                *a += r * v;
            }
        }
        c.push(acc.into_iter().map(|a| (a / mass).max(floor)).collect());
    }
    (weights, c)
}

/// EM update treating `x ~ CN(0, diag(c_k))` with `h = Q^H x` as latent;
/// never lowers the likelihood.
fn latent_step(
    samples: &[CVec],
    resp: &[f64],
    prev: &[Vec<f64>],
    q: &QTransform,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let kk = prev.len();
    let n_samples = samples.len() as f64;
    let qm = q.entries();
    let mut weights = Vec::with_capacity(kk);
    let mut c = Vec::with_capacity(kk);
    for (k, ck) in prev.iter().enumerate() {
        let mass = component_mass(resp, k, kk);
        weights.push(mass / n_samples);
        if mass < 1e-12 {
            c.push(ck.clone());
            continue;
        }
        let f = factor(&structured_cov(ck, q, 0.0)?, "GMM component covariance")?;
        let cinv = f.chol.inverse();
        let b = qm * cinv;
        let d: Vec<f64> = (0..qm.nrows())
            .map(|m| {
                b.row(m)
                    .iter()
                    .zip(qm.row(m).iter())
                    .map(|(x, y)| (x * y.conj()).re)
                    .sum()
            })
            .collect();
        let mut acc = vec![0.0; ck.len()];
        for (i, h) in samples.iter().enumerate() {
            let r = resp[i * kk + k];
            if r == 0.0 {
                continue;
            }
            let g = &b * h;
            for m in 0..ck.len() {
                acc[m] += r * g[m].norm_sqr();
            }
        }
        c.push(
            ck.iter()
                .zip(&d)
                .zip(&acc)
                .map(|((cm, dm), am)| cm - cm * cm * dm + cm * cm * am / mass)
                .collect(),
        );
    }
    Ok((weights, c))
}

fn normalize_weights(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding then Lloyd iterations on sum-normalized power vectors.
fn kmeans_assign(power: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Vec<usize> {
    let shape: Vec<Vec<f64>> = power
        .iter()
        .map(|p| {
            let s: f64 = p.iter().sum();
            if s > 0.0 {
                p.iter().map(|v| v / s).collect()
            } else {
                p.clone()
            }
        })
        .collect();
    let mut rng = substream(seed, tags::GMM, 0);
    let mut centers = vec![shape[rng.random_range(0..shape.len())].clone()];
    let mut d2: Vec<f64> = shape.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..shape.len())
        };
        centers.push(shape[pick].clone());
        let c = centers.last().unwrap();
        for (d, s) in d2.iter_mut().zip(&shape) {
            *d = d.min(sq_dist(s, c));
        }
    }
    let nearest = |s: &Vec<f64>, centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let d = sq_dist(s, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    };
    let mut assign: Vec<usize> = shape.iter().map(|s| nearest(s, &centers)).collect();
    for _ in 0..iters {
        let dim = shape[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, &a) in shape.iter().zip(&assign) {
            counts[a] += 1;
            for (x, v) in sums[a].iter_mut().zip(s) {
                *x += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|x| x / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = shape.iter().map(|s| nearest(s, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

pub fn gmm_fit(
    ds: &ChannelDataset,
    components: usize,
    q: &QTransform,
    seed: u64,
) -> Result<GmmPrior> {
    gmm_fit_with(
        ds,
        q,
        &GmmConfig {
            components,
            seed,
            ..Default::default()
        },
    )
}

pub fn gmm_fit_with(ds: &ChannelDataset, q: &QTransform, cfg: &GmmConfig) -> Result<GmmPrior> {
    let k = cfg.components;
    if k == 0 {
        return Err(Error::invalid("GMM needs at least one component"));
    }
    if k > ds.len() {
        return Err(Error::invalid(format!(
            "{k} components exceed the {} available samples",
            ds.len()
        )));
    }
    if q.n() != ds.geometry.n() {
        return Err(Error::dim("Q transform", ds.geometry.n(), q.n()));
    }
    if !(cfg.floor > 0.0) {
        return Err(Error::invalid("covariance floor must be positive"));
    }
    let samples = &ds.samples;
    let power: Vec<Vec<f64>> = samples
        .iter()
        .map(|h| (q.entries() * h).iter().map(|v| v.norm_sqr()).collect())
        .collect();

    let assign = kmeans_assign(&power, k, cfg.kmeans_iter, cfg.seed);
    let dim = power[0].len();
    let global: Vec<f64> = (0..dim)
        .map(|m| power.iter().map(|p| p[m]).sum::<f64>() / power.len() as f64)
        .collect();
    let mut weights = vec![0.0; k];
    let mut c = vec![vec![0.0; dim]; k];
    for (p, &a) in power.iter().zip(&assign) {
        weights[a] += 1.0;
        for (x, v) in c[a].iter_mut().zip(p) {
            *x += v;
        }
    }
    for j in 0..k {
        if weights[j] == 0.0 {
            c[j] = global.clone();
            weights[j] = 1.0;
        } else {
            for x in c[j].iter_mut() {
                *x /= weights[j];
            }
        }
        for x in c[j].iter_mut() {
            *x = x.max(cfg.floor);
        }
    }
    normalize_weights(&mut weights);

    let (mut ll, mut resp) = e_step(samples, &weights, &c, q)?;
    let mut trace = vec![ll];
    for _ in 0..cfg.max_iter {
        let (mut w_new, mut c_new) = moment_step(&power, &resp, &c, cfg.floor);
        normalize_weights(&mut w_new);
        let (mut ll_new, mut resp_new) = e_step(samples, &w_new, &c_new, q)?;
        if ll_new < ll {
            (w_new, c_new) = latent_step(samples, &resp, &c, q)?;
            normalize_weights(&mut w_new);
            (ll_new, resp_new) = e_step(samples, &w_new, &c_new, q)?;
        }
        let gain = ll_new - ll;
        weights = w_new;
        c = c_new;
        ll = ll_new;
        resp = resp_new;
        trace.push(ll);
        if gain < cfg.tol * ll.abs().max(1.0) {
            break;
        }
    }

    let mut prior = GmmPrior::from_parts(q, weights, c, cfg.floor)?;
    prior.log_likelihood = trace;
    Ok(prior)
}

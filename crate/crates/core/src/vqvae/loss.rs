//! Reconstruction losses and the composite VQ-VAE objective
//! `L_rec + ||sg(z) - f||^2 + beta ||z - sg(f)||^2` with its gradients.
//!
//! Stop-gradient semantics: the codebook term updates only the embedding,
//! the commitment term only the encoder, and `dL_rec/df` is copied onto
//! `z` unchanged (straight-through).

use super::{structured_cov, Variant, VqvaeModel};
use crate::array::QTransform;
use crate::linalg::{cholesky, norm_sqr, stack_real, CMat, CVec, C64};
use crate::nn::{sigmoid, GradientTape};
use crate::{Error, Result};

/// Complex Gaussian negative log-likelihood
/// `log det(pi C) + (h - mu)^H C^{-1} (h - mu)` via a Cholesky factor.
pub fn nll_loss(h: &CVec, mu: &CVec, cov: &CMat) -> Result<f64> {
    let n = h.len();
    if mu.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::dim("nll operands", n, mu.len()));
    }
    let chol = cholesky(cov)?;
    let l = chol.l();
    let r = h - mu;
    let t = l
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    let logdet: f64 = (0..n).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0;
    Ok(n as f64 * std::f64::consts::PI.ln() + logdet + norm_sqr(&t))
}

/// NLL value and its gradients for `C = Q^H diag(c) Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGradient {
    pub value: f64,
    /// `dL/d[Re mu; Im mu]`.
    pub grad_mu: Vec<f64>,
    /// `dL/dc_k = a_k^H C^{-1} a_k - |a_k^H C^{-1} (h - mu)|^2` with `a_k` the
    /// `k`-th column of `Q^H`.
    pub grad_c: Vec<f64>,
}

pub fn nll_structured(h: &CVec, mu: &CVec, c: &[f64], q: &QTransform) -> Result<NllGradient> {
    let n = h.len();
    let cov = structured_cov(c, q, 0.0)?;
    let chol = cholesky(&cov)?;
    let l = chol.l();
    let r = h - mu;
    let t = l
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    // W = L^{-1} Q^H, one column per structure coefficient
    let w = l
        .solve_lower_triangular(q.adjoint())
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    let grad_c = w
        .column_iter()
        .map(|col| {
            let quad: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            let proj: C64 = col.iter().zip(t.iter()).map(|(a, b)| a.conj() * b).sum();
            quad - proj.norm_sqr()
        })
        .collect();
    let s = chol.solve(&r);
    let grad_mu = stack_real(&s).into_iter().map(|v| -2.0 * v).collect();
    let logdet: f64 = (0..n).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0;
    Ok(NllGradient {
        value: n as f64 * std::f64::consts::PI.ln() + logdet + norm_sqr(&t),
        grad_mu,
        grad_c,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    /// `||sg(z) - f||^2`.
    pub codebook: f64,
    /// `beta ||z - sg(f)||^2`.
    pub commitment: f64,
}

impl LossBreakdown {
    pub(crate) fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.reconstruction += o.reconstruction;
        self.codebook += o.codebook;
        self.commitment += o.commitment;
    }

    pub(crate) fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.reconstruction *= s;
        self.codebook *= s;
        self.commitment *= s;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqvaeGrads {
    pub encoder: GradientTape,
    pub decoder: GradientTape,
    pub embedding: Vec<f64>,
}

impl VqvaeGrads {
    pub fn zeros(model: &VqvaeModel) -> Self {
        Self {
            encoder: GradientTape::zeros_like(&model.encoder),
            decoder: GradientTape::zeros_like(&model.decoder),
            embedding: vec![0.0; model.codebook_size().unwrap_or(0)],
        }
    }

    pub fn reset(&mut self) {
        self.encoder.reset();
        self.decoder.reset();
        self.embedding.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.decoder.scale(s);
        self.embedding.iter_mut().for_each(|g| *g *= s);
    }
}

/// Reconstruction loss of a raw decoder output and its gradient.
pub(crate) fn reconstruction_head(
    model: &VqvaeModel,
    out: &[f64],
    h: &CVec,
    q: &QTransform,
) -> Result<(f64, Vec<f64>)> {
    let n = model.n();
    if h.len() != n {
        return Err(Error::dim("channel", n, h.len()));
    }
    let (mu, c) = model.split_head(out);
    match c {
        Some(c) => {
            let g = nll_structured(h, &mu, &c, q)?;
            let mut dout = g.grad_mu;
            dout.extend(
                out[2 * n..]
                    .iter()
                    .zip(&g.grad_c)
                    .map(|(&raw, &gc)| gc * sigmoid(raw)),
            );
            Ok((g.value, dout))
        }
        None => {
            let diff = &mu - h;
            let dout = stack_real(&diff).into_iter().map(|v| 2.0 * v).collect();
            Ok((norm_sqr(&diff), dout))
        }
    }
}

/// Adds one sample's gradients into `grads` and returns its loss terms.
pub(crate) fn accumulate_sample(
    model: &VqvaeModel,
    x: &[f64],
    h: &CVec,
    q: &QTransform,
    beta: f64,
    grads: &mut VqvaeGrads,
) -> Result<(LossBreakdown, Vec<u32>, Vec<f64>)> {
    let enc = model.encoder.forward_trace(x)?;
    let z = enc.output().to_vec();
    let (z, f, msg) = model.quantize(z);
    let dec = model.decoder.forward_trace(&f)?;
    let (rec, dout) = reconstruction_head(model, dec.output(), h, q)?;
    model
        .decoder
        .backward_into(&dec, &dout, &mut grads.decoder)?;
    let mut gz = grads.decoder.input.clone();

    let mut terms = LossBreakdown {
        reconstruction: rec,
        ..Default::default()
    };
    let indices = msg.indices().map(<[u32]>::to_vec).unwrap_or_default();
    if model.variant != Variant::Ae {
        let dist: f64 = z.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
        terms.codebook = dist;
        terms.commitment = beta * dist;
        for i in 0..z.len() {
            gz[i] += 2.0 * beta * (z[i] - f[i]);
            grads.embedding[indices[i] as usize] += 2.0 * (f[i] - z[i]);
        }
    }
    terms.total = terms.reconstruction + terms.codebook + terms.commitment;
    model.encoder.backward_into(&enc, &gz, &mut grads.encoder)?;
    Ok((terms, indices, z))
}

/// Loss terms and stop-gradient-aware gradients for one sample.
pub fn vqvae_total_loss(
    model: &VqvaeModel,
    x: &[f64],
    h: &CVec,
    q: &QTransform,
    beta: f64,
) -> Result<(LossBreakdown, VqvaeGrads)> {
    let mut grads = VqvaeGrads::zeros(model);
    let (terms, _, _) = accumulate_sample(model, x, h, q, beta, &mut grads)?;
    Ok((terms, grads))
}

/// Reconstruction loss of decoding the latent `f` directly, with the
/// decoder tape (its `input` field is `dL_rec/df`).
pub fn reconstruction_grad_at(
    model: &VqvaeModel,
    f: &[f64],
    h: &CVec,
    q: &QTransform,
) -> Result<(f64, GradientTape)> {
    let dec = model.decoder.forward_trace(f)?;
    let (rec, dout) = reconstruction_head(model, dec.output(), h, q)?;
    let mut tape = GradientTape::zeros_like(&model.decoder);
    model.decoder.backward_into(&dec, &dout, &mut tape)?;
    Ok((rec, tape))
}


#[cfg(test)]
mod composite_tests {
    use super::*;
    use crate::array::UraGeometry;
    use crate::nn::check_gradient;
    use crate::rng::{complex_normal_vec, seeded};
    use crate::vqvae::quantize_latent;
    use rand::Rng;

    fn small(variant: Variant, seed: u64) -> (VqvaeModel, Vec<f64>, CVec, QTransform) {
        let g = UraGeometry::new(1, 2).unwrap();
        let model = VqvaeModel::with_hidden(variant, g, 3, 4, &[6], &[5], seed).unwrap();
        let mut rng = seeded(seed + 100);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        (
            model,
            x,
            complex_normal_vec(&mut rng, 2, 1.0),
            QTransform::build(g),
        )
    }

    #[test]
    fn autoencoder_loss_is_plain_mse() {
        let (model, x, h, q) = small(Variant::Ae, 1);
        let (terms, _) = vqvae_total_loss(&model, &x, &h, &q, 0.25).unwrap();
        let mu = model.forward(&x).unwrap().mu;
        assert_eq!(terms.total, norm_sqr(&(mu - &h)));
        assert_eq!(terms.codebook + terms.commitment, 0.0);
    }

    #[test]
    fn straight_through_copies_the_decoder_input_gradient() {
        for variant in [Variant::S, Variant::I] {
            let (model, x, h, q) = small(variant, 2);
            let (_, grads) = vqvae_total_loss(&model, &x, &h, &q, 0.0).unwrap();
            let out = model.forward(&x).unwrap();
            let (_, dec_tape) = reconstruction_grad_at(&model, &out.f, &h, &q).unwrap();
            let enc_tape = model.encoder.backward(&x, &dec_tape.input).unwrap();
            let a = grads.encoder.flatten();
            let b = enc_tape.flatten();
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-10));
            assert_eq!(grads.decoder.flatten(), dec_tape.flatten());
        }
    }

    /// The composite loss with the stop-gradient operands frozen at their
    /// current values; its true gradient is the straight-through gradient.
    #[test]
    fn composite_gradients_match_frozen_surrogate() {
        let beta = 0.25;
        for variant in [Variant::S, Variant::I] {
            for seed in 0..4 {
                let (model, x, h, q) = small(variant, 10 + seed);
                let (terms, grads) = vqvae_total_loss(&model, &x, &h, &q, beta).unwrap();
                let z0 = model.encoder.forward(&x).unwrap();
                let emb = model.embedding.clone().unwrap();
                let (f0, idx) = quantize_latent(&z0, &emb);
                let surrogate = |m: &VqvaeModel| {
                    let z = m.encoder.forward(&x).unwrap();
                    let shifted: Vec<f64> = z
                        .iter()
                        .zip(&f0)
                        .zip(&z0)
                        .map(|((a, b), c)| a + b - c)
                        .collect();
                    let rec = reconstruction_grad_at(m, &shifted, &h, &q).unwrap().0;
                    let e = m.embedding.as_ref().unwrap().entries();
                    let codebook: f64 = z0
                        .iter()
                        .zip(&idx)
                        .map(|(a, &k)| (a - e[k as usize]).powi(2))
                        .sum();
                    let commit: f64 = z.iter().zip(&f0).map(|(a, b)| (a - b).powi(2)).sum();
                    rec + codebook + beta * commit
                };
                assert!((surrogate(&model) - terms.total).abs() < 1e-12);

                let mut enc = model.encoder.clone();
                let mut flat: Vec<f64> = enc.params().flat_map(|s| s.iter().copied()).collect();
                let rep = check_gradient(
                    &mut flat,
                    &grads.encoder.flatten(),
                    |p| {
                        let mut k = 0;
                        for s in enc.params_mut() {
                            let n = s.len();
                            s.copy_from_slice(&p[k..k + n]);
                            k += n;
                        }
                        let mut m = model.clone();
                        m.encoder = enc.clone();
                        surrogate(&m)
                    },
                    1e-6,
                    1e-4,
                );
                assert!(rep.passed, "{variant:?} encoder {rep:?}");

                let mut entries = emb.entries().to_vec();
                let rep = check_gradient(
                    &mut entries,
                    &grads.embedding,
                    |p| {
                        let mut m = model.clone();
                        m.embedding
                            .as_mut()
                            .unwrap()
                            .entries_mut()
                            .copy_from_slice(p);
                        surrogate(&m)
                    },
                    1e-6,
                    1e-4,
                );
                assert!(rep.passed, "{variant:?} embedding {rep:?}");
            }
        }
    }
}

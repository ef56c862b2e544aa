//! VQ-VAE feedback: scalar embedding with straight-through quantization,
//! structured-covariance decoder head, and the MT / BS inference steps.
//!
//! Complex quantities cross the real network boundary as `[Re; Im]` stacks.
//! The decoder output is `[mu (2n) | raw c (4n)]` for [`Variant::S`] and
//! `[mu (2n)]` for the reconstruction baselines.

mod loss;
mod message;
mod model;
mod train;

pub use loss::{
    nll_loss, nll_structured, reconstruction_grad_at, vqvae_total_loss, LossBreakdown, NllGradient,
    VqvaeGrads,
};
pub use message::FeedbackMessage;
pub use model::{
    decode_feedback, infer_feedback, model_to_bytes, read_model, ForwardOutput, VqvaeModel,
    MODEL_MAGIC,
};
pub use train::{train, TrainingConfig, TrainingHistory};

use crate::array::QTransform;
use crate::linalg::{CMat, C64};
use crate::{Error, Result};

/// Hidden widths of the encoder and decoder MLPs.
pub const ENCODER_HIDDEN: [usize; 2] = [256, 128];
pub const DECODER_HIDDEN: [usize; 2] = [128, 256];
pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Statistical head `(mu, c)`, trained with the Gaussian NLL.
    S,
    /// Instantaneous reconstruction, MSE loss, quantized latent.
    I,
    /// Plain autoencoder with unquantized 32-bit latents.
    Ae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "VQVAE-S",
            Variant::I => "VQVAE-I",
            Variant::Ae => "AE",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Variant::S => 0,
            Variant::I => 1,
            Variant::Ae => 2,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Variant::S),
            1 => Some(Variant::I),
            2 => Some(Variant::Ae),
            _ => None,
        }
    }

    pub fn quantized(self) -> bool {
        !matches!(self, Variant::Ae)
    }
}

/// The `C` scalar quantization levels shared by MTs and the BS.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    entries: Vec<f64>,
}

impl Embedding {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let c = entries.len();
        if c < 2 || !c.is_power_of_two() {
            return Err(Error::invalid(format!(
                "embedding size must be a power of two >= 2, got {c}"
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("embedding entries must be finite"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bits_per_index(&self) -> u32 {
        self.entries.len().trailing_zeros()
    }
}

/// Nearest embedding entry per latent coordinate (ties to the lowest index).
/// Returns the quantized vector `f` and the chosen indices.
pub fn quantize_latent(z: &[f64], emb: &Embedding) -> (Vec<f64>, Vec<u32>) {
    z.iter()
        .map(|&zi| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, &e) in emb.entries.iter().enumerate() {
                let d = (e - zi).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            (emb.entries[best], best as u32)
        })
        .unzip()
}

/// `B = N_L log2(C)`.
pub fn feedback_bits(latent_dim: usize, codebook_size: usize) -> Result<usize> {
    if codebook_size < 2 || !codebook_size.is_power_of_two() {
        return Err(Error::invalid(format!(
            "codebook size {codebook_size} is not a power of two >= 2"
        )));
    }
    Ok(latent_dim * codebook_size.trailing_zeros() as usize)
}

/// `Q^H diag(c) Q + jitter I`.
pub fn structured_cov(c: &[f64], q: &QTransform, jitter: f64) -> Result<CMat> {
    let rows = q.entries().nrows();
    if c.len() != rows {
        return Err(Error::dim(
            "structured covariance parameters",
            rows,
            c.len(),
        ));
    }
    if let Some(k) = c.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::invalid(format!(
            "covariance parameter c[{k}] = {} is negative",
            c[k]
        )));
    }
    let mut scaled = q.entries().clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row *= C64::new(c[k], 0.0);
    }
    let mut cov = q.adjoint() * scaled;
    let n = cov.nrows();
    for i in 0..n {
        cov[(i, i)] += C64::new(jitter, 0.0);
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::UraGeometry;
    use crate::linalg::{max_abs_diff, min_eigenvalue};
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn nearest_neighbour_examples() {
        let e = Embedding::new(vec![-1.0, 1.0]).unwrap();
        let (f, idx) = quantize_latent(&[0.2, -3.0], &e);
        assert_eq!(f, vec![1.0, -1.0]);
        assert_eq!(idx, vec![1, 0]);
        let (f, _) = quantize_latent(&[1.0, -1.0], &e);
        assert_eq!(f, vec![1.0, -1.0]);
        // tie goes to the lower index
        let (_, idx) = quantize_latent(&[0.0], &e);
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn quantizer_is_exhaustive_nearest() {
        let mut rng = seeded(12);
        let e = Embedding::new((0..32).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let z: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (f, idx) = quantize_latent(&z, &e);
        for i in 0..z.len() {
            assert_eq!(f[i], e.entries()[idx[i] as usize]);
            for &ec in e.entries() {
                assert!((f[i] - z[i]).abs() <= (ec - z[i]).abs());
            }
        }
    }

    #[test]
    fn bit_budgets() {
        assert_eq!(feedback_bits(8, 32).unwrap(), 40);
        assert_eq!(feedback_bits(8, 4).unwrap(), 16);
        assert_eq!(feedback_bits(8, 2).unwrap(), 8);
        assert_eq!(feedback_bits(32, 16).unwrap(), 128);
        assert!(feedback_bits(8, 6).is_err());
        assert!(Embedding::new(vec![0.0; 3]).is_err());
    }

    #[test]
    fn structured_cov_cases() {
        let geom = UraGeometry::new(2, 4).unwrap();
        let q = QTransform::build(geom);
        let ones = vec![1.0; 32];
        let c = structured_cov(&ones, &q, 0.0).unwrap();
        assert!(max_abs_diff(&c, &CMat::identity(8, 8)) < 1e-12);

        let c = structured_cov(&[0.0; 32], &q, 1e-6).unwrap();
        assert!(max_abs_diff(&c, &(CMat::identity(8, 8) * C64::new(1e-6, 0.0))) < 1e-18);

        let mut rng = seeded(4);
        let cv: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..3.0)).collect();
        let c = structured_cov(&cv, &q, 0.0).unwrap();
        assert!(max_abs_diff(&c, &c.adjoint()) < 1e-12);
        assert!(min_eigenvalue(&c) >= -1e-10);
        // entry depends only on (dv, dh)
        let idx = |v: usize, h: usize| v * 4 + h;
        for v1 in 0..2 {
            for h1 in 0..4 {
                for v2 in 0..2 {
                    for h2 in 0..4 {
                        if v1 == 0 && h1 == 0 {
                            continue;
                        }
                        // shift both antennas back towards the origin by (v1, h1) if possible
                        if v2 < v1 || h2 < h1 {
                            continue;
                        }
                        let a = c[(idx(v1, h1), idx(v2, h2))];
                        let b = c[(idx(0, 0), idx(v2 - v1, h2 - h1))];
                        assert!((a - b).norm() < 1e-10);
                    }
                }
            }
        }

        assert!(structured_cov(&[-1.0; 32], &q, 0.0).is_err());
        assert!(structured_cov(&[1.0; 8], &q, 0.0).is_err());
    }
}

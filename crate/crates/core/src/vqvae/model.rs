use std::fs;
use std::path::Path;

use rand::Rng;

use super::{
    quantize_latent, structured_cov, Embedding, FeedbackMessage, Variant, DECODER_HIDDEN,
    DEFAULT_JITTER, ENCODER_HIDDEN,
};
use crate::array::{encoder_input, Observation, PilotMatrix, QTransform, UraGeometry};
use crate::codec::{put_f64s, put_u32, ByteReader};
use crate::linalg::{unstack_real, CMat, CVec};
use crate::nn::{read_network_from, softplus, write_network, Activation, Network};
use crate::precoding::ChannelStatistics;
use crate::rng::{substream, tags};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VqvaeModel {
    pub variant: Variant,
    pub geometry: UraGeometry,
    pub latent_dim: usize,
    pub encoder: Network,
    pub decoder: Network,
    /// Absent for [`Variant::Ae`].
    pub embedding: Option<Embedding>,
    /// Floor added to every softplus covariance parameter.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub z: Vec<f64>,
    pub f: Vec<f64>,
    pub message: FeedbackMessage,
    pub mu: CVec,
    /// Covariance parameters (variant S only), floor included.
    pub c: Option<Vec<f64>>,
}

pub(crate) fn head_dim(variant: Variant, n: usize) -> usize {
    match variant {
        Variant::S => 2 * n + 4 * n,
        Variant::I | Variant::Ae => 2 * n,
    }
}

impl VqvaeModel {
    /// Fresh model with Glorot-initialised MLPs and, for quantized variants,
    /// `codebook_size` embedding entries uniform in `[-1, 1]`.
    pub fn new(
        variant: Variant,
        geometry: UraGeometry,
        latent_dim: usize,
        codebook_size: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::with_hidden(
            variant,
            geometry,
            latent_dim,
            codebook_size,
            &ENCODER_HIDDEN,
            &DECODER_HIDDEN,
            seed,
        )
    }

    /// As [`VqvaeModel::new`] with custom hidden layer widths.
    pub fn with_hidden(
        variant: Variant,
        geometry: UraGeometry,
        latent_dim: usize,
        codebook_size: usize,
        encoder_hidden: &[usize],
        decoder_hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        let n = geometry.n();
        let mut rng = substream(seed, tags::INIT, 0);
        let encoder = Network::mlp(
            8 * n,
            encoder_hidden,
            latent_dim,
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let decoder = Network::mlp(
            latent_dim,
            decoder_hidden,
            head_dim(variant, n),
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let embedding = if variant.quantized() {
            Some(Embedding::new(
                (0..codebook_size)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect(),
            )?)
        } else {
            None
        };
        Ok(Self {
            variant,
            geometry,
            latent_dim,
            encoder,
            decoder,
            embedding,
            jitter: DEFAULT_JITTER,
        })
    }

    pub fn n(&self) -> usize {
        self.geometry.n()
    }

    pub fn codebook_size(&self) -> Option<usize> {
        self.embedding.as_ref().map(Embedding::len)
    }

    /// Feedback payload in bits: `N_L log2(C)`, or `32 N_L` for the AE.
    pub fn feedback_bits(&self) -> usize {
        match &self.embedding {
            Some(e) => self.latent_dim * e.bits_per_index() as usize,
            None => 32 * self.latent_dim,
        }
    }

    /// Latent `z`, its quantization `f` and the message carrying it.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, FeedbackMessage)> {
        let z = self.encoder.forward(x)?;
        Ok(self.quantize(z))
    }

    pub(crate) fn quantize(&self, z: Vec<f64>) -> (Vec<f64>, Vec<f64>, FeedbackMessage) {
        match &self.embedding {
            Some(e) => {
                let (f, indices) = quantize_latent(&z, e);
                let msg = FeedbackMessage::Indices {
                    indices,
                    bits_per_index: e.bits_per_index(),
                };
                (z, f, msg)
            }
            None => {
                let msg = FeedbackMessage::Raw(z.iter().map(|&v| v as f32).collect());
                (z.clone(), z, msg)
            }
        }
    }

    /// Splits a raw decoder output into `mu` and (variant S) `c`.
    pub(crate) fn split_head(&self, out: &[f64]) -> (CVec, Option<Vec<f64>>) {
        let n = self.n();
        let mu = unstack_real(&out[..2 * n]);
        let c = match self.variant {
            Variant::S => Some(
                out[2 * n..]
                    .iter()
                    .map(|&r| softplus(r) + self.jitter)
                    .collect(),
            ),
            _ => None,
        };
        (mu, c)
    }

    pub fn decode_latent(&self, f: &[f64]) -> Result<(CVec, Option<Vec<f64>>)> {
        let out = self.decoder.forward(f)?;
        Ok(self.split_head(&out))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        let (z, f, message) = self.encode(x)?;
        let (mu, c) = self.decode_latent(&f)?;
        Ok(ForwardOutput {
            z,
            f,
            message,
            mu,
            c,
        })
    }

    /// Decoder input rebuilt from a received message.
    pub fn latent_from_message(&self, msg: &FeedbackMessage) -> Result<Vec<f64>> {
        match (msg, &self.embedding) {
            (FeedbackMessage::Indices { indices, .. }, Some(e)) => {
                if indices.len() != self.latent_dim {
                    return Err(Error::dim(
                        "feedback indices",
                        self.latent_dim,
                        indices.len(),
                    ));
                }
                indices
                    .iter()
                    .map(|&k| {
                        e.entries().get(k as usize).copied().ok_or_else(|| {
                            Error::invalid(format!(
                                "feedback index {k} out of range for embedding of size {}",
                                e.len()
                            ))
                        })
                    })
                    .collect()
            }
            (FeedbackMessage::Raw(v), None) => {
                if v.len() != self.latent_dim {
                    return Err(Error::dim("feedback latents", self.latent_dim, v.len()));
                }
                Ok(v.iter().map(|&x| x as f64).collect())
            }
            _ => Err(Error::invalid(format!(
                "message kind does not match model variant {}",
                self.variant.name()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        model_to_bytes(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, model_to_bytes(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_model(&fs::read(path)?)
    }
}

/// MT side: `preprocess -> encoder -> quantize`.
pub fn infer_feedback(
    model: &VqvaeModel,
    obs: &Observation,
    pilots: &PilotMatrix,
    q: &QTransform,
) -> Result<FeedbackMessage> {
    let x = encoder_input(obs, pilots, q)?;
    Ok(model.encode(&x)?.2)
}

/// BS side: rebuild `f`, run the decoder and form the channel statistics.
/// Reconstruction variants return their estimate as the mean with an
/// identity covariance.
pub fn decode_feedback(
    model: &VqvaeModel,
    msg: &FeedbackMessage,
    q: &QTransform,
) -> Result<ChannelStatistics> {
    let f = model.latent_from_message(msg)?;
    let (mu, c) = model.decode_latent(&f)?;
    let n = model.n();
    match c {
        Some(c) => {
            let cov = structured_cov(&c, q, 0.0)?;
            Ok(ChannelStatistics {
                mu,
                c: Some(c),
                cov,
            })
        }
        None => Ok(ChannelStatistics {
            mu,
            c: None,
            cov: CMat::identity(n, n),
        }),
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"FDVQ";
const MODEL_VERSION: u32 = 1;
const EMBEDDING_MAGIC: &[u8; 4] = b"EMBD";

/// `FDVQ` header (variant, geometry, latent dim, jitter), encoder and decoder
/// as `FDLB` blocks, then an `EMBD` section with the embedding entries.
pub fn model_to_bytes(m: &VqvaeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    put_u32(&mut out, m.variant.code());
    put_u32(&mut out, m.geometry.n_v() as u32);
    put_u32(&mut out, m.geometry.n_h() as u32);
    put_u32(&mut out, m.latent_dim as u32);
    put_f64s(&mut out, &[m.jitter]);
    write_network(&m.encoder, &mut out);
    write_network(&m.decoder, &mut out);
    out.extend_from_slice(EMBEDDING_MAGIC);
    let entries = m.embedding.as_ref().map(|e| e.entries()).unwrap_or(&[]);
    put_u32(&mut out, entries.len() as u32);
    put_f64s(&mut out, entries);
    out
}

pub fn read_model(bytes: &[u8]) -> Result<VqvaeModel> {
    let mut r = ByteReader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Parse {
            offset: at,
            msg: format!("unsupported model version {version}"),
        });
    }
    let at = r.offset();
    let code = r.u32()?;
    let variant = Variant::from_code(code).ok_or_else(|| Error::Parse {
        offset: at,
        msg: format!("unknown variant code {code}"),
    })?;
    let at = r.offset();
    let geometry =
        UraGeometry::new(r.u32()? as usize, r.u32()? as usize).map_err(|e| Error::Parse {
            offset: at,
            msg: e.to_string(),
        })?;
    let latent_dim = r.u32()? as usize;
    let jitter = r.f64()?;
    let encoder = read_network_from(&mut r)?;
    let decoder = read_network_from(&mut r)?;
    r.magic(EMBEDDING_MAGIC)?;
    let count = r.u32()? as usize;
    let at = r.offset();
    let entries = r.f64_vec(count)?;
    r.finish()?;
    let embedding = if variant.quantized() {
        Some(Embedding::new(entries).map_err(|e| Error::Parse {
            offset: at,
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    let n = geometry.n();
    if encoder.input_dim() != 8 * n
        || encoder.output_dim() != latent_dim
        || decoder.input_dim() != latent_dim
        || decoder.output_dim() != head_dim(variant, n)
    {
        return Err(Error::Parse {
            offset: 0,
            msg: "network dimensions do not match the model header".into(),
        });
    }
    Ok(VqvaeModel {
        variant,
        geometry,
        latent_dim,
        encoder,
        decoder,
        embedding,
        jitter,
    })
}

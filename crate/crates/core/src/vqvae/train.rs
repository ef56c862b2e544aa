//! Minibatch Adam training over noisy pilot observations.
//!
//! The parameters with the lowest validation loss seen after any epoch are
//! kept, which guards against a noisy final update.
//!
//! Every visit of a training channel draws a fresh SNR uniformly (in dB)
//! from the configured range and a fresh noise realisation, so one model
//! serves the whole SNR range.

use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::{accumulate_sample, LossBreakdown, VqvaeGrads};
use super::VqvaeModel;
use crate::array::{encoder_input, observe, snr_to_noise_var, PilotMatrix, QTransform};
use crate::channel::ChannelDataset;
use crate::nn::{AdamConfig, AdamState};
use crate::rng::{substream, tags, SimRng};
use crate::{Error, Result};

const VALIDATION_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Commitment weight.
    pub beta: f64,
    pub snr_range_db: (f64, f64),
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Floor added to the softplus covariance parameters.
    pub jitter: f64,
    pub adam: AdamConfig,
    pub rho: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            snr_range_db: (0.0, 20.0),
            epochs: 20,
            batch_size: 64,
            seed: 0,
            jitter: super::DEFAULT_JITTER,
            adam: AdamConfig::default(),
            rho: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        let (lo, hi) = self.snr_range_db;
        if !(lo <= hi) {
            return Err(Error::invalid(format!("empty SNR range [{lo}, {hi}]")));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::invalid("jitter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    /// Validation loss of the untrained model.
    pub initial_val_loss: f64,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Embedding entries re-seeded at the end of each epoch.
    pub reseeded: Vec<usize>,
    /// Epoch whose parameters were kept (0 means the initialisation).
    pub best_epoch: usize,
}

fn draw_input(
    h: &crate::CVec,
    pilots: &PilotMatrix,
    q: &QTransform,
    cfg: &TrainingConfig,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let (lo, hi) = cfg.snr_range_db;
    let snr = if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    };
    let obs = observe(h, pilots, snr_to_noise_var(snr, cfg.rho), rng)?;
    encoder_input(&obs, pilots, q)
}

/// Mean composite loss over a fixed set of `(input, channel)` pairs.
fn evaluate(
    model: &VqvaeModel,
    inputs: &[Vec<f64>],
    ds: &ChannelDataset,
    q: &QTransform,
    beta: f64,
) -> Result<f64> {
    let mut scratch = VqvaeGrads::zeros(model);
    let mut sum = LossBreakdown::default();
    for (x, h) in inputs.iter().zip(&ds.samples) {
        // gradients are discarded; the shared path keeps the loss definition in one place
        let (t, _, _) = accumulate_sample(model, x, h, q, beta, &mut scratch)?;
        sum.add(&t);
    }
    Ok(sum.scaled(1.0 / inputs.len() as f64).total)
}

pub fn train(
    model: &mut VqvaeModel,
    train_ds: &ChannelDataset,
    val_ds: &ChannelDataset,
    pilots: &PilotMatrix,
    q: &QTransform,
    cfg: &TrainingConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::invalid(
            "training and validation sets must be nonempty",
        ));
    }
    let n = model.n();
    if train_ds.geometry != model.geometry || pilots.n_antennas() != n || q.n() != n {
        return Err(Error::invalid(
            "datasets, pilots and model disagree on the geometry",
        ));
    }
    model.jitter = cfg.jitter;

    let val_inputs = val_ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = substream(cfg.seed, tags::TRAIN, VALIDATION_STREAM + i as u64);
            draw_input(h, pilots, q, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut enc_opt = AdamState::new(model.encoder.num_params(), cfg.adam);
    let mut dec_opt = AdamState::new(model.decoder.num_params(), cfg.adam);
    let codebook = model.codebook_size().unwrap_or(0);
    let mut emb_opt = AdamState::new(codebook, cfg.adam);

    let mut history = TrainingHistory {
        initial_val_loss: evaluate(model, &val_inputs, val_ds, q, cfg.beta)?,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        reseeded: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut best = (history.initial_val_loss, model.clone());

    let mut grads = VqvaeGrads::zeros(model);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = substream(cfg.seed, tags::TRAIN, epoch as u64);
        order.shuffle(&mut rng);
        let mut usage = vec![0usize; codebook];
        let mut recent_z: Vec<f64> = Vec::new();
        let mut epoch_loss = LossBreakdown::default();

        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            recent_z.clear();
            for &idx in batch {
                let h = &train_ds.samples[idx];
                let x = draw_input(h, pilots, q, cfg, &mut rng)?;
                let (terms, indices, z) = accumulate_sample(model, &x, h, q, cfg.beta, &mut grads)?;
                for k in indices {
                    usage[k as usize] += 1;
                }
                recent_z.extend_from_slice(&z);
                epoch_loss.add(&terms);
            }
            grads.scale(1.0 / batch.len() as f64);
            enc_opt.step(model.encoder.params_mut(), grads.encoder.params())?;
            dec_opt.step(model.decoder.params_mut(), grads.decoder.params())?;
            if let Some(e) = model.embedding.as_mut() {
                emb_opt.step([e.entries_mut()], [grads.embedding.as_slice()])?;
            }
        }

        let mut reseeded = 0;
        if let Some(e) = model.embedding.as_mut() {
            for (k, &used) in usage.iter().enumerate() {
                if used == 0 && !recent_z.is_empty() {
                    let pick = rng.random_range(0..recent_z.len());
                    e.entries_mut()[k] = recent_z[pick];
                    reseeded += 1;
                }
            }
        }

        history
            .train_loss
            .push(epoch_loss.scaled(1.0 / train_ds.len() as f64).total);
        let val = evaluate(model, &val_inputs, val_ds, q, cfg.beta)?;
        history.val_loss.push(val);
        history.reseeded.push(reseeded);
        if val < best.0 {
            best = (val, model.clone());
            history.best_epoch = epoch + 1;
        }
    }
    *model = best.1;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::UraGeometry;
    use crate::channel::{generate_splits, ClusterModelConfig};
    use crate::vqvae::Variant;

    fn setup(
        n_v: usize,
        n_h: usize,
        sizes: [usize; 3],
    ) -> (ChannelDataset, ChannelDataset, PilotMatrix, QTransform) {
        let g = UraGeometry::new(n_v, n_h).unwrap();
        let [t, v, _] = generate_splits(
            &ClusterModelConfig {
                seed: 4,
                ..Default::default()
            },
            g,
            sizes,
        )
        .unwrap();
        (
            t,
            v,
            PilotMatrix::build(g, 2, 1.0, 0).unwrap(),
            QTransform::build(g),
        )
    }

    #[test]
    fn one_epoch_smoke_is_reproducible() {
        let (t, v, p, q) = setup(1, 4, [100, 20, 1]);
        for variant in [Variant::S, Variant::I, Variant::Ae] {
            let cfg = TrainingConfig {
                epochs: 1,
                batch_size: 16,
                seed: 3,
                ..Default::default()
            };
            let mut a = VqvaeModel::new(variant, t.geometry, 4, 4, 1).unwrap();
            let mut b = a.clone();
            let ha = train(&mut a, &t, &v, &p, &q, &cfg).unwrap();
            let hb = train(&mut b, &t, &v, &p, &q, &cfg).unwrap();
            assert!(ha
                .train_loss
                .iter()
                .chain(&ha.val_loss)
                .all(|l| l.is_finite()));
            assert_eq!(ha, hb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (t, v, p, q) = setup(1, 2, [10, 5, 1]);
        let mut m = VqvaeModel::new(Variant::I, t.geometry, 2, 2, 0).unwrap();
        let empty = ChannelDataset {
            samples: vec![],
            ..t.clone()
        };
        assert!(train(&mut m, &empty, &v, &p, &q, &TrainingConfig::default()).is_err());
    }

    #[test]
    fn training_lowers_validation_loss_and_varies_covariance() {
        let (t, v, p, q) = setup(2, 4, [400, 50, 1]);
        let cfg = TrainingConfig {
            epochs: 30,
            batch_size: 32,
            seed: 1,
            ..Default::default()
        };
        let mut m = VqvaeModel::with_hidden(Variant::S, t.geometry, 4, 4, &[64], &[64], 2).unwrap();
        let h = train(&mut m, &t, &v, &p, &q, &cfg).unwrap();
        let best = h.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best < h.initial_val_loss, "{h:?}");
        assert!(h.best_epoch > 0);
        assert_eq!(h.val_loss[h.best_epoch - 1], best);

        let mut rng = crate::rng::seeded(4);
        let outs: Vec<Vec<f64>> = v.samples[..10]
            .iter()
            .map(|hv| {
                let obs = crate::array::observe(hv, &p, 0.05, &mut rng).unwrap();
                m.forward(&encoder_input(&obs, &p, &q).unwrap())
                    .unwrap()
                    .c
                    .unwrap()
            })
            .collect();
        assert!(outs.windows(2).any(|w| w[0] != w[1]));
    }
}

//! Datasets, trained models and the fitted prior an experiment needs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;

use super::config::{ExperimentConfig, Scheme};
use crate::array::{PilotMatrix, QTransform};
use crate::baseline::{gmm_fit_with, GmmConfig, GmmPrior};
use crate::channel::{
    generate_splits, load_csv, load_dataset, save_dataset, ChannelDataset, Split,
};
use crate::rng::{substream, tags};
use crate::vqvae::{train, TrainingHistory, Variant, VqvaeModel};
use crate::{Error, Result};

const DATA_FILES: [&str; 3] = ["train.fdch", "validation.fdch", "evaluation.fdch"];
const GMM_FILE: &str = "gmm.fdgm";
const MODEL_EXT: &str = "fdvq";

/// Independent 64-bit seed for one `(tag, index)` purpose.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    substream(seed, tag, index).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: ChannelDataset,
    pub validation: ChannelDataset,
    pub evaluation: ChannelDataset,
}

impl DataSplits {
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, ds) in DATA_FILES
            .iter()
            .zip([&self.train, &self.validation, &self.evaluation])
        {
            save_dataset(dir.join(name), ds)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |name: &str| load_dataset(dir.join(name));
        Ok(Self {
            train: load(DATA_FILES[0])?,
            validation: load(DATA_FILES[1])?,
            evaluation: load(DATA_FILES[2])?,
        })
    }

    pub fn exists_in(dir: impl AsRef<Path>) -> bool {
        DATA_FILES.iter().all(|f| dir.as_ref().join(f).is_file())
    }
}

fn load_any(path: &Path, cfg: &ExperimentConfig, split: Split) -> Result<ChannelDataset> {
    let ds = if path.extension().is_some_and(|e| e == "csv") {
        load_csv(path, cfg.geometry()?, split)?
    } else {
        load_dataset(path)?
    };
    if ds.geometry != cfg.geometry()? {
        return Err(Error::invalid(format!(
            "{} holds {}x{} channels but the config asks for {}x{}",
            path.display(),
            ds.geometry.n_v(),
            ds.geometry.n_h(),
            cfg.geometry.n_v,
            cfg.geometry.n_h
        )));
    }
    Ok(ds)
}

/// Loads the configured dataset files, or draws the synthetic splits.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<DataSplits> {
    let d = &cfg.data;
    if let (Some(t), Some(v), Some(e)) = (&d.train_path, &d.validation_path, &d.evaluation_path) {
        return Ok(DataSplits {
            train: load_any(t, cfg, Split::Train)?,
            validation: load_any(v, cfg, Split::Validation)?,
            evaluation: load_any(e, cfg, Split::Evaluation)?,
        });
    }
    let [train, validation, evaluation] = generate_splits(
        &cfg.cluster_model(derive_seed(seed, tags::CHANNEL, 0)),
        cfg.geometry()?,
        [d.train_size, d.validation_size, d.evaluation_size],
    )?;
    Ok(DataSplits {
        train,
        validation,
        evaluation,
    })
}

/// Identifies one trained network. The AE ignores the codebook size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelKey {
    pub variant: Variant,
    pub pilots: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
}

impl ModelKey {
    pub fn new(variant: Variant, pilots: usize, latent_dim: usize, codebook_size: usize) -> Self {
        let codebook_size = if variant.quantized() {
            codebook_size
        } else {
            0
        };
        Self {
            variant,
            pilots,
            latent_dim,
            codebook_size,
        }
    }

    pub fn file_name(&self) -> String {
        let tag = match self.variant {
            Variant::S => "vqvae-s",
            Variant::I => "vqvae-i",
            Variant::Ae => "ae",
        };
        format!(
            "{tag}_np{}_nl{}_c{}.{MODEL_EXT}",
            self.pilots, self.latent_dim, self.codebook_size
        )
    }

    fn seed_index(&self) -> u64 {
        let v = match self.variant {
            Variant::S => 0u64,
            Variant::I => 1,
            Variant::Ae => 2,
        };
        (v << 48)
            | ((self.pilots as u64) << 32)
            | ((self.latent_dim as u64) << 16)
            | self.codebook_size as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelStore {
    models: BTreeMap<ModelKey, VqvaeModel>,
    gmm: Option<GmmPrior>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: ModelKey, model: VqvaeModel) {
        self.models.insert(key, model);
    }

    pub fn contains(&self, key: &ModelKey) -> bool {
        self.models.contains_key(key)
    }

    pub fn get(&self, key: &ModelKey) -> Result<&VqvaeModel> {
        self.models.get(key).ok_or_else(|| {
            Error::Missing(format!(
                "trained {} model for n_p = {}, N_L = {}, C = {} ({})",
                key.variant.name(),
                key.pilots,
                key.latent_dim,
                key.codebook_size,
                key.file_name()
            ))
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &ModelKey> {
        self.models.keys()
    }

    pub fn set_gmm(&mut self, prior: GmmPrior) {
        self.gmm = Some(prior);
    }

    pub fn gmm(&self) -> Result<&GmmPrior> {
        self.gmm
            .as_ref()
            .ok_or_else(|| Error::Missing(format!("fitted GMM prior ({GMM_FILE})")))
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (key, model) in &self.models {
            let path = dir.join(key.file_name());
            model.save(&path)?;
            written.push(path);
        }
        if let Some(g) = &self.gmm {
            let path = dir.join(GMM_FILE);
            g.save(&path)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Loads every model file and the prior found in `dir`; a missing
    /// directory yields an empty store.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut store = Self::new();
        if !dir.is_dir() {
            return Ok(store);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.sort();
        for path in paths {
            if path.extension().is_some_and(|e| e == MODEL_EXT) {
                let model = VqvaeModel::load(&path)?;
                let key = ModelKey::new(
                    model.variant,
                    pilots_from_name(&path).ok_or_else(|| {
                        Error::invalid(format!(
                            "cannot read the pilot count from {}",
                            path.display()
                        ))
                    })?,
                    model.latent_dim,
                    model.codebook_size().unwrap_or(0),
                );
                store.insert(key, model);
            } else if path.file_name().is_some_and(|n| n == GMM_FILE) {
                store.gmm = Some(GmmPrior::load(&path)?);
            }
        }
        Ok(store)
    }
}

fn pilots_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let part = stem.split('_').find_map(|p| p.strip_prefix("np"))?;
    part.parse().ok()
}

/// Every model the configured schemes need across all evaluation points.
pub fn required_models(cfg: &ExperimentConfig) -> Result<Vec<ModelKey>> {
    let mut keys = Vec::new();
    for point in cfg.eval_points()? {
        for &scheme in &cfg.experiment.schemes {
            if let Some(variant) = scheme.variant() {
                let key = ModelKey::new(
                    variant,
                    point.pilots,
                    cfg.latent_dim_for(scheme, &point),
                    point.codebook_size,
                );
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
    }
    keys.sort();
    Ok(keys)
}

pub fn needs_gmm(cfg: &ExperimentConfig) -> bool {
    cfg.experiment.schemes.contains(&Scheme::DftGmm)
}

/// Trains one model from a fresh initialisation.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &DataSplits,
    key: ModelKey,
    seed: u64,
) -> Result<(VqvaeModel, TrainingHistory)> {
    let geom = cfg.geometry()?;
    let init = derive_seed(seed, tags::INIT, key.seed_index());
    let mut model = VqvaeModel::new(
        key.variant,
        geom,
        key.latent_dim,
        key.codebook_size.max(2),
        init,
    )?;
    let pilots = PilotMatrix::build(geom, key.pilots, cfg.precoder.rho, 0)?;
    let q = QTransform::build(geom);
    let tcfg = cfg.training_config(derive_seed(seed, tags::TRAIN, key.seed_index()));
    let history = train(
        &mut model,
        &data.train,
        &data.validation,
        &pilots,
        &q,
        &tcfg,
    )?;
    Ok((model, history))
}

/// Trains whatever `required_models` lists and the store lacks.
pub fn train_missing(
    cfg: &ExperimentConfig,
    data: &DataSplits,
    seed: u64,
    store: &mut ModelStore,
    mut report: impl FnMut(&ModelKey, &TrainingHistory),
) -> Result<()> {
    for key in required_models(cfg)? {
        if store.contains(&key) {
            continue;
        }
        let (model, history) = train_model(cfg, data, key, seed)?;
        report(&key, &history);
        store.insert(key, model);
    }
    Ok(())
}

pub fn fit_gmm(cfg: &ExperimentConfig, data: &DataSplits, seed: u64) -> Result<GmmPrior> {
    let g = &cfg.gmm;
    gmm_fit_with(
        &data.train,
        &QTransform::build(cfg.geometry()?),
        &GmmConfig {
            components: g.components,
            max_iter: g.max_iter,
            tol: g.tol,
            floor: g.floor,
            seed: derive_seed(seed, tags::GMM, g.components as u64),
            ..GmmConfig::default()
        },
    )
}

//! Experiment configuration files.
//!
//! The grammar is TOML restricted to the tables below; every table and every
//! key is optional except `[geometry]`. Unknown keys are rejected.
//!
//! ```toml
//! [geometry]
//! n_v = 2
//! n_h = 8
//!
//! [data]              # synthetic unless all three *_path keys are given
//! train_size = 40000
//! azimuth_deg = [-60.0, 60.0]
//!
//! [experiment]
//! schemes = ["VQVAE-S", "VQVAE-I", "DFT-LS"]
//! users = 4
//! pilots = 4
//! snr_db = 15.0
//! constellations = 500
//!
//! [feedback]
//! latent_dim = 8
//! codebook_size = 4
//! dir_bits = 8
//!
//! [sweep]
//! axis = "snr_db"     # snr_db | n_p | J | B
//! values = [0.0, 10.0, 20.0]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::array::UraGeometry;
use crate::baseline::oversampling_split;
use crate::channel::ClusterModelConfig;
use crate::nn::AdamConfig;
use crate::precoding::PrecoderConfig;
use crate::vqvae::{TrainingConfig, Variant, DEFAULT_JITTER};
use crate::{Error, Result};

/// Feedback scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "VQVAE-S")]
    VqvaeS,
    #[serde(rename = "VQVAE-I")]
    VqvaeI,
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "DFT-LS")]
    DftLs,
    #[serde(rename = "DFT-GMM")]
    DftGmm,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::VqvaeS,
        Scheme::VqvaeI,
        Scheme::Ae,
        Scheme::DftLs,
        Scheme::DftGmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::VqvaeS => "VQVAE-S",
            Scheme::VqvaeI => "VQVAE-I",
            Scheme::Ae => "AE",
            Scheme::DftLs => "DFT-LS",
            Scheme::DftGmm => "DFT-GMM",
        }
    }

    /// Network variant behind a learned scheme.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Scheme::VqvaeS => Some(Variant::S),
            Scheme::VqvaeI => Some(Variant::I),
            Scheme::Ae => Some(Variant::Ae),
            Scheme::DftLs | Scheme::DftGmm => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme `{s}`")))
    }
}

/// Sweep variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "snr_db")]
    SnrDb,
    #[serde(rename = "n_p")]
    Pilots,
    #[serde(rename = "J")]
    Users,
    #[serde(rename = "B")]
    Bits,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::SnrDb => "snr_db",
            Axis::Pilots => "n_p",
            Axis::Users => "J",
            Axis::Bits => "B",
        }
    }

    fn integral(self) -> bool {
        !matches!(self, Axis::SnrDb)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_v: usize,
    pub n_h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation_path: Option<PathBuf>,
    pub train_size: usize,
    pub validation_size: usize,
    pub evaluation_size: usize,
    pub path_count: (usize, usize),
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub angle_spread_deg: f64,
    pub power_decay: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let c = ClusterModelConfig::default();
        Self {
            train_path: None,
            validation_path: None,
            evaluation_path: None,
            train_size: 40_000,
            validation_size: 2_000,
            evaluation_size: 2_000,
            path_count: c.path_count,
            azimuth_deg: c.azimuth_deg,
            elevation_deg: c.elevation_deg,
            angle_spread_deg: c.angle_spread_deg,
            power_decay: c.power_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub schemes: Vec<Scheme>,
    /// `J`.
    pub users: usize,
    /// `n_p`.
    pub pilots: usize,
    pub snr_db: f64,
    pub constellations: usize,
    pub seed: u64,
    /// Record wall-clock seconds in the summary. Off by default so output
    /// files stay bit-reproducible.
    pub record_timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            users: 4,
            pilots: 4,
            snr_db: 15.0,
            constellations: 500,
            seed: 0,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    /// `N_L`.
    pub latent_dim: usize,
    /// `C`.
    pub codebook_size: usize,
    /// `B_Dir`; the magnitude always takes 32 bits.
    pub dir_bits: u32,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            codebook_size: 4,
            dir_bits: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr_range_db: (f64, f64),
    pub jitter: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            beta: 0.25,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            snr_range_db: (0.0, 20.0),
            jitter: DEFAULT_JITTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub components: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub floor: f64,
}

impl Default for GmmSection {
    fn default() -> Self {
        Self {
            components: 16,
            max_iter: 100,
            tol: 1e-6,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecoderSection {
    pub i_max: usize,
    pub rho: f64,
    pub tol: f64,
    pub tol_window: usize,
    pub swmmse_samples: usize,
}

impl Default for PrecoderSection {
    fn default() -> Self {
        let p = PrecoderConfig::default();
        Self {
            i_max: p.i_max,
            rho: p.rho,
            tol: p.tol,
            tol_window: p.tol_window,
            swmmse_samples: p.swmmse_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub experiment: EvalConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub gmm: GmmSection,
    #[serde(default)]
    pub precoder: PrecoderSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// Operating point of one experiment run: the values a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub users: usize,
    pub pilots: usize,
    pub snr_db: f64,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub dir_bits: u32,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `key` inside `[section]`, or 0 when absent.
fn line_of_key(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return i + 1;
                }
            }
        }
    }
    0
}

fn backticked(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

impl ExperimentConfig {
    /// Config with every default filled in.
    pub fn with_geometry(n_v: usize, n_h: usize) -> Self {
        Self {
            geometry: GeometryConfig { n_v, n_h },
            data: DataConfig::default(),
            experiment: EvalConfig::default(),
            feedback: FeedbackConfig::default(),
            training: TrainingSection::default(),
            gmm: GmmSection::default(),
            precoder: PrecoderSection::default(),
            sweep: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(0);
            let key = backticked(&msg)
                .or_else(|| e.span().map(|s| text[s].trim().to_string()))
                .unwrap_or_default();
            Error::Config { line, key, msg }
        })?;
        cfg.validate_with(text)?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical TOML with all defaults resolved; parses back to `self`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> Result<()> {
        let fail = |section: &str, key: &str, msg: String| Error::Config {
            line: line_of_key(text, section, key),
            key: format!("{section}.{key}"),
            msg,
        };
        let geom = self.geometry()?;
        let n = geom.n();

        let d = &self.data;
        let given = [&d.train_path, &d.validation_path, &d.evaluation_path]
            .iter()
            .filter(|p| p.is_some())
            .count();
        if given != 0 && given != 3 {
            return Err(fail(
                "data",
                "train_path",
                "give all three dataset paths or none".into(),
            ));
        }
        if given == 0 {
            for (key, v) in [
                ("train_size", d.train_size),
                ("validation_size", d.validation_size),
                ("evaluation_size", d.evaluation_size),
            ] {
                if v == 0 {
                    return Err(fail("data", key, "must be positive".into()));
                }
            }
            self.cluster_model(0)
                .validate()
                .map_err(|e| fail("data", "path_count", e.to_string()))?;
        }

        let e = &self.experiment;
        if e.schemes.is_empty() {
            return Err(fail(
                "experiment",
                "schemes",
                "at least one scheme is required".into(),
            ));
        }
        for (i, s) in e.schemes.iter().enumerate() {
            if e.schemes[..i].contains(s) {
                return Err(fail(
                    "experiment",
                    "schemes",
                    format!("scheme `{s}` listed twice"),
                ));
            }
        }
        if e.constellations == 0 {
            return Err(fail(
                "experiment",
                "constellations",
                "must be positive".into(),
            ));
        }
        if !e.snr_db.is_finite() {
            return Err(fail("experiment", "snr_db", "must be finite".into()));
        }

        let f = &self.feedback;
        if f.latent_dim == 0 {
            return Err(fail("feedback", "latent_dim", "must be positive".into()));
        }
        if f.codebook_size < 2 || !f.codebook_size.is_power_of_two() {
            return Err(fail(
                "feedback",
                "codebook_size",
                format!("{} is not a power of two >= 2", f.codebook_size),
            ));
        }
        if self.uses_dft() {
            oversampling_split(geom, f.dir_bits)
                .map_err(|e| fail("feedback", "dir_bits", e.to_string()))?;
        }

        self.training_config(0)
            .validate()
            .map_err(|e| fail("training", "beta", e.to_string()))?;
        if self.training.epochs == 0 {
            return Err(fail("training", "epochs", "must be positive".into()));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(fail("training", "learning_rate", "must be positive".into()));
        }
        if self.gmm.components == 0 {
            return Err(fail("gmm", "components", "must be positive".into()));
        }
        if !(self.gmm.floor > 0.0) {
            return Err(fail("gmm", "floor", "must be positive".into()));
        }
        self.precoder_config()
            .validate()
            .map_err(|e| fail("precoder", "i_max", e.to_string()))?;

        for p in self.eval_points()? {
            let key = self.sweep.as_ref().map(|_| ("sweep", "values"));
            let (section, k) = key.unwrap_or(("experiment", "users"));
            if p.users == 0 {
                return Err(fail(section, k, "at least one user is required".into()));
            }
            if p.pilots == 0 || p.pilots > n {
                let (s2, k2) = key.unwrap_or(("experiment", "pilots"));
                return Err(fail(
                    s2,
                    k2,
                    format!("pilot count {} must lie in 1..={n}", p.pilots),
                ));
            }
            if p.latent_dim == 0 {
                return Err(fail(
                    "sweep",
                    "values",
                    "bit budget too small for one latent".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<UraGeometry> {
        UraGeometry::new(self.geometry.n_v, self.geometry.n_h).map_err(|e| Error::Config {
            line: 0,
            key: "geometry".into(),
            msg: e.to_string(),
        })
    }

    pub fn uses_dft(&self) -> bool {
        self.experiment
            .schemes
            .iter()
            .any(|s| matches!(s, Scheme::DftLs | Scheme::DftGmm))
    }

    pub fn cluster_model(&self, seed: u64) -> ClusterModelConfig {
        ClusterModelConfig {
            path_count: self.data.path_count,
            azimuth_deg: self.data.azimuth_deg,
            elevation_deg: self.data.elevation_deg,
            angle_spread_deg: self.data.angle_spread_deg,
            power_decay: self.data.power_decay,
            seed,
        }
    }

    pub fn training_config(&self, seed: u64) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            beta: t.beta,
            snr_range_db: t.snr_range_db,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed,
            jitter: t.jitter,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                ..AdamConfig::default()
            },
            rho: self.precoder.rho,
        }
    }

    pub fn precoder_config(&self) -> PrecoderConfig {
        let p = &self.precoder;
        PrecoderConfig {
            i_max: p.i_max,
            rho: p.rho,
            tol: p.tol,
            tol_window: p.tol_window,
            swmmse_samples: p.swmmse_samples,
        }
    }

    /// The configured operating point without any sweep applied.
    pub fn base_point(&self) -> EvalPoint {
        EvalPoint {
            users: self.experiment.users,
            pilots: self.experiment.pilots,
            snr_db: self.experiment.snr_db,
            latent_dim: self.feedback.latent_dim,
            codebook_size: self.feedback.codebook_size,
            dir_bits: self.feedback.dir_bits,
        }
    }

    /// `base_point` with one axis set to `value`.
    ///
    /// A bit budget `B` sets `N_L = B / log2(C)` for the quantized schemes;
    /// the AE sends 32-bit latents and gets `N_L = B / 32`. DFT schemes keep
    /// their configured `B_Dir`.
    pub fn point_at(&self, axis: Axis, value: f64) -> Result<EvalPoint> {
        let mut p = self.base_point();
        let bad = |msg: String| Error::Config {
            line: 0,
            key: "sweep.values".into(),
            msg,
        };
        if axis.integral() && (value < 0.0 || value.fract() != 0.0 || !value.is_finite()) {
            return Err(bad(format!(
                "{axis} value {value} is not a nonnegative integer"
            )));
        }
        match axis {
            Axis::SnrDb => p.snr_db = value,
            Axis::Pilots => p.pilots = value as usize,
            Axis::Users => p.users = value as usize,
            Axis::Bits => {
                let b = value as usize;
                let per = p.codebook_size.trailing_zeros() as usize;
                if !b.is_multiple_of(per) {
                    return Err(bad(format!(
                        "{b} bits is not a multiple of log2(C) = {per}"
                    )));
                }
                p.latent_dim = b / per;
            }
        }
        Ok(p)
    }

    /// One point per sweep value, or the base point.
    pub fn eval_points(&self) -> Result<Vec<EvalPoint>> {
        match &self.sweep {
            None => Ok(vec![self.base_point()]),
            Some(s) => {
                if s.values.is_empty() {
                    return Err(Error::Config {
                        line: 0,
                        key: "sweep.values".into(),
                        msg: "sweep list is empty".into(),
                    });
                }
                s.values.iter().map(|&v| self.point_at(s.axis, v)).collect()
            }
        }
    }

    /// Latent size used by `scheme` at a point.
    pub fn latent_dim_for(&self, scheme: Scheme, point: &EvalPoint) -> usize {
        let bits_axis = matches!(self.sweep.as_ref().map(|s| s.axis), Some(Axis::Bits));
        if scheme == Scheme::Ae && bits_axis {
            let bits = point.latent_dim * point.codebook_size.trailing_zeros() as usize;
            (bits / 32).max(1)
        } else {
            point.latent_dim
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[geometry]\nn_v = 2\nn_h = 8\n";

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg, ExperimentConfig::with_geometry(2, 8));
        assert_eq!(cfg.experiment.constellations, 500);
        assert_eq!(cfg.precoder.i_max, 300);
        assert_eq!(cfg.training.beta, 0.25);
    }

    #[test]
    fn echo_round_trips() {
        let text = format!(
            "{MINIMAL}[experiment]\nschemes = [\"VQVAE-S\", \"DFT-LS\"]\nsnr_db = 7.5\n[sweep]\naxis = \"n_p\"\nvalues = [2, 4, 8]\n"
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.echo()).unwrap(), cfg);
        let plain = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::parse(&plain.echo()).unwrap(), plain);
    }

    #[test]
    fn misspelled_scheme_names_the_token() {
        let text = format!("{MINIMAL}[experiment]\nschemes = [\"VQVAE-S\", \"VQVAE-X\"]\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("VQVAE-X"), "{msg}");
        assert!(matches!(err, Error::Config { line: 5, .. }), "{err:?}");
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = format!("{MINIMAL}[training]\nepochs = 3\nlearnin_rate = 0.1\n");
        match ExperimentConfig::parse(&text).unwrap_err() {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 6);
                assert_eq!(key, "learnin_rate");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let text = format!("{MINIMAL}[feedback]\ncodebook_size = 3\n");
        match ExperimentConfig::parse(&text).unwrap_err() {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 5);
                assert_eq!(key, "feedback.codebook_size");
            }
            e => panic!("{e:?}"),
        }
        let text = format!("{MINIMAL}[experiment]\npilots = 17\n");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}[sweep]\naxis = \"J\"\nvalues = []\n");
        assert!(ExperimentConfig::parse(&text).is_err());
        assert!(ExperimentConfig::parse("[experiment]\nusers = 2\n").is_err());
    }

    #[test]
    fn bit_axis_maps_to_latent_sizes() {
        let mut cfg = ExperimentConfig::with_geometry(2, 8);
        cfg.sweep = Some(SweepConfig {
            axis: Axis::Bits,
            values: vec![16.0, 64.0],
        });
        let pts = cfg.eval_points().unwrap();
        assert_eq!(pts[0].latent_dim, 8);
        assert_eq!(pts[1].latent_dim, 32);
        assert_eq!(cfg.latent_dim_for(Scheme::Ae, &pts[1]), 2);
        assert_eq!(cfg.latent_dim_for(Scheme::VqvaeS, &pts[1]), 32);
        assert!(cfg.point_at(Axis::Bits, 15.0).is_err());
        assert!(cfg.point_at(Axis::Users, 2.5).is_err());
    }
}

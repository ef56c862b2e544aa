//! Synthetic clustered URA channels, dataset normalization and persistence.
//!
//! The generator draws, per sample, one cluster centre from the azimuth /
//! elevation priors and a random number of paths around it. Path `p` has a
//! circularly-symmetric Gaussian gain with mean power `decay^p`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::array::UraGeometry;
use crate::codec::{put_f64s, put_u32, put_u64, ByteReader};
use crate::linalg::{c64, norm_sqr, CVec, C64};
use crate::rng::{complex_normal, substream, tags};
use crate::{Error, Result};

pub type ChannelVector = CVec;

const VERTICAL_SPACING: f64 = 1.0;
const HORIZONTAL_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Evaluation,
}

impl Split {
    fn code(self) -> u32 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Evaluation => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            2 => Some(Split::Evaluation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub geometry: UraGeometry,
    pub samples: Vec<ChannelVector>,
    pub split: Split,
}

impl ChannelDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(norm_sqr).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModelConfig {
    /// Inclusive range of the number of paths per sample.
    pub path_count: (usize, usize),
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    /// Standard deviation of per-path angles around the cluster centre.
    pub angle_spread_deg: f64,
    pub power_decay: f64,
    pub seed: u64,
}

impl Default for ClusterModelConfig {
    fn default() -> Self {
        Self {
            path_count: (1, 5),
            azimuth_deg: (-60.0, 60.0),
            elevation_deg: (-15.0, 15.0),
            angle_spread_deg: 2.0,
            power_decay: 0.7,
            seed: 0,
        }
    }
}

impl ClusterModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.path_count;
        if lo < 1 || hi > 128 || lo > hi {
            return Err(Error::invalid(format!(
                "path count range [{lo}, {hi}] must lie within [1, 128]"
            )));
        }
        for (name, (a, b)) in [
            ("azimuth", self.azimuth_deg),
            ("elevation", self.elevation_deg),
        ] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::invalid(format!("invalid {name} prior [{a}, {b}]")));
            }
        }
        if !(self.angle_spread_deg >= 0.0) {
            return Err(Error::invalid("angle spread must be nonnegative"));
        }
        if !(self.power_decay > 0.0) {
            return Err(Error::invalid("power decay must be positive"));
        }
        Ok(())
    }
}

/// `a_v (x) a_h` for a plane wave from `(azimuth, elevation)` radians.
pub fn steering_vector(geom: UraGeometry, azimuth: f64, elevation: f64) -> CVec {
    let kv = 2.0 * PI * VERTICAL_SPACING * elevation.sin();
    let kh = 2.0 * PI * HORIZONTAL_SPACING * elevation.cos() * azimuth.sin();
    let nh = geom.n_h();
    CVec::from_fn(geom.n(), |idx, _| {
        let (v, h) = ((idx / nh) as f64, (idx % nh) as f64);
        C64::from_polar(1.0, kv * v + kh * h)
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Sample `index` of the generator's stream; depends only on `(cfg, index)`.
pub fn generate_sample(cfg: &ClusterModelConfig, geom: UraGeometry, index: u64) -> ChannelVector {
    let mut rng = substream(cfg.seed, tags::CHANNEL, index);
    let (lo, hi) = cfg.path_count;
    let paths = rng.random_range(lo..=hi);
    let az0 = uniform(&mut rng, cfg.azimuth_deg).to_radians();
    let el0 = uniform(&mut rng, cfg.elevation_deg).to_radians();
    let spread = Normal::new(0.0, cfg.angle_spread_deg.to_radians()).expect("validated spread");
    let mut h = CVec::zeros(geom.n());
    for p in 0..paths {
        let az = az0 + spread.sample(&mut rng);
        let el = el0 + spread.sample(&mut rng);
        let gain = complex_normal(&mut rng, cfg.power_decay.powi(p as i32));
        h += steering_vector(geom, az, el) * gain;
    }
    h
}

/// Samples `start .. start + count` of the generator stream.
pub fn generate_range(
    cfg: &ClusterModelConfig,
    geom: UraGeometry,
    start: u64,
    count: usize,
    split: Split,
) -> Result<ChannelDataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let samples = (0..count as u64)
        .map(|i| generate_sample(cfg, geom, start + i))
        .collect();
    Ok(ChannelDataset {
        geometry: geom,
        samples,
        split,
    })
}

pub fn generate_channels(
    cfg: &ClusterModelConfig,
    geom: UraGeometry,
    count: usize,
) -> Result<ChannelDataset> {
    generate_range(cfg, geom, 0, count, Split::Train)
}

/// Train / validation / evaluation splits drawn from disjoint stream ranges,
/// each normalized to `E[||h||^2] = n`.
pub fn generate_splits(
    cfg: &ClusterModelConfig,
    geom: UraGeometry,
    sizes: [usize; 3],
) -> Result<[ChannelDataset; 3]> {
    let [nt, nv, ne] = sizes;
    let train = generate_range(cfg, geom, 0, nt, Split::Train)?;
    let val = generate_range(cfg, geom, nt as u64, nv, Split::Validation)?;
    let eval = generate_range(cfg, geom, (nt + nv) as u64, ne, Split::Evaluation)?;
    Ok([
        normalize_dataset(&train)?.0,
        normalize_dataset(&val)?.0,
        normalize_dataset(&eval)?.0,
    ])
}

/// Scales every sample by one positive scalar so that the empirical mean of
/// `||h||^2` equals `n`. Returns the normalized dataset and the scale.
pub fn normalize_dataset(ds: &ChannelDataset) -> Result<(ChannelDataset, f64)> {
    let mean = ds.mean_power();
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::invalid("cannot normalize an all-zero dataset"));
    }
    let scale = (ds.geometry.n() as f64 / mean).sqrt();
    let s = c64(scale, 0.0);
    let samples = ds.samples.iter().map(|h| h * s).collect();
    Ok((
        ChannelDataset {
            geometry: ds.geometry,
            samples,
            split: ds.split,
        },
        scale,
    ))
}

pub const DATASET_MAGIC: &[u8; 4] = b"FDCH";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8;

/// `FDCH` binary layout (little-endian): magic, `u32` version, `u32 n_v`,
/// `u32 n_h`, `u32` split code, `u64` sample count, then per sample `n`
/// interleaved `(re, im)` `f64` pairs.
pub fn dataset_to_bytes(ds: &ChannelDataset) -> Vec<u8> {
    let n = ds.geometry.n();
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * n * 16);
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_u32(&mut out, ds.geometry.n_v() as u32);
    put_u32(&mut out, ds.geometry.n_h() as u32);
    put_u32(&mut out, ds.split.code());
    put_u64(&mut out, ds.len() as u64);
    for h in &ds.samples {
        for z in h.iter() {
            put_f64s(&mut out, &[z.re, z.im]);
        }
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<ChannelDataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let at = r.offset();
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Parse {
            offset: at,
            msg: format!("unsupported dataset version {version}"),
        });
    }
    let at = r.offset();
    let geometry =
        UraGeometry::new(r.u32()? as usize, r.u32()? as usize).map_err(|e| Error::Parse {
            offset: at,
            msg: e.to_string(),
        })?;
    let at = r.offset();
    let code = r.u32()?;
    let split = Split::from_code(code).ok_or_else(|| Error::Parse {
        offset: at,
        msg: format!("unknown split code {code}"),
    })?;
    let count = r.u64()? as usize;
    let n = geometry.n();
    let body = count
        .checked_mul(n * 16)
        .ok_or_else(|| r.parse_err("sample count overflow"))?;
    r.require(body)?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let vals = r.f64_vec(2 * n)?;
        samples.push(CVec::from_fn(n, |i, _| c64(vals[2 * i], vals[2 * i + 1])));
    }
    r.finish()?;
    Ok(ChannelDataset {
        geometry,
        samples,
        split,
    })
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &ChannelDataset) -> Result<()> {
    fs::write(path, dataset_to_bytes(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ChannelDataset> {
    dataset_from_bytes(&fs::read(path)?)
}

/// Parses CSV text with one sample per line, `re0,im0,re1,im1,...`. Blank
/// lines and lines starting with `#` are skipped.
pub fn dataset_from_csv(text: &str, geometry: UraGeometry, split: Split) -> Result<ChannelDataset> {
    let n = geometry.n();
    let mut samples = Vec::new();
    let mut offset = 0u64;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = trimmed
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                offset: start,
                msg: format!("line {}: {e}", lineno + 1),
            })?;
        if vals.len() != 2 * n {
            return Err(Error::Parse {
                offset: start,
                msg: format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    2 * n,
                    vals.len()
                ),
            });
        }
        samples.push(CVec::from_fn(n, |i, _| c64(vals[2 * i], vals[2 * i + 1])));
    }
    if samples.is_empty() {
        return Err(Error::invalid("CSV contains no samples"));
    }
    Ok(ChannelDataset {
        geometry,
        samples,
        split,
    })
}

pub fn load_csv(
    path: impl AsRef<Path>,
    geometry: UraGeometry,
    split: Split,
) -> Result<ChannelDataset> {
    dataset_from_csv(&fs::read_to_string(path)?, geometry, split)
}

/// CSV text in the ingestion format; `{:e}`-style floats round-trip exactly.
pub fn dataset_to_csv(ds: &ChannelDataset) -> String {
    let mut s = String::new();
    for h in &ds.samples {
        let row: Vec<String> = h
            .iter()
            .flat_map(|z| [format!("{:e}", z.re), format!("{:e}", z.im)])
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigen, CMat};

    fn g(v: usize, h: usize) -> UraGeometry {
        UraGeometry::new(v, h).unwrap()
    }

    #[test]
    fn broadside_is_all_ones() {
        let a = steering_vector(g(4, 16), 0.0, 0.0);
        assert!(a.iter().all(|z| (z - c64(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn steering_entries_have_unit_modulus() {
        for (az, el) in [(0.3, -0.2), (-1.1, 0.7), (2.5, 1.4)] {
            let a = steering_vector(g(3, 5), az, el);
            assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn steering_matches_hand_evaluation() {
        let az = PI / 6.0;
        let a = steering_vector(g(2, 2), az, 0.0);
        // vertical phase 2*pi*1.0*k*sin(0) = 0, horizontal 2*pi*0.5*m*sin(pi/6) = pi*m/2
        let want = [c64(1.0, 0.0), c64(0.0, 1.0), c64(1.0, 0.0), c64(0.0, 1.0)];
        for (z, w) in a.iter().zip(want) {
            assert!((z - w).norm() < 1e-15);
        }
    }

    #[test]
    fn single_path_is_scaled_steering_vector() {
        let cfg = ClusterModelConfig {
            path_count: (1, 1),
            angle_spread_deg: 0.0,
            ..Default::default()
        };
        let geom = g(2, 4);
        let h = generate_sample(&cfg, geom, 3);
        // replay the stream to recover the drawn angles
        let mut rng = substream(cfg.seed, tags::CHANNEL, 3);
        let _: usize = rng.random_range(1..=1);
        let az = uniform(&mut rng, cfg.azimuth_deg).to_radians();
        let el = uniform(&mut rng, cfg.elevation_deg).to_radians();
        let a = steering_vector(geom, az, el);
        let gain = h[0] / a[0];
        assert!((h - a * gain).norm() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ClusterModelConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate_channels(&cfg, g(2, 4), 50).unwrap();
        let b = generate_channels(&cfg, g(2, 4), 50).unwrap();
        assert_eq!(dataset_to_bytes(&a), dataset_to_bytes(&b));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = ClusterModelConfig {
            path_count: (0, 3),
            ..Default::default()
        };
        assert!(generate_channels(&bad, g(2, 2), 3).is_err());
        let bad = ClusterModelConfig {
            path_count: (1, 200),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ClusterModelConfig {
            angle_spread_deg: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(generate_channels(&ClusterModelConfig::default(), g(2, 2), 0).is_err());
    }

    #[test]
    fn narrow_priors_give_low_effective_rank() {
        let cfg = ClusterModelConfig {
            azimuth_deg: (-5.0, 5.0),
            elevation_deg: (-2.0, 2.0),
            seed: 1,
            ..Default::default()
        };
        let geom = g(2, 8);
        let ds = generate_channels(&cfg, geom, 10_000).unwrap();
        let mut cov = CMat::zeros(16, 16);
        for h in &ds.samples {
            cov += h * h.adjoint();
        }
        let (mut vals, _) = hermitian_eigen(&cov);
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = vals.iter().sum();
        let top: f64 = vals.iter().take(2).sum(); // top 10% of 16, rounded up
        assert!(top / total > 0.8, "top-2 energy fraction {}", top / total);
    }

    #[test]
    fn normalization_cases() {
        let geom = g(4, 16);
        let mut h = CVec::zeros(64);
        h[0] = c64(2.0, 0.0);
        let ds = ChannelDataset {
            geometry: geom,
            samples: vec![h],
            split: Split::Train,
        };
        let (out, _) = normalize_dataset(&ds).unwrap();
        assert!((norm_sqr(&out.samples[0]) - 64.0).abs() < 1e-12);

        let (_, s) = normalize_dataset(&out).unwrap();
        assert!((s - 1.0).abs() < 1e-12);

        let cfg = ClusterModelConfig {
            seed: 5,
            ..Default::default()
        };
        let raw = generate_channels(&cfg, g(2, 8), 500).unwrap();
        let (norm, scale) = normalize_dataset(&raw).unwrap();
        assert!((norm.mean_power() / 16.0 - 1.0).abs() < 1e-9);
        // directions preserved
        for (a, b) in raw.samples.iter().zip(&norm.samples) {
            assert!((a * c64(scale, 0.0) - b).norm() < 1e-12);
        }

        let zero = ChannelDataset {
            geometry: geom,
            samples: vec![CVec::zeros(64)],
            split: Split::Train,
        };
        assert!(normalize_dataset(&zero).is_err());
    }

    #[test]
    fn binary_round_trip_and_errors() {
        let cfg = ClusterModelConfig {
            seed: 8,
            ..Default::default()
        };
        let ds = generate_range(&cfg, g(2, 3), 10, 7, Split::Validation).unwrap();
        let bytes = dataset_to_bytes(&ds);
        assert_eq!(dataset_from_bytes(&bytes).unwrap(), ds);

        match dataset_from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, bytes.len() as u64 - 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(
            dataset_from_bytes(&bad),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut bad = bytes;
        bad[4] = 2;
        assert!(matches!(
            dataset_from_bytes(&bad),
            Err(Error::Parse { offset: 4, .. })
        ));
    }

    #[test]
    fn csv_matches_binary() {
        let cfg = ClusterModelConfig {
            seed: 9,
            ..Default::default()
        };
        let ds = generate_range(&cfg, g(2, 2), 0, 5, Split::Evaluation).unwrap();
        let csv = dataset_to_csv(&ds);
        let back = dataset_from_csv(&csv, ds.geometry, Split::Evaluation).unwrap();
        assert_eq!(dataset_to_bytes(&back), dataset_to_bytes(&ds));

        let err = dataset_from_csv("1,2,3\n", g(1, 1), Split::Train).unwrap_err();
        assert!(err.to_string().contains("expected 2 columns"));
    }
}

//! Constellation evaluation, sweeps and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::{Axis, EvalPoint, ExperimentConfig, Scheme};
use super::store::{ModelKey, ModelStore};
use crate::array::{observe_with_noise, snr_to_noise_var, PilotMatrix, QTransform};
use crate::baseline::{
    build_dft_codebook, dft_feedback, pilot_pseudoinverse, reconstruct_dft, DftCodebook,
    GmmEstimator,
};
use crate::channel::ChannelDataset;
use crate::linalg::{CMat, CVec};
use crate::precoding::{sum_rate, swmmse, wmmse, PrecoderConfig};
use crate::rng::{complex_normal_vec, substream, tags};
use crate::vqvae::{decode_feedback, infer_feedback, VqvaeModel};
use crate::{Error, Result};

pub const SUMMARY_HEADER: &str = "scheme,axis,value,mean_sumrate_bpcu,stderr,n_const,wall_s";
pub const AUDIT_HEADER: &str = "scheme,axis,value,constellation,users,sumrate_bpcu";

/// Sum-rate of one scheme on one constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationRecord {
    pub scheme: Scheme,
    pub axis: Axis,
    pub value: f64,
    pub constellation: usize,
    /// Evaluation-set indices of the selected users.
    pub users: Vec<usize>,
    pub sum_rate: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub axis: Axis,
    pub value: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_const: usize,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<SummaryRow>,
    pub audit: Vec<ConstellationRecord>,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ResultTable {
    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
        self.audit.extend(other.audit);
    }

    pub fn row(&self, scheme: Scheme, value: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.value == value)
    }

    /// Per-constellation sum-rates of one scheme at one axis value, in
    /// constellation order.
    pub fn rates(&self, scheme: Scheme, value: f64) -> Vec<f64> {
        self.audit
            .iter()
            .filter(|r| r.scheme == scheme && r.value == value)
            .map(|r| r.sum_rate)
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.scheme, r.axis, r.value, r.mean, r.stderr, r.n_const, r.wall_s
            );
        }
        s
    }

    pub fn audit_csv(&self) -> String {
        let mut s = String::from(AUDIT_HEADER);
        s.push('\n');
        for r in &self.audit {
            let users: Vec<String> = r.users.iter().map(|u| u.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.scheme,
                r.axis,
                r.value,
                r.constellation,
                users.join(";"),
                r.sum_rate
            );
        }
        s
    }

    /// Writes `<stem>_summary.csv` and `<stem>_audit.csv` into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>, stem: &str) -> Result<[PathBuf; 2]> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let summary = dir.join(format!("{stem}_summary.csv"));
        let audit = dir.join(format!("{stem}_audit.csv"));
        fs::write(&summary, self.summary_csv())?;
        fs::write(&audit, self.audit_csv())?;
        Ok([summary, audit])
    }
}

enum SchemeState<'a> {
    Statistical(&'a VqvaeModel),
    Reconstruction(&'a VqvaeModel),
    DftLs(CMat),
    DftGmm(GmmEstimator),
}

/// Everything one operating point needs, shared read-only by all workers.
/// Users drawn for one constellation and `(sum-rate, seconds)` per scheme.
type Evaluated = (Vec<usize>, Vec<(f64, f64)>);

struct PointContext<'a> {
    eval: &'a ChannelDataset,
    pilots: PilotMatrix,
    q: QTransform,
    codebook: Option<DftCodebook>,
    noise_var: f64,
    precoder: PrecoderConfig,
    schemes: Vec<(Scheme, SchemeState<'a>)>,
    users: usize,
    seed: u64,
    timing: bool,
}

impl<'a> PointContext<'a> {
    fn new(
        cfg: &ExperimentConfig,
        point: &EvalPoint,
        eval: &'a ChannelDataset,
        store: &'a ModelStore,
    ) -> Result<Self> {
        let geom = cfg.geometry()?;
        if eval.geometry != geom {
            return Err(Error::invalid(
                "evaluation set geometry differs from the config",
            ));
        }
        if point.users > eval.len() {
            return Err(Error::invalid(format!(
                "{} users requested from an evaluation set of {}",
                point.users,
                eval.len()
            )));
        }
        let rho = cfg.precoder.rho;
        let pilots = PilotMatrix::build(geom, point.pilots, rho, 0)?;
        let noise_var = snr_to_noise_var(point.snr_db, rho);
        let codebook = if cfg.uses_dft() {
            Some(build_dft_codebook(geom, point.dir_bits)?)
        } else {
            None
        };
        let mut schemes = Vec::new();
        for &scheme in &cfg.experiment.schemes {
            let state = match scheme {
                Scheme::VqvaeS | Scheme::VqvaeI | Scheme::Ae => {
                    let variant = scheme.variant().expect("learned scheme");
                    let key = ModelKey::new(
                        variant,
                        point.pilots,
                        cfg.latent_dim_for(scheme, point),
                        point.codebook_size,
                    );
                    let model = store.get(&key)?;
                    if scheme == Scheme::VqvaeS {
                        SchemeState::Statistical(model)
                    } else {
                        SchemeState::Reconstruction(model)
                    }
                }
                Scheme::DftLs => SchemeState::DftLs(pilot_pseudoinverse(&pilots)?),
                Scheme::DftGmm => SchemeState::DftGmm(store.gmm()?.estimator(&pilots, noise_var)?),
            };
            schemes.push((scheme, state));
        }
        Ok(Self {
            eval,
            q: QTransform::build(geom),
            pilots,
            codebook,
            noise_var,
            precoder: cfg.precoder_config(),
            schemes,
            users: point.users,
            seed: cfg.experiment.seed,
            timing: cfg.experiment.record_timing,
        })
    }

    /// Users are the first `J` picks of a seeded Fisher-Yates pass, so a
    /// smaller `J` selects a prefix of a larger one.
    fn draw_users(&self, c: usize) -> Vec<usize> {
        let mut rng = substream(self.seed, tags::CONSTELLATION, c as u64);
        let mut pool: Vec<usize> = (0..self.eval.len()).collect();
        for k in 0..self.users {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        pool.truncate(self.users);
        pool
    }

    /// Unit-variance pilot noise of user slot `k`; shorter pilot sequences
    /// see a prefix of the same draw.
    fn unit_noise(&self, c: usize, k: usize) -> CVec {
        let mut rng = substream(self.seed, tags::NOISE, ((c as u64) << 16) | k as u64);
        complex_normal_vec(&mut rng, self.pilots.n_pilots(), 1.0)
    }

    fn evaluate(&self, c: usize) -> Result<Evaluated> {
        let users = self.draw_users(c);
        let channels: Vec<CVec> = users
            .iter()
            .map(|&u| self.eval.samples[u].clone())
            .collect();
        let observations = channels
            .iter()
            .enumerate()
            .map(|(k, h)| {
                observe_with_noise(h, &self.pilots, self.noise_var, &self.unit_noise(c, k))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut out = Vec::with_capacity(self.schemes.len());
        for (_, state) in &self.schemes {
            let start = Instant::now();
            let precoders = match state {
                SchemeState::Statistical(model) => {
                    let stats = observations
                        .iter()
                        .map(|o| {
                            decode_feedback(
                                model,
                                &infer_feedback(model, o, &self.pilots, &self.q)?,
                                &self.q,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let mut rng = substream(self.seed, tags::PRECODER, c as u64);
                    swmmse(&stats, self.noise_var, &self.precoder, &mut rng)?.precoders
                }
                SchemeState::Reconstruction(model) => {
                    let est = observations
                        .iter()
                        .map(|o| {
                            let msg = infer_feedback(model, o, &self.pilots, &self.q)?;
                            Ok(decode_feedback(model, &msg, &self.q)?.mu)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    wmmse(&est, self.noise_var, &self.precoder)?.precoders
                }
                SchemeState::DftLs(pinv) => {
                    let est: Vec<CVec> = observations.iter().map(|o| pinv * &o.y).collect();
                    self.dft_precoders(&est)?
                }
                SchemeState::DftGmm(estimator) => {
                    let est = observations
                        .iter()
                        .map(|o| estimator.estimate(&o.y))
                        .collect::<Result<Vec<_>>>()?;
                    self.dft_precoders(&est)?
                }
            };
            let rate = sum_rate(&channels, &precoders, self.noise_var);
            let secs = if self.timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            out.push((rate, secs));
        }
        Ok((users, out))
    }

    fn dft_precoders(&self, estimates: &[CVec]) -> Result<crate::PrecoderSet> {
        let cb = self
            .codebook
            .as_ref()
            .expect("codebook built for DFT schemes");
        let recon = estimates
            .iter()
            .map(|h| reconstruct_dft(&dft_feedback(h, cb)?, cb))
            .collect::<Result<Vec<_>>>()?;
        Ok(wmmse(&recon, self.noise_var, &self.precoder)?.precoders)
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))
}

/// Evaluates every configured scheme at one operating point, labelling rows
/// with `(axis, value)`.
pub fn run_point(
    cfg: &ExperimentConfig,
    point: &EvalPoint,
    axis: Axis,
    value: f64,
    eval: &ChannelDataset,
    store: &ModelStore,
    workers: usize,
) -> Result<ResultTable> {
    let ctx = PointContext::new(cfg, point, eval, store)?;
    let n = cfg.experiment.constellations;
    let results: Vec<Evaluated> = pool(workers)?.install(|| {
        (0..n)
            .into_par_iter()
            .map(|c| ctx.evaluate(c))
            .collect::<Result<_>>()
    })?;

    let mut table = ResultTable::default();
    for (s, (scheme, _)) in ctx.schemes.iter().enumerate() {
        let rates: Vec<f64> = results.iter().map(|(_, r)| r[s].0).collect();
        if let Some(c) = rates.iter().position(|r| !r.is_finite()) {
            return Err(Error::invalid(format!(
                "{scheme} produced a non-finite sum-rate on constellation {c}"
            )));
        }
        let (mean, stderr) = mean_and_stderr(&rates);
        let wall_s = results.iter().map(|(_, r)| r[s].1).sum();
        table.rows.push(SummaryRow {
            scheme: *scheme,
            axis,
            value,
            mean,
            stderr,
            n_const: n,
            wall_s,
        });
        for (c, (users, r)) in results.iter().enumerate() {
            table.audit.push(ConstellationRecord {
                scheme: *scheme,
                axis,
                value,
                constellation: c,
                users: users.clone(),
                sum_rate: r[s].0,
                wall_s: r[s].1,
            });
        }
    }
    Ok(table)
}

/// The configured operating point, labelled as a one-value SNR axis.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    eval: &ChannelDataset,
    store: &ModelStore,
    workers: usize,
) -> Result<ResultTable> {
    let point = cfg.base_point();
    run_point(cfg, &point, Axis::SnrDb, point.snr_db, eval, store, workers)
}

/// One `run_point` per value of the configured sweep; constellation seeds are
/// shared across values.
pub fn sweep(
    cfg: &ExperimentConfig,
    eval: &ChannelDataset,
    store: &ModelStore,
    workers: usize,
) -> Result<ResultTable> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Missing("[sweep] table in the config".into()))?;
    let mut table = ResultTable::default();
    for &value in &s.values {
        let point = cfg.point_at(s.axis, value)?;
        table.extend(run_point(cfg, &point, s.axis, value, eval, store, workers)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::store::{prepare_data, train_missing};
    use crate::harness::SweepConfig;
    use crate::linalg::norm_sqr;

    fn dft_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::with_geometry(2, 4);
        cfg.data.train_size = 200;
        cfg.data.validation_size = 20;
        cfg.data.evaluation_size = 50;
        cfg.experiment.schemes = vec![Scheme::DftLs, Scheme::DftGmm];
        cfg.experiment.constellations = 10;
        cfg.experiment.users = 1;
        cfg.experiment.pilots = 8;
        cfg.feedback.dir_bits = 5;
        cfg.gmm.components = 2;
        cfg
    }

    fn store_for(cfg: &ExperimentConfig, data: &crate::harness::DataSplits) -> ModelStore {
        let mut store = ModelStore::new();
        train_missing(cfg, data, 0, &mut store, |_, _| {}).unwrap();
        if cfg.experiment.schemes.contains(&Scheme::DftGmm) {
            store.set_gmm(crate::harness::fit_gmm(cfg, data, 0).unwrap());
        }
        store
    }

    #[test]
    fn single_user_feedback_never_beats_matched_filter() {
        let cfg = dft_cfg();
        let data = prepare_data(&cfg, 0).unwrap();
        let store = store_for(&cfg, &data);
        let table = run_experiment(&cfg, &data.evaluation, &store, 1).unwrap();
        assert_eq!(table.rows.len(), 2);
        let sigma2 = snr_to_noise_var(cfg.experiment.snr_db, 1.0);
        for rec in &table.audit {
            let h = &data.evaluation.samples[rec.users[0]];
            let perfect = (1.0 + norm_sqr(h) / sigma2).log2();
            assert!(
                rec.sum_rate <= perfect + 1e-9,
                "{} > {perfect}",
                rec.sum_rate
            );
        }
        for row in &table.rows {
            assert!(row.mean.is_finite());
            let rates = table.rates(row.scheme, row.value);
            assert_eq!(rates.len(), 10);
            assert_eq!(row.mean, rates.iter().sum::<f64>() / 10.0);
        }
    }

    #[test]
    fn tables_are_reproducible_across_worker_counts() {
        let mut cfg = dft_cfg();
        cfg.experiment.users = 3;
        cfg.experiment.pilots = 4;
        let data = prepare_data(&cfg, 0).unwrap();
        let store = store_for(&cfg, &data);
        let a = run_experiment(&cfg, &data.evaluation, &store, 1).unwrap();
        let b = run_experiment(&cfg, &data.evaluation, &store, 3).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.audit_csv(), b.audit_csv());
        assert_eq!(a.rows[0].wall_s, 0.0);
    }

    #[test]
    fn learned_schemes_need_models() {
        let mut cfg = dft_cfg();
        cfg.experiment.schemes = vec![Scheme::VqvaeS];
        let data = prepare_data(&cfg, 0).unwrap();
        let err = run_experiment(&cfg, &data.evaluation, &ModelStore::new(), 1).unwrap_err();
        assert!(matches!(err, Error::Missing(_)), "{err:?}");
        cfg.experiment.schemes = vec![Scheme::DftGmm];
        assert!(run_experiment(&cfg, &data.evaluation, &ModelStore::new(), 1).is_err());
    }

    #[test]
    fn all_schemes_run_and_users_are_distinct() {
        let mut cfg = dft_cfg();
        cfg.experiment.schemes = Scheme::ALL.to_vec();
        cfg.experiment.users = 3;
        cfg.experiment.pilots = 4;
        cfg.experiment.constellations = 4;
        cfg.training.epochs = 1;
        cfg.precoder.i_max = 20;
        let data = prepare_data(&cfg, 0).unwrap();
        let store = store_for(&cfg, &data);
        let table = run_experiment(&cfg, &data.evaluation, &store, 2).unwrap();
        assert_eq!(table.rows.len(), 5);
        assert_eq!(table.audit.len(), 20);
        for rec in &table.audit {
            let mut u = rec.users.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), 3);
        }
        // every scheme saw the same users on a given constellation
        for c in 0..4 {
            let sets: Vec<_> = table
                .audit
                .iter()
                .filter(|r| r.constellation == c)
                .map(|r| &r.users)
                .collect();
            assert!(sets.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn sweep_pairs_constellations_and_shares_user_prefixes() {
        let mut cfg = dft_cfg();
        cfg.experiment.schemes = vec![Scheme::DftLs];
        cfg.experiment.pilots = 4;
        cfg.sweep = Some(SweepConfig {
            axis: Axis::Users,
            values: vec![2.0, 4.0],
        });
        let data = prepare_data(&cfg, 0).unwrap();
        let table = sweep(&cfg, &data.evaluation, &ModelStore::new(), 1).unwrap();
        assert_eq!(table.rows.len(), 2);
        for c in 0..10 {
            let two = &table.audit[c].users;
            let four = &table.audit[10 + c].users;
            assert_eq!(&four[..2], &two[..]);
        }
        let csv = table.summary_csv();
        assert!(csv.starts_with(SUMMARY_HEADER));
        assert!(csv.contains("DFT-LS,J,2,"));
    }

    #[test]
    fn timing_accumulates_when_enabled() {
        let mut cfg = dft_cfg();
        cfg.experiment.schemes = vec![Scheme::DftLs];
        cfg.experiment.record_timing = true;
        let data = prepare_data(&cfg, 0).unwrap();
        let store = ModelStore::new();
        let table = run_experiment(&cfg, &data.evaluation, &store, 1).unwrap();
        assert!(table.rows[0].wall_s > 0.0);
        assert!(table.audit.iter().all(|r| r.wall_s >= 0.0));
        assert_eq!(
            table.rows[0].wall_s,
            table.audit.iter().map(|r| r.wall_s).sum::<f64>()
        );
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vqfb_core::harness::{
    fit_gmm, needs_gmm, prepare_data, required_models, run_experiment, sweep, train_model,
    DataSplits, ExperimentConfig, ModelStore, ResultTable,
};

/// Limited-feedback robust precoding experiments.
#[derive(Parser)]
#[command(name = "vqfb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (or load) the train / validation / evaluation channel sets.
    GenData(Common),
    /// Train every VQ-VAE / AE model the config's schemes and sweep need.
    Train(Common),
    /// Fit the GMM channel prior used by the DFT-GMM scheme.
    FitGmm(Common),
    /// Evaluate all schemes at the configured operating point.
    Evaluate(Common),
    /// Evaluate all schemes over the configured sweep.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; overrides `experiment.seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory for data, models, CSVs and logs.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for constellation evaluation.
    #[arg(long, value_name = "N", default_value_t = 1)]
    workers: usize,
}

struct RunLog {
    text: String,
}

impl RunLog {
    fn new(command: &str, cfg: &ExperimentConfig, common: &Common) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# vqfb {command}");
        let _ = writeln!(text, "# seed = {}", cfg.experiment.seed);
        let _ = writeln!(text, "# workers = {}", common.workers);
        let _ = writeln!(text, "# config:");
        text.push_str(&cfg.echo());
        text.push('\n');
        Self { text }
    }

    fn line(&mut self, msg: impl AsRef<str>) {
        eprintln!("{}", msg.as_ref());
        self.text.push_str(msg.as_ref());
        self.text.push('\n');
    }

    fn write(&self, out: &Path, command: &str) -> Result<PathBuf> {
        let path = out.join(format!("{command}.log"));
        fs::write(&path, &self.text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&common.config)
        .with_context(|| format!("reading config {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn model_dir(out: &Path) -> PathBuf {
    out.join("models")
}

/// Reuses `out/data` when present, otherwise builds and saves the splits.
fn obtain_data(cfg: &ExperimentConfig, out: &Path, log: &mut RunLog) -> Result<DataSplits> {
    let dir = data_dir(out);
    if DataSplits::exists_in(&dir) {
        log.line(format!("loading datasets from {}", dir.display()));
        let data = DataSplits::load_dir(&dir)?;
        if data.evaluation.geometry != cfg.geometry()? {
            anyhow::bail!(
                "datasets in {} do not match the config geometry",
                dir.display()
            );
        }
        return Ok(data);
    }
    let data = prepare_data(cfg, cfg.experiment.seed)?;
    data.save_dir(&dir)?;
    log.line(format!("wrote datasets to {}", dir.display()));
    Ok(data)
}

fn gen_data(cfg: &ExperimentConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = prepare_data(cfg, cfg.experiment.seed)?;
    data.save_dir(data_dir(out))?;
    for (name, ds) in [
        ("train", &data.train),
        ("validation", &data.validation),
        ("evaluation", &data.evaluation),
    ] {
        log.line(format!(
            "{name}: {} channels, mean power {:.6}",
            ds.len(),
            ds.mean_power()
        ));
    }
    Ok(())
}

fn train_cmd(cfg: &ExperimentConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = obtain_data(cfg, out, log)?;
    let keys = required_models(cfg)?;
    if keys.is_empty() {
        log.line("no learned scheme configured; nothing to train");
        return Ok(());
    }
    let mut store = ModelStore::load_dir(model_dir(out))?;
    let mut history = String::from("model,epoch,train_loss,val_loss,reseeded\n");
    for key in keys {
        let start = Instant::now();
        let (model, h) = train_model(cfg, &data, key, cfg.experiment.seed)?;
        let name = key.file_name();
        let _ = writeln!(history, "{name},0,,{},0", h.initial_val_loss);
        for (e, ((t, v), r)) in h
            .train_loss
            .iter()
            .zip(&h.val_loss)
            .zip(&h.reseeded)
            .enumerate()
        {
            let _ = writeln!(history, "{name},{},{t},{v},{r}", e + 1);
        }
        log.line(format!(
            "trained {name}: validation loss {:.6} -> {:.6} ({} bits feedback, {:.1}s)",
            h.initial_val_loss,
            h.val_loss.last().copied().unwrap_or(f64::NAN),
            model.feedback_bits(),
            start.elapsed().as_secs_f64()
        ));
        store.insert(key, model);
    }
    store.save_dir(model_dir(out))?;
    fs::write(out.join("training_history.csv"), history)?;
    Ok(())
}

fn fit_gmm_cmd(cfg: &ExperimentConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = obtain_data(cfg, out, log)?;
    let start = Instant::now();
    let prior = fit_gmm(cfg, &data, cfg.experiment.seed)?;
    let trace = prior.log_likelihood_trace();
    log.line(format!(
        "fitted {}-component GMM in {} EM steps, mean log-likelihood {:.6} ({:.1}s)",
        prior.components(),
        trace.len().saturating_sub(1),
        trace.last().copied().unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    ));
    let mut csv = String::from("iteration,mean_log_likelihood\n");
    for (i, ll) in trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{ll}");
    }
    fs::write(out.join("gmm_trace.csv"), csv)?;
    let mut store = ModelStore::new();
    store.set_gmm(prior);
    store.save_dir(model_dir(out))?;
    Ok(())
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    common: &Common,
    swept: bool,
    log: &mut RunLog,
) -> Result<ResultTable> {
    let out = &common.out;
    let data = obtain_data(cfg, out, log)?;
    let store = ModelStore::load_dir(model_dir(out))?;
    if needs_gmm(cfg) && store.gmm().is_err() {
        anyhow::bail!(
            "DFT-GMM requested but no prior in {}; run `vqfb fit-gmm` first",
            model_dir(out).display()
        );
    }
    let start = Instant::now();
    let table = if swept {
        sweep(cfg, &data.evaluation, &store, common.workers)?
    } else {
        run_experiment(cfg, &data.evaluation, &store, common.workers)?
    };
    for r in &table.rows {
        log.line(format!(
            "{:<8} {}={:<6} mean {:.4} bpcu (stderr {:.4}, {} constellations)",
            r.scheme.name(),
            r.axis,
            r.value,
            r.mean,
            r.stderr,
            r.n_const
        ));
    }
    log.line(format!(
        "evaluation took {:.1}s",
        start.elapsed().as_secs_f64()
    ));
    Ok(table)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::GenData(c) => ("gen-data", c),
        Command::Train(c) => ("train", c),
        Command::FitGmm(c) => ("fit-gmm", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Sweep(c) => ("sweep", c),
    };
    if common.workers == 0 {
        anyhow::bail!("--workers must be at least 1");
    }
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let mut log = RunLog::new(name, &cfg, common);
    let out = common.out.as_path();
    match &cli.command {
        Command::GenData(_) => gen_data(&cfg, out, &mut log)?,
        Command::Train(_) => train_cmd(&cfg, out, &mut log)?,
        Command::FitGmm(_) => fit_gmm_cmd(&cfg, out, &mut log)?,
        Command::Evaluate(_) => {
            let table = evaluate_cmd(&cfg, common, false, &mut log)?;
            table.write_csv(out, "evaluate")?;
        }
        Command::Sweep(_) => {
            if cfg.sweep.is_none() {
                anyhow::bail!("{} has no [sweep] table", common.config.display());
            }
            let table = evaluate_cmd(&cfg, common, true, &mut log)?;
            table.write_csv(out, "sweep")?;
        }
    }
    let path = log.write(out, name)?;
    eprintln!("run log: {}", path.display());
    Ok(())
}

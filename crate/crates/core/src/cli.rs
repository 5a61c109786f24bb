//! Command-line entry point. Every subcommand reads its inputs, writes its
//! outputs into one directory and records them, with SHA-256 digests, in
//! `manifest.json` there.
//!
//! Exit codes: 0 success, 1 bad input (including unknown flags), 2 failed run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{self, linear_response, sorted_sample, ExperimentConfig, ExperimentName};
use crate::io::{self, ModelFile};
use crate::knockoffs::{build_augmented, GaussianKnockoffConfig, KnockoffSource, Provenance};
use crate::model::{sample_gaussian, sample_hmm, sample_markov_chain};
use crate::rng::seeded;
use crate::selection::knockoff_threshold;
use crate::stats::{cv_lasso_importance, marginal_importance, ridge_importance, LassoCvConfig, StatKind};

/// Output root used when `--out` is absent; defaults to `out`.
pub const OUT_ENV: &str = "KNOCKOFF_SIM_OUT";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "knockoff-sim", version, about = "Knockoff construction, statistics, filters and simulation studies")]
struct Cli {
    /// Worker threads for experiments (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from a model file.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Attach a linear response with this many signal variables.
        #[arg(long)]
        signals: Option<usize>,
        /// Signal coefficient on the standardized scale.
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an augmented design [X | X̃] for a dataset.
    Knockoff {
        #[arg(long)]
        data: PathBuf,
        /// Model file; required for the exact constructions.
        #[arg(long)]
        model: Option<PathBuf>,
        /// One of exact_markov, exact_hmm, hmm_reuse_latent,
        /// gaussian_second_order, permutation, whitenoise, permutation_orth,
        /// whitenoise_orth. Defaults from the model type.
        #[arg(long)]
        provenance: Option<String>,
        /// Shrinkage toward the identity for gaussian_second_order.
        #[arg(long)]
        gamma: Option<f64>,
        /// HMM knockoffs that keep the sampled latent path.
        #[arg(long)]
        reuse_latent: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Importance statistics from an augmented design with a response.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// ridge, lasso_cd or marginal_cov.
        #[arg(long, default_value = "lasso_cd")]
        statistic: String,
        /// Ridge penalty on the standardized scale.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Cross-validation folds for lasso_cd.
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Knockoff filter on a statistics file.
    Filter {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        q: f64,
        /// 1 for knockoff+, 0 for the plain knockoff threshold.
        #[arg(long, default_value_t = 1)]
        offset: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study.
    Experiment {
        /// negative_control, diagnostics, adversarial, case_control or
        /// permutation_identities.
        name: String,
        /// TOML file overriding the experiment defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Full-scale run (1000 replicates).
        #[arg(long, conflicts_with = "replicates")]
        full: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a model file, experiment config or dataset.
    Validate { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub base_seed: Option<u64>,
    pub seeds: Vec<u64>,
    /// Unix seconds; `SOURCE_DATE_EPOCH` pins both when set.
    pub started: u64,
    pub finished: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notes: Vec<String>,
}

fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn digest(path: &Path, label: String) -> Result<FileDigest> {
    let bytes = fs::read(path)?;
    Ok(FileDigest {
        path: label,
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Recompute every output digest listed in `dir/manifest.json`.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    for f in &manifest.outputs {
        let actual = digest(&dir.join(&f.path), f.path.clone())?;
        if &actual != f {
            return Err(Error::invalid(
                "manifest",
                format!("{} does not match its recorded digest", f.path),
            ));
        }
    }
    Ok(manifest)
}

struct Run {
    command: String,
    out: PathBuf,
    started: u64,
    config: serde_json::Value,
    base_seed: Option<u64>,
    seeds: Vec<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
    notes: Vec<String>,
}

impl Run {
    fn new(command: &str, out: Option<PathBuf>, label: &str) -> Result<Self> {
        let out = out.unwrap_or_else(|| {
            let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
            root.join(label)
        });
        fs::create_dir_all(&out)?;
        Ok(Run {
            command: command.into(),
            out,
            started: now(),
            config: serde_json::Value::Null,
            base_seed: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path, path.display().to_string())?);
        Ok(())
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.into());
        self.out.join(name)
    }

    fn finish(self) -> Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|f| digest(&self.out.join(f), f.clone()))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            config: self.config,
            base_seed: self.base_seed,
            seeds: self.seeds,
            started: self.started,
            finished: now(),
            inputs: self.inputs,
            outputs,
            notes: self.notes,
        };
        fs::write(self.out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        verify_manifest(&self.out)?;
        eprintln!("wrote {}", self.out.display());
        Ok(())
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Argument("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Argument(e.to_string()))
            .and_then(|pool| pool.install(|| execute(cli.command))),
        None => execute(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Sample {
            model,
            n,
            seed,
            signals,
            amplitude,
            out,
        } => sample(&model, n, seed, signals, amplitude, out),
        Command::Knockoff {
            data,
            model,
            provenance,
            gamma,
            reuse_latent,
            seed,
            out,
        } => knockoff(&data, model.as_deref(), provenance.as_deref(), gamma, reuse_latent, seed, out),
        Command::Stats {
            data,
            statistic,
            lambda,
            folds,
            seed,
            out,
        } => stats(&data, &statistic, lambda, folds, seed, out),
        Command::Filter { stats, q, offset, out } => filter(&stats, q, offset, out),
        Command::Experiment {
            name,
            config,
            seed,
            replicates,
            full,
            out,
        } => experiment(&name, config.as_deref(), seed, replicates.or(full.then_some(1000)), out),
        Command::Validate { path } => validate(&path),
    }
}

fn sample(model_path: &Path, n: usize, seed: u64, signals: Option<usize>, amplitude: f64, out: Option<PathBuf>) -> Result<()> {
    let model = io::load_model(model_path)?;
    let mut run = Run::new("sample", out, "sample")?;
    run.input(model_path)?;
    let mut rng = seeded(seed);
    let (data, latent) = match &model {
        ModelFile::MarkovChain(m) => (sample_markov_chain(m, n, &mut rng)?, None),
        ModelFile::Hmm(h) => {
            let (z, x) = sample_hmm(h, n, &mut rng)?;
            (x, Some(z))
        }
        ModelFile::Gaussian(g) => (sample_gaussian(g, n, &mut rng)?, None),
    };
    let mut truth = Vec::new();
    let data = match signals {
        Some(k) if k > data.p() => {
            return Err(Error::Argument(format!("--signals {k} exceeds p = {}", data.p())))
        }
        Some(k) => {
            truth = sorted_sample(&mut rng, data.p(), k);
            let y = linear_response(&data.x, &truth, amplitude, &mut rng);
            data.with_response(y)?
        }
        None => data,
    };
    io::write_dataset(&run.file("dataset.csv"), &data)?;
    if let Some(z) = latent {
        io::write_dataset(&run.file("latent.csv"), &z)?;
    }
    run.config = json!({
        "model": model_path.display().to_string(),
        "model_type": model.kind(),
        "n": n,
        "signals": truth,
        "amplitude": signals.map(|_| amplitude),
    });
    run.base_seed = Some(seed);
    run.finish()
}

fn knockoff(
    data_path: &Path,
    model_path: Option<&Path>,
    provenance: Option<&str>,
    gamma: Option<f64>,
    reuse_latent: bool,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let data = io::read_dataset(data_path)?;
    let model = model_path.map(io::load_model).transpose()?;
    let provenance: Provenance = match (provenance, &model) {
        (Some(p), _) => p.parse()?,
        (None, Some(ModelFile::MarkovChain(_))) => Provenance::ExactMarkov,
        (None, Some(ModelFile::Hmm(_))) if reuse_latent => Provenance::HmmReuseLatent,
        (None, Some(ModelFile::Hmm(_))) => Provenance::ExactHmm,
        (None, _) => Provenance::GaussianSecondOrder,
    };
    let provenance = match (provenance, reuse_latent) {
        (Provenance::ExactHmm, true) => Provenance::HmmReuseLatent,
        (Provenance::ExactHmm | Provenance::HmmReuseLatent, _) => provenance,
        (_, true) => {
            return Err(Error::Argument(
                "--reuse-latent only applies to HMM knockoffs".into(),
            ))
        }
        _ => provenance,
    };
    if let Some(m) = &model {
        if m.dim() != data.p() {
            return Err(Error::invalid(
                "dataset",
                format!("model has p = {}, dataset has {} columns", m.dim(), data.p()),
            ));
        }
    }
    let source = match &model {
        Some(ModelFile::MarkovChain(m)) => KnockoffSource::Markov(m),
        Some(ModelFile::Hmm(h)) => KnockoffSource::Hmm(h),
        _ => KnockoffSource::None,
    };
    let gaussian = GaussianKnockoffConfig {
        s: None,
        shrinkage_gamma: gamma,
    };
    let design = build_augmented(provenance, source, &data, &gaussian, seed)?;

    let mut run = Run::new("knockoff", out, "knockoff")?;
    run.input(data_path)?;
    if let Some(p) = model_path {
        run.input(p)?;
    }
    io::write_augmented(&run.file("augmented.csv"), &design)?;
    run.config = json!({
        "provenance": provenance.as_str(),
        "gamma": gamma,
        "reuse_latent": reuse_latent,
    });
    run.base_seed = Some(seed);
    run.finish()
}

fn stats(data_path: &Path, statistic: &str, lambda: f64, folds: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let kind: StatKind = statistic.parse()?;
    let design = io::read_augmented(data_path)?;
    let y = design.y.clone().ok_or_else(|| {
        Error::invalid("dataset", format!("{} has no y column", data_path.display()))
    })?;
    let a = design.stacked();
    let mut rng = seeded(seed);
    let mut chosen = None;
    let scores = match kind {
        StatKind::Ridge => ridge_importance(&a, &y, lambda)?,
        StatKind::LassoCd => {
            let cfg = LassoCvConfig {
                folds,
                ..LassoCvConfig::default()
            };
            let (s, l) = cv_lasso_importance(&a, &y, &cfg, &mut rng)?;
            chosen = Some(l);
            s
        }
        StatKind::MarginalCov => marginal_importance(&a, &y)?,
    };
    let mut run = Run::new("stats", out, "stats")?;
    run.input(data_path)?;
    io::write_scores(&run.file("stats.csv"), &scores)?;
    run.config = json!({
        "statistic": kind.as_str(),
        "ridge_lambda": (kind == StatKind::Ridge).then_some(lambda),
        "folds": (kind == StatKind::LassoCd).then_some(folds),
        "cv_lambda": chosen,
        "provenance": design.provenance.as_str(),
    });
    run.base_seed = Some(seed);
    run.finish()
}

fn filter(stats_path: &Path, q: f64, offset: u32, out: Option<PathBuf>) -> Result<()> {
    let scores = io::read_scores(stats_path)?;
    let sel = knockoff_threshold(&scores.w, q, offset)?;
    let mut run = Run::new("filter", out, "filter")?;
    run.input(stats_path)?;
    fs::write(run.file("selection.json"), io::selection_to_json(&sel)?)?;
    run.config = json!({ "q": q, "offset": offset });
    run.finish()
}

fn experiment(
    name: &str,
    config_path: Option<&Path>,
    seed: Option<u64>,
    replicates: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let name: ExperimentName = name.parse()?;
    let mut config = match config_path {
        Some(p) => ExperimentConfig::load(p, name)?,
        None => ExperimentConfig::defaults(name),
    };
    if let Some(s) = seed {
        config.base_seed = s;
    }
    if let Some(r) = replicates {
        config.replicates = r;
    }
    config.validate()?;
    let mut run = Run::new("experiment", out, name.as_str())?;
    if let Some(p) = config_path {
        run.input(p)?;
    }
    if let Some(m) = &config.model {
        run.input(m)?;
    }
    let report = experiments::run(&config)?;
    for f in report.write(&run.out)? {
        run.outputs.push(f);
    }
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    run.command = format!("experiment {name}");
    run.config = serde_json::to_value(&config)?;
    run.base_seed = Some(config.base_seed);
    run.seeds = report.seeds.clone();
    run.notes = report.notes.clone();
    run.finish()
}

fn validate(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let label = path.display().to_string();
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let data = io::read_dataset(path)?;
        eprintln!("ok: dataset n = {}, p = {}, response: {}", data.n(), data.p(), data.y.is_some());
        return Ok(());
    }
    // an experiment config carries `name`, a model file carries `type`
    let table: Option<toml::Table> = toml::from_str(&text).ok();
    if let Some(name) = table.as_ref().and_then(|t| t.get("name")).and_then(|v| v.as_str()) {
        let cfg = ExperimentConfig::from_toml(&text, &label, name.parse()?)?;
        eprintln!("ok: {} config, {} replicates", cfg.name, cfg.replicates);
        return Ok(());
    }
    let model = io::parse_model(&text, &label)?;
    eprintln!("ok: {} model, p = {}", model.kind(), model.dim());
    Ok(())
}

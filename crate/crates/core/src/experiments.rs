//! Seeded simulation studies. Each experiment resolves an [`ExperimentConfig`],
//! runs its replicates in parallel (replicate `r` draws from seed
//! `base_seed + r`) and assembles an [`ExperimentReport`] in replicate order,
//! so the output does not depend on the worker count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Bernoulli, Dirichlet, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ModelFile};
use crate::knockoffs::{
    gaussian_second_order, hmm_knockoff_dataset, mc_knockoff_dataset, pseudo_permutation,
    pseudo_whitenoise, GaussianKnockoffConfig, GaussianKnockoffSampler,
};
use crate::linalg;
use crate::model::{
    make_block_model, sample_gaussian_with_factor, sample_hmm, sample_markov_chain, Dataset,
    GaussianModel, HiddenMarkovModel, MarkovChainModel,
};
use crate::rng::{replicate_seed, seeded, SimRng};
use crate::selection::{bh, fdp_and_power, knockoff_threshold};
use crate::stats::{
    cv_lasso_importance, marginal_importance, ols_pvalues, ridge_importance, ImportanceScores,
    LassoCvConfig, StatKind,
};

/// The committed default HMM (5 hidden states, symbols 0/1/2, 1000 sites).
pub const DEFAULT_HMM_TOML: &str = include_str!("../models/default_hmm.toml");
/// Moderate-linkage HMM (same generator and seed, 100 sites) used by the
/// case-control study, where the default model's near-collinear sites leave
/// the lasso with no power.
pub const CASE_CONTROL_HMM_TOML: &str = include_str!("../models/case_control_hmm.toml");
/// Seed from which the committed HMMs are drawn.
pub const DEFAULT_HMM_SEED: u64 = 20_190_611;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    NegativeControl,
    Diagnostics,
    Adversarial,
    CaseControl,
    PermutationIdentities,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 5] = [
        ExperimentName::NegativeControl,
        ExperimentName::Diagnostics,
        ExperimentName::Adversarial,
        ExperimentName::CaseControl,
        ExperimentName::PermutationIdentities,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::NegativeControl => "negative_control",
            ExperimentName::Diagnostics => "diagnostics",
            ExperimentName::Adversarial => "adversarial",
            ExperimentName::CaseControl => "case_control",
            ExperimentName::PermutationIdentities => "permutation_identities",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ExperimentName::ALL.iter().map(|e| e.as_str()).collect();
                Error::Argument(format!("unknown experiment '{s}' (one of: {})", names.join(", ")))
            })
    }
}

/// Fully resolved experiment settings. Fields that an experiment does not
/// use are carried along unchanged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub q: f64,
    pub amplitude: f64,
    pub rho: f64,
    pub block_size: usize,
    pub n_signals: usize,
    pub base_seed: u64,
    pub statistic: StatKind,
    pub ridge_lambda: f64,
    pub cv_folds: usize,
    pub grid_size: usize,
    pub grid_ratio: f64,
    /// Shrinkage of the empirical correlation for second-order knockoffs.
    pub gamma: f64,
    /// Diagonal of the default diagnostics chain.
    pub stay: f64,
    pub states: usize,
    /// Model file replacing the built-in default.
    pub model: Option<PathBuf>,
    /// Prospective pool size for the case-control study.
    pub pool_size: usize,
    /// Logistic intercept for the case-control study.
    pub intercept: f64,
}

/// Everything a config file may set. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    name: Option<ExperimentName>,
    n: Option<usize>,
    p: Option<usize>,
    replicates: Option<usize>,
    q: Option<f64>,
    amplitude: Option<f64>,
    rho: Option<f64>,
    block_size: Option<usize>,
    n_signals: Option<usize>,
    base_seed: Option<u64>,
    statistic: Option<StatKind>,
    ridge_lambda: Option<f64>,
    cv_folds: Option<usize>,
    grid_size: Option<usize>,
    grid_ratio: Option<f64>,
    gamma: Option<f64>,
    stay: Option<f64>,
    states: Option<usize>,
    model: Option<PathBuf>,
    pool_size: Option<usize>,
    intercept: Option<f64>,
}

impl ExperimentConfig {
    pub fn defaults(name: ExperimentName) -> Self {
        let base = ExperimentConfig {
            name,
            n: 1000,
            p: 1000,
            replicates: 1,
            q: 0.1,
            amplitude: 0.0,
            rho: 0.0,
            block_size: 1,
            n_signals: 0,
            base_seed: 1,
            statistic: StatKind::Ridge,
            ridge_lambda: 1.0,
            cv_folds: 10,
            grid_size: 50,
            grid_ratio: 1000.0,
            gamma: 0.01,
            stay: 0.95,
            states: 2,
            model: None,
            pool_size: 0,
            intercept: 0.0,
        };
        match name {
            ExperimentName::NegativeControl => ExperimentConfig {
                n_signals: 60,
                amplitude: 1.0,
                ..base
            },
            ExperimentName::Diagnostics => base,
            ExperimentName::Adversarial => ExperimentConfig {
                p: 500,
                replicates: 100,
                amplitude: 0.25,
                rho: 0.9,
                block_size: 2,
                n_signals: 20,
                statistic: StatKind::LassoCd,
                ..base
            },
            ExperimentName::CaseControl => ExperimentConfig {
                p: 100,
                replicates: 300,
                amplitude: 0.5,
                n_signals: 10,
                statistic: StatKind::LassoCd,
                pool_size: 6000,
                intercept: -2.0,
                ..base
            },
            ExperimentName::PermutationIdentities => ExperimentConfig {
                p: 2,
                replicates: 10_000,
                rho: 0.5,
                ..base
            },
        }
    }

    /// Defaults of `name` overlaid with a TOML document. A `name` key in the
    /// document must agree with the requested experiment.
    pub fn from_toml(text: &str, label: &str, name: ExperimentName) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::AtLine {
                path: label.to_string(),
                line,
                detail: e.message().to_string(),
            }
        })?;
        if let Some(other) = file.name {
            if other != name {
                return Err(Error::invalid(
                    "config",
                    format!("{label} is a '{other}' config, not '{name}'"),
                ));
            }
        }
        let d = ExperimentConfig::defaults(name);
        let cfg = ExperimentConfig {
            name,
            n: file.n.unwrap_or(d.n),
            p: file.p.unwrap_or(d.p),
            replicates: file.replicates.unwrap_or(d.replicates),
            q: file.q.unwrap_or(d.q),
            amplitude: file.amplitude.unwrap_or(d.amplitude),
            rho: file.rho.unwrap_or(d.rho),
            block_size: file.block_size.unwrap_or(d.block_size),
            n_signals: file.n_signals.unwrap_or(d.n_signals),
            base_seed: file.base_seed.unwrap_or(d.base_seed),
            statistic: file.statistic.unwrap_or(d.statistic),
            ridge_lambda: file.ridge_lambda.unwrap_or(d.ridge_lambda),
            cv_folds: file.cv_folds.unwrap_or(d.cv_folds),
            grid_size: file.grid_size.unwrap_or(d.grid_size),
            grid_ratio: file.grid_ratio.unwrap_or(d.grid_ratio),
            gamma: file.gamma.unwrap_or(d.gamma),
            stay: file.stay.unwrap_or(d.stay),
            states: file.states.unwrap_or(d.states),
            model: file.model.or(d.model),
            pool_size: file.pool_size.unwrap_or(d.pool_size),
            intercept: file.intercept.unwrap_or(d.intercept),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, name: ExperimentName) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string(), name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("config", detail));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n < 2 || self.p == 0 {
            return bad(format!("need n >= 2 and p >= 1 (n = {}, p = {})", self.n, self.p));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q = {} outside (0, 1)", self.q));
        }
        if !self.amplitude.is_finite() || !self.intercept.is_finite() {
            return bad("amplitude and intercept must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if !(self.ridge_lambda > 0.0) {
            return bad(format!("ridge_lambda = {} must be positive", self.ridge_lambda));
        }
        if self.cv_folds < 2 || self.grid_size == 0 || !(self.grid_ratio >= 1.0) {
            return bad("need cv_folds >= 2, grid_size >= 1 and grid_ratio >= 1".into());
        }
        if self.n_signals > self.p {
            return bad(format!("n_signals = {} exceeds p = {}", self.n_signals, self.p));
        }
        if let Some(m) = &self.model {
            if !m.exists() {
                return bad(format!("model file {} does not exist", m.display()));
            }
        }
        match self.name {
            ExperimentName::Diagnostics => {
                if !(self.stay > 0.0 && self.stay < 1.0) || self.states < 2 {
                    return bad("diagnostics chain needs 0 < stay < 1 and states >= 2".into());
                }
            }
            ExperimentName::Adversarial => {
                if self.block_size == 0 || self.p % self.block_size != 0 {
                    return bad(format!("block_size {} does not divide p = {}", self.block_size, self.p));
                }
                if self.n_signals > self.p / self.block_size {
                    return bad(format!(
                        "{} signals need as many blocks, have {}",
                        self.n_signals,
                        self.p / self.block_size
                    ));
                }
                if !(self.rho > -1.0 && self.rho < 1.0) {
                    return bad(format!("rho = {} outside (-1, 1)", self.rho));
                }
            }
            ExperimentName::CaseControl => {
                if self.pool_size < self.n {
                    return bad(format!("pool_size {} smaller than n = {}", self.pool_size, self.n));
                }
            }
            ExperimentName::PermutationIdentities => {
                if !(self.rho > -1.0 && self.rho < 1.0) {
                    return bad(format!("rho = {} outside (-1, 1)", self.rho));
                }
            }
            ExperimentName::NegativeControl => {}
        }
        Ok(())
    }

    fn lasso(&self) -> LassoCvConfig {
        LassoCvConfig {
            folds: self.cv_folds,
            grid_size: self.grid_size,
            grid_ratio: self.grid_ratio,
        }
    }

    fn importance(&self, a: &DMatrix<f64>, y: &DVector<f64>, rng: &mut SimRng) -> Result<ImportanceScores> {
        match self.statistic {
            StatKind::Ridge => ridge_importance(a, y, self.ridge_lambda),
            StatKind::LassoCd => cv_lasso_importance(a, y, &self.lasso(), rng).map(|(s, _)| s),
            StatKind::MarginalCov => marginal_importance(a, y),
        }
    }
}

/// A CSV table held as formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest text that parses back to the same float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// One arm of one replicate of a selection experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub fdp: f64,
    pub power: f64,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: ExperimentName,
    pub seeds: Vec<u64>,
    /// Selection outcomes, empty for experiments that do not select.
    pub selections: Vec<SelectionRow>,
    /// Per-replicate rows written to `report.csv`.
    pub report: Table,
    pub summary: Vec<SummaryRow>,
    /// `(figure id, table)`, written to `figure_data_<id>.csv`.
    pub figures: Vec<(String, Table)>,
    /// Non-fatal failures worth surfacing.
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn summary_value(&self, method: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.metric == metric)
    }

    pub fn figure(&self, id: &str) -> Option<&Table> {
        self.figures.iter().find(|(f, _)| f == id).map(|(_, t)| t)
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["method", "metric", "value", "se", "count"]);
        for r in &self.summary {
            t.rows.push(vec![
                r.method.clone(),
                r.metric.clone(),
                fmt_f64(r.value),
                fmt_f64(r.se),
                r.count.to_string(),
            ]);
        }
        t
    }

    /// Write all tables into `dir`; returns the file names in write order.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut files = vec!["report.csv".to_string(), "summary.csv".to_string()];
        self.report.write(&dir.join("report.csv"))?;
        self.summary_table().write(&dir.join("summary.csv"))?;
        for (id, t) in &self.figures {
            let f = format!("figure_data_{id}.csv");
            t.write(&dir.join(&f))?;
            files.push(f);
        }
        Ok(files)
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    match config.name {
        ExperimentName::NegativeControl => run_negative_control(config),
        ExperimentName::Diagnostics => run_diagnostics(config),
        ExperimentName::Adversarial => run_adversarial(config),
        ExperimentName::CaseControl => run_case_control(config),
        ExperimentName::PermutationIdentities => run_permutation_identities(config),
    }
}

fn expect_name(config: &ExperimentConfig, name: ExperimentName) -> Result<()> {
    if config.name != name {
        return Err(Error::invalid(
            "config",
            format!("config is for '{}', not '{name}'", config.name),
        ));
    }
    config.validate()
}

fn seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.replicates)
        .map(|r| replicate_seed(config.base_seed, r))
        .collect()
}

/// Run `f(replicate, seed)` for every replicate in parallel, results in
/// replicate order.
fn replicates<T: Send>(
    config: &ExperimentConfig,
    f: impl Fn(usize, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    seeds(config)
        .into_par_iter()
        .enumerate()
        .map(|(r, s)| f(r, s))
        .collect()
}

/// Draw the default HMM: transition rows Dirichlet(1, .., 1) plus 400 on the
/// diagonal, emission rows Dirichlet(0.1, 0.1, 0.1). The long runs and
/// nearly deterministic emissions give the strong linkage that makes null
/// variables carry real explanatory power.
pub fn generate_default_hmm(p: usize, seed: u64) -> Result<HiddenMarkovModel> {
    generate_hmm(p, seed, 400.0, 0.1)
}

/// The committed case-control HMM: stickiness 20, emission rows Dirichlet(1, 1, 1).
pub fn generate_case_control_hmm(p: usize, seed: u64) -> Result<HiddenMarkovModel> {
    generate_hmm(p, seed, 20.0, 1.0)
}

/// Random homogeneous HMM with 5 states and 3 symbols; transition rows are
/// Dirichlet with `stickiness` extra mass on the diagonal.
pub fn generate_hmm(p: usize, seed: u64, stickiness: f64, emission_alpha: f64) -> Result<HiddenMarkovModel> {
    const K: usize = 5;
    const M: usize = 3;
    let mut rng = seeded(seed);
    fn draw<const N: usize>(alpha: [f64; N], rng: &mut SimRng) -> Result<[f64; N]> {
        let d = Dirichlet::new(alpha).map_err(|e| Error::Argument(e.to_string()))?;
        Ok(d.sample(rng))
    }
    let initial = draw([1.0; K], &mut rng)?;
    let mut transition = DMatrix::zeros(K, K);
    for i in 0..K {
        let mut alpha = [1.0; K];
        alpha[i] += stickiness;
        let row = draw(alpha, &mut rng)?;
        transition.row_mut(i).copy_from_slice(&row);
    }
    let mut emission = DMatrix::zeros(K, M);
    for i in 0..K {
        let row = draw([emission_alpha; M], &mut rng)?;
        emission.row_mut(i).copy_from_slice(&row);
    }
    normalize_rows(&mut transition);
    normalize_rows(&mut emission);
    let s: f64 = initial.iter().sum();
    let initial: Vec<f64> = initial.iter().map(|v| v / s).collect();
    let latent = MarkovChainModel::homogeneous(p, initial, transition)?;
    HiddenMarkovModel::new(latent, vec![emission; p])
}

// Dirichlet draws sum to one only up to rounding.
fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
}

/// A homogeneous HMM re-instantiated at length `p`.
fn with_length(model: &HiddenMarkovModel, p: usize) -> Result<HiddenMarkovModel> {
    if model.len() == p {
        return Ok(model.clone());
    }
    let latent = model.latent();
    let homogeneous = latent.transitions().windows(2).all(|w| w[0] == w[1])
        && model.emissions().windows(2).all(|w| w[0] == w[1]);
    if !homogeneous || latent.transitions().is_empty() {
        return Err(Error::invalid(
            "config",
            format!(
                "model has length {} but the config asks for p = {p}; only homogeneous models can be resized",
                model.len()
            ),
        ));
    }
    let chain = MarkovChainModel::homogeneous(p, latent.initial().to_vec(), latent.transitions()[0].clone())?;
    HiddenMarkovModel::new(chain, vec![model.emissions()[0].clone(); p])
}

fn hmm_for(config: &ExperimentConfig, default: (&str, &str)) -> Result<HiddenMarkovModel> {
    let model = match &config.model {
        Some(path) => match io::load_model(path)? {
            ModelFile::Hmm(h) => h,
            other => {
                return Err(Error::invalid(
                    "config",
                    format!("{} is a {} model, experiment needs an hmm", path.display(), other.kind()),
                ))
            }
        },
        None => match io::parse_model(default.0, default.1)? {
            ModelFile::Hmm(h) => h,
            _ => unreachable!("the default model is an hmm"),
        },
    };
    with_length(&model, config.p)
}

fn chain_for(config: &ExperimentConfig) -> Result<MarkovChainModel> {
    match &config.model {
        Some(path) => match io::load_model(path)? {
            ModelFile::MarkovChain(c) if c.len() == config.p => Ok(c),
            ModelFile::MarkovChain(c) => Err(Error::invalid(
                "config",
                format!("{} has length {}, config p = {}", path.display(), c.len(), config.p),
            )),
            other => Err(Error::invalid(
                "config",
                format!("{} is a {} model, experiment needs a markov_chain", path.display(), other.kind()),
            )),
        },
        None => MarkovChainModel::symmetric(config.p, config.states, config.stay),
    }
}

/// `y = Σ_{j∈S} amplitude · z_j + ε`, with `z_j` the standardized column.
pub(crate) fn linear_response(x: &DMatrix<f64>, signals: &[usize], amplitude: f64, rng: &mut SimRng) -> DVector<f64> {
    let (z, _, _) = linalg::standardize(x);
    let n = x.nrows();
    DVector::from_fn(n, |i, _| {
        signals.iter().map(|&j| amplitude * z[(i, j)]).sum::<f64>()
    }) + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn sorted_sample(rng: &mut SimRng, len: usize, amount: usize) -> Vec<usize> {
    let mut v = index::sample(rng, len, amount).into_vec();
    v.sort_unstable();
    v
}

fn augment(x: &DMatrix<f64>, x_tilde: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut a = DMatrix::zeros(n, 2 * p);
    a.columns_mut(0, p).copy_from(x);
    a.columns_mut(p, p).copy_from(x_tilde);
    a
}

fn summarize(method: &str, metric: &str, values: &[f64]) -> SummaryRow {
    let (value, se) = linalg::mean_and_se(values);
    SummaryRow {
        method: method.into(),
        metric: metric.into(),
        value,
        se,
        count: values.len(),
    }
}

/// Mean FDP, power and selection count per method, in first-seen order.
pub fn summarize_selections(rows: &[SelectionRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let of: Vec<&SelectionRow> = rows.iter().filter(|r| r.method == m).collect();
        let fdp: Vec<f64> = of.iter().map(|r| r.fdp).collect();
        let power: Vec<f64> = of.iter().map(|r| r.power).collect();
        let count: Vec<f64> = of.iter().map(|r| r.n_selected as f64).collect();
        out.push(summarize(m, "fdp", &fdp));
        out.push(summarize(m, "power", &power));
        out.push(summarize(m, "n_selected", &count));
    }
    out
}

fn selection_table(rows: &[SelectionRow]) -> Table {
    let mut t = Table::new(&["replicate", "seed", "method", "fdp", "power", "n_selected"]);
    for r in rows {
        t.rows.push(vec![
            r.replicate.to_string(),
            r.seed.to_string(),
            r.method.clone(),
            fmt_f64(r.fdp),
            fmt_f64(r.power),
            r.n_selected.to_string(),
        ]);
    }
    t
}

/// Variables with a nonzero coefficient: none when the amplitude is zero.
fn nonzero<'a>(config: &ExperimentConfig, signals: &'a [usize]) -> &'a [usize] {
    if config.amplitude == 0.0 {
        &[]
    } else {
        signals
    }
}

fn selection_row(replicate: usize, seed: u64, method: &str, selected: &[usize], truth: &[usize]) -> SelectionRow {
    let (fdp, power) = fdp_and_power(selected, truth);
    SelectionRow {
        replicate,
        seed,
        method: method.into(),
        fdp,
        power,
        n_selected: selected.len(),
    }
}

/// Importance class of a column in the negative-control study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceClass {
    NullOriginal,
    SignalOriginal,
    Knockoff,
    Permuted,
    Dummy,
}

impl ImportanceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ImportanceClass::NullOriginal => "null_original",
            ImportanceClass::SignalOriginal => "signal_original",
            ImportanceClass::Knockoff => "knockoff",
            ImportanceClass::Permuted => "permuted",
            ImportanceClass::Dummy => "dummy",
        }
    }
}

/// Ridge importance of original variables next to exact HMM knockoffs,
/// row-permuted copies and white noise.
pub fn run_negative_control(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_name(config, ExperimentName::NegativeControl)?;
    let hmm = hmm_for(config, (DEFAULT_HMM_TOML, "models/default_hmm.toml"))?;
    let panels = [
        ("knockoff", ImportanceClass::Knockoff),
        ("permutation", ImportanceClass::Permuted),
        ("whitenoise", ImportanceClass::Dummy),
    ];

    // (panel, variable, class, variable is a signal, importance)
    type Entry = (&'static str, usize, ImportanceClass, bool, f64);
    let per_rep: Vec<Vec<Entry>> = replicates(config, |_, seed| {
        let mut rng = seeded(seed);
        let (_, data) = sample_hmm(&hmm, config.n, &mut rng)?;
        let signals = sorted_sample(&mut rng, config.p, config.n_signals);
        let y = linear_response(&data.x, &signals, config.amplitude, &mut rng);
        let data = data.with_response(y.clone())?;

        let ko_seed: u64 = rng.random();
        let knockoffs = hmm_knockoff_dataset(&hmm, &data, ko_seed, false)?.x_tilde;
        let permuted = pseudo_permutation(&data, seed, &mut rng)?.x_tilde;
        let noise = pseudo_whitenoise(config.n, config.p, &mut rng)?;

        let mut is_signal = vec![false; config.p];
        for &j in &signals {
            is_signal[j] = true;
        }
        let mut out = Vec::new();
        for ((panel, class), copy) in panels.iter().zip([knockoffs, permuted, noise]) {
            let a = augment(&data.x, &copy);
            let scores = config.importance(&a, &y, &mut rng)?;
            // compare classes on the standardized scale: codes 0/1/2 and
            // unit-variance noise have different spreads
            let (_, _, sds) = linalg::standardize(&a);
            let z_original: Vec<f64> = (0..config.p).map(|j| scores.z_original[j] * sds[j]).collect();
            let z_copy: Vec<f64> = (0..config.p).map(|j| scores.z_knockoff[j] * sds[config.p + j]).collect();
            for (j, &sig) in is_signal.iter().enumerate() {
                let original = if sig {
                    ImportanceClass::SignalOriginal
                } else {
                    ImportanceClass::NullOriginal
                };
                out.push((*panel, j, original, sig, z_original[j]));
            }
            for (j, &sig) in is_signal.iter().enumerate() {
                out.push((*panel, j, *class, sig, z_copy[j]));
            }
        }
        Ok(out)
    })?;

    // Only copies of null variables are exchangeable with their originals,
    // so copies of signal variables are kept in the report but left out of
    // the figure and the class means.
    let seeds = seeds(config);
    let mut report = Table::new(&["replicate", "seed", "panel", "variable", "class", "signal", "importance"]);
    let mut figure = Table::new(&["replicate", "panel", "variable", "class", "importance"]);
    for (r, entries) in per_rep.iter().enumerate() {
        for (panel, j, class, sig, z) in entries {
            report.rows.push(vec![
                r.to_string(),
                seeds[r].to_string(),
                panel.to_string(),
                j.to_string(),
                class.as_str().into(),
                sig.to_string(),
                fmt_f64(*z),
            ]);
            if !sig {
                figure.rows.push(vec![
                    r.to_string(),
                    panel.to_string(),
                    j.to_string(),
                    class.as_str().into(),
                    fmt_f64(*z),
                ]);
            }
        }
    }
    let mut summary = Vec::new();
    for (panel, class) in panels {
        for c in [ImportanceClass::NullOriginal, ImportanceClass::SignalOriginal, class] {
            let values: Vec<f64> = per_rep
                .iter()
                .flatten()
                .filter(|e| e.0 == panel && e.2 == c && (c == ImportanceClass::SignalOriginal || !e.3))
                .map(|e| e.4)
                .collect();
            if !values.is_empty() {
                summary.push(summarize(panel, c.as_str(), &values));
            }
        }
    }
    Ok(ExperimentReport {
        name: config.name,
        seeds,
        selections: Vec::new(),
        report,
        summary,
        figures: vec![("fig1_importance".into(), figure)],
        notes: Vec::new(),
    })
}

struct DiagnosticRows {
    lag: Vec<(usize, f64, f64)>,
    self_corr: Vec<(usize, f64)>,
}

fn diagnose(x: &DMatrix<f64>, xt: &DMatrix<f64>) -> DiagnosticRows {
    let col = |m: &DMatrix<f64>, j: usize| m.column(j).iter().copied().collect::<Vec<f64>>();
    let p = x.ncols();
    let xs: Vec<Vec<f64>> = (0..p).map(|j| col(x, j)).collect();
    let ts: Vec<Vec<f64>> = (0..p).map(|j| col(xt, j)).collect();
    DiagnosticRows {
        lag: (1..p)
            .map(|j| {
                (
                    j,
                    linalg::correlation(&xs[j], &xs[j - 1]),
                    linalg::correlation(&ts[j], &ts[j - 1]),
                )
            })
            .collect(),
        self_corr: (0..p).map(|j| (j, linalg::correlation(&xs[j], &ts[j]))).collect(),
    }
}

/// Second-moment and self-correlation diagnostics of exact Markov chain
/// knockoffs and second-order Gaussian knockoffs on a sticky chain.
pub fn run_diagnostics(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_name(config, ExperimentName::Diagnostics)?;
    let chain = chain_for(config)?;
    let gaussian = GaussianKnockoffConfig {
        s: None,
        shrinkage_gamma: Some(config.gamma),
    };

    type Rep = Vec<(&'static str, std::result::Result<DiagnosticRows, String>)>;
    let per_rep: Vec<Rep> = replicates(config, |_, seed| {
        let mut rng = seeded(seed);
        let data = sample_markov_chain(&chain, config.n, &mut rng)?;
        let exact = mc_knockoff_dataset(&chain, &data, rng.random())?;
        let mut out: Rep = vec![("exact_markov", Ok(diagnose(&data.x, &exact.x_tilde)))];
        let gseed: u64 = rng.random();
        let second = match gaussian_second_order(&data, &gaussian, gseed, &mut rng) {
            Ok(d) => Ok(diagnose(&data.x, &d.x_tilde)),
            // the singular case is part of what the study documents
            Err(e @ (Error::SingularCovariance { .. } | Error::NotPsd { .. })) => Err(e.to_string()),
            Err(e) => return Err(e),
        };
        out.push(("gaussian_second_order", second));
        Ok(out)
    })?;

    let seeds = seeds(config);
    let mut report = Table::new(&["replicate", "seed", "method", "status", "lag1_gap", "self_corr_median"]);
    let mut lag = Table::new(&["replicate", "method", "variable", "cor_x", "cor_xtilde"]);
    let mut hist = Table::new(&["replicate", "method", "variable", "self_corr"]);
    let mut notes = Vec::new();
    let mut summary = Vec::new();
    for method in ["exact_markov", "gaussian_second_order"] {
        let mut gaps = Vec::new();
        let mut selfs = Vec::new();
        for (r, rep) in per_rep.iter().enumerate() {
            let (_, res) = rep.iter().find(|(m, _)| *m == method).expect("both methods recorded");
            match res {
                Ok(d) => {
                    let g: Vec<f64> = d.lag.iter().map(|(_, a, b)| (a - b).abs()).collect();
                    let s: Vec<f64> = d.self_corr.iter().map(|e| e.1).collect();
                    report.rows.push(vec![
                        r.to_string(),
                        seeds[r].to_string(),
                        method.into(),
                        "ok".into(),
                        fmt_f64(linalg::mean(&g)),
                        fmt_f64(linalg::median(&s)),
                    ]);
                    for (j, a, b) in &d.lag {
                        lag.rows.push(vec![r.to_string(), method.into(), j.to_string(), fmt_f64(*a), fmt_f64(*b)]);
                    }
                    for (j, c) in &d.self_corr {
                        hist.rows.push(vec![r.to_string(), method.into(), j.to_string(), fmt_f64(*c)]);
                    }
                    gaps.extend(g);
                    selfs.extend(s);
                }
                Err(msg) => {
                    report.rows.push(vec![
                        r.to_string(),
                        seeds[r].to_string(),
                        method.into(),
                        "failed".into(),
                        String::new(),
                        String::new(),
                    ]);
                    notes.push(format!("replicate {r}: {method} failed: {msg}"));
                }
            }
        }
        if !gaps.is_empty() {
            summary.push(summarize(method, "lag1_gap", &gaps));
            summary.push(summarize(method, "self_corr", &selfs));
            summary.push(SummaryRow {
                method: method.into(),
                metric: "self_corr_median".into(),
                value: linalg::median(&selfs),
                se: f64::NAN,
                count: selfs.len(),
            });
        }
    }
    Ok(ExperimentReport {
        name: config.name,
        seeds,
        selections: Vec::new(),
        report,
        summary,
        figures: vec![
            ("fig2_lag_scatter".into(), lag),
            ("fig3_self_corr_hist".into(), hist),
        ],
        notes,
    })
}

fn selection_report(
    config: &ExperimentConfig,
    rows: Vec<SelectionRow>,
    figure: Option<&str>,
) -> ExperimentReport {
    let table = selection_table(&rows);
    ExperimentReport {
        name: config.name,
        seeds: seeds(config),
        summary: summarize_selections(&rows),
        figures: figure.map(|f| (f.to_string(), table.clone())).into_iter().collect(),
        report: table,
        selections: rows,
        notes: Vec::new(),
    }
}

/// Model-based Gaussian knockoffs with the lasso statistic against OLS
/// p-values with Benjamini–Hochberg, on twin-block designs with one signal
/// per affected block.
pub fn run_adversarial(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_name(config, ExperimentName::Adversarial)?;
    let model: GaussianModel = make_block_model(config.p, config.block_size, config.rho)?;
    let factor = model.factor()?;
    let sampler = GaussianKnockoffSampler::new(&model, None)?;
    let blocks = config.p / config.block_size;

    let per_rep = replicates(config, |r, seed| {
        let mut rng = seeded(seed);
        let x = sample_gaussian_with_factor(model.mean(), &factor, config.n, &mut rng).x;
        let mut signals: Vec<usize> = sorted_sample(&mut rng, blocks, config.n_signals)
            .into_iter()
            .map(|b| b * config.block_size + rng.random_range(0..config.block_size))
            .collect();
        signals.sort_unstable();
        let y = linear_response(&x, &signals, config.amplitude, &mut rng);
        let xt = sampler.sample(&x, &mut rng)?;
        let scores = config.importance(&augment(&x, &xt), &y, &mut rng)?;
        let ko = knockoff_threshold(&scores.w, config.q, 1)?;
        let bh_sel = bh(&ols_pvalues(&x, &y)?, config.q)?;
        let truth = nonzero(config, &signals);
        Ok(vec![
            selection_row(r, seed, "knockoff", &ko.selected, truth),
            selection_row(r, seed, "bh", &bh_sel.selected, truth),
        ])
    })?;
    Ok(selection_report(config, per_rep.into_iter().flatten().collect(), Some("fig4_fdr_power")))
}

fn subset(data: &Dataset, y: &DVector<f64>, rows: &[usize]) -> Result<Dataset> {
    let x = DMatrix::from_fn(rows.len(), data.p(), |i, j| data.x[(rows[i], j)]);
    let sub = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    Dataset {
        x,
        y: None,
        discrete: data.discrete,
    }
    .with_response(sub)
}

/// Knockoffs built from the population HMM on case-control samples
/// (all cases plus as many controls) and, for comparison, on prospective
/// samples of the same size.
pub fn run_case_control(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_name(config, ExperimentName::CaseControl)?;
    let hmm = hmm_for(config, (CASE_CONTROL_HMM_TOML, "models/case_control_hmm.toml"))?;

    let per_rep = replicates(config, |r, seed| {
        let mut rng = seeded(seed);
        let (_, pool) = sample_hmm(&hmm, config.pool_size, &mut rng)?;
        let signals = sorted_sample(&mut rng, config.p, config.n_signals);
        let (z, _, _) = linalg::standardize(&pool.x);
        let y = DVector::from_fn(config.pool_size, |i, _| {
            let eta = config.intercept + signals.iter().map(|&j| config.amplitude * z[(i, j)]).sum::<f64>();
            let prob = 1.0 / (1.0 + (-eta).exp());
            let coin = Bernoulli::new(prob).expect("logistic probability lies in [0, 1]");
            f64::from(u8::from(coin.sample(&mut rng)))
        });
        let cases: Vec<usize> = (0..config.pool_size).filter(|&i| y[i] == 1.0).collect();
        let controls: Vec<usize> = (0..config.pool_size).filter(|&i| y[i] == 0.0).collect();
        let half = config.n / 2;
        if cases.len() < half || controls.len() < half {
            return Err(Error::invalid(
                "config",
                format!(
                    "pool of {} has {} cases and {} controls, need {half} of each; increase pool_size or intercept",
                    config.pool_size,
                    cases.len(),
                    controls.len()
                ),
            ));
        }
        let mut retro: Vec<usize> = cases.choose_multiple(&mut rng, half).copied().collect();
        retro.extend(controls.choose_multiple(&mut rng, half).copied());
        retro.sort_unstable();
        let prosp = sorted_sample(&mut rng, config.pool_size, 2 * half);

        let mut rows = Vec::new();
        for (method, idx) in [("retrospective", &retro), ("prospective", &prosp)] {
            let data = subset(&pool, &y, idx)?;
            let design = hmm_knockoff_dataset(&hmm, &data, rng.random(), false)?;
            let resp = design.y.clone().expect("subset carries the response");
            let scores = config.importance(&design.stacked(), &resp, &mut rng)?;
            let sel = knockoff_threshold(&scores.w, config.q, 1)?;
            rows.push(selection_row(r, seed, method, &sel.selected, nonzero(config, &signals)));
        }
        Ok(rows)
    })?;
    Ok(selection_report(config, per_rep.into_iter().flatten().collect(), None))
}

/// Monte Carlo check of the moments of permuted copies in the two-variable
/// model `Cor(X1, X2) = rho`, `Y = X1 + ε`, next to a Gaussian knockoff copy.
pub fn run_permutation_identities(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_name(config, ExperimentName::PermutationIdentities)?;
    let rho = config.rho;
    let n = config.n;
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    let sampler = GaussianKnockoffSampler::new(&GaussianModel::new(DVector::zeros(2), sigma)?, None)?;
    let metrics = [
        ("permutation", "corr_x1_x2star"),
        ("permutation", "cov_x2star_y"),
        ("permutation", "cov_x2_y"),
        ("permutation", "corr_x1_x2star_centered"),
        ("permutation", "cov_x2star_y_centered"),
        ("knockoff", "corr_x1_xtilde2"),
    ];

    let per_rep: Vec<[f64; 6]> = replicates(config, |_, seed| {
        let mut rng = seeded(seed);
        let z = crate::model::standard_normal_matrix(n, 3, &mut rng);
        let c = (1.0 - rho * rho).sqrt();
        let x1: Vec<f64> = (0..n).map(|i| z[(i, 0)]).collect();
        let x2: Vec<f64> = (0..n).map(|i| rho * z[(i, 0)] + c * z[(i, 1)]).collect();
        let y: Vec<f64> = (0..n).map(|i| x1[i] + z[(i, 2)]).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let x2s: Vec<f64> = perm.iter().map(|&i| x2[i]).collect();

        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { x1[i] } else { x2[i] });
        let xt = sampler.sample(&x, &mut rng)?;
        let xt2: Vec<f64> = xt.column(1).iter().copied().collect();
        Ok([
            dot(&x1, &x2s) / (dot(&x1, &x1) * dot(&x2s, &x2s)).sqrt(),
            dot(&x2s, &y) / n as f64,
            linalg::covariance(&x2, &y),
            linalg::correlation(&x1, &x2s),
            linalg::covariance(&x2s, &y),
            linalg::correlation(&x1, &xt2),
        ])
    })?;

    let seeds = seeds(config);
    let mut header = vec!["replicate", "seed"];
    header.extend(metrics.iter().map(|m| m.1));
    let mut report = Table::new(&header);
    for (r, v) in per_rep.iter().enumerate() {
        let mut row = vec![r.to_string(), seeds[r].to_string()];
        row.extend(v.iter().map(|x| fmt_f64(*x)));
        report.rows.push(row);
    }
    let summary = metrics
        .iter()
        .enumerate()
        .map(|(k, (method, metric))| {
            let values: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
            summarize(method, metric, &values)
        })
        .collect();
    Ok(ExperimentReport {
        name: config.name,
        seeds,
        selections: Vec::new(),
        report,
        summary,
        figures: Vec::new(),
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn committed_default_hmm_matches_generator() {
        let generated = generate_default_hmm(1000, DEFAULT_HMM_SEED).unwrap();
        let ModelFile::Hmm(committed) = io::parse_model(DEFAULT_HMM_TOML, "default").unwrap() else {
            panic!("default model is not an hmm")
        };
        assert_eq!(committed, generated);
        let generated = generate_case_control_hmm(100, DEFAULT_HMM_SEED).unwrap();
        let ModelFile::Hmm(committed) = io::parse_model(CASE_CONTROL_HMM_TOML, "cc").unwrap() else {
            panic!("case-control model is not an hmm")
        };
        assert_eq!(committed, generated);
    }

    #[test]
    fn config_rejects_unknown_keys_and_wrong_name() {
        let e = ExperimentConfig::from_toml("replicats = 3\n", "c.toml", ExperimentName::Adversarial);
        assert!(e.unwrap_err().to_string().contains("c.toml:1"));
        let e = ExperimentConfig::from_toml("name = \"diagnostics\"\n", "c", ExperimentName::Adversarial);
        assert!(e.is_err());
        let c = ExperimentConfig::from_toml("replicates = 3\nq = 0.2\n", "c", ExperimentName::Adversarial).unwrap();
        assert_eq!((c.replicates, c.q, c.p), (3, 0.2, 500));
    }

    #[test]
    fn resize_refuses_inhomogeneous_models() {
        let latent = MarkovChainModel::new(
            vec![0.5, 0.5],
            vec![
                DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
                DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]),
            ],
        )
        .unwrap();
        let e = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.8]);
        let hmm = HiddenMarkovModel::new(latent, vec![e; 3]).unwrap();
        assert!(with_length(&hmm, 3).is_ok());
        assert!(with_length(&hmm, 5).unwrap_err().is_validation());
    }

    #[test]
    fn summaries_recompute_from_rows() {
        let mut c = ExperimentConfig::defaults(ExperimentName::Adversarial);
        c.p = 20;
        c.n = 200;
        c.n_signals = 4;
        c.amplitude = 0.5;
        c.replicates = 3;
        let r = run_adversarial(&c).unwrap();
        assert_eq!(r.selections.len(), 6);
        for s in &r.summary {
            let of: Vec<&SelectionRow> = r.selections.iter().filter(|x| x.method == s.method).collect();
            let v: f64 = match s.metric.as_str() {
                "fdp" => of.iter().map(|x| x.fdp).sum::<f64>(),
                "power" => of.iter().map(|x| x.power).sum::<f64>(),
                _ => of.iter().map(|x| x.n_selected as f64).sum::<f64>(),
            } / of.len() as f64;
            assert!((v - s.value).abs() <= 1e-12);
        }
    }
}

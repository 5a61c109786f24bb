//! Generative models for the explanatory variables: discrete Markov chains,
//! hidden Markov models with discrete emissions, and multivariate Gaussians.
//!
//! Positions are 0-based. `transitions[t]` maps position `t` to `t + 1`, so a
//! chain of length `p` carries `p - 1` transition matrices; entry `(z, k)` is
//! `P(X_{t+1} = k | X_t = z)`. Emission matrix `emissions[t]` has entry
//! `(k, x) = P(X_t = x | Z_t = k)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on row sums of probability tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance on covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL` are accepted and clipped to zero.
pub const PSD_TOL: f64 = 1e-8;

fn check_prob_vector(v: &[f64], label: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("model", format!("{label} is empty")));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(
            "model",
            format!("{label} has a negative or non-finite entry {x}"),
        ));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid("model", format!("{label} sums to {s}")));
    }
    Ok(())
}

fn check_stochastic(m: &DMatrix<f64>, label: &str) -> Result<()> {
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        check_prob_vector(&row, &format!("{label} row {r}"))?;
    }
    Ok(())
}

/// Draw an index from an unnormalized, nonnegative weight vector.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = k;
            acc += w;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Discrete-state Markov chain over `p` positions with `K` states.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainModel {
    initial: Vec<f64>,
    transitions: Vec<DMatrix<f64>>,
}

impl MarkovChainModel {
    pub fn new(initial: Vec<f64>, transitions: Vec<DMatrix<f64>>) -> Result<Self> {
        check_prob_vector(&initial, "initial")?;
        let k = initial.len();
        for (t, q) in transitions.iter().enumerate() {
            if q.nrows() != k || q.ncols() != k {
                return Err(Error::invalid(
                    "model",
                    format!(
                        "transitions[{t}] is {}x{}, expected {k}x{k}",
                        q.nrows(),
                        q.ncols()
                    ),
                ));
            }
            check_stochastic(q, &format!("transitions[{t}]"))?;
        }
        Ok(MarkovChainModel {
            initial,
            transitions,
        })
    }

    /// Same transition matrix at every step.
    pub fn homogeneous(p: usize, initial: Vec<f64>, transition: DMatrix<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("model", "chain length must be at least 1"));
        }
        Self::new(initial, vec![transition; p - 1])
    }

    /// Symmetric chain on `states` states that stays put with probability `stay`
    /// and otherwise jumps uniformly to one of the other states.
    pub fn symmetric(p: usize, states: usize, stay: f64) -> Result<Self> {
        if states < 2 || !(0.0..=1.0).contains(&stay) {
            return Err(Error::invalid(
                "model",
                format!("symmetric chain needs >= 2 states and stay in [0,1], got {states}, {stay}"),
            ));
        }
        let off = (1.0 - stay) / (states - 1) as f64;
        let q = DMatrix::from_fn(states, states, |i, j| if i == j { stay } else { off });
        Self::homogeneous(p, vec![1.0 / states as f64; states], q)
    }

    pub fn len(&self) -> usize {
        self.transitions.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    /// `P(X_{t+1} = to | X_t = from)`.
    #[inline]
    pub fn transition(&self, t: usize, from: usize, to: usize) -> f64 {
        self.transitions[t][(from, to)]
    }

    /// Probability of a full path.
    pub fn path_probability(&self, path: &[usize]) -> f64 {
        debug_assert_eq!(path.len(), self.len());
        let mut prob = self.initial[path[0]];
        for t in 0..self.transitions.len() {
            prob *= self.transition(t, path[t], path[t + 1]);
        }
        prob
    }

    /// Marginal state distribution at every position (forward recursion).
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let k = self.states();
        let mut out = Vec::with_capacity(self.len());
        out.push(self.initial.clone());
        for q in &self.transitions {
            let prev = out.last().unwrap();
            let next: Vec<f64> = (0..k)
                .map(|to| (0..k).map(|from| prev[from] * q[(from, to)]).sum())
                .collect();
            out.push(next);
        }
        out
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.len());
        path.push(sample_categorical(&self.initial, rng));
        let mut row = vec![0.0; self.states()];
        for q in &self.transitions {
            let prev = *path.last().unwrap();
            for (k, r) in row.iter_mut().enumerate() {
                *r = q[(prev, k)];
            }
            path.push(sample_categorical(&row, rng));
        }
        path
    }

    /// Whether `path` has positive probability.
    pub fn is_feasible(&self, path: &[usize]) -> bool {
        path.len() == self.len()
            && path.iter().all(|&s| s < self.states())
            && self.path_probability(path) > 0.0
    }
}

/// HMM with a discrete latent chain and discrete, position-specific emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMarkovModel {
    latent: MarkovChainModel,
    emissions: Vec<DMatrix<f64>>,
}

impl HiddenMarkovModel {
    pub fn new(latent: MarkovChainModel, emissions: Vec<DMatrix<f64>>) -> Result<Self> {
        if emissions.len() != latent.len() {
            return Err(Error::invalid(
                "model",
                format!(
                    "{} emission matrices for a chain of length {}",
                    emissions.len(),
                    latent.len()
                ),
            ));
        }
        for (t, e) in emissions.iter().enumerate() {
            if e.nrows() != latent.states() || e.ncols() == 0 {
                return Err(Error::invalid(
                    "model",
                    format!(
                        "emissions[{t}] is {}x{}, expected {} rows",
                        e.nrows(),
                        e.ncols(),
                        latent.states()
                    ),
                ));
            }
            check_stochastic(e, &format!("emissions[{t}]"))?;
        }
        Ok(HiddenMarkovModel { latent, emissions })
    }

    pub fn latent(&self) -> &MarkovChainModel {
        &self.latent
    }

    pub fn emissions(&self) -> &[DMatrix<f64>] {
        &self.emissions
    }

    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> usize {
        self.latent.states()
    }

    /// Observed alphabet size at position `t`.
    pub fn alphabet(&self, t: usize) -> usize {
        self.emissions[t].ncols()
    }

    #[inline]
    pub fn emission(&self, t: usize, state: usize, symbol: usize) -> f64 {
        self.emissions[t][(state, symbol)]
    }

    pub fn emit<R: Rng + ?Sized>(&self, latent: &[usize], rng: &mut R) -> Vec<usize> {
        latent
            .iter()
            .enumerate()
            .map(|(t, &z)| {
                let row: Vec<f64> = self.emissions[t].row(z).iter().copied().collect();
                sample_categorical(&row, rng)
            })
            .collect()
    }

    fn check_row(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Shape(format!(
                "observation has length {}, model has {} positions",
                x.len(),
                self.len()
            )));
        }
        for (t, &s) in x.iter().enumerate() {
            if s >= self.alphabet(t) {
                return Err(Error::invalid(
                    "observation",
                    format!("symbol {s} at position {t} outside alphabet of size {}", self.alphabet(t)),
                ));
            }
        }
        Ok(())
    }
}

/// Multivariate normal model.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::invalid(
                "model",
                format!("covariance is {}x{}, mean has length {p}", covariance.nrows(), covariance.ncols()),
            ));
        }
        for i in 0..p {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(
                        "model",
                        format!("covariance is not symmetric at ({i}, {j})"),
                    ));
                }
            }
        }
        let min_eig = min_eigenvalue(&covariance);
        if min_eig < -PSD_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min_eig,
            });
        }
        Ok(GaussianModel { mean, covariance })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Symmetric factor `L` with `L Lᵀ = Σ` (negative eigenvalues clipped).
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        psd_sqrt(&self.covariance)
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Symmetric square root `V diag(sqrt(max(λ, 0))) Vᵀ` of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * m.amax().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Samples with optional response. Discrete datasets carry integer codes
/// stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub discrete: bool,
}

impl Dataset {
    pub fn continuous(x: DMatrix<f64>) -> Self {
        Dataset {
            x,
            y: None,
            discrete: false,
        }
    }

    pub fn from_codes(rows: &[Vec<usize>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j] as f64);
        Dataset {
            x,
            y: None,
            discrete: true,
        }
    }

    pub fn with_response(mut self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::Shape(format!(
                "response has length {}, dataset has {} rows",
                y.len(),
                self.n()
            )));
        }
        self.y = Some(y);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Row `i` as integer codes.
    pub fn codes(&self, i: usize) -> Result<Vec<usize>> {
        self.x
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                    Ok(v as usize)
                } else {
                    Err(Error::invalid(
                        "dataset",
                        format!("entry ({i}, {j}) = {v} is not a nonnegative integer code"),
                    ))
                }
            })
            .collect()
    }

    pub fn rows_as_codes(&self) -> Result<Vec<Vec<usize>>> {
        (0..self.n()).map(|i| self.codes(i)).collect()
    }
}

pub fn sample_markov_chain<R: Rng + ?Sized>(
    model: &MarkovChainModel,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let rows: Vec<Vec<usize>> = (0..n).map(|_| model.sample_path(rng)).collect();
    Ok(Dataset::from_codes(&rows))
}

/// Returns `(latent, observed)`.
pub fn sample_hmm<R: Rng + ?Sized>(
    model: &HiddenMarkovModel,
    n: usize,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if n == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let mut latent = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    for _ in 0..n {
        let z = model.latent.sample_path(rng);
        let x = model.emit(&z, rng);
        latent.push(z);
        observed.push(x);
    }
    Ok((Dataset::from_codes(&latent), Dataset::from_codes(&observed)))
}

/// Rescaled backward messages of one observed row.
///
/// `messages` row `t` holds `b_t` normalized to sum to one. The unnormalized
/// message is `b_t = messages[t] * prod_{s >= t} scales[s]`, with
/// `scales[p-1] = 1`.
#[derive(Debug, Clone)]
pub struct BackwardMessages {
    pub messages: DMatrix<f64>,
    pub scales: Vec<f64>,
}

impl BackwardMessages {
    /// Unnormalized message at position `t`.
    pub fn unnormalized(&self, t: usize) -> Vec<f64> {
        let factor: f64 = self.scales[t..].iter().product();
        self.messages.row(t).iter().map(|b| b * factor).collect()
    }
}

pub fn backward_messages(model: &HiddenMarkovModel, x: &[usize]) -> Result<BackwardMessages> {
    model.check_row(x)?;
    let p = model.len();
    let k = model.states();
    let mut messages = DMatrix::zeros(p, k);
    let mut scales = vec![1.0; p];
    for s in 0..k {
        messages[(p - 1, s)] = 1.0 / k as f64;
    }
    scales[p - 1] = k as f64;
    let mut weighted = vec![0.0; k];
    for t in (1..p).rev() {
        for (s, w) in weighted.iter_mut().enumerate() {
            *w = model.emission(t, s, x[t]) * messages[(t, s)];
        }
        let q = &model.latent.transitions[t - 1];
        let mut total = 0.0;
        for z in 0..k {
            let mut acc = 0.0;
            for (s, w) in weighted.iter().enumerate() {
                acc += q[(z, s)] * w;
            }
            messages[(t - 1, z)] = acc;
            total += acc;
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InfeasibleObservation { position: t });
        }
        for z in 0..k {
            messages[(t - 1, z)] /= total;
        }
        scales[t - 1] = total;
    }
    let evidence: f64 = (0..k)
        .map(|s| model.latent.initial[s] * model.emission(0, s, x[0]) * messages[(0, s)])
        .sum();
    if evidence <= 0.0 {
        return Err(Error::InfeasibleObservation { position: 0 });
    }
    Ok(BackwardMessages { messages, scales })
}

/// Markov chain of the latent path given the observed row `x`.
pub fn posterior_chain(model: &HiddenMarkovModel, x: &[usize]) -> Result<MarkovChainModel> {
    let msgs = backward_messages(model, x)?;
    let p = model.len();
    let k = model.states();
    let b = &msgs.messages;

    let mut initial: Vec<f64> = (0..k)
        .map(|s| model.latent.initial[s] * model.emission(0, s, x[0]) * b[(0, s)])
        .collect();
    let total: f64 = initial.iter().sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleObservation { position: 0 });
    }
    initial.iter_mut().for_each(|v| *v /= total);

    let mut transitions = Vec::with_capacity(p - 1);
    for t in 1..p {
        let q = &model.latent.transitions[t - 1];
        let mut m = DMatrix::zeros(k, k);
        for z in 0..k {
            let mut row_total = 0.0;
            for s in 0..k {
                let v = q[(z, s)] * model.emission(t, s, x[t]) * b[(t, s)];
                m[(z, s)] = v;
                row_total += v;
            }
            if row_total > 0.0 {
                for s in 0..k {
                    m[(z, s)] /= row_total;
                }
            } else {
                // Unreachable predecessor state: any distribution keeps the
                // chain well-defined since the state has posterior mass zero.
                for s in 0..k {
                    m[(z, s)] = q[(z, s)];
                }
            }
        }
        transitions.push(m);
    }
    Ok(MarkovChainModel {
        initial,
        transitions,
    })
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    model: &GaussianModel,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let factor = model.factor()?;
    Ok(sample_gaussian_with_factor(model.mean(), &factor, n, rng))
}

/// Rows `mean + factor * z`, `z ~ N(0, I)`, with `z` drawn row by row.
pub fn sample_gaussian_with_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Dataset {
    let p = mean.len();
    let z = standard_normal_matrix(n, p, rng);
    let mut x = z * factor.transpose();
    for mut row in x.row_iter_mut() {
        row += mean.transpose();
    }
    Dataset::continuous(x)
}

/// `n x p` matrix of i.i.d. standard normals, filled in row-major order.
pub fn standard_normal_matrix<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let values: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(n, p, &values)
}

/// Block-diagonal correlation model with equicorrelated blocks.
pub fn make_block_model(p: usize, block_size: usize, rho: f64) -> Result<GaussianModel> {
    if block_size == 0 || p % block_size != 0 {
        return Err(Error::invalid(
            "model",
            format!("block size {block_size} does not divide p = {p}"),
        ));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::invalid("model", format!("rho = {rho} outside (-1, 1)")));
    }
    let cov = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if i / block_size == j / block_size {
            rho
        } else {
            0.0
        }
    });
    GaussianModel::new(DVector::zeros(p), cov)
}

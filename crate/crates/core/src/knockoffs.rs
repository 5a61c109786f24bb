//! Knockoff constructions and the rival pseudo-variable schemes.
//!
//! The discrete samplers draw the knockoff copy one coordinate at a time.
//! For a Markov chain, coordinate `t` is drawn with weights
//!
//! ```text
//! w_t(k) = Q_t(k | x_{t-1}) Q_t(k | x̃_{t-1}) Q_{t+1}(x_{t+1} | k) / N_{t-1}(k)
//! ```
//!
//! where the first transition is replaced by the initial distribution at
//! `t = 0` (and the `x̃` factor dropped), the look-ahead factor is dropped at
//! the last position, and `N_t(k)` is the normalizer of `w_t` evaluated with
//! `x_{t+1} = k`. Only ratios of `N_t` matter, so it is renormalized to sum to
//! one at every step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    posterior_chain, psd_sqrt, sample_categorical, standard_normal_matrix, Dataset,
    GaussianModel, HiddenMarkovModel, MarkovChainModel, PSD_TOL,
};
use crate::rng;

/// Below this eigenvalue an estimated correlation matrix counts as singular.
pub const SINGULAR_TOL: f64 = 1e-10;
/// Shrinkage used when the caller leaves it unset and the estimate is singular.
pub const FALLBACK_SHRINKAGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ExactMarkov,
    ExactHmm,
    HmmReuseLatent,
    GaussianSecondOrder,
    Permutation,
    Whitenoise,
    PermutationOrth,
    WhitenoiseOrth,
}

impl Provenance {
    pub const ALL: [Provenance; 8] = [
        Provenance::ExactMarkov,
        Provenance::ExactHmm,
        Provenance::HmmReuseLatent,
        Provenance::GaussianSecondOrder,
        Provenance::Permutation,
        Provenance::Whitenoise,
        Provenance::PermutationOrth,
        Provenance::WhitenoiseOrth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ExactMarkov => "exact_markov",
            Provenance::ExactHmm => "exact_hmm",
            Provenance::HmmReuseLatent => "hmm_reuse_latent",
            Provenance::GaussianSecondOrder => "gaussian_second_order",
            Provenance::Permutation => "permutation",
            Provenance::Whitenoise => "whitenoise",
            Provenance::PermutationOrth => "permutation_orth",
            Provenance::WhitenoiseOrth => "whitenoise_orth",
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            Provenance::ExactMarkov | Provenance::ExactHmm | Provenance::HmmReuseLatent
        )
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown provenance '{s}'")))
    }
}

/// Original design paired with its knockoff or pseudo-variable copy.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDesign {
    pub x: DMatrix<f64>,
    pub x_tilde: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub provenance: Provenance,
    pub seed: u64,
}

impl AugmentedDesign {
    pub fn new(
        x: DMatrix<f64>,
        x_tilde: DMatrix<f64>,
        y: Option<DVector<f64>>,
        provenance: Provenance,
        seed: u64,
    ) -> Result<Self> {
        if x.shape() != x_tilde.shape() {
            return Err(Error::Shape(format!(
                "original is {:?}, copy is {:?}",
                x.shape(),
                x_tilde.shape()
            )));
        }
        if let Some(y) = &y {
            if y.len() != x.nrows() {
                return Err(Error::Shape("response length differs from row count".into()));
            }
        }
        Ok(AugmentedDesign {
            x,
            x_tilde,
            y,
            provenance,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `[X | X̃]`, `n x 2p`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, p) = self.x.shape();
        let mut a = DMatrix::zeros(n, 2 * p);
        a.columns_mut(0, p).copy_from(&self.x);
        a.columns_mut(p, p).copy_from(&self.x_tilde);
        a
    }
}

/// Drive the sequential Markov chain knockoff rule. `choose` receives the
/// position and the normalized step pmf and returns the chosen state.
fn run_markov_knockoff<F>(model: &MarkovChainModel, x: &[usize], mut choose: F) -> Result<Vec<usize>>
where
    F: FnMut(usize, &[f64]) -> Result<usize>,
{
    let p = model.len();
    let k = model.states();
    if x.len() != p {
        return Err(Error::Shape(format!(
            "row has length {}, chain has {p} positions",
            x.len()
        )));
    }
    if let Some(&s) = x.iter().find(|&&s| s >= k) {
        return Err(Error::invalid("observation", format!("state {s} outside 0..{k}")));
    }

    let mut x_tilde = Vec::with_capacity(p);
    let mut prev_norm = vec![1.0; k];
    let mut base = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for t in 0..p {
        for s in 0..k {
            base[s] = if t == 0 {
                model.initial()[s]
            } else if prev_norm[s] > 0.0 {
                model.transition(t - 1, x[t - 1], s) * model.transition(t - 1, x_tilde[t - 1], s)
                    / prev_norm[s]
            } else {
                0.0
            };
        }
        let total = if t + 1 < p {
            for s in 0..k {
                weights[s] = base[s] * model.transition(t, s, x[t + 1]);
            }
            weights.iter().sum::<f64>()
        } else {
            weights.copy_from_slice(&base);
            weights.iter().sum::<f64>()
        };
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InfeasibleObservation { position: t });
        }
        weights.iter_mut().for_each(|w| *w /= total);
        let chosen = choose(t, &weights)?;
        x_tilde.push(chosen);

        if t + 1 < p {
            let q = &model.transitions()[t];
            let mut norm_total = 0.0;
            for (next, n) in prev_norm.iter_mut().enumerate() {
                let v: f64 = (0..k).map(|z| base[z] * q[(z, next)]).sum();
                *n = v;
                norm_total += v;
            }
            prev_norm.iter_mut().for_each(|n| *n /= norm_total);
        }
    }
    Ok(x_tilde)
}

/// Exact knockoff copy of one Markov chain path. Cost `O(p K²)`.
pub fn mc_knockoff<R: Rng + ?Sized>(
    model: &MarkovChainModel,
    x: &[usize],
    rng: &mut R,
) -> Result<Vec<usize>> {
    run_markov_knockoff(model, x, |_, pmf| Ok(sample_categorical(pmf, rng)))
}

/// Probability that [`mc_knockoff`] returns `x_tilde` given `x`.
pub fn mc_knockoff_probability(
    model: &MarkovChainModel,
    x: &[usize],
    x_tilde: &[usize],
) -> Result<f64> {
    if x_tilde.len() != x.len() {
        return Err(Error::Shape("knockoff row length differs".into()));
    }
    let mut prob = 1.0;
    let result = run_markov_knockoff(model, x, |t, pmf| {
        prob *= pmf[x_tilde[t]];
        if prob == 0.0 {
            // Later steps may be undefined once the path leaves the support.
            Err(Error::InfeasibleObservation { position: t })
        } else {
            Ok(x_tilde[t])
        }
    });
    match result {
        Ok(_) => Ok(prob),
        Err(Error::InfeasibleObservation { .. }) if prob == 0.0 => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// One HMM knockoff draw with its latent paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HmmKnockoff {
    pub latent: Vec<usize>,
    pub latent_knockoff: Vec<usize>,
    pub knockoff: Vec<usize>,
}

/// Exact HMM knockoff: sample the latent path from its posterior, take a
/// knockoff copy of it under the latent chain (or reuse it as-is when
/// `reuse_latent`), then emit fresh symbols from the copied path.
pub fn hmm_knockoff<R: Rng + ?Sized>(
    model: &HiddenMarkovModel,
    x: &[usize],
    rng: &mut R,
    reuse_latent: bool,
) -> Result<HmmKnockoff> {
    let posterior = posterior_chain(model, x)?;
    let latent = posterior.sample_path(rng);
    let latent_knockoff = if reuse_latent {
        latent.clone()
    } else {
        mc_knockoff(model.latent(), &latent, rng)?
    };
    let knockoff = model.emit(&latent_knockoff, rng);
    Ok(HmmKnockoff {
        latent,
        latent_knockoff,
        knockoff,
    })
}

fn discrete_rows<F>(data: &Dataset, seed: u64, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[usize], &mut rng::SimRng) -> Result<Vec<usize>> + Sync,
{
    let rows = data.rows_as_codes()?;
    let out: Result<Vec<Vec<usize>>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = rng::stream(seed, i as u64);
            f(row, &mut r)
        })
        .collect();
    let out = out?;
    Ok(Dataset::from_codes(&out).x)
}

/// Markov chain knockoffs for every row; row `i` uses stream `i` of `seed`.
pub fn mc_knockoff_dataset(
    model: &MarkovChainModel,
    data: &Dataset,
    seed: u64,
) -> Result<AugmentedDesign> {
    let x_tilde = discrete_rows(data, seed, |row, r| mc_knockoff(model, row, r))?;
    AugmentedDesign::new(
        data.x.clone(),
        x_tilde,
        data.y.clone(),
        Provenance::ExactMarkov,
        seed,
    )
}

/// HMM knockoffs for every row; row `i` uses stream `i` of `seed`.
pub fn hmm_knockoff_dataset(
    model: &HiddenMarkovModel,
    data: &Dataset,
    seed: u64,
    reuse_latent: bool,
) -> Result<AugmentedDesign> {
    let x_tilde = discrete_rows(data, seed, |row, r| {
        hmm_knockoff(model, row, r, reuse_latent).map(|k| k.knockoff)
    })?;
    let provenance = if reuse_latent {
        Provenance::HmmReuseLatent
    } else {
        Provenance::ExactHmm
    };
    AugmentedDesign::new(data.x.clone(), x_tilde, data.y.clone(), provenance, seed)
}

/// Equicorrelated decorrelation amounts `s_j = min(2 λ_min, 1)`.
pub fn equi_s(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::Shape("correlation matrix is not square".into()));
    }
    if (0..p).any(|j| (sigma[(j, j)] - 1.0).abs() > 1e-8) {
        return Err(Error::invalid("correlation matrix", "diagonal must be 1"));
    }
    let lambda_min = crate::model::min_eigenvalue(sigma);
    if lambda_min < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: lambda_min,
        });
    }
    Ok(vec![(2.0 * lambda_min.max(0.0)).min(1.0); p])
}

/// Settings for second-order Gaussian knockoffs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianKnockoffConfig {
    /// Per-feature decorrelation; equicorrelated when `None`.
    pub s: Option<Vec<f64>>,
    /// Shrinkage of the empirical correlation toward the identity. `None`
    /// means no shrinkage unless the estimate is singular, in which case
    /// [`FALLBACK_SHRINKAGE`] is used.
    pub shrinkage_gamma: Option<f64>,
}

/// Precomputed Gaussian knockoff sampler for a fixed covariance.
///
/// Knockoffs are drawn as `X̃ = μ + (X − μ)(I − Σ⁻¹D) + Z Lᵀ` with
/// `D = diag(s)` and `L Lᵀ = 2D − DΣ⁻¹D`.
#[derive(Debug, Clone)]
pub struct GaussianKnockoffSampler {
    mean: DVector<f64>,
    shrink: DMatrix<f64>,
    factor: DMatrix<f64>,
    s: Vec<f64>,
}

impl GaussianKnockoffSampler {
    /// Model-based sampler. `s` is given on the correlation scale.
    pub fn new(model: &GaussianModel, s: Option<Vec<f64>>) -> Result<Self> {
        let cov = model.covariance();
        let p = model.dim();
        let sd: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
        if sd.iter().any(|v| *v <= 0.0) {
            return Err(Error::SingularCovariance { min_eigenvalue: 0.0 });
        }
        let corr = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
        let sampler = Self::from_correlation(&corr, s)?;
        // Rescale: Σ = S R S gives Σ⁻¹D_Σ = S⁻¹ R⁻¹ D_R S and L_Σ = S L_R.
        let shrink = DMatrix::from_fn(p, p, |i, j| sampler.shrink[(i, j)] * sd[j] / sd[i]);
        let factor = DMatrix::from_fn(p, p, |i, j| sampler.factor[(i, j)] * sd[i]);
        let s_cov = (0..p).map(|j| sampler.s[j] * sd[j] * sd[j]).collect();
        Ok(GaussianKnockoffSampler {
            mean: model.mean().clone(),
            shrink,
            factor,
            s: s_cov,
        })
    }

    /// Sampler for a zero-mean correlation matrix.
    pub fn from_correlation(corr: &DMatrix<f64>, s: Option<Vec<f64>>) -> Result<Self> {
        let p = corr.nrows();
        let eig = SymmetricEigen::new(corr.clone());
        let lambda_min = eig.eigenvalues.min();
        if lambda_min <= SINGULAR_TOL {
            return Err(Error::SingularCovariance {
                min_eigenvalue: lambda_min,
            });
        }
        let s = match s {
            Some(s) => {
                if s.len() != p || s.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(Error::invalid("s", "must be a nonnegative vector of length p"));
                }
                s
            }
            None => vec![(2.0 * lambda_min).min(1.0); p],
        };
        let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
        let inverse =
            &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&s));
        let inv_d = &inverse * &d;
        let cond_cov = &d * 2.0 - &d * &inv_d;
        let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
        let factor = psd_sqrt(&cond_cov).map_err(|e| match e {
            Error::NotPsd { min_eigenvalue } => Error::invalid(
                "s",
                format!("2 diag(s) - diag(s) Σ⁻¹ diag(s) is not PSD (λ_min = {min_eigenvalue:e})"),
            ),
            other => other,
        })?;
        let shrink = DMatrix::identity(p, p) - inv_d;
        Ok(GaussianKnockoffSampler {
            mean: DVector::zeros(p),
            shrink,
            factor,
            s,
        })
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
        let p = self.mean.len();
        if x.ncols() != p {
            return Err(Error::Shape(format!("design has {} columns, sampler {p}", x.ncols())));
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        let noise = standard_normal_matrix(x.nrows(), p, rng);
        let mut out = centered * &self.shrink + noise * self.factor.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(out)
    }
}

/// Second-order knockoffs fitted to the data's own moments.
pub fn gaussian_second_order<R: Rng + ?Sized>(
    data: &Dataset,
    config: &GaussianKnockoffConfig,
    seed: u64,
    rng: &mut R,
) -> Result<AugmentedDesign> {
    let n = data.n();
    if n < 2 {
        return Err(Error::Argument("second-order knockoffs need n > 1".into()));
    }
    let (z, means, sds) = linalg::standardize(&data.x);
    let corr = linalg::correlation_matrix(&data.x);
    let p = corr.nrows();

    let shrunk = |gamma: f64| -> Result<DMatrix<f64>> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Argument(format!("shrinkage gamma {gamma} outside [0, 1]")));
        }
        Ok(&corr * (1.0 - gamma) + DMatrix::identity(p, p) * gamma)
    };
    let sampler = match config.shrinkage_gamma {
        Some(gamma) => GaussianKnockoffSampler::from_correlation(&shrunk(gamma)?, config.s.clone())?,
        None => match GaussianKnockoffSampler::from_correlation(&corr, config.s.clone()) {
            Err(Error::SingularCovariance { .. }) => GaussianKnockoffSampler::from_correlation(
                &shrunk(FALLBACK_SHRINKAGE)?,
                config.s.clone(),
            )?,
            other => other?,
        },
    };
    let z_tilde = sampler.sample(&z, rng)?;
    let x_tilde = DMatrix::from_fn(n, p, |i, j| z_tilde[(i, j)] * sds[j] + means[j]);
    AugmentedDesign::new(
        data.x.clone(),
        x_tilde,
        data.y.clone(),
        Provenance::GaussianSecondOrder,
        seed,
    )
}

/// Rows of `X` shuffled by one uniform permutation.
pub fn pseudo_permutation<R: Rng + ?Sized>(
    data: &Dataset,
    seed: u64,
    rng: &mut R,
) -> Result<AugmentedDesign> {
    let n = data.n();
    if n < 2 {
        return Err(Error::Argument("permutation pseudo-variables need n >= 2".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let x_star = permute_rows(&data.x, &perm);
    AugmentedDesign::new(
        data.x.clone(),
        x_star,
        data.y.clone(),
        Provenance::Permutation,
        seed,
    )
}

/// Row `i` of the output is row `perm[i]` of `x`.
pub fn permute_rows(x: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(perm[i], j)])
}

/// I.i.d. standard normal pseudo-variables.
pub fn pseudo_whitenoise<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::Argument("white-noise dimensions must be positive".into()));
    }
    Ok(standard_normal_matrix(n, p, rng))
}

/// Residual of each column of `pseudo` after projection onto the column
/// space of `x`. The numerical rank comes from a column-pivoted QR with
/// relative tolerance 1e-10 on the diagonal of `R`.
pub fn orthogonalize(pseudo: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if pseudo.nrows() != x.nrows() {
        return Err(Error::Shape("pseudo and design row counts differ".into()));
    }
    if x.nrows() <= x.ncols() {
        return Err(Error::Argument(format!(
            "projection needs n > p (n = {}, p = {})",
            x.nrows(),
            x.ncols()
        )));
    }
    // nalgebra's SVD can return an inaccurate U for exactly rank-deficient
    // input, pivoted QR does not.
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let rmax = diag.iter().copied().fold(0.0, f64::max);
    let rank = diag.iter().take_while(|&&d| d > 1e-10 * rmax).count();
    let basis = qr.q().columns(0, rank).clone_owned();
    let coef = basis.tr_mul(pseudo);
    Ok(pseudo - basis * coef)
}

/// Build the augmented design of any construction in one call. Discrete
/// constructions need the matching model.
pub enum KnockoffSource<'a> {
    Markov(&'a MarkovChainModel),
    Hmm(&'a HiddenMarkovModel),
    None,
}

pub fn build_augmented(
    provenance: Provenance,
    source: KnockoffSource<'_>,
    data: &Dataset,
    gaussian: &GaussianKnockoffConfig,
    seed: u64,
) -> Result<AugmentedDesign> {
    let mut r = rng::seeded(seed);
    match (provenance, source) {
        (Provenance::ExactMarkov, KnockoffSource::Markov(m)) => mc_knockoff_dataset(m, data, seed),
        (Provenance::ExactMarkov, KnockoffSource::Hmm(_)) => Err(Error::Argument(
            "exact_markov knockoffs need a markov_chain model".into(),
        )),
        (Provenance::ExactHmm, KnockoffSource::Hmm(m)) => hmm_knockoff_dataset(m, data, seed, false),
        (Provenance::HmmReuseLatent, KnockoffSource::Hmm(m)) => {
            hmm_knockoff_dataset(m, data, seed, true)
        }
        (Provenance::ExactHmm | Provenance::HmmReuseLatent, _) => Err(Error::Argument(
            "HMM knockoffs need an hmm model".into(),
        )),
        (Provenance::ExactMarkov, KnockoffSource::None) => Err(Error::Argument(
            "exact_markov knockoffs need a markov_chain model".into(),
        )),
        (Provenance::GaussianSecondOrder, _) => gaussian_second_order(data, gaussian, seed, &mut r),
        (Provenance::Permutation, _) => pseudo_permutation(data, seed, &mut r),
        (Provenance::Whitenoise, _) => {
            let noise = pseudo_whitenoise(data.n(), data.p(), &mut r)?;
            AugmentedDesign::new(data.x.clone(), noise, data.y.clone(), provenance, seed)
        }
        (Provenance::PermutationOrth, _) => {
            let perm = pseudo_permutation(data, seed, &mut r)?;
            let x_star = orthogonalize(&perm.x_tilde, &data.x)?;
            AugmentedDesign::new(data.x.clone(), x_star, data.y.clone(), provenance, seed)
        }
        (Provenance::WhitenoiseOrth, _) => {
            let noise = pseudo_whitenoise(data.n(), data.p(), &mut r)?;
            let x_star = orthogonalize(&noise, &data.x)?;
            AugmentedDesign::new(data.x.clone(), x_star, data.y.clone(), provenance, seed)
        }
    }
}

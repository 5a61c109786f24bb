//! Feature-importance measures on the augmented design `[X | X̃]` and the
//! antisymmetric statistics `w_j = z_j − z̃_j` passed to the filter.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Lasso coordinate descent stops once no coefficient moves more than this.
pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;
pub const KKT_TOL: f64 = 1e-5;
/// Relative residual accepted from the ridge linear solve.
pub const RIDGE_RESIDUAL_TOL: f64 = 1e-8;
/// Fraction of `‖y‖²` explained at which a lasso path stops descending.
pub const SATURATION: f64 = 0.999;
/// Consecutive grid points without a new minimum of the mean
/// cross-validation error that end the descent.
pub const CV_PATIENCE: usize = 5;
/// Active-set sweeps between line-search extrapolations.
const EXTRAPOLATE_EVERY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Ridge,
    LassoCd,
    MarginalCov,
}

impl StatKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::Ridge => "ridge",
            StatKind::LassoCd => "lasso_cd",
            StatKind::MarginalCov => "marginal_cov",
        }
    }
}

impl std::str::FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(StatKind::Ridge),
            "lasso_cd" => Ok(StatKind::LassoCd),
            "marginal_cov" => Ok(StatKind::MarginalCov),
            other => Err(Error::Argument(format!("unknown statistic kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub z_original: Vec<f64>,
    pub z_knockoff: Vec<f64>,
    pub w: Vec<f64>,
    pub kind: StatKind,
}

impl ImportanceScores {
    /// Split `2p` nonnegative scores `[originals | copies]`.
    pub fn from_pairs(scores: &[f64], kind: StatKind) -> Result<Self> {
        if scores.len() % 2 != 0 {
            return Err(Error::Shape(format!(
                "expected an even number of scores, got {}",
                scores.len()
            )));
        }
        let p = scores.len() / 2;
        let z_original = scores[..p].to_vec();
        let z_knockoff = scores[p..].to_vec();
        let w = z_original.iter().zip(&z_knockoff).map(|(a, b)| a - b).collect();
        Ok(ImportanceScores {
            z_original,
            z_knockoff,
            w,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

fn check_rows(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if a.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "design has {} rows, response has {}",
            a.nrows(),
            y.len()
        )));
    }
    Ok(())
}

fn unscale(beta_std: &[f64], sds: &[f64]) -> Vec<f64> {
    beta_std
        .iter()
        .zip(sds)
        .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
        .collect()
}

/// Ridge coefficients of `y` on the standardized columns of `a`, minimizing
/// `n⁻¹‖y_c − A_s β‖² + λ‖β‖²`, reported on the original column scale.
pub fn ridge_coefficients(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    check_rows(a, y)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("ridge lambda must be positive, got {lambda}")));
    }
    let (n, m) = a.shape();
    let (z, _, sds) = linalg::standardize(a);
    let yc = linalg::center(y);
    let nf = n as f64;

    let (beta_std, residual) = if m <= n {
        let mut lhs = z.tr_mul(&z) / nf;
        for j in 0..m {
            lhs[(j, j)] += lambda;
        }
        let rhs = z.tr_mul(&yc) / nf;
        let sol = lhs
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Argument("ridge system is not positive definite".into()))?
            .solve(&rhs);
        let res = (&lhs * &sol - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
        (sol, res)
    } else {
        // dual form: β = Aᵀ (A Aᵀ + nλ I)⁻¹ y
        let mut lhs = &z * z.transpose();
        for i in 0..n {
            lhs[(i, i)] += nf * lambda;
        }
        let dual = lhs
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Argument("ridge system is not positive definite".into()))?
            .solve(&yc);
        let res = (&lhs * &dual - &yc).norm() / yc.norm().max(f64::MIN_POSITIVE);
        (z.tr_mul(&dual), res)
    };
    if residual > RIDGE_RESIDUAL_TOL && yc.norm() > 0.0 {
        return Err(Error::Argument(format!(
            "ridge solve residual {residual:e} exceeds {RIDGE_RESIDUAL_TOL:e}"
        )));
    }
    Ok(unscale(beta_std.as_slice(), &sds))
}

/// Ridge importance: absolute coefficients on the augmented design.
pub fn ridge_importance(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<ImportanceScores> {
    let beta = ridge_coefficients(a, y, lambda)?;
    let abs: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
    ImportanceScores::from_pairs(&abs, StatKind::Ridge)
}

/// Lasso problem stored through its Gram matrix, so each coordinate update
/// costs `O(m)` only when the coefficient actually moves.
#[derive(Debug, Clone)]
pub struct GramLasso {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

impl GramLasso {
    pub fn new(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        check_rows(a, y)?;
        Ok(GramLasso {
            gram: a.tr_mul(a),
            xty: a.tr_mul(y),
            yty: y.norm_squared(),
            n: a.nrows(),
        })
    }

    pub fn from_parts(gram: DMatrix<f64>, xty: DVector<f64>, yty: f64, n: usize) -> Self {
        GramLasso { gram, xty, yty, n }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// Smallest λ with an all-zero solution.
    pub fn lambda_max(&self) -> f64 {
        self.xty.amax() / self.n as f64
    }

    /// `½n⁻¹‖y − Aβ‖² + λ‖β‖₁`.
    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let b = DVector::from_column_slice(beta);
        let quad = b.dot(&(&self.gram * &b));
        let rss = self.yty - 2.0 * b.dot(&self.xty) + quad;
        0.5 * rss / self.n as f64 + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Scaled correlation with the residual, `n⁻¹ Aᵀ(y − Aβ)`.
    fn residual_correlation(&self, beta: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(beta);
        let c = (&self.xty - &self.gram * b) / self.n as f64;
        c.as_slice().to_vec()
    }

    /// Largest violation of the lasso optimality conditions.
    pub fn kkt_residual(&self, beta: &[f64], lambda: f64) -> f64 {
        let c = self.residual_correlation(beta);
        c.iter()
            .zip(beta)
            .enumerate()
            .map(|(j, (cj, bj))| {
                if self.gram[(j, j)] <= 0.0 {
                    0.0
                } else if *bj == 0.0 {
                    (cj.abs() - lambda).max(0.0)
                } else {
                    (cj - lambda * bj.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Exact line search from `beta` along `dir` (supported on `active`),
    /// stopping where the first coefficient reaches zero. Returns the step
    /// taken. The objective is convex along the line, so the step never
    /// increases it; along flat directions it jumps straight to the end of
    /// the segment of minimizers that plain sweeps only creep along.
    fn extrapolate(
        &self,
        active: &[usize],
        dir: &[f64],
        beta: &mut [f64],
        c: &mut [f64],
        lambda: f64,
    ) -> f64 {
        let nf = self.n as f64;
        let mut t_max = f64::INFINITY;
        let mut hits = None;
        let mut slope = 0.0;
        for (&j, &d) in active.iter().zip(dir) {
            if d == 0.0 {
                continue;
            }
            if beta[j] == 0.0 {
                return 0.0;
            }
            slope += -c[j] * d + lambda * beta[j].signum() * d;
            if beta[j].signum() != d.signum() {
                let t = -beta[j] / d;
                if t < t_max {
                    t_max = t;
                    hits = Some(j);
                }
            }
        }
        let gd: DVector<f64> = active
            .iter()
            .zip(dir)
            .filter(|(_, d)| **d != 0.0)
            .fold(DVector::zeros(self.dim()), |acc, (&j, &d)| acc + self.gram.column(j) * d)
            / nf;
        let curvature: f64 = active.iter().zip(dir).map(|(&j, &d)| d * gd[j]).sum();
        if slope >= 0.0 {
            return 0.0;
        }
        let t = if curvature > 0.0 {
            (-slope / curvature).min(t_max)
        } else {
            t_max
        };
        if !t.is_finite() || t <= 0.0 {
            return 0.0;
        }
        for (&j, &d) in active.iter().zip(dir) {
            beta[j] += t * d;
        }
        if t == t_max {
            if let Some(j) = hits {
                beta[j] = 0.0;
            }
        }
        for (ck, g) in c.iter_mut().zip(gd.iter()) {
            *ck -= t * g;
        }
        t
    }

    /// Cyclic coordinate descent from `warm` (zeros when `None`).
    pub fn solve(&self, lambda: f64, warm: Option<&[f64]>) -> Result<LassoSolution> {
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("lasso lambda must be >= 0, got {lambda}")));
        }
        let m = self.dim();
        let nf = self.n as f64;
        let mut beta = warm.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
        if beta.len() != m {
            return Err(Error::Shape("warm start has the wrong length".into()));
        }
        let mut c = self.residual_correlation(&beta);
        let diag: Vec<f64> = (0..m).map(|j| self.gram[(j, j)] / nf).collect();

        let update = |j: usize, beta: &mut [f64], c: &mut [f64]| -> f64 {
            if diag[j] <= 0.0 {
                return 0.0;
            }
            let z = c[j] + diag[j] * beta[j];
            let new = soft_threshold(z, lambda) / diag[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                let col = self.gram.column(j);
                for (ck, gk) in c.iter_mut().zip(col.iter()) {
                    *ck -= delta * gk / nf;
                }
            }
            delta.abs()
        };

        let mut sweeps = 0;
        let mut max_change: f64;
        loop {
            // full pass decides the active set
            max_change = 0.0;
            for j in 0..m {
                max_change = max_change.max(update(j, &mut beta, &mut c));
            }
            sweeps += 1;
            if max_change < LASSO_TOL {
                break;
            }
            let active: Vec<usize> = (0..m).filter(|&j| beta[j] != 0.0).collect();
            let mut inner = 0;
            loop {
                if sweeps >= LASSO_MAX_SWEEPS {
                    return Err(Error::NonConvergence { sweeps, max_change });
                }
                let before: Vec<f64> = active.iter().map(|&j| beta[j]).collect();
                let mut mc: f64 = 0.0;
                for &j in &active {
                    mc = mc.max(update(j, &mut beta, &mut c));
                }
                sweeps += 1;
                inner += 1;
                max_change = mc;
                if mc < LASSO_TOL {
                    break;
                }
                if inner % EXTRAPOLATE_EVERY == 0 {
                    let dir: Vec<f64> = active.iter().zip(&before).map(|(&j, b)| beta[j] - b).collect();
                    self.extrapolate(&active, &dir, &mut beta, &mut c, lambda);
                }
            }
            if sweeps >= LASSO_MAX_SWEEPS {
                return Err(Error::NonConvergence { sweeps, max_change });
            }
        }
        let kkt = self.kkt_residual(&beta, lambda);
        if kkt > KKT_TOL {
            return Err(Error::NonConvergence {
                sweeps,
                max_change: max_change.max(kkt),
            });
        }
        Ok(LassoSolution {
            beta,
            lambda,
            sweeps,
            kkt_residual: kkt,
        })
    }

    /// Residual sum of squares `‖y − Aβ‖²`.
    pub fn rss(&self, beta: &[f64]) -> f64 {
        let b = DVector::from_column_slice(beta);
        (self.yty - 2.0 * b.dot(&self.xty) + b.dot(&(&self.gram * &b))).max(0.0)
    }

    /// Warm-started solutions along `grid` from the largest λ down, in grid
    /// order. Once a fit explains `SATURATION` of `‖y‖²` the remaining
    /// smaller λ are left unsolved (`None`).
    pub fn path(&self, grid: &[f64]) -> Result<Vec<Option<LassoSolution>>> {
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
        let mut out: Vec<Option<LassoSolution>> = vec![None; grid.len()];
        let mut warm: Option<Vec<f64>> = None;
        for i in order {
            let sol = self.solve(grid[i], warm.as_deref())?;
            let saturated = self.rss(&sol.beta) <= (1.0 - SATURATION) * self.yty;
            warm = Some(sol.beta.clone());
            out[i] = Some(sol);
            if saturated {
                break;
            }
        }
        Ok(out)
    }
}

/// Lasso coefficients of `y` on `a` (columns used as given).
pub fn lasso_cd(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    Ok(GramLasso::new(a, y)?.solve(lambda, None)?.beta)
}

/// `size` log-spaced values from `lambda_max` down to `lambda_max / ratio`.
pub fn lambda_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    if size <= 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (size - 1) as f64;
    (0..size).map(|i| lambda_max * (-(i as f64) * step).exp()).collect()
}

/// K-fold cross-validated λ: the grid point with minimum mean out-of-fold
/// squared error, ties toward larger λ. Columns of `a` are used as given and
/// `y` is not re-centered inside folds.
///
/// Folds descend the grid in lockstep from the largest λ with warm starts.
/// The descent stops early after `CV_PATIENCE` consecutive points without a
/// new minimum, once a fold fit saturates, or once a fold fit fails to
/// converge; grid points not reached are never selected.
pub fn cv_lambda<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: usize,
    grid: &[f64],
    rng: &mut R,
) -> Result<f64> {
    check_rows(a, y)?;
    let n = a.nrows();
    if folds < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    if n < folds {
        return Err(Error::Argument(format!("{n} samples cannot fill {folds} folds")));
    }
    if grid.is_empty() {
        return Err(Error::Argument("empty lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Argument(format!("invalid lambda {bad} in grid")));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut membership = vec![Vec::new(); folds];
    for (pos, &i) in idx.iter().enumerate() {
        membership[pos % folds].push(i);
    }

    struct Fold {
        a: DMatrix<f64>,
        y: DVector<f64>,
        train: GramLasso,
        warm: Option<Vec<f64>>,
    }
    let full = GramLasso::new(a, y)?;
    let mut states: Vec<Fold> = membership
        .into_iter()
        .map(|mut held| {
            held.sort_unstable();
            let a_f = a.select_rows(&held);
            let y_f = DVector::from_iterator(held.len(), held.iter().map(|&i| y[i]));
            let train = GramLasso::from_parts(
                &full.gram - a_f.tr_mul(&a_f),
                &full.xty - a_f.tr_mul(&y_f),
                full.yty - y_f.norm_squared(),
                n - held.len(),
            );
            Fold {
                a: a_f,
                y: y_f,
                train,
                warm: None,
            }
        })
        .collect();

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut best: Option<(usize, f64)> = None;
    let mut stale = 0;
    for g in order {
        let lambda = grid[g];
        // per fold: Some((sse, saturated)), None when the fit did not converge
        let results: Result<Vec<Option<(f64, bool)>>> = states
            .par_iter_mut()
            .map(|f| match f.train.solve(lambda, f.warm.as_deref()) {
                Ok(sol) => {
                    let b = DVector::from_column_slice(&sol.beta);
                    let sse = (&f.y - &f.a * &b).norm_squared();
                    let saturated = f.train.rss(&sol.beta) <= (1.0 - SATURATION) * f.train.yty;
                    f.warm = Some(sol.beta);
                    Ok(Some((sse, saturated)))
                }
                Err(Error::NonConvergence { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect();
        let Some(results) = results?.into_iter().collect::<Option<Vec<_>>>() else {
            break;
        };
        let mse = results.iter().map(|r| r.0).sum::<f64>() / n as f64;
        match best {
            Some((_, m)) if mse >= m => stale += 1,
            _ => {
                best = Some((g, mse));
                stale = 0;
            }
        }
        if stale >= CV_PATIENCE || results.iter().any(|r| r.1) {
            break;
        }
    }
    match best {
        Some((g, _)) => Ok(grid[g]),
        None => Err(Error::NonConvergence {
            sweeps: LASSO_MAX_SWEEPS,
            max_change: f64::NAN,
        }),
    }
}

/// Lasso coefficient-difference statistic from `[originals | knockoffs]`.
pub fn lcd_statistic(beta: &[f64]) -> Result<ImportanceScores> {
    let abs: Vec<f64> = beta.iter().map(|b| b.abs()).collect();
    ImportanceScores::from_pairs(&abs, StatKind::LassoCd)
}

/// Settings of the cross-validated lasso statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoCvConfig {
    pub folds: usize,
    pub grid_size: usize,
    pub grid_ratio: f64,
}

impl Default for LassoCvConfig {
    fn default() -> Self {
        LassoCvConfig {
            folds: 10,
            grid_size: 50,
            grid_ratio: 1000.0,
        }
    }
}

/// Standardize, pick λ by cross-validation, refit on all rows and return the
/// LCD statistic (coefficients on the original scale) with the chosen λ.
pub fn cv_lasso_importance<R: Rng + ?Sized>(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &LassoCvConfig,
    rng: &mut R,
) -> Result<(ImportanceScores, f64)> {
    check_rows(a, y)?;
    let (z, _, sds) = linalg::standardize(a);
    let yc = linalg::center(y);
    let problem = GramLasso::new(&z, &yc)?;
    let lmax = problem.lambda_max();
    if lmax == 0.0 {
        let zeros = vec![0.0; a.ncols()];
        return Ok((lcd_statistic(&zeros)?, 0.0));
    }
    let grid = lambda_grid(lmax, config.grid_size, config.grid_ratio);
    let lambda = cv_lambda(&z, &yc, config.folds, &grid, rng)?;
    let descent: Vec<f64> = grid.iter().copied().filter(|l| *l >= lambda).collect();
    let last = problem
        .path(&descent)?
        .into_iter()
        .flatten()
        .min_by(|a, b| a.lambda.total_cmp(&b.lambda))
        .expect("the largest grid point is always solved");
    let fit = if last.lambda == lambda {
        last
    } else {
        problem.solve(lambda, Some(&last.beta))?
    };
    Ok((lcd_statistic(&unscale(&fit.beta, &sds))?, lambda))
}

/// Two-sided t-test p-values of each slope in the OLS fit with intercept.
pub fn ols_pvalues(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    check_rows(x, y)?;
    let (n, p) = x.shape();
    if n <= p + 1 {
        return Err(Error::Argument(format!("OLS needs n > p + 1 (n = {n}, p = {p})")));
    }
    let (means, _) = linalg::column_moments(x);
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let yc = linalg::center(y);

    let qr = xc.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    let rank = r.diagonal().iter().filter(|d| d.abs() > 1e-10 * rmax).count();
    if rank < p || rmax == 0.0 {
        return Err(Error::RankDeficient { rank, columns: p });
    }
    let qty = qr.q().tr_mul(&yc);
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, columns: p })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::RankDeficient { rank, columns: p })?;
    let resid = &yc - &xc * &beta;
    let df = (n - p - 1) as f64;
    let sigma2 = resid.norm_squared() / df;
    Ok((0..p)
        .map(|j| {
            let se = (sigma2 * r_inv.row(j).norm_squared()).sqrt();
            let t = beta[j] / se;
            student_t_two_sided(t, df)
        })
        .collect())
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    statrs::function::beta::beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Per-column sample covariance with `y` (`n - 1` denominator).
pub fn marginal_cov(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    check_rows(x, y)?;
    if x.nrows() < 2 {
        return Err(Error::Argument("marginal covariance needs n >= 2".into()));
    }
    Ok(x.column_iter()
        .map(|c| linalg::covariance(c.as_slice(), y.as_slice()))
        .collect())
}

/// Per-column sample correlation with `y`.
pub fn marginal_correlation(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    check_rows(x, y)?;
    Ok(x.column_iter()
        .map(|c| linalg::correlation(c.as_slice(), y.as_slice()))
        .collect())
}

pub fn marginal_importance(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<ImportanceScores> {
    let abs: Vec<f64> = marginal_cov(a, y)?.iter().map(|c| c.abs()).collect();
    ImportanceScores::from_pairs(&abs, StatKind::MarginalCov)
}

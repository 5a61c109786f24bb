//! Test-only oracles. Nothing here calls into the code paths it checks
//! beyond the sampler conditionals being enumerated.

#![allow(dead_code)]

use knockoff_sim::knockoffs::mc_knockoff_probability;
use knockoff_sim::model::{HiddenMarkovModel, MarkovChainModel};
use knockoff_sim::model::standard_normal_matrix;
use knockoff_sim::rng::seeded;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn all_paths(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &k in sizes {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..k).map(move |s| {
                    let mut w = v.clone();
                    w.push(s);
                    w
                })
            })
            .collect();
    }
    out
}

fn encode(path: &[usize], sizes: &[usize]) -> usize {
    path.iter().zip(sizes).fold(0, |acc, (&s, &k)| acc * k + s)
}

/// Joint law of `(X, X̃)` as a dense table indexed by `encode(x) * |X| + encode(x̃)`.
pub struct JointLaw {
    pub sizes: Vec<usize>,
    pub table: Vec<f64>,
}

impl JointLaw {
    pub fn total(&self) -> f64 {
        self.table.iter().sum()
    }

    /// Total variation between the law and its image under swapping the
    /// coordinates in `swap` (bitmask over positions).
    pub fn swap_tv(&self, swap: usize) -> f64 {
        let paths = all_paths(&self.sizes);
        let m = paths.len();
        let mut tv = 0.0;
        for x in &paths {
            for xt in &paths {
                let (mut a, mut b) = (x.clone(), xt.clone());
                for j in 0..self.sizes.len() {
                    if swap >> j & 1 == 1 {
                        std::mem::swap(&mut a[j], &mut b[j]);
                    }
                }
                let orig = self.table[encode(x, &self.sizes) * m + encode(xt, &self.sizes)];
                let swapped = self.table[encode(&a, &self.sizes) * m + encode(&b, &self.sizes)];
                tv += (orig - swapped).abs();
            }
        }
        0.5 * tv
    }

    pub fn max_single_swap_tv(&self) -> f64 {
        (0..self.sizes.len()).map(|j| self.swap_tv(1 << j)).fold(0.0, f64::max)
    }

    pub fn max_any_swap_tv(&self) -> f64 {
        (1..(1usize << self.sizes.len())).map(|s| self.swap_tv(s)).fold(0.0, f64::max)
    }

    /// Mean over positions of Cor(X_j, X̃_j) treating codes as numbers.
    pub fn mean_self_correlation(&self) -> f64 {
        let paths = all_paths(&self.sizes);
        let m = paths.len();
        let p = self.sizes.len();
        let mut total = 0.0;
        for j in 0..p {
            let (mut ex, mut ext, mut exx, mut exxt) = (0.0, 0.0, 0.0, 0.0);
            for x in &paths {
                for xt in &paths {
                    let w = self.table[encode(x, &self.sizes) * m + encode(xt, &self.sizes)];
                    let (a, b) = (x[j] as f64, xt[j] as f64);
                    ex += w * a;
                    ext += w * b;
                    exx += w * a * a;
                    exxt += w * a * b;
                }
            }
            let var = exx - ex * ex;
            total += (exxt - ex * ext) / var;
            let _ = ext;
        }
        total / p as f64
    }
}

pub fn markov_joint(model: &MarkovChainModel) -> JointLaw {
    let sizes = vec![model.states(); model.len()];
    let paths = all_paths(&sizes);
    let m = paths.len();
    let mut table = vec![0.0; m * m];
    for x in &paths {
        let px: f64 = model.initial()[x[0]]
            * (1..x.len())
                .map(|t| model.transitions()[t - 1][(x[t - 1], x[t])])
                .product::<f64>();
        if px == 0.0 {
            continue;
        }
        for xt in &paths {
            let cond = mc_knockoff_probability(model, x, xt).unwrap();
            table[encode(x, &sizes) * m + encode(xt, &sizes)] = px * cond;
        }
    }
    JointLaw { sizes, table }
}

/// Brute-force joint law of an HMM and its knockoff. `latent_kernel(x, z, z̃)`
/// is the probability the sampler copies latent path `z` to `z̃`.
pub fn hmm_joint(model: &HiddenMarkovModel, reuse_latent: bool) -> JointLaw {
    let p = model.len();
    let k = model.states();
    let sizes: Vec<usize> = (0..p).map(|t| model.alphabet(t)).collect();
    let latent_paths = all_paths(&vec![k; p]);
    let paths = all_paths(&sizes);
    let m = paths.len();
    let prior = |z: &[usize]| -> f64 {
        let l = model.latent();
        l.initial()[z[0]]
            * (1..p)
                .map(|t| l.transitions()[t - 1][(z[t - 1], z[t])])
                .product::<f64>()
    };
    let emit = |z: &[usize], x: &[usize]| -> f64 {
        (0..p).map(|t| model.emissions()[t][(z[t], x[t])]).product()
    };
    // latent copy kernel, computed once per pair of latent paths
    let nl = latent_paths.len();
    let mut kernel = vec![0.0; nl * nl];
    for (a, z) in latent_paths.iter().enumerate() {
        if prior(z) == 0.0 {
            continue;
        }
        for (b, zt) in latent_paths.iter().enumerate() {
            kernel[a * nl + b] = if reuse_latent {
                (z == zt) as u8 as f64
            } else {
                mc_knockoff_probability(model.latent(), z, zt).unwrap()
            };
        }
    }
    let mut table = vec![0.0; m * m];
    for x in &paths {
        // P(x, z) for every z; posterior by Bayes
        let joint_xz: Vec<f64> = latent_paths.iter().map(|z| prior(z) * emit(z, x)).collect();
        let px: f64 = joint_xz.iter().sum();
        if px == 0.0 {
            continue;
        }
        for xt in &paths {
            let mut total = 0.0;
            for (a, _) in latent_paths.iter().enumerate() {
                if joint_xz[a] == 0.0 {
                    continue;
                }
                for (b, zt) in latent_paths.iter().enumerate() {
                    let kab = kernel[a * nl + b];
                    if kab > 0.0 {
                        total += joint_xz[a] * kab * emit(zt, xt);
                    }
                }
            }
            table[encode(x, &sizes) * m + encode(xt, &sizes)] = total;
        }
    }
    JointLaw { sizes, table }
}

fn random_stochastic<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, |_, _| 0.05 + rng.random::<f64>());
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

pub fn random_chain<R: Rng>(p: usize, k: usize, rng: &mut R) -> MarkovChainModel {
    let initial = random_stochastic(1, k, rng).row(0).iter().copied().collect();
    let transitions = (1..p).map(|_| random_stochastic(k, k, rng)).collect();
    MarkovChainModel::new(initial, transitions).unwrap()
}

pub fn random_hmm<R: Rng>(p: usize, k: usize, m: usize, rng: &mut R) -> HiddenMarkovModel {
    let latent = random_chain(p, k, rng);
    let emissions = (0..p).map(|_| random_stochastic(k, m, rng)).collect();
    HiddenMarkovModel::new(latent, emissions).unwrap()
}

/// Accelerated proximal gradient on ½n⁻¹‖y−Aβ‖² + λ‖β‖₁, run far past
/// practical convergence.
pub fn fista(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Vec<f64> {
    let n = a.nrows() as f64;
    let m = a.ncols();
    let h = a.tr_mul(a) / n;
    let lip = h.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;
    let aty = a.tr_mul(y) / n;
    let mut x = DVector::<f64>::zeros(m);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad = &h * &z - &aty;
        let v = &z - grad * step;
        let x_new = v.map(|u| u.signum() * (u.abs() - step * lambda).max(0.0));
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let diff = (&x_new - &x).amax();
        z = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        x = x_new;
        t = t_new;
        if diff < 1e-15 {
            break;
        }
    }
    x.as_slice().to_vec()
}

/// Small random lasso instance `(A, y, λ)` with λ inside `(0, λ_max)`.
pub fn random_lasso_problem(seed: u64) -> (DMatrix<f64>, DVector<f64>, f64) {
    let mut rng = seeded(seed);
    let n = rng.random_range(15..40);
    let m = rng.random_range(2..10);
    let a = standard_normal_matrix(n, m, &mut rng);
    let noise = standard_normal_matrix(n, 1, &mut rng);
    let y = DVector::from_iterator(n, (0..n).map(|i| a[(i, 0)] - 0.5 * a[(i, m - 1)] + noise[(i, 0)]));
    let lmax = (a.tr_mul(&y) / n as f64).amax();
    let lambda = lmax * rng.random_range(0.01..0.9);
    (a, y, lambda)
}

/// τ by scanning every candidate and counting directly.
pub fn knockoff_oracle(w: &[f64], q: f64, offset: usize) -> (f64, Vec<usize>) {
    let mut best = f64::INFINITY;
    for t in w.iter().filter(|v| **v != 0.0).map(|v| v.abs()) {
        let neg = w.iter().filter(|v| **v <= -t).count();
        let pos = w.iter().filter(|v| **v >= t).count();
        if (offset + neg) as f64 / pos.max(1) as f64 <= q && t < best {
            best = t;
        }
    }
    let sel = (0..w.len()).filter(|&j| w[j] >= best).collect();
    (best, sel)
}

/// Largest k with at least k p-values at or below kq/m.
pub fn bh_oracle(p: &[f64], q: f64) -> Vec<usize> {
    let m = p.len();
    let mut k_best = 0;
    for k in 1..=m {
        let cut = k as f64 * q / m as f64;
        if p.iter().filter(|v| **v <= cut).count() >= k {
            k_best = k;
        }
    }
    if k_best == 0 {
        return Vec::new();
    }
    let cut = k_best as f64 * q / m as f64;
    (0..m).filter(|&i| p[i] <= cut).collect()
}


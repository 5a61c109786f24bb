//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample covariance with `n - 1` denominator.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

/// Pearson correlation; zero when either input is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Column means and standard deviations (`1/n` convention).
pub fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let v = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        means.push(m);
        sds.push(v.sqrt());
    }
    (means, sds)
}

/// Center every column and scale to unit `1/n` variance. Constant columns
/// are centered only. Returns the standardized matrix and the scales used.
pub fn standardize(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let (means, sds) = column_moments(x);
    let mut z = x.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let scale = if sds[j] > 0.0 { sds[j] } else { 1.0 };
        for v in col.iter_mut() {
            *v = (*v - means[j]) / scale;
        }
    }
    (z, means, sds)
}

pub fn center(y: &DVector<f64>) -> DVector<f64> {
    let m = y.mean();
    y.map(|v| v - m)
}

/// Sample covariance matrix (`n - 1` denominator).
pub fn covariance_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let (means, _) = column_moments(x);
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    c.tr_mul(&c) / (n.saturating_sub(1).max(1)) as f64
}

/// Sample correlation matrix; constant columns get unit diagonal and zero
/// off-diagonal entries.
pub fn correlation_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let (z, _, sds) = standardize(x);
    let mut c = z.tr_mul(&z) / n;
    for j in 0..c.nrows() {
        if sds[j] <= 0.0 {
            c.column_mut(j).fill(0.0);
            c.row_mut(j).fill(0.0);
        }
        c[(j, j)] = 1.0;
    }
    c
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let m = mean(values);
    if n < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

//! Dense vector arithmetic, similarity measures and PCA.
//!
//! Vectors are plain `&[f64]` slices. Every function checks dimensions and
//! reports mismatches as [`VecMathError`] rather than panicking.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VecMathError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("empty vector")]
    Empty,
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("PCA requested {requested} components but the data only supports {achievable}")]
    RankDeficient { requested: usize, achievable: usize },
    #[error("PCA requested {requested} components, at most {limit} allowed (min of rows and dimension)")]
    TooManyComponents { requested: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, VecMathError>;

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(VecMathError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    Ok(())
}

/// Checks the `Vec` domain invariants: non-empty with finite components.
pub fn check_vector(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(VecMathError::Empty);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(VecMathError::NonFinite);
    }
    Ok(())
}

pub fn dot(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(dot_unchecked(u, v))
}

#[inline]
pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
///
/// Zero-norm inputs are an error, never a silent zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(VecMathError::ZeroNorm);
    }
    Ok((dot_unchecked(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - cosine(u, v)`, always within `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine(u, v)?)
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(VecMathError::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// `acc += s * v`
pub fn axpy(acc: &mut [f64], s: f64, v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, b) in acc.iter_mut().zip(v) {
        *a += s * b;
    }
}

/// A fitted principal component projection.
///
/// `basis` rows are orthonormal principal directions ordered by
/// non-increasing explained variance. Each row's largest-magnitude component
/// is positive so results do not depend on the SVD routine's sign choices.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    /// Projects `v` onto the basis after centering.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dims(v, &self.mean)?;
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .basis
            .iter()
            .map(|row| dot_unchecked(row, &centered))
            .collect())
    }

    /// Maps a projected vector back into input space.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.basis.len() {
            return Err(VecMathError::DimensionMismatch {
                left: z.len(),
                right: self.basis.len(),
            });
        }
        let mut out = self.mean.clone();
        for (coef, row) in z.iter().zip(&self.basis) {
            axpy(&mut out, *coef, row);
        }
        Ok(out)
    }
}

pub fn pca_fit(rows: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(VecMathError::TooFewRows(rows.len()));
    }
    let dim = rows[0].len();
    for r in rows {
        check_vector(r)?;
        check_dims(r, &rows[0])?;
    }
    let limit = rows.len().min(dim);
    if k == 0 || k > limit {
        return Err(VecMathError::TooManyComponents { requested: k, limit });
    }

    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        axpy(&mut mean, 1.0, r);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let largest = order.first().map(|&i| sv[i]).unwrap_or(0.0);
    let cutoff = largest * (n.max(dim) as f64) * f64::EPSILON * 8.0;
    let achievable = order.iter().filter(|&&i| sv[i] > cutoff && sv[i] > 0.0).count();
    if achievable < k {
        return Err(VecMathError::RankDeficient {
            requested: k,
            achievable,
        });
    }

    let mut basis = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut row: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (j, &x)| {
                if x.abs() > best.1 {
                    (j, x.abs())
                } else {
                    best
                }
            })
            .0;
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(row);
        explained_variance.push(sv[idx] * sv[idx] / (n - 1) as f64);
    }

    Ok(PcaModel {
        mean,
        basis,
        explained_variance,
    })
}

pub fn pca_transform(model: &PcaModel, v: &[f64]) -> Result<Vec<f64>> {
    model.transform(v)
}

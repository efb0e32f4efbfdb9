//! Minimal dense linear algebra: row-major matrices, a cyclic Jacobi
//! eigensolver for symmetric matrices, and PCA.
//!
//! The dimensions here are small (latent widths of at most a few hundred),
//! so the solver favors accuracy and determinism over speed.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric within {tol}: |a[{i}][{j}] - a[{j}][{i}]| = {diff}")]
    NotSymmetric {
        i: usize,
        j: usize,
        diff: f64,
        tol: f64,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Sweeps over all off-diagonal pairs with classic 2x2 rotations until the
/// off-diagonal Frobenius mass drops below `1e-14 * ||A||_F`, then sorts
/// eigenpairs in descending eigenvalue order.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let tol = 1e-10 * a.frobenius_norm().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (a.get(i, j) - a.get(j, i)).abs();
            if diff > tol {
                return Err(LinalgError::NotSymmetric { i, j, diff, tol });
            }
        }
    }

    let mut m = a.clone();
    // Symmetrize exactly so the rotations preserve symmetry bit-for-bit.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);

    let norm = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let stop = 1e-14 * norm;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * m.get(i, j) * m.get(i, j);
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let vec: Vec<f64> = (0..n).map(|i| v.get(i, k)).collect();
            (m.get(k, k), vec)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(SymEigen {
        values: pairs.iter().map(|p| p.0).collect(),
        vectors: pairs.into_iter().map(|p| p.1).collect(),
    })
}

/// Sample covariance of row vectors, `1/(n-1)` normalization.
///
/// `center` subtracts the sample mean first; otherwise second moments about
/// zero are used.
pub fn covariance_of_rows(rows: &[Vec<f64>], center: bool) -> Result<Matrix, LinalgError> {
    let n = rows.len();
    if n < 2 {
        return Err(LinalgError::Degenerate(format!(
            "need at least 2 rows for a covariance, got {n}"
        )));
    }
    let d = rows[0].len();
    let mean: Vec<f64> = if center {
        let mut m = vec![0.0; d];
        for r in rows {
            for (mi, ri) in m.iter_mut().zip(r) {
                *mi += ri;
            }
        }
        m.iter().map(|v| v / n as f64).collect()
    } else {
        vec![0.0; d]
    };
    let mut s = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in rows {
        for ((ci, ri), mi) in centered.iter_mut().zip(r).zip(&mean) {
            *ci = ri - mi;
        }
        for i in 0..d {
            let ci = centered[i];
            let row = &mut s.data[i * d..(i + 1) * d];
            for (sij, cj) in row.iter_mut().zip(&centered) {
                *sij += ci * cj;
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    for v in &mut s.data {
        *v *= scale;
    }
    Ok(s)
}

/// PCA of a point cloud.
#[derive(Debug, Clone)]
pub struct Pca {
    /// Unit-norm principal axes, strongest first. Sign fixed so the
    /// largest-magnitude coordinate of each axis is positive.
    pub components: Vec<Vec<f64>>,
    /// Variance along each retained axis.
    pub explained_variance: Vec<f64>,
    /// `explained_variance` divided by the total variance.
    pub explained_ratio: Vec<f64>,
    pub mean: Vec<f64>,
    /// Points projected onto the retained axes.
    pub projected: Vec<Vec<f64>>,
}

pub fn pca(points: &[Vec<f64>], k: usize) -> Result<Pca, LinalgError> {
    if points.len() < k + 1 {
        return Err(LinalgError::Degenerate(format!(
            "need at least {} points for {k} components, got {}",
            k + 1,
            points.len()
        )));
    }
    let cov = covariance_of_rows(points, true)?;
    let total: f64 = cov.trace();
    if total <= 0.0 {
        return Err(LinalgError::Degenerate(
            "all points identical, covariance has zero trace".into(),
        ));
    }
    let eig = sym_eigen(&cov)?;
    let mut components = Vec::with_capacity(k);
    for mut vec in eig.vectors.into_iter().take(k) {
        let lead = vec
            .iter()
            .cloned()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            for v in &mut vec {
                *v = -*v;
            }
        }
        components.push(vec);
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (mi, pi) in mean.iter_mut().zip(p) {
            *mi += pi;
        }
    }
    for m in &mut mean {
        *m /= points.len() as f64;
    }
    let projected = points
        .iter()
        .map(|p| {
            let c = sub(p, &mean);
            components.iter().map(|axis| dot(axis, &c)).collect()
        })
        .collect();
    let explained_variance: Vec<f64> = eig.values.iter().take(k).cloned().collect();
    let explained_ratio = explained_variance.iter().map(|v| v / total).collect();
    Ok(Pca {
        components,
        explained_variance,
        explained_ratio,
        mean,
        projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobi_diagonal_matrix() {
        let mut a = Matrix::zeros(3, 3);
        a.set(0, 0, 3.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 2.0);
        let e = sym_eigen(&a).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = sym_eigen(&a).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-12);
        // Eigenvector of 3 is (1,1)/sqrt(2) up to sign.
        let v = &e.vectors[0];
        assert_abs_diff_eq!(v[0].abs(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].abs(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        use rand::Rng;
        let mut rng = crate::rng::named_stream(11, "jacobi-test");
        let n = 6;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
        let e = sym_eigen(&a).unwrap();
        // Sum of eigenvalues equals the trace.
        let sum: f64 = e.values.iter().sum();
        assert_abs_diff_eq!(sum, a.trace(), epsilon = 1e-10);
        // A v = lambda v for every pair.
        for (lam, vec) in e.values.iter().zip(&e.vectors) {
            let av = a.matvec(vec);
            for (avi, vi) in av.iter().zip(vec) {
                assert_abs_diff_eq!(*avi, lam * vi, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(
            sym_eigen(&a),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn pca_line_in_3d() {
        let points: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![t, 2.0 * t, -t]
            })
            .collect();
        let p = pca(&points, 1).unwrap();
        assert_abs_diff_eq!(p.explained_ratio[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pca_full_basis_reconstructs() {
        use rand::Rng;
        let mut rng = crate::rng::named_stream(3, "pca-test");
        let points: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let p = pca(&points, 4).unwrap();
        for (orig, proj) in points.iter().zip(&p.projected) {
            // reconstruct: mean + sum_k proj_k * component_k
            let mut rec = p.mean.clone();
            for (coef, axis) in proj.iter().zip(&p.components) {
                for (ri, ai) in rec.iter_mut().zip(axis) {
                    *ri += coef * ai;
                }
            }
            for (o, r) in orig.iter().zip(&rec) {
                assert_abs_diff_eq!(*o, *r, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pca_rejects_degenerate() {
        let points = vec![vec![1.0, 2.0]; 10];
        assert!(pca(&points, 1).is_err());
    }
}

//! Small dense linear-algebra helpers shared by the metric modules.
//!
//! Points and vector coefficients are stored as `Vector3<f64>` in every
//! dimension; planar data keeps a zero third component. Flattened vectors
//! only carry the first `dim` components of each point.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SymmetricEigen, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Voigt weights chosen so that `|voigt(S)|` equals the Frobenius norm of `S`.
const SQRT2: f64 = std::f64::consts::SQRT_2;

/// `(s11, s22, s33, √2 s23, √2 s13, √2 s12)`.
pub fn voigt(m: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        SQRT2 * m[(1, 2)],
        SQRT2 * m[(0, 2)],
        SQRT2 * m[(0, 1)],
    )
}

pub fn from_voigt(v: &Vector6<f64>) -> Matrix3<f64> {
    let (a, b, c) = (v[3] / SQRT2, v[4] / SQRT2, v[5] / SQRT2);
    Matrix3::new(v[0], c, b, c, v[1], a, b, a, v[2])
}

pub fn sym(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Matrix3<f64>, tol: f64) -> bool {
    let scale = m.abs().max().max(1.0);
    (m - m.transpose()).abs().max() <= tol * scale
}

pub fn flatten(points: &[Vec3], dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(points.len() * dim);
    for (i, p) in points.iter().enumerate() {
        for c in 0..dim {
            out[i * dim + c] = p[c];
        }
    }
    out
}

pub fn unflatten(v: &DVector<f64>, dim: usize) -> Vec<Vec3> {
    assert_eq!(v.len() % dim, 0, "flattened length not a multiple of dim");
    (0..v.len() / dim)
        .map(|i| {
            let mut p = Vec3::zeros();
            for c in 0..dim {
                p[c] = v[i * dim + c];
            }
            p
        })
        .collect()
}

pub fn all_finite(points: &[Vec3]) -> bool {
    points.iter().all(|p| p.iter().all(|x| x.is_finite()))
}

/// Solve `a x = b` for symmetric positive (semi-)definite `a`.
///
/// When the Cholesky factorization fails, a jitter of
/// `1e-10 * trace(a) / n` is added to the diagonal once before giving up.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.solve(b));
    }
    let jitter = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted)
        .map(|ch| ch.solve(b))
        .ok_or_else(|| Error::numeric("matrix is not positive definite even after jitter"))
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Bounding-box diagonal of a point set, used as a length scale.
pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

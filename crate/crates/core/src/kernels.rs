//! Reproducing-kernel Hilbert spaces of vector fields.
//!
//! Vector kernels are scalar radial kernels times the identity:
//! `K(x, y) = k(|x - y|²) Id`. A [`KernelVelocity`] is the finite expansion
//! `v(x) = Σ_i k(x, x_i) α_i` and its squared RKHS norm is `αᵀ G α`.

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Matern32,
    Matern52,
}

impl KernelFamily {
    /// Order `p` of continuous differentiability of the kernel at the origin.
    pub fn smoothness(self) -> u32 {
        match self {
            KernelFamily::Gaussian => u32::MAX,
            KernelFamily::Matern52 => 2,
            KernelFamily::Matern32 => 1,
        }
    }
}

/// Config-file form of a kernel: `{"family": "gaussian", "width": 0.5}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub width: f64,
}

impl KernelConfig {
    pub fn with_dim(self, dim: usize) -> Result<KernelSpec> {
        KernelSpec::new(self.family, self.width, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub width: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, width: f64, dim: usize) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::input(format!("kernel width must be > 0, got {width}")));
        }
        if dim != 2 && dim != 3 {
            return Err(Error::input(format!("dimension must be 2 or 3, got {dim}")));
        }
        Ok(KernelSpec { family, width, dim })
    }

    pub fn gaussian(width: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, width, dim)
    }

    pub fn config(&self) -> KernelConfig {
        KernelConfig {
            family: self.family,
            width: self.width,
        }
    }

    pub fn require_smoothness(&self, order: u32) -> Result<()> {
        if self.family.smoothness() < order {
            return Err(Error::Capability(format!(
                "{:?} kernel is only C^{}, operation needs C^{order}",
                self.family,
                self.family.smoothness()
            )));
        }
        Ok(())
    }

    /// Profile `f(q)` with `k(x, y) = f(|x - y|²)`, and `f'(q)`.
    pub(crate) fn profile(&self, q: f64) -> (f64, f64) {
        let s = self.width;
        match self.family {
            KernelFamily::Gaussian => {
                let f = (-q / (2.0 * s * s)).exp();
                (f, -f / (2.0 * s * s))
            }
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() / s;
                let r = q.sqrt();
                let e = (-a * r).exp();
                ((1.0 + a * r) * e, -0.5 * a * a * e)
            }
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() / s;
                let r = q.sqrt();
                let e = (-a * r).exp();
                (
                    (1.0 + a * r + a * a * r * r / 3.0) * e,
                    -(a * a / 6.0) * (1.0 + a * r) * e,
                )
            }
        }
    }

    /// Second derivative `f''(q)`; `None` where it does not exist (Matern 3/2 at q = 0).
    pub(crate) fn profile_second(&self, q: f64) -> Option<f64> {
        let s = self.width;
        match self.family {
            KernelFamily::Gaussian => {
                let f = (-q / (2.0 * s * s)).exp();
                Some(f / (4.0 * s.powi(4)))
            }
            KernelFamily::Matern32 => {
                if q == 0.0 {
                    return None;
                }
                let a = 3f64.sqrt() / s;
                let r = q.sqrt();
                Some(a.powi(3) * (-a * r).exp() / (4.0 * r))
            }
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() / s;
                Some(a.powi(4) * (-a * q.sqrt()).exp() / 12.0)
            }
        }
    }

    /// Scalar kernel value `k(x, y)`.
    pub fn eval(&self, x: &Vec3, y: &Vec3) -> f64 {
        self.profile((x - y).norm_squared()).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelVelocity {
    pub spec: KernelSpec,
    pub control_points: Vec<Vec3>,
    pub coefficients: Vec<Vec3>,
}

impl KernelVelocity {
    pub fn new(spec: KernelSpec, control_points: Vec<Vec3>, coefficients: Vec<Vec3>) -> Result<Self> {
        if control_points.len() != coefficients.len() {
            return Err(Error::input(format!(
                "{} control points but {} coefficients",
                control_points.len(),
                coefficients.len()
            )));
        }
        if !all_finite(&control_points) || !all_finite(&coefficients) {
            return Err(Error::input("non-finite kernel velocity data"));
        }
        let mut coefficients = coefficients;
        if spec.dim == 2 {
            for a in &mut coefficients {
                a[2] = 0.0;
            }
        }
        Ok(KernelVelocity {
            spec,
            control_points,
            coefficients,
        })
    }

    pub fn zero(spec: KernelSpec, control_points: Vec<Vec3>) -> Self {
        let n = control_points.len();
        KernelVelocity {
            spec,
            control_points,
            coefficients: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.control_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control_points.is_empty()
    }
}

fn check_points(points: &[Vec3]) -> Result<()> {
    if !all_finite(points) {
        return Err(Error::input("non-finite point coordinates"));
    }
    Ok(())
}

/// Block kernel matrix between `rows` and `cols`: block `(i, j)` is `k(rows_i, cols_j) Id_d`.
pub fn cross_kernel_matrix(spec: &KernelSpec, rows: &[Vec3], cols: &[Vec3]) -> Result<DMatrix<f64>> {
    check_points(rows)?;
    check_points(cols)?;
    let d = spec.dim;
    let mut m = DMatrix::zeros(rows.len() * d, cols.len() * d);
    for (i, x) in rows.iter().enumerate() {
        for (j, y) in cols.iter().enumerate() {
            let k = spec.eval(x, y);
            for c in 0..d {
                m[(i * d + c, j * d + c)] = k;
            }
        }
    }
    Ok(m)
}

/// Gram matrix `G` (n·d × n·d) of the vector kernel on `points`.
pub fn gram_matrix(spec: &KernelSpec, points: &[Vec3]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::input("gram matrix needs at least one point"));
    }
    cross_kernel_matrix(spec, points, points)
}

/// `u_i = Σ_j k(queries_i, points_j) coeffs_j`. Each output is summed in index order.
pub(crate) fn kernel_matvec(spec: &KernelSpec, queries: &[Vec3], points: &[Vec3], coeffs: &[Vec3]) -> Vec<Vec3> {
    queries
        .par_iter()
        .map(|y| {
            points
                .iter()
                .zip(coeffs)
                .fold(Vec3::zeros(), |acc, (x, a)| acc + a * spec.eval(y, x))
        })
        .collect()
}

/// Reverse-mode derivative of [`kernel_matvec`] for the output cotangent `u_bar`.
///
/// Returns cotangents with respect to the queries, the points, and the coefficients.
pub(crate) fn kernel_matvec_vjp(
    spec: &KernelSpec,
    queries: &[Vec3],
    points: &[Vec3],
    coeffs: &[Vec3],
    u_bar: &[Vec3],
) -> (Vec<Vec3>, Vec<Vec3>, Vec<Vec3>) {
    let q_bar: Vec<Vec3> = queries
        .par_iter()
        .zip(u_bar.par_iter())
        .map(|(y, ub)| {
            points.iter().zip(coeffs).fold(Vec3::zeros(), |acc, (x, a)| {
                let r = y - x;
                let (_, f1) = spec.profile(r.norm_squared());
                acc + r * (2.0 * f1 * ub.dot(a))
            })
        })
        .collect();
    let (p_bar, c_bar): (Vec<Vec3>, Vec<Vec3>) = points
        .par_iter()
        .zip(coeffs.par_iter())
        .map(|(x, a)| {
            let mut pb = Vec3::zeros();
            let mut cb = Vec3::zeros();
            for (y, ub) in queries.iter().zip(u_bar) {
                let r = y - x;
                let (f, f1) = spec.profile(r.norm_squared());
                cb += ub * f;
                pb -= r * (2.0 * f1 * ub.dot(a));
            }
            (pb, cb)
        })
        .unzip();
    (q_bar, p_bar, c_bar)
}

pub fn eval_velocity(v: &KernelVelocity, queries: &[Vec3]) -> Result<Vec<Vec3>> {
    check_points(queries)?;
    Ok(kernel_matvec(&v.spec, queries, &v.control_points, &v.coefficients))
}

/// Spatial Jacobians `dv(x)` at the queries; `dv[(a, b)] = ∂_b v_a`.
///
/// Planar fields return 3×3 matrices whose third row and column vanish.
pub fn eval_jacobian(v: &KernelVelocity, queries: &[Vec3]) -> Result<Vec<Matrix3<f64>>> {
    check_points(queries)?;
    v.spec.require_smoothness(1)?;
    Ok(queries
        .par_iter()
        .map(|y| {
            let mut jac = Matrix3::zeros();
            for (x, a) in v.control_points.iter().zip(&v.coefficients) {
                let r = y - x;
                let (_, f1) = v.spec.profile(r.norm_squared());
                jac += a * (r * (2.0 * f1)).transpose();
            }
            jac
        })
        .collect())
}

/// Second derivatives: entry `c` of the result holds the Hessian of `v_c`.
pub fn eval_hessian(v: &KernelVelocity, queries: &[Vec3]) -> Result<Vec<[Matrix3<f64>; 3]>> {
    check_points(queries)?;
    let mut out = Vec::with_capacity(queries.len());
    for y in queries {
        let mut hess = [Matrix3::zeros(); 3];
        for (x, a) in v.control_points.iter().zip(&v.coefficients) {
            let r = y - x;
            let q = r.norm_squared();
            let (_, f1) = v.spec.profile(q);
            let f2 = v.spec.profile_second(q).ok_or_else(|| {
                Error::Capability(format!(
                    "{:?} kernel has no second derivative at a control point",
                    v.spec.family
                ))
            })?;
            let scalar_hess = r * r.transpose() * (4.0 * f2) + Matrix3::identity() * (2.0 * f1);
            for c in 0..3 {
                hess[c] += scalar_hess * a[c];
            }
        }
        out.push(hess);
    }
    Ok(out)
}

/// `‖v‖²_V = αᵀ G α`.
pub fn rkhs_norm_sq(v: &KernelVelocity) -> f64 {
    rkhs_energy(&v.spec, &v.control_points, &v.coefficients)
}

pub(crate) fn rkhs_energy(spec: &KernelSpec, points: &[Vec3], coeffs: &[Vec3]) -> f64 {
    let u = kernel_matvec(spec, points, points, coeffs);
    coeffs.iter().zip(&u).map(|(a, ui)| a.dot(ui)).sum::<f64>().max(0.0)
}

/// Gradient of `αᵀ G(x) α` with respect to the points and the coefficients.
pub(crate) fn rkhs_energy_grad(spec: &KernelSpec, points: &[Vec3], coeffs: &[Vec3]) -> (Vec<Vec3>, Vec<Vec3>) {
    let u = kernel_matvec(spec, points, points, coeffs);
    let (qb, pb, cb) = kernel_matvec_vjp(spec, points, points, coeffs, coeffs);
    let x_bar = qb.iter().zip(&pb).map(|(a, b)| a + b).collect();
    let a_bar = cb.iter().zip(&u).map(|(a, b)| a + b).collect();
    (x_bar, a_bar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> KernelSpec {
        KernelSpec::gaussian(1.0, 3).unwrap()
    }

    #[test]
    fn single_point_gram_is_identity() {
        let g = gram_matrix(&spec(), &[Vec3::new(0.3, -1.0, 2.0)]).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn coincident_points_give_all_identity_blocks() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let g = gram_matrix(&spec(), &[p, p]).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i % 3 == j % 3 { 1.0 } else { 0.0 };
                assert_eq!(g[(i, j)], expect);
            }
        }
    }

    #[test]
    fn off_diagonal_block_matches_formula() {
        let r: f64 = 0.7;
        let g = gram_matrix(&spec(), &[Vec3::zeros(), Vec3::new(r, 0.0, 0.0)]).unwrap();
        let expect = (-r * r / 2.0).exp();
        assert!((g[(0, 3)] - expect).abs() < 1e-15);
        assert!((g[(1, 4)] - expect).abs() < 1e-15);
        assert_eq!(g[(0, 4)], 0.0);
    }

    #[test]
    fn non_finite_points_rejected() {
        let err = gram_matrix(&spec(), &[Vec3::new(f64::NAN, 0.0, 0.0)]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn velocity_at_single_control_point_is_its_coefficient() {
        let p = Vec3::new(0.5, 0.5, 0.5);
        let a = Vec3::new(1.0, -2.0, 0.5);
        let v = KernelVelocity::new(spec(), vec![p], vec![a]).unwrap();
        assert_eq!(eval_velocity(&v, &[p]).unwrap()[0], a);
        assert_eq!(eval_jacobian(&v, &[p]).unwrap()[0], Matrix3::zeros());
        assert!((rkhs_norm_sq(&v) - a.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn two_point_norm_matches_block_expansion() {
        let s = spec();
        let x = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.5, 0.2, -0.1)];
        let a = [Vec3::new(1.0, 0.0, 2.0), Vec3::new(-0.5, 1.5, 0.0)];
        let v = KernelVelocity::new(s, x.to_vec(), a.to_vec()).unwrap();
        let k12 = s.eval(&x[0], &x[1]);
        let expect = a[0].norm_squared() + a[1].norm_squared() + 2.0 * k12 * a[0].dot(&a[1]);
        assert!((rkhs_norm_sq(&v) - expect).abs() < 1e-14);
    }

    #[test]
    fn matern32_hessian_at_control_point_is_a_capability_error() {
        let s = KernelSpec::new(KernelFamily::Matern32, 1.0, 3).unwrap();
        let p = Vec3::new(0.1, 0.2, 0.3);
        let v = KernelVelocity::new(s, vec![p], vec![Vec3::x()]).unwrap();
        assert!(eval_jacobian(&v, &[p]).is_ok());
        assert!(matches!(eval_hessian(&v, &[p]), Err(Error::Capability(_))));
        assert!(eval_hessian(&v, &[p + Vec3::x() * 0.1]).is_ok());
    }

    #[test]
    fn planar_spec_zeroes_third_coefficient() {
        let s = KernelSpec::gaussian(1.0, 2).unwrap();
        let v = KernelVelocity::new(s, vec![Vec3::zeros()], vec![Vec3::new(1.0, 1.0, 5.0)]).unwrap();
        assert_eq!(v.coefficients[0][2], 0.0);
    }

    #[test]
    fn invalid_width_rejected() {
        assert!(KernelSpec::gaussian(0.0, 3).is_err());
        assert!(KernelSpec::gaussian(1.0, 4).is_err());
    }
}

//! Linear-elastic quadratic forms on curves, surfaces, and volumes.
//!
//! Every model is evaluated per element on the P0 strain of the P1
//! displacement, weighted by the element measure.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{arr, DiscreteShape, ShapeKind, TriangleStrain};
use crate::kernels::{cross_kernel_matrix, gram_matrix, KernelVelocity};
use crate::linalg::{is_symmetric, spd_solve, Vec3};
use crate::local::{self, Real, M, V};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaminarParams {
    pub lambda_tan: f64,
    pub mu_tan: f64,
    pub mu_tsv: f64,
    pub mu_ang: f64,
}

impl LaminarParams {
    fn as_array(&self) -> [f64; 4] {
        [self.lambda_tan, self.mu_tan, self.mu_tsv, self.mu_ang]
    }
}

/// Elasticity tensor of a shape metric.
///
/// `Laminar.layers`, when non-empty, splits `[0, 1]` into equal layer-index
/// buckets with one parameter set each. `Generic.tensors` holds one 6×6 Voigt
/// matrix shared by every element, or one per element.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElasticModel {
    #[default]
    None,
    Isotropic {
        lambda: f64,
        mu: f64,
    },
    Laminar {
        lambda_tan: f64,
        mu_tan: f64,
        mu_tsv: f64,
        mu_ang: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        layers: Vec<LaminarParams>,
    },
    Surface {
        lambda_tan: f64,
        mu_tan: f64,
        mu_tsv: f64,
    },
    SurfaceCorrected {
        lambda_tan: f64,
        mu_tan: f64,
        mu_tsv: f64,
        mu_rot: f64,
    },
    Curve {
        mu_tan: f64,
        mu_tsv: f64,
    },
    Generic {
        tensors: Vec<[[f64; 6]; 6]>,
    },
}

/// Per-element density after resolving layers and per-element tensors.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Density {
    Zero,
    Isotropic { lambda: f64, mu: f64 },
    Laminar([f64; 4]),
    Surface { lambda_tan: f64, mu_tan: f64, mu_tsv: f64, mu_rot: f64 },
    Curve { mu_tan: f64, mu_tsv: f64 },
    Generic([[f64; 6]; 6]),
}

/// Which per-element inputs an energy evaluation consumes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ElementInputs<'a, T> {
    pub x: &'a [V<T>],
    pub u: &'a [V<T>],
    pub layer: Option<(V<T>, V<T>)>,
    pub growth: Option<M<T>>,
}

impl Density {
    pub(crate) fn is_zero(&self) -> bool {
        matches!(self, Density::Zero)
    }

    pub(crate) fn needs_layer(&self) -> bool {
        matches!(self, Density::Laminar(_))
    }

    /// `measure · density(strain − g)` on one element.
    pub(crate) fn energy<T: Real>(&self, inp: &ElementInputs<'_, T>) -> T {
        let x = inp.x;
        let u = inp.u;
        match (*self, x.len()) {
            (Density::Zero, _) => local::zero(),
            (Density::Curve { mu_tan, mu_tsv }, 2) => {
                let (len, tau, w) = local::edge_strain(&[x[0], x[1]], &[u[0], u[1]]);
                local::curve_density(mu_tan, mu_tsv, &tau, &w) * len
            }
            (
                Density::Surface {
                    lambda_tan,
                    mu_tan,
                    mu_tsv,
                    mu_rot,
                },
                3,
            ) => {
                let (a, area) = local::triangle_strain(&[x[0], x[1], x[2]], &[u[0], u[1], u[2]]);
                local::surface_density(lambda_tan, mu_tan, mu_tsv, mu_rot, &a) * area
            }
            (d, 4) => {
                let (dv, vol) = local::tet_dv(&[x[0], x[1], x[2], x[3]], &[u[0], u[1], u[2], u[3]]);
                let mut eps = local::sym(&dv);
                if let Some(g) = &inp.growth {
                    eps = local::mat_sub(&eps, g);
                }
                let dens = match d {
                    Density::Isotropic { lambda, mu } => local::isotropic_density(lambda, mu, &eps),
                    Density::Laminar(p) => {
                        let (s, n) = inp.layer.expect("laminar density needs layer vectors");
                        local::laminar_density(&p, &eps, &s, &n)
                    }
                    Density::Generic(q) => local::voigt_density(&q, &eps),
                    _ => unreachable!("density incompatible with tet"),
                };
                dens * vol
            }
            _ => unreachable!("density incompatible with element"),
        }
    }

    /// `vol · B(S)` for a given symmetric tensor (tets only).
    pub(crate) fn strain_energy(&self, vol: f64, g: &Matrix3<f64>, layer: Option<(V<f64>, V<f64>)>) -> f64 {
        let gm: M<f64> = std::array::from_fn(|a| std::array::from_fn(|b| g[(a, b)]));
        let dens = match *self {
            Density::Zero => 0.0,
            Density::Isotropic { lambda, mu } => local::isotropic_density(lambda, mu, &gm),
            Density::Laminar(p) => {
                let (s, n) = layer.expect("laminar density needs layer vectors");
                local::laminar_density(&p, &gm, &s, &n)
            }
            Density::Generic(q) => local::voigt_density(&q, &gm),
            _ => 0.0,
        };
        dens * vol
    }

    /// Value and local gradient through the dual-number layout
    /// `x: 0..12, u: 12..24, S: 24..27, N: 27..30, g: 30..36`.
    pub(crate) fn energy_grad(&self, inp: &ElementInputs<'_, f64>) -> (f64, [f64; local::LOCAL_DIM]) {
        let k = inp.x.len();
        let mut vals = [0.0; local::LOCAL_DIM];
        for i in 0..k {
            vals[3 * i..3 * i + 3].copy_from_slice(&inp.x[i]);
            vals[12 + 3 * i..12 + 3 * i + 3].copy_from_slice(&inp.u[i]);
        }
        if let Some((s, n)) = &inp.layer {
            vals[24..27].copy_from_slice(s);
            vals[27..30].copy_from_slice(n);
        }
        if let Some(g) = &inp.growth {
            vals[30..36].copy_from_slice(&sym_to6(g));
        }
        let d = local::seed(&vals);
        let xs: Vec<V<local::D>> = (0..k).map(|i| [d[3 * i], d[3 * i + 1], d[3 * i + 2]]).collect();
        let us: Vec<V<local::D>> = (0..k).map(|i| [d[12 + 3 * i], d[13 + 3 * i], d[14 + 3 * i]]).collect();
        let dual = ElementInputs {
            x: &xs,
            u: &us,
            layer: inp.layer.map(|_| ([d[24], d[25], d[26]], [d[27], d[28], d[29]])),
            growth: inp.growth.map(|_| sym_from6(&[d[30], d[31], d[32], d[33], d[34], d[35]])),
        };
        local::split(self.energy(&dual))
    }
}

/// Symmetric matrix packed as `(g11, g22, g33, g23, g13, g12)`.
pub(crate) fn sym_to6<T: Real>(g: &M<T>) -> [T; 6] {
    [g[0][0], g[1][1], g[2][2], g[1][2], g[0][2], g[0][1]]
}

pub(crate) fn sym_from6<T: Real>(p: &[T; 6]) -> M<T> {
    [[p[0], p[5], p[4]], [p[5], p[1], p[3]], [p[4], p[3], p[2]]]
}

fn check_nonneg(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::input(format!("elastic parameter {name} must be finite and ≥ 0, got {x}")));
    }
    Ok(())
}

impl ElasticModel {
    pub fn name(&self) -> &'static str {
        match self {
            ElasticModel::None => "none",
            ElasticModel::Isotropic { .. } => "isotropic",
            ElasticModel::Laminar { .. } => "laminar",
            ElasticModel::Surface { .. } => "surface",
            ElasticModel::SurfaceCorrected { .. } => "surface_corrected",
            ElasticModel::Curve { .. } => "curve",
            ElasticModel::Generic { .. } => "generic",
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ElasticModel::None)
    }

    /// Parameter ranges: nonnegative scalars, symmetric PSD generic tensors.
    pub fn validate(&self) -> Result<()> {
        match self {
            ElasticModel::None => {}
            ElasticModel::Isotropic { lambda, mu } => {
                check_nonneg("lambda", *lambda)?;
                check_nonneg("mu", *mu)?;
            }
            ElasticModel::Laminar {
                lambda_tan,
                mu_tan,
                mu_tsv,
                mu_ang,
                layers,
            } => {
                let base = LaminarParams {
                    lambda_tan: *lambda_tan,
                    mu_tan: *mu_tan,
                    mu_tsv: *mu_tsv,
                    mu_ang: *mu_ang,
                };
                for p in std::iter::once(&base).chain(layers) {
                    check_nonneg("lambda_tan", p.lambda_tan)?;
                    check_nonneg("mu_tan", p.mu_tan)?;
                    check_nonneg("mu_tsv", p.mu_tsv)?;
                    check_nonneg("mu_ang", p.mu_ang)?;
                }
            }
            ElasticModel::Surface {
                lambda_tan,
                mu_tan,
                mu_tsv,
            } => {
                check_nonneg("lambda_tan", *lambda_tan)?;
                check_nonneg("mu_tan", *mu_tan)?;
                check_nonneg("mu_tsv", *mu_tsv)?;
            }
            ElasticModel::SurfaceCorrected {
                lambda_tan,
                mu_tan,
                mu_tsv,
                mu_rot,
            } => {
                check_nonneg("lambda_tan", *lambda_tan)?;
                check_nonneg("mu_tan", *mu_tan)?;
                check_nonneg("mu_tsv", *mu_tsv)?;
                check_nonneg("mu_rot", *mu_rot)?;
            }
            ElasticModel::Curve { mu_tan, mu_tsv } => {
                check_nonneg("mu_tan", *mu_tan)?;
                check_nonneg("mu_tsv", *mu_tsv)?;
            }
            ElasticModel::Generic { tensors } => {
                if tensors.is_empty() {
                    return Err(Error::input("generic model needs at least one tensor"));
                }
                for (e, q) in tensors.iter().enumerate() {
                    let m = Matrix6::from_fn(|i, j| q[i][j]);
                    if !m.iter().all(|x| x.is_finite()) {
                        return Err(Error::input(format!("generic tensor {e} has non-finite entries")));
                    }
                    let scale = m.abs().max().max(f64::MIN_POSITIVE);
                    if (m - m.transpose()).abs().max() > 1e-12 * scale {
                        return Err(Error::input(format!("generic tensor {e} is not symmetric")));
                    }
                    let min = SymmetricEigen::new(m).eigenvalues.min();
                    if min < -1e-12 * scale {
                        return Err(Error::input(format!(
                            "generic tensor {e} is not positive semi-definite (eigenvalue {min:e})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Check that the model can be evaluated on `shape`.
    pub fn check_compatible(&self, shape: &DiscreteShape) -> Result<()> {
        self.validate()?;
        let kind = shape.kind();
        let ok = match self {
            ElasticModel::None => true,
            ElasticModel::Curve { .. } => kind.is_polyline(),
            ElasticModel::Surface { .. } | ElasticModel::SurfaceCorrected { .. } => kind == ShapeKind::Trimesh,
            ElasticModel::Isotropic { .. } | ElasticModel::Laminar { .. } | ElasticModel::Generic { .. } => {
                kind == ShapeKind::Tetmesh
            }
        };
        if !ok {
            return Err(Error::config(format!(
                "elastic model '{}' cannot be used with shape kind '{}'",
                self.name(),
                kind.name()
            )));
        }
        if let ElasticModel::Laminar { .. } = self {
            if shape.layered().is_none() {
                return Err(Error::config("laminar model requires a layered tetmesh"));
            }
        }
        if let ElasticModel::Generic { tensors } = self {
            if tensors.len() != 1 && tensors.len() != shape.n_elements() {
                return Err(Error::config(format!(
                    "generic model has {} tensors; expected 1 or {}",
                    tensors.len(),
                    shape.n_elements()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn densities(&self, shape: &DiscreteShape) -> Vec<Density> {
        let ne = shape.n_elements();
        (0..ne)
            .map(|e| match self {
                ElasticModel::None => Density::Zero,
                ElasticModel::Isotropic { lambda, mu } => Density::Isotropic {
                    lambda: *lambda,
                    mu: *mu,
                },
                ElasticModel::Laminar {
                    lambda_tan,
                    mu_tan,
                    mu_tsv,
                    mu_ang,
                    layers,
                } => {
                    if layers.is_empty() {
                        Density::Laminar([*lambda_tan, *mu_tan, *mu_tsv, *mu_ang])
                    } else {
                        let s = shape
                            .layered()
                            .map(|ls| ls.element_layer(shape.cells(), e))
                            .unwrap_or(0.0);
                        let k = ((s * layers.len() as f64).floor() as usize).min(layers.len() - 1);
                        Density::Laminar(layers[k].as_array())
                    }
                }
                ElasticModel::Surface {
                    lambda_tan,
                    mu_tan,
                    mu_tsv,
                } => Density::Surface {
                    lambda_tan: *lambda_tan,
                    mu_tan: *mu_tan,
                    mu_tsv: *mu_tsv,
                    mu_rot: 0.0,
                },
                ElasticModel::SurfaceCorrected {
                    lambda_tan,
                    mu_tan,
                    mu_tsv,
                    mu_rot,
                } => Density::Surface {
                    lambda_tan: *lambda_tan,
                    mu_tan: *mu_tan,
                    mu_tsv: *mu_tsv,
                    mu_rot: *mu_rot,
                },
                ElasticModel::Curve { mu_tan, mu_tsv } => Density::Curve {
                    mu_tan: *mu_tan,
                    mu_tsv: *mu_tsv,
                },
                ElasticModel::Generic { tensors } => Density::Generic(tensors[if tensors.len() == 1 { 0 } else { e }]),
            })
            .collect()
    }
}

/// Layer vectors of element `e` when the density needs them.
pub(crate) fn layer_of(shape: &DiscreteShape, density: &Density, e: usize) -> Option<(V<f64>, V<f64>)> {
    if !density.needs_layer() {
        return None;
    }
    shape
        .layered()
        .map(|ls| (arr(&ls.transverse[e]), arr(&ls.normal[e])))
}

// ---------------------------------------------------------------------------
// Pointwise densities

fn check_sym(eps: &Matrix3<f64>) -> Result<()> {
    if !is_symmetric(eps, 1e-12) {
        return Err(Error::input("strain tensor is not symmetric"));
    }
    Ok(())
}

fn to_m(m: &Matrix3<f64>) -> M<f64> {
    std::array::from_fn(|a| std::array::from_fn(|b| m[(a, b)]))
}

/// `(λ/2) tr(ε)² + μ tr(ε²)`.
pub fn isotropic_density(lambda: f64, mu: f64, eps: &Matrix3<f64>) -> Result<f64> {
    check_sym(eps)?;
    Ok(local::isotropic_density(lambda, mu, &to_m(eps)))
}

/// Layered density with transverse field `s` and unit layer normal `n`.
pub fn laminar_density(p: &LaminarParams, eps: &Matrix3<f64>, s: &Vec3, n: &Vec3) -> Result<f64> {
    check_sym(eps)?;
    if (n.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::input(format!("layer normal must be unit length, |N| = {}", n.norm())));
    }
    Ok(local::laminar_density(&p.as_array(), &to_m(eps), &arr(s), &arr(n)))
}

/// Surface density from the frame components; `mu_rot` weights `(a12 − a21)²/2`.
pub fn surface_density(lambda_tan: f64, mu_tan: f64, mu_tsv: f64, mu_rot: f64, a: &TriangleStrain) -> f64 {
    let tr = a.a11 + a.a22;
    let tr_sq = a.a11 * a.a11 + a.a22 * a.a22 + 0.5 * a.a12_plus_a21 * a.a12_plus_a21;
    lambda_tan * tr * tr
        + mu_tan * tr_sq
        + mu_tsv * (a.a13 * a.a13 + a.a23 * a.a23)
        + 0.5 * mu_rot * a.a12_minus_a21 * a.a12_minus_a21
}

/// `μ_tan (τᵀw)² + μ_tsv Σ (νᵀw)²` with `frame = [τ, ν…]`.
pub fn curve_density(mu_tan: f64, mu_tsv: f64, w: &Vec3, frame: &[Vec3]) -> f64 {
    let t = frame[0].dot(w);
    let n: f64 = frame[1..].iter().map(|nu| nu.dot(w).powi(2)).sum();
    mu_tan * t * t + mu_tsv * n
}

// ---------------------------------------------------------------------------
// Norms and quadratic forms

/// Per-element energies `measure · B(ε)` of a vertex displacement field.
pub fn element_energies(shape: &DiscreteShape, model: &ElasticModel, v: &[Vec3]) -> Result<Vec<f64>> {
    model.check_compatible(shape)?;
    if v.len() != shape.n_vertices() {
        return Err(Error::input(format!(
            "expected {} vertex vectors, got {}",
            shape.n_vertices(),
            v.len()
        )));
    }
    let dens = model.densities(shape);
    Ok((0..shape.n_elements())
        .map(|e| element_energy(shape, &dens[e], e, v, None))
        .collect())
}

pub(crate) fn element_energy(
    shape: &DiscreteShape,
    density: &Density,
    e: usize,
    v: &[Vec3],
    growth: Option<M<f64>>,
) -> f64 {
    if density.is_zero() {
        return 0.0;
    }
    let idx = shape.element(e);
    let x: Vec<V<f64>> = idx.iter().map(|&i| arr(&shape.vertices()[i])).collect();
    let u: Vec<V<f64>> = idx.iter().map(|&i| arr(&v[i])).collect();
    density.energy(&ElementInputs {
        x: &x,
        u: &u,
        layer: layer_of(shape, density, e),
        growth,
    })
}

/// `Σ_e measure · B(ε_e)` for the P1 field with vertex values `v`.
pub fn elastic_norm_sq(shape: &DiscreteShape, model: &ElasticModel, v: &[Vec3]) -> Result<f64> {
    Ok(element_energies(shape, model, v)?.iter().sum())
}

/// Per-element quadratic part `A_e` (in the element's `k·d` displacement
/// dofs) with `energy(u) = uᵀ A_e u`, obtained by polarization.
pub(crate) fn element_matrix(shape: &DiscreteShape, density: &Density, e: usize) -> DMatrix<f64> {
    let d = shape.dim();
    let idx = shape.element(e);
    let k = idx.len();
    let x: Vec<V<f64>> = idx.iter().map(|&i| arr(&shape.vertices()[i])).collect();
    let layer = layer_of(shape, density, e);
    let eval = |dofs: &[(usize, f64)]| {
        let mut u = vec![[0.0; 3]; k];
        for &(j, w) in dofs {
            u[j / d][j % d] += w;
        }
        density.energy(&ElementInputs {
            x: &x,
            u: &u,
            layer,
            growth: None,
        })
    };
    let n = k * d;
    let diag: Vec<f64> = (0..n).map(|j| eval(&[(j, 1.0)])).collect();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = diag[i];
        for j in 0..i {
            let v = 0.5 * (eval(&[(i, 1.0), (j, 1.0)]) - diag[i] - diag[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Kernel-to-vertex evaluation matrix `K_vc ⊗ I_d` (flattened with `d` components).
pub(crate) fn evaluation_matrix(shape: &DiscreteShape, spec: &crate::KernelSpec, control_points: &[Vec3]) -> Result<DMatrix<f64>> {
    let d = shape.dim();
    let k = cross_kernel_matrix(spec, shape.vertices(), control_points)?;
    let (nv, nc) = (shape.n_vertices(), control_points.len());
    let mut out = DMatrix::zeros(nv * d, nc * d);
    for i in 0..nv {
        for j in 0..nc {
            let kij = k[(i * spec.dim, j * spec.dim)];
            for c in 0..d {
                out[(i * d + c, j * d + c)] = kij;
            }
        }
    }
    Ok(out)
}

/// Assemble `P = A K` where `A` is the global vertex stiffness.
pub(crate) fn stiffness_times(shape: &DiscreteShape, model: &ElasticModel, k: &DMatrix<f64>) -> DMatrix<f64> {
    let d = shape.dim();
    let dens = model.densities(shape);
    let mut p = DMatrix::zeros(k.nrows(), k.ncols());
    for e in 0..shape.n_elements() {
        if dens[e].is_zero() {
            continue;
        }
        let a = element_matrix(shape, &dens[e], e);
        let dofs: Vec<usize> = shape
            .element(e)
            .iter()
            .flat_map(|&i| (0..d).map(move |c| i * d + c))
            .collect();
        for (r, &gr) in dofs.iter().enumerate() {
            for (c, &gc) in dofs.iter().enumerate() {
                let w = a[(r, c)];
                if w != 0.0 {
                    for col in 0..k.ncols() {
                        p[(gr, col)] += w * k[(gc, col)];
                    }
                }
            }
        }
    }
    p
}

/// Matrix `E` with `αᵀ E α = elastic_norm_sq(shape, model, v_α at vertices)`
/// for `v_α` the kernel expansion on `control_points`.
pub fn elastic_quadratic_form(
    shape: &DiscreteShape,
    model: &ElasticModel,
    spec: &crate::KernelSpec,
    control_points: &[Vec3],
) -> Result<DMatrix<f64>> {
    model.check_compatible(shape)?;
    if spec.dim != shape.dim() {
        return Err(Error::config("kernel and shape dimensions differ"));
    }
    spec.require_smoothness(1)?;
    let k = evaluation_matrix(shape, spec, control_points)?;
    let p = stiffness_times(shape, model, &k);
    let e = k.transpose() * p;
    Ok((&e + e.transpose()) * 0.5)
}

/// Lower coercivity bound on full 3D strains.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coercivity {
    pub constant: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Voigt matrix of a density that has no layer dependence.
fn voigt_matrix(density: &Density) -> Matrix6<f64> {
    let eval = |s: &[f64; 6]| {
        let eps = local::from_voigt(s);
        match *density {
            Density::Isotropic { lambda, mu } => local::isotropic_density(lambda, mu, &eps),
            Density::Generic(q) => local::voigt_density(&q, &eps),
            _ => 0.0,
        }
    };
    let unit = |i: usize| {
        let mut s = [0.0; 6];
        s[i] = 1.0;
        s
    };
    let mut q = Matrix6::zeros();
    for i in 0..6 {
        q[(i, i)] = eval(&unit(i));
    }
    for i in 0..6 {
        for j in 0..i {
            let mut s = unit(i);
            s[j] = 1.0;
            let v = 0.5 * (eval(&s) - q[(i, i)] - q[(j, j)]);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    q
}

/// Largest `c` with `B(S) ≥ c |S|²` for every symmetric `S`.
pub fn coercivity_check(model: &ElasticModel) -> Result<Coercivity> {
    model.validate()?;
    let degenerate = |why: &str| Coercivity {
        constant: 0.0,
        note: Some(why.to_string()),
    };
    Ok(match model {
        ElasticModel::None => degenerate("no elastic term"),
        ElasticModel::Curve { .. } => degenerate("curve models only see arc-length derivatives"),
        ElasticModel::Surface { .. } | ElasticModel::SurfaceCorrected { .. } => {
            degenerate("surface models only see tangential derivatives")
        }
        ElasticModel::Laminar { .. } => degenerate("laminar tensor is blind to part of the normal strain"),
        ElasticModel::Isotropic { lambda, mu } => Coercivity {
            constant: SymmetricEigen::new(voigt_matrix(&Density::Isotropic {
                lambda: *lambda,
                mu: *mu,
            }))
            .eigenvalues
            .min()
            .max(0.0),
            note: None,
        },
        ElasticModel::Generic { tensors } => Coercivity {
            constant: tensors
                .iter()
                .map(|q| SymmetricEigen::new(voigt_matrix(&Density::Generic(*q))).eigenvalues.min())
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
            note: None,
        },
    })
}

/// Minimizer of `λ ‖v‖²_V + Σ_k |ε_v(x_k) − S_k|²` over the kernel span of
/// `basis` (its coefficients are ignored). Returns the value and minimizer.
pub fn implicit_module_norm_sq(
    basis: &KernelVelocity,
    controls: &[(Vec3, Matrix3<f64>)],
    lambda: f64,
) -> Result<(f64, KernelVelocity)> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("regularization λ must be positive, got {lambda}")));
    }
    let spec = basis.spec;
    spec.require_smoothness(1)?;
    let d = spec.dim;
    let pts = &basis.control_points;
    let n = pts.len() * d;
    let g = gram_matrix(&spec, pts)?;
    let mut normal = &g * lambda;
    let mut rhs = DVector::zeros(n);
    let mut rows = Vec::new();
    for (xk, sk) in controls {
        check_sym(sk)?;
        // ε_ab(x_k) = Σ_i ½ (∂_b k α_i,a + ∂_a k α_i,b), ∇k = 2 f'(q) (x_k − x_i).
        for a in 0..d {
            for b in 0..d {
                let mut row = DVector::zeros(n);
                for (i, xi) in pts.iter().enumerate() {
                    let r = xk - xi;
                    let (_, f1) = spec.profile(r.norm_squared());
                    let grad = r * (2.0 * f1);
                    row[i * d + a] += 0.5 * grad[b];
                    row[i * d + b] += 0.5 * grad[a];
                }
                normal += &row * row.transpose();
                rhs += &row * sk[(a, b)];
                rows.push((row, sk[(a, b)]));
            }
        }
    }
    let alpha = spd_solve(&normal, &rhs)?;
    let fit: f64 = rows.iter().map(|(row, s)| (row.dot(&alpha) - s).powi(2)).sum();
    let value = lambda * alpha.dot(&(&g * &alpha)) + fit;
    let coeffs = crate::linalg::unflatten(&alpha, d);
    Ok((value, KernelVelocity::new(spec, pts.clone(), coeffs)?))
}

/// Points at which per-element strain lives (element centroids).
pub fn element_centers(shape: &DiscreteShape) -> Vec<Vec3> {
    (0..shape.n_elements())
        .map(|e| {
            let idx = shape.element(e);
            idx.iter().map(|&i| shape.vertices()[i]).sum::<Vec3>() / idx.len() as f64
        })
        .collect()
}

/// One row of a thin-shell comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShellLimitRow {
    pub delta: f64,
    /// `(1/δ)` times the laminar energy of the extruded shell.
    pub volumetric: f64,
    pub surface: f64,
    pub rel_err: f64,
}

/// Compare the laminar energy of shells of thickness `δ` extruded from
/// `surface` with the surface energy of the same field.
///
/// The field `v0` is given on the surface vertices and extended constantly
/// along the extrusion direction. The laminar angle modulus is scaled by
/// `1/δ²` because the transverse field has length `δ`, and the surface
/// transverse modulus is `μ_ang / 2`.
pub fn shell_limit(
    surface: &DiscreteShape,
    lambda_tan: f64,
    mu_tan: f64,
    mu_ang: f64,
    v0: &[Vec3],
    deltas: &[f64],
    n_layers: usize,
) -> Result<Vec<ShellLimitRow>> {
    if surface.kind() != ShapeKind::Trimesh {
        return Err(Error::input("shell limit needs a trimesh surface"));
    }
    if v0.len() != surface.n_vertices() {
        return Err(Error::input("test field must have one value per surface vertex"));
    }
    let surf_model = ElasticModel::Surface {
        lambda_tan,
        mu_tan,
        mu_tsv: 0.5 * mu_ang,
    };
    let es = elastic_norm_sq(surface, &surf_model, v0)?;
    let lifted = crate::geometry::lift_to_shell(v0, n_layers);
    deltas
        .iter()
        .map(|&d| {
            let shell = crate::geometry::extrude_shell(surface, d, n_layers)?;
            let model = ElasticModel::Laminar {
                lambda_tan,
                mu_tan,
                mu_tsv: 0.0,
                mu_ang: mu_ang / (d * d),
                layers: Vec::new(),
            };
            let vol = elastic_norm_sq(&shell, &model, &lifted)? / d;
            let rel_err = if es > 0.0 { (vol - es).abs() / es } else { (vol - es).abs() };
            Ok(ShellLimitRow {
                delta: d,
                volumetric: vol,
                surface: es,
                rel_err,
            })
        })
        .collect()
}

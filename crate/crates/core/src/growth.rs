//! Growth tensors: elastic cost relative to a prescribed growth, the reduced
//! norm with the growth eliminated, the growth-tensor norm, and yanks.
//!
//! Growth lives on tetrahedral meshes, one symmetric tensor per element.
//! Kernel control points are the mesh vertices, so the kernel-to-vertex
//! evaluation matrix is the Gram matrix itself.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::elastic::{element_energy, element_matrix, layer_of, stiffness_times, Density, ElasticModel};
use crate::error::{Error, Result};
use crate::geometry::{gather, tet_strain, DiscreteShape, ShapeKind};
use crate::kernels::{gram_matrix, kernel_matvec, KernelSpec, KernelVelocity};
use crate::linalg::{flatten, is_symmetric, spd_solve, unflatten, Vec3};
use crate::local::{self, M};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmissibleSet {
    Zero,
    Scalar,
    Full,
}

impl AdmissibleSet {
    /// Free parameters per element.
    pub fn dof(self) -> usize {
        match self {
            AdmissibleSet::Zero => 0,
            AdmissibleSet::Scalar => 1,
            AdmissibleSet::Full => 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GrowthValues {
    Zero(usize),
    Scalar(Vec<f64>),
    Full(Vec<Matrix3<f64>>),
}

/// Per-element growth tensors drawn from an admissible set.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthField {
    values: GrowthValues,
}

impl GrowthField {
    pub fn zero(n_elements: usize) -> Self {
        GrowthField {
            values: GrowthValues::Zero(n_elements),
        }
    }

    pub fn scalar(rho: Vec<f64>) -> Result<Self> {
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::input("non-finite scalar growth"));
        }
        Ok(GrowthField {
            values: GrowthValues::Scalar(rho),
        })
    }

    pub fn full(tensors: Vec<Matrix3<f64>>) -> Result<Self> {
        for (e, g) in tensors.iter().enumerate() {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::input(format!("non-finite growth tensor at element {e}")));
            }
            if !is_symmetric(g, 1e-12) {
                return Err(Error::input(format!("growth tensor at element {e} is not symmetric")));
            }
        }
        Ok(GrowthField {
            values: GrowthValues::Full(tensors),
        })
    }

    pub fn set(&self) -> AdmissibleSet {
        match self.values {
            GrowthValues::Zero(_) => AdmissibleSet::Zero,
            GrowthValues::Scalar(_) => AdmissibleSet::Scalar,
            GrowthValues::Full(_) => AdmissibleSet::Full,
        }
    }

    pub fn values(&self) -> &GrowthValues {
        &self.values
    }

    pub fn len(&self) -> usize {
        match &self.values {
            GrowthValues::Zero(n) => *n,
            GrowthValues::Scalar(v) => v.len(),
            GrowthValues::Full(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensor(&self, e: usize) -> Matrix3<f64> {
        match &self.values {
            GrowthValues::Zero(_) => Matrix3::zeros(),
            GrowthValues::Scalar(v) => Matrix3::identity() * v[e],
            GrowthValues::Full(v) => v[e],
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let values = match &self.values {
            GrowthValues::Zero(n) => GrowthValues::Zero(*n),
            GrowthValues::Scalar(v) => GrowthValues::Scalar(v.iter().map(|x| x * c).collect()),
            GrowthValues::Full(v) => GrowthValues::Full(v.iter().map(|x| x * c).collect()),
        };
        GrowthField { values }
    }

    /// Sum of two fields, promoted to the larger admissible set.
    pub fn add(&self, other: &GrowthField) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::input("growth fields have different lengths"));
        }
        Ok(match (&self.values, &other.values) {
            (GrowthValues::Zero(_), _) => other.clone(),
            (_, GrowthValues::Zero(_)) => self.clone(),
            (GrowthValues::Scalar(a), GrowthValues::Scalar(b)) => {
                GrowthField::scalar(a.iter().zip(b).map(|(x, y)| x + y).collect())?
            }
            _ => GrowthField::full((0..self.len()).map(|e| self.tensor(e) + other.tensor(e)).collect())?,
        })
    }

    fn check(&self, shape: &DiscreteShape) -> Result<()> {
        require_tets(shape)?;
        if self.len() != shape.n_elements() {
            return Err(Error::input(format!(
                "growth field has {} values for {} elements",
                self.len(),
                shape.n_elements()
            )));
        }
        Ok(())
    }
}

/// Serialized form `{"set": "scalar", "values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthFieldData {
    pub set: AdmissibleSet,
    #[serde(default)]
    pub values: GrowthData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_elements: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GrowthData {
    Scalar(Vec<f64>),
    Full(Vec<[[f64; 3]; 3]>),
}

impl Default for GrowthData {
    fn default() -> Self {
        GrowthData::Scalar(Vec::new())
    }
}

impl GrowthField {
    pub fn to_data(&self) -> GrowthFieldData {
        match &self.values {
            GrowthValues::Zero(n) => GrowthFieldData {
                set: AdmissibleSet::Zero,
                values: GrowthData::Scalar(Vec::new()),
                n_elements: Some(*n),
            },
            GrowthValues::Scalar(v) => GrowthFieldData {
                set: AdmissibleSet::Scalar,
                values: GrowthData::Scalar(v.clone()),
                n_elements: None,
            },
            GrowthValues::Full(v) => GrowthFieldData {
                set: AdmissibleSet::Full,
                values: GrowthData::Full(
                    v.iter()
                        .map(|m| std::array::from_fn(|a| std::array::from_fn(|b| m[(a, b)])))
                        .collect(),
                ),
                n_elements: None,
            },
        }
    }

    /// Build from serialized data; `n_elements` fills in an empty zero set.
    pub fn from_data(data: &GrowthFieldData, n_elements: usize) -> Result<Self> {
        match (data.set, &data.values) {
            (AdmissibleSet::Zero, _) => Ok(GrowthField::zero(data.n_elements.unwrap_or(n_elements))),
            (AdmissibleSet::Scalar, GrowthData::Scalar(v)) => GrowthField::scalar(v.clone()),
            (AdmissibleSet::Full, GrowthData::Full(v)) => {
                GrowthField::full(v.iter().map(|m| Matrix3::from_fn(|a, b| m[a][b])).collect())
            }
            (AdmissibleSet::Full, GrowthData::Scalar(v)) if v.is_empty() => GrowthField::full(Vec::new()),
            (set, _) => Err(Error::input(format!("growth values do not match set {set:?}"))),
        }
    }
}

impl Serialize for GrowthField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_data().serialize(s)
    }
}

/// Yank coefficients `η`; pairs with `v = Kα` as `ηᵀ G α`.
#[derive(Clone, Debug, PartialEq)]
pub struct YankField {
    pub coefficients: Vec<Vec3>,
}

impl YankField {
    /// `⟨j, v⟩ = ηᵀ G α`, i.e. `Σ_i η_i · v(x_i)` for control points `x_i`.
    pub fn pairing(&self, v: &KernelVelocity) -> Result<f64> {
        if v.len() != self.coefficients.len() {
            return Err(Error::input("yank and velocity sizes differ"));
        }
        let gv = kernel_matvec(&v.spec, &v.control_points, &v.control_points, &v.coefficients);
        Ok(self.coefficients.iter().zip(&gv).map(|(a, b)| a.dot(b)).sum())
    }
}

fn require_tets(shape: &DiscreteShape) -> Result<()> {
    if shape.kind() != ShapeKind::Tetmesh {
        return Err(Error::config(format!(
            "growth tensors require a tetmesh, got {}",
            shape.kind().name()
        )));
    }
    Ok(())
}

fn to_m(g: &Matrix3<f64>) -> M<f64> {
    std::array::from_fn(|a| std::array::from_fn(|b| g[(a, b)]))
}

/// `Σ_e measure · B(ε_e − g_e)`.
pub fn growth_relative_energy(shape: &DiscreteShape, model: &ElasticModel, v: &[Vec3], g: &GrowthField) -> Result<f64> {
    model.check_compatible(shape)?;
    g.check(shape)?;
    if v.len() != shape.n_vertices() {
        return Err(Error::input("expected one vector per vertex"));
    }
    let dens = model.densities(shape);
    Ok((0..shape.n_elements())
        .map(|e| element_energy(shape, &dens[e], e, v, Some(to_m(&g.tensor(e)))))
        .sum())
}

/// Symmetric-matrix basis of an admissible set.
fn basis(set: AdmissibleSet) -> Vec<Matrix3<f64>> {
    match set {
        AdmissibleSet::Zero => Vec::new(),
        AdmissibleSet::Scalar => vec![Matrix3::identity()],
        AdmissibleSet::Full => {
            let mut out = Vec::with_capacity(6);
            for (a, b) in [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)] {
                let mut m = Matrix3::zeros();
                m[(a, b)] = 1.0;
                m[(b, a)] = 1.0;
                out.push(m);
            }
            out
        }
    }
}

/// Minimize `B(ε − g)` over `g` in `set` for one unit-measure element by a
/// dense solve of the normal equations (pseudo-inverse on degenerate `B`).
pub(crate) fn element_qp(density: &Density, eps: &Matrix3<f64>, layer: Option<([f64; 3], [f64; 3])>, set: AdmissibleSet) -> (f64, Matrix3<f64>) {
    let b = |s: &Matrix3<f64>| density.strain_energy(1.0, s, layer);
    let bilinear = |s: &Matrix3<f64>, t: &Matrix3<f64>| 0.5 * (b(&(s + t)) - b(s) - b(t));
    let basis = basis(set);
    if basis.is_empty() {
        return (b(eps), Matrix3::zeros());
    }
    let k = basis.len();
    let gram = DMatrix::from_fn(k, k, |i, j| bilinear(&basis[i], &basis[j]));
    let rhs = DVector::from_fn(k, |i, _| bilinear(eps, &basis[i]));
    let eig = SymmetricEigen::new(gram);
    let cutoff = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut coef = DVector::zeros(k);
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam > cutoff {
            let q = eig.eigenvectors.column(i);
            coef += q * (q.dot(&rhs) / lam);
        }
    }
    let g = basis.iter().zip(coef.iter()).fold(Matrix3::zeros(), |acc, (m, c)| acc + m * *c);
    (b(&(eps - g)).max(0.0), g)
}

/// Per-element generic minimizer of `B(ε − g)` over `g ∈ set`, returning the
/// minimal density and the minimizing tensor.
pub fn growth_qp(
    model: &ElasticModel,
    eps: &Matrix3<f64>,
    layer: Option<(Vec3, Vec3)>,
    set: AdmissibleSet,
) -> Result<(f64, Matrix3<f64>)> {
    model.validate()?;
    if !is_symmetric(eps, 1e-12) {
        return Err(Error::input("strain tensor is not symmetric"));
    }
    let density = match model {
        ElasticModel::Isotropic { .. } | ElasticModel::Generic { .. } | ElasticModel::None => {
            let probe = DiscreteShape::tetmesh(
                vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
                vec![[0, 1, 2, 3]],
            )?;
            if let ElasticModel::Generic { tensors } = model {
                if tensors.len() != 1 {
                    return Err(Error::input("growth_qp takes a single generic tensor"));
                }
            }
            model.densities(&probe)[0]
        }
        ElasticModel::Laminar {
            lambda_tan,
            mu_tan,
            mu_tsv,
            mu_ang,
            ..
        } => {
            if layer.is_none() {
                return Err(Error::input("laminar growth needs layer vectors"));
            }
            Density::Laminar([*lambda_tan, *mu_tan, *mu_tsv, *mu_ang])
        }
        other => return Err(Error::config(format!("growth is undefined for the {} model", other.name()))),
    };
    let layer = layer.map(|(s, n)| ([s.x, s.y, s.z], [n.x, n.y, n.z]));
    Ok(element_qp(&density, eps, layer, set))
}

/// Closed-form scalar growth for isotropic `B`: `ρ* = tr(ε)/3`.
pub fn scalar_growth_isotropic(eps: &Matrix3<f64>) -> f64 {
    eps.trace() / 3.0
}

/// `inf_{g ∈ set} Σ_e measure · B(ε_e − g_e)` and the minimizing field.
pub fn reduced_elastic_norm_sq(
    shape: &DiscreteShape,
    model: &ElasticModel,
    v: &[Vec3],
    set: AdmissibleSet,
) -> Result<(f64, GrowthField)> {
    model.check_compatible(shape)?;
    require_tets(shape)?;
    let strains: Vec<Matrix3<f64>> = tet_strain(shape, v)?.iter().map(crate::linalg::sym).collect();
    let vols = shape.element_measures();
    let dens = model.densities(shape);
    match set {
        AdmissibleSet::Zero => {
            let value = (0..shape.n_elements())
                .map(|e| dens[e].strain_energy(vols[e], &strains[e], layer_of(shape, &dens[e], e)))
                .sum();
            Ok((value, GrowthField::zero(shape.n_elements())))
        }
        AdmissibleSet::Full => Ok((0.0, GrowthField::full(strains)?)),
        AdmissibleSet::Scalar => {
            let mut value = 0.0;
            let mut rho = Vec::with_capacity(shape.n_elements());
            for e in 0..shape.n_elements() {
                let layer = layer_of(shape, &dens[e], e);
                let r = match dens[e] {
                    Density::Isotropic { .. } => scalar_growth_isotropic(&strains[e]),
                    _ => element_qp(&dens[e], &strains[e], layer, set).1[(0, 0)],
                };
                value += dens[e].strain_energy(vols[e], &(strains[e] - Matrix3::identity() * r), layer);
                rho.push(r);
            }
            Ok((value, GrowthField::scalar(rho)?))
        }
    }
}

/// Quadratic and linear parts of `Σ_e E_e(u; g_e) = uᵀAu − 2 bᵀu + c` in
/// flattened vertex coordinates: returns `(b, c)`.
fn growth_linear_part(shape: &DiscreteShape, dens: &[Density], g: &GrowthField) -> (DVector<f64>, f64) {
    let d = shape.dim();
    let mut b = DVector::zeros(shape.n_vertices() * d);
    let mut c = 0.0;
    let vols = shape.element_measures();
    for e in 0..shape.n_elements() {
        if dens[e].is_zero() {
            continue;
        }
        let ge = g.tensor(e);
        if ge == Matrix3::zeros() {
            continue;
        }
        let layer = layer_of(shape, &dens[e], e);
        let ce = dens[e].strain_energy(vols[e], &ge, layer);
        c += ce;
        let a = element_matrix(shape, &dens[e], e);
        let idx = shape.element(e);
        let x = gather::<4>(shape.vertices(), idx);
        let gm = to_m(&ge);
        for (r, &vi) in idx.iter().enumerate() {
            for comp in 0..d {
                let j = r * d + comp;
                let mut u = [[0.0; 3]; 4];
                u[r][comp] = 1.0;
                let ej = dens[e].energy(&crate::elastic::ElementInputs {
                    x: &x,
                    u: &u,
                    layer,
                    growth: Some(gm),
                });
                b[vi * d + comp] += 0.5 * (a[(j, j)] + ce - ej);
            }
        }
    }
    (b, c)
}

/// Result of the growth-norm minimization.
#[derive(Clone, Debug)]
pub struct GrowthNorm {
    /// `‖g‖²_Ω`.
    pub value: f64,
    /// Minimizing velocity `v_{g,Ω}`.
    pub velocity: KernelVelocity,
    /// `⟨β_Ω g, g⟩ = Σ_e measure · B(g_e)`.
    pub beta_gg: f64,
    /// `⟨j_g, v_g⟩ = bᵀα`.
    pub yank_pairing: f64,
    /// `κ ‖v_g‖²_V`.
    pub rkhs: f64,
}

fn hybrid_system(shape: &DiscreteShape, kappa: f64, spec: &KernelSpec, model: &ElasticModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::input(format!("kappa must be positive, got {kappa}")));
    }
    model.check_compatible(shape)?;
    require_tets(shape)?;
    if spec.dim != 3 {
        return Err(Error::config("growth requires a 3D kernel"));
    }
    let gram = gram_matrix(spec, shape.vertices())?;
    let p = stiffness_times(shape, model, &gram);
    let e = gram.transpose() * p;
    let h = &gram * kappa + (&e + e.transpose()) * 0.5;
    Ok((gram, h))
}

/// `‖g‖²_Ω = min_v κ‖v‖²_V + Σ_e measure · B(ε_e(v) − g_e)` over kernel
/// expansions on the vertices.
pub fn growth_norm_sq(
    shape: &DiscreteShape,
    kappa: f64,
    spec: &KernelSpec,
    model: &ElasticModel,
    g: &GrowthField,
) -> Result<GrowthNorm> {
    g.check(shape)?;
    let (gram, h) = hybrid_system(shape, kappa, spec, model)?;
    let dens = model.densities(shape);
    let (b_vertex, c) = growth_linear_part(shape, &dens, g);
    let b = gram.transpose() * &b_vertex;
    let alpha = spd_solve(&h, &b)?;
    let pairing = b.dot(&alpha);
    let rkhs = kappa * alpha.dot(&(&gram * &alpha));
    let velocity = KernelVelocity::new(*spec, shape.vertices().to_vec(), unflatten(&alpha, 3))?;
    Ok(GrowthNorm {
        value: (c - pairing).max(0.0),
        velocity,
        beta_gg: c,
        yank_pairing: pairing,
        rkhs,
    })
}

/// Yank whose velocity response equals `v_{g,Ω}`.
pub fn yank_of_growth(shape: &DiscreteShape, model: &ElasticModel, g: &GrowthField) -> Result<YankField> {
    model.check_compatible(shape)?;
    g.check(shape)?;
    let dens = model.densities(shape);
    let (b_vertex, _) = growth_linear_part(shape, &dens, g);
    Ok(YankField {
        coefficients: unflatten(&b_vertex, 3),
    })
}

/// Velocity response `(κG + E) α = G η` to a yank.
pub fn yank_to_velocity(
    shape: &DiscreteShape,
    kappa: f64,
    spec: &KernelSpec,
    model: &ElasticModel,
    j: &YankField,
) -> Result<KernelVelocity> {
    if j.coefficients.len() != shape.n_vertices() {
        return Err(Error::input("yank needs one coefficient per vertex"));
    }
    if !crate::linalg::all_finite(&j.coefficients) {
        return Err(Error::input("non-finite yank coefficients"));
    }
    let (gram, h) = hybrid_system(shape, kappa, spec, model)?;
    let rhs = &gram * flatten(&j.coefficients, 3);
    let alpha = spd_solve(&h, &rhs)?;
    KernelVelocity::new(*spec, shape.vertices().to_vec(), unflatten(&alpha, 3))
}

/// Yank approximating `−ξ ∇ρ` with `ξ = 3λ/2 + μ` for scalar growth `ρ Id`
/// given at the vertices (zero on the boundary). Per-tet gradients are
/// averaged to the vertices by volume and weighted by the lumped mass.
pub fn scalar_yank_from_rho(shape: &DiscreteShape, model: &ElasticModel, rho: &[f64]) -> Result<YankField> {
    require_tets(shape)?;
    let ElasticModel::Isotropic { lambda, mu } = model else {
        return Err(Error::config("scalar yank requires an isotropic model"));
    };
    model.validate()?;
    if rho.len() != shape.n_vertices() {
        return Err(Error::input("expected one growth value per vertex"));
    }
    let rmax = rho.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let boundary = shape.boundary_vertices();
    if let Some(i) = (0..rho.len()).find(|&i| boundary[i] && rho[i].abs() > 1e-12 * rmax.max(1.0)) {
        return Err(Error::input(format!("growth must vanish on the boundary (vertex {i})")));
    }
    let xi = 1.5 * lambda + mu;
    let n = shape.n_vertices();
    let mut weighted = vec![Vec3::zeros(); n];
    let mut incident = vec![0.0; n];
    for (e, vol) in shape.element_measures().into_iter().enumerate() {
        let idx = shape.element(e);
        let x = gather::<4>(shape.vertices(), idx);
        let inv = local::inv3(&local::edge_matrix(&x));
        let dr = [rho[idx[1]] - rho[idx[0]], rho[idx[2]] - rho[idx[0]], rho[idx[3]] - rho[idx[0]]];
        let grad = local::mat_vec(&local::transpose(&inv), &dr);
        let j = Vec3::new(grad[0], grad[1], grad[2]) * (-xi);
        for &i in idx {
            weighted[i] += j * vol;
            incident[i] += vol;
        }
    }
    Ok(YankField {
        coefficients: (0..n)
            .map(|i| if incident[i] > 0.0 { weighted[i] / incident[i] * (incident[i] / 4.0) } else { Vec3::zeros() })
            .collect(),
    })
}

/// `min_v ∫|ε(v) − g|² + κ_small ‖v‖²_V`, normalized by `∫|g|²`.
pub fn compatibility_residual(shape: &DiscreteShape, g: &GrowthField, spec: &KernelSpec, kappa_small: f64) -> Result<f64> {
    g.check(shape)?;
    let frobenius = ElasticModel::Isotropic { lambda: 0.0, mu: 1.0 };
    let vols = shape.element_measures();
    let denom: f64 = (0..shape.n_elements()).map(|e| vols[e] * g.tensor(e).norm_squared()).sum();
    if denom == 0.0 {
        return Ok(0.0);
    }
    let norm = growth_norm_sq(shape, kappa_small, spec, &frobenius, g)?;
    Ok(norm.value / denom)
}

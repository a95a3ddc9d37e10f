//! Relaxed matching: running cost of the flow plus a weighted fidelity term,
//! optimized over the per-step controls.

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{integrate, path_gradient, path_cost, Controls, GrowthMode, PathCost, RunningCost, Scheme, ShapePath};
use crate::geometry::{Cells, DiscreteShape, ShapeKind};
use crate::growth::{growth_norm_sq, reduced_elastic_norm_sq, AdmissibleSet};
use crate::hybrid::HybridMetric;
use crate::kernels::{eval_velocity, rkhs_norm_sq};
use crate::linalg::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityKind {
    LandmarkL2,
    Varifold,
}

/// Endpoint fidelity. Varifolds use a Gaussian position kernel of width
/// `width` and squared-cosine orientation weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySpec {
    pub kind: FidelityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

impl FidelitySpec {
    pub fn landmark() -> Self {
        FidelitySpec {
            kind: FidelityKind::LandmarkL2,
            width: None,
        }
    }

    pub fn varifold(width: f64) -> Self {
        FidelitySpec {
            kind: FidelityKind::Varifold,
            width: Some(width),
        }
    }

    fn varifold_width(&self) -> Result<f64> {
        match self.width {
            Some(w) if w > 0.0 && w.is_finite() => Ok(w),
            Some(w) => Err(Error::input(format!("varifold width must be positive, got {w}"))),
            None => Err(Error::config("varifold fidelity needs a width")),
        }
    }
}

// ---------------------------------------------------------------------------
// Varifold

/// Oriented element vector (edge vector or area normal) and center per element.
fn varifold_elements(shape: &DiscreteShape, x: &[Vec3]) -> Result<Vec<(Vec3, Vec3)>> {
    match shape.cells() {
        Cells::Edges(edges) => Ok(edges.iter().map(|e| (x[e[1]] - x[e[0]], (x[e[0]] + x[e[1]]) * 0.5)).collect()),
        Cells::Triangles(tris) => Ok(tris
            .iter()
            .map(|t| {
                let a = (x[t[1]] - x[t[0]]).cross(&(x[t[2]] - x[t[0]])) * 0.5;
                (a, (x[t[0]] + x[t[1]] + x[t[2]]) / 3.0)
            })
            .collect()),
        _ => Err(Error::config(format!(
            "varifold fidelity needs a polyline or trimesh, got {}",
            shape.kind().name()
        ))),
    }
}

/// Term `k(c_i, c_j) (a_i·a_j)² / (|a_i||a_j|)` and its partials in `a_i`, `c_i`.
#[inline]
fn pair_term(sigma2: f64, ai: &Vec3, ci: &Vec3, aj: &Vec3, cj: &Vec3, want_grad: bool) -> (f64, Vec3, Vec3) {
    let ni = ai.norm();
    let nj = aj.norm();
    if ni == 0.0 || nj == 0.0 {
        return (0.0, Vec3::zeros(), Vec3::zeros());
    }
    let dc = ci - cj;
    let k = (-dc.norm_squared() / sigma2).exp();
    let dot = ai.dot(aj);
    let h = dot * dot / (ni * nj);
    if !want_grad {
        return (k * h, Vec3::zeros(), Vec3::zeros());
    }
    let dh = aj * (2.0 * dot / (ni * nj)) - ai * (h / (ni * ni));
    (k * h, dh * k, dc * (-2.0 * k * h / sigma2))
}

/// `Σ_i Σ_j term(a_i, b_j)`, and the gradient in the `a` element data.
fn varifold_cross(sigma2: f64, a: &[(Vec3, Vec3)], b: &[(Vec3, Vec3)], want_grad: bool) -> (f64, Vec<(Vec3, Vec3)>) {
    let per: Vec<(f64, Vec3, Vec3)> = a
        .par_iter()
        .map(|(ai, ci)| {
            let mut s = 0.0;
            let mut ga = Vec3::zeros();
            let mut gc = Vec3::zeros();
            for (aj, cj) in b {
                let (t, da, dc) = pair_term(sigma2, ai, ci, aj, cj, want_grad);
                s += t;
                ga += da;
                gc += dc;
            }
            (s, ga, gc)
        })
        .collect();
    let total = per.iter().map(|p| p.0).sum();
    (total, per.into_iter().map(|p| (p.1, p.2)).collect())
}

fn scatter_element_grad(shape: &DiscreteShape, x: &[Vec3], grads: &[(Vec3, Vec3)], scale: f64, out: &mut [Vec3]) {
    match shape.cells() {
        Cells::Edges(edges) => {
            for (e, (ga, gc)) in edges.iter().zip(grads) {
                out[e[1]] += (ga + gc * 0.5) * scale;
                out[e[0]] += (-ga + gc * 0.5) * scale;
            }
        }
        Cells::Triangles(tris) => {
            for (t, (ga, gc)) in tris.iter().zip(grads) {
                let e1 = x[t[1]] - x[t[0]];
                let e2 = x[t[2]] - x[t[0]];
                let d1 = e2.cross(ga) * 0.5;
                let d2 = ga.cross(&e1) * 0.5;
                out[t[1]] += (d1 + gc / 3.0) * scale;
                out[t[2]] += (d2 + gc / 3.0) * scale;
                out[t[0]] += (-d1 - d2 + gc / 3.0) * scale;
            }
        }
        _ => {}
    }
}

/// Squared varifold distance `‖μ_a‖² − 2⟨μ_a, μ_b⟩ + ‖μ_b‖²`.
pub fn varifold_distance_sq(a: &DiscreteShape, b: &DiscreteShape, spec: &FidelitySpec) -> Result<f64> {
    let sigma = spec.varifold_width()?;
    let ea = varifold_elements(a, a.vertices())?;
    let eb = varifold_elements(b, b.vertices())?;
    let s2 = sigma * sigma;
    let aa = varifold_cross(s2, &ea, &ea, false).0;
    let ab = varifold_cross(s2, &ea, &eb, false).0;
    let bb = varifold_cross(s2, &eb, &eb, false).0;
    Ok((aa - 2.0 * ab + bb).max(0.0))
}

/// Squared varifold norm `‖μ_a‖²`.
pub fn varifold_norm_sq(a: &DiscreteShape, spec: &FidelitySpec) -> Result<f64> {
    let sigma = spec.varifold_width()?;
    let ea = varifold_elements(a, a.vertices())?;
    Ok(varifold_cross(sigma * sigma, &ea, &ea, false).0)
}

/// Fidelity `U(x, target)` of deformed vertices `x` (connectivity of
/// `source`) and its gradient in `x`.
pub fn fidelity_with_grad(
    source: &DiscreteShape,
    x: &[Vec3],
    target: &DiscreteShape,
    spec: &FidelitySpec,
) -> Result<(f64, Vec<Vec3>)> {
    fidelity_impl(source, x, target, spec, true)
}

pub fn fidelity(source: &DiscreteShape, x: &[Vec3], target: &DiscreteShape, spec: &FidelitySpec) -> Result<f64> {
    Ok(fidelity_impl(source, x, target, spec, false)?.0)
}

fn fidelity_impl(
    source: &DiscreteShape,
    x: &[Vec3],
    target: &DiscreteShape,
    spec: &FidelitySpec,
    want_grad: bool,
) -> Result<(f64, Vec<Vec3>)> {
    if x.len() != source.n_vertices() {
        return Err(Error::input("deformed vertex count differs from the source"));
    }
    match spec.kind {
        FidelityKind::LandmarkL2 => {
            let y = target.vertices();
            if y.len() != x.len() {
                return Err(Error::config(format!(
                    "landmark fidelity needs equal vertex counts ({} vs {})",
                    x.len(),
                    y.len()
                )));
            }
            let mut g = Vec::with_capacity(x.len());
            let mut u = 0.0;
            for (p, q) in x.iter().zip(y) {
                let d = p - q;
                u += d.norm_squared();
                g.push(d * 2.0);
            }
            Ok((u, g))
        }
        FidelityKind::Varifold => {
            let sigma = spec.varifold_width()?;
            let s2 = sigma * sigma;
            let ea = varifold_elements(source, x)?;
            let eb = varifold_elements(target, target.vertices())?;
            let (aa, ga) = varifold_cross(s2, &ea, &ea, want_grad);
            let (ab, gb) = varifold_cross(s2, &ea, &eb, want_grad);
            let (bb, _) = varifold_cross(s2, &eb, &eb, false);
            let value = (aa - 2.0 * ab + bb).max(0.0);
            if !want_grad {
                return Ok((value, Vec::new()));
            }
            // d‖μ_a‖² = 2 Σ_j ∂₁ term(a_i, a_j) by symmetry of the pair term.
            let diff: Vec<(Vec3, Vec3)> = ga.iter().zip(&gb).map(|(p, q)| (p.0 - q.0, p.1 - q.1)).collect();
            let mut g = vec![Vec3::zeros(); x.len()];
            scatter_element_grad(source, x, &diff, 2.0, &mut g);
            if source.dim() == 2 {
                g.iter_mut().for_each(|p| p.z = 0.0);
            }
            Ok((value, g))
        }
    }
}

// ---------------------------------------------------------------------------
// Problem

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop when `‖∇J‖ ≤ grad_tol · ‖∇J(0)‖`.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the objective by at most `f_tol · |J|`.
    #[serde(default = "default_f_tol")]
    pub f_tol: f64,
    #[serde(default = "default_true")]
    pub lbfgs: bool,
    /// Optimize in kernel-whitened momentum coordinates.
    #[serde(default = "default_true")]
    pub precondition: bool,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_c1")]
    pub armijo_c1: f64,
    #[serde(default = "default_shrink")]
    pub backtrack_factor: f64,
    #[serde(default = "default_backtracks")]
    pub max_backtracks: usize,
}

fn default_max_iters() -> usize {
    200
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_f_tol() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}
fn default_memory() -> usize {
    10
}
fn default_c1() -> f64 {
    1e-4
}
fn default_shrink() -> f64 {
    0.5
}
fn default_backtracks() -> usize {
    40
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            f_tol: default_f_tol(),
            lbfgs: true,
            precondition: true,
            memory: default_memory(),
            armijo_c1: default_c1(),
            backtrack_factor: default_shrink(),
            max_backtracks: default_backtracks(),
        }
    }
}

/// Fidelity weight relative to the initial fidelity when none is given.
pub const DEFAULT_RELATIVE_WEIGHT: f64 = 1000.0;

pub const DEFAULT_STEPS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchProblem {
    pub source: DiscreteShape,
    pub target: DiscreteShape,
    pub metric: HybridMetric,
    pub growth: GrowthMode,
    pub fidelity: FidelitySpec,
    /// Absolute weight; `None` means `DEFAULT_RELATIVE_WEIGHT / U(source, target)`.
    pub fidelity_weight: Option<f64>,
    pub n_steps: usize,
    pub scheme: Scheme,
    pub optimizer: OptimizerSettings,
}

impl MatchProblem {
    /// Problem with default steps, scheme, weight and optimizer settings.
    pub fn new(source: DiscreteShape, target: DiscreteShape, metric: HybridMetric, fidelity: FidelitySpec) -> Self {
        MatchProblem {
            source,
            target,
            metric,
            growth: GrowthMode::Off,
            fidelity,
            fidelity_weight: None,
            n_steps: DEFAULT_STEPS,
            scheme: Scheme::Euler,
            optimizer: OptimizerSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::input("n_steps must be at least 1"));
        }
        if self.source.dim() != self.target.dim() {
            return Err(Error::config("source and target dimensions differ"));
        }
        if let Some(w) = self.fidelity_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::input(format!("fidelity weight must be positive, got {w}")));
            }
        }
        match self.fidelity.kind {
            FidelityKind::LandmarkL2 => {
                if self.source.n_vertices() != self.target.n_vertices() {
                    return Err(Error::config("landmark fidelity needs equal vertex counts"));
                }
            }
            FidelityKind::Varifold => {
                self.fidelity.varifold_width()?;
                for s in [&self.source, &self.target] {
                    if !matches!(
                        s.kind(),
                        ShapeKind::Polyline2d | ShapeKind::Polyline3d | ShapeKind::Trimesh
                    ) {
                        return Err(Error::config(format!(
                            "varifold fidelity needs polylines or trimeshes, got {}",
                            s.kind().name()
                        )));
                    }
                }
            }
        }
        let o = &self.optimizer;
        if !(o.armijo_c1 > 0.0 && o.armijo_c1 < 1.0) || !(o.backtrack_factor > 0.0 && o.backtrack_factor < 1.0) {
            return Err(Error::input("line-search parameters must lie in (0, 1)"));
        }
        if !(o.grad_tol >= 0.0) || !(o.f_tol >= 0.0) || o.memory == 0 {
            return Err(Error::input("invalid optimizer settings"));
        }
        self.running_cost().check(&self.source)
    }

    pub fn running_cost(&self) -> RunningCost {
        RunningCost::new(self.metric.clone(), self.growth)
    }

    pub fn zero_controls(&self) -> Controls {
        Controls::zeros(
            self.n_steps,
            self.source.n_vertices(),
            self.source.n_elements() * self.growth.control_dof(),
        )
    }

    pub fn initial_fidelity(&self) -> Result<f64> {
        fidelity(&self.source, self.source.vertices(), &self.target, &self.fidelity)
    }

    /// Effective fidelity weight.
    pub fn weight(&self) -> Result<f64> {
        if let Some(w) = self.fidelity_weight {
            return Ok(w);
        }
        let u0 = self.initial_fidelity()?;
        Ok(if u0 > 0.0 { DEFAULT_RELATIVE_WEIGHT / u0 } else { 1.0 })
    }

    /// Problem with source and target exchanged.
    pub fn swapped(&self) -> Self {
        MatchProblem {
            source: self.target.clone(),
            target: self.source.clone(),
            ..self.clone()
        }
    }
}

/// Objective value split into its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Objective {
    pub total: f64,
    pub rkhs: f64,
    pub elastic: f64,
    pub fidelity: f64,
    pub weight: f64,
}

fn assemble(pc: PathCost, fid: f64, weight: f64) -> Objective {
    Objective {
        total: pc.total() + weight * fid,
        rkhs: pc.rkhs,
        elastic: pc.elastic,
        fidelity: fid,
        weight,
    }
}

pub fn objective(problem: &MatchProblem, controls: &Controls) -> Result<Objective> {
    problem.validate()?;
    let weight = problem.weight()?;
    objective_with_weight(problem, controls, weight)
}

fn objective_with_weight(problem: &MatchProblem, controls: &Controls, weight: f64) -> Result<Objective> {
    let (pc, x) = path_cost(&problem.source, controls, &problem.running_cost(), problem.scheme)?;
    let (fid, _) = fidelity_with_grad(&problem.source, &x, &problem.target, &problem.fidelity)?;
    let obj = assemble(pc, fid, weight);
    if !obj.total.is_finite() {
        return Err(Error::numeric("objective is not finite"));
    }
    Ok(obj)
}

fn value_and_gradient(problem: &MatchProblem, controls: &Controls, weight: f64) -> Result<(Objective, Controls)> {
    let fid_cell = std::sync::Mutex::new(0.0);
    let terminal = |x: &[Vec3]| -> Result<(f64, Vec<Vec3>)> {
        let (u, g) = fidelity_with_grad(&problem.source, x, &problem.target, &problem.fidelity)?;
        *fid_cell.lock().expect("fidelity lock") = u;
        Ok((weight * u, g.into_iter().map(|v| v * weight).collect()))
    };
    let (pc, _, grad) = path_gradient(&problem.source, controls, &problem.running_cost(), problem.scheme, &terminal)?;
    let fid = *fid_cell.lock().expect("fidelity lock");
    let obj = assemble(pc, fid, weight);
    if !obj.total.is_finite() {
        return Err(Error::numeric("objective is not finite"));
    }
    Ok((obj, grad))
}

/// Exact gradient of the discrete objective with respect to the controls.
pub fn gradient(problem: &MatchProblem, controls: &Controls) -> Result<Controls> {
    problem.validate()?;
    let weight = problem.weight()?;
    Ok(value_and_gradient(problem, controls, weight)?.1)
}

// ---------------------------------------------------------------------------
// Optimizer

/// Optimizer result summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub converged: bool,
    pub termination: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub fidelity_weight: f64,
    pub objective: f64,
    pub initial_objective: f64,
    pub initial_fidelity: f64,
    pub final_fidelity: f64,
    pub rkhs_energy: f64,
    pub elastic_energy: f64,
    pub growth_energy: f64,
    pub gradient_norm: f64,
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L-BFGS two-loop direction `−H g`.
fn lbfgs_direction(g: &[f64], mem: &[(Vec<f64>, Vec<f64>, f64)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

/// Change of variables `α_k = L⁻ᵀ z_k` with `L Lᵀ = K(x₀, x₀) + τ I`, which
/// makes the kinetic term close to `|z|²` and well conditioned.
/// Relative step size of growth coordinates; the growth block then has
/// curvature comparable to the fidelity-dominated momentum block.
const GROWTH_SCALE: f64 = 10.0;

struct Preconditioner {
    l: DMatrix<f64>,
    dim: usize,
    /// Per-element scale of joint growth parameters, `(c κ / (measure · B(I)))^½`
    /// (with `B(I)/3` per component of full tensors).
    growth_scale: Vec<f64>,
    growth_dof: usize,
}

impl Preconditioner {
    fn new(problem: &MatchProblem) -> Result<Self> {
        let x = problem.source.vertices();
        let spec = &problem.metric.kernel;
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| spec.eval(&x[i], &x[j]) + if i == j { 1e-6 } else { 0.0 });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::numeric("kernel matrix of the source is not positive definite"))?;
        let growth_dof = problem.growth.control_dof();
        let growth_scale = if growth_dof > 0 {
            let shape = &problem.source;
            let dens = problem.metric.elastic.densities(shape);
            let vols = shape.element_measures();
            let per = if growth_dof == 1 { 1.0 } else { 3.0 };
            (0..shape.n_elements())
                .map(|e| {
                    let layer = crate::elastic::layer_of(shape, &dens[e], e);
                    let b = dens[e].strain_energy(vols[e], &Matrix3::identity(), layer) / per;
                    if b > 0.0 {
                        (GROWTH_SCALE * problem.metric.kappa / b).sqrt()
                    } else {
                        1.0
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Preconditioner {
            l: chol.l(),
            dim: problem.source.dim(),
            growth_scale,
            growth_dof,
        })
    }

    /// `α = L⁻ᵀ z`, or for `gradient = true` the pullback `L⁻¹ g`.
    fn apply(&self, c: &Controls, gradient: bool) -> Controls {
        let n = self.l.nrows();
        let mut out = c.clone();
        for (a, o) in c.alpha.iter().zip(out.alpha.iter_mut()) {
            for comp in 0..self.dim {
                let b = DVector::from_iterator(n, a.iter().map(|p| p[comp]));
                let y = if gradient {
                    self.l.solve_lower_triangular(&b)
                } else {
                    self.l.tr_solve_lower_triangular(&b)
                }
                .expect("cholesky factor has a positive diagonal");
                for (p, v) in o.iter_mut().zip(y.iter()) {
                    p[comp] = *v;
                }
            }
        }
        // Diagonal, so the same scaling maps coordinates and gradients.
        for g in out.growth.iter_mut() {
            for (i, x) in g.iter_mut().enumerate() {
                if let Some(e) = i.checked_div(self.growth_dof) {
                    *x *= self.growth_scale[e];
                }
            }
        }
        out
    }
}

struct OptimResult {
    controls: Controls,
    objective: Objective,
    converged: bool,
    termination: String,
    iterations: usize,
    evaluations: usize,
    gradient_norm: f64,
    history: Vec<f64>,
}

fn optimize(problem: &MatchProblem, weight: f64) -> Result<OptimResult> {
    let o = problem.optimizer;
    let dim = problem.source.dim();
    let template = problem.zero_controls();
    let pre = if o.precondition {
        Some(Preconditioner::new(problem)?)
    } else {
        None
    };
    let to_controls = |flat: &[f64]| {
        let c = template.from_flat(flat, dim);
        match &pre {
            Some(p) => p.apply(&c, false),
            None => c,
        }
    };
    let eval = |flat: &[f64]| -> Result<(Objective, Vec<f64>)> {
        let (obj, g) = value_and_gradient(problem, &to_controls(flat), weight)?;
        let g = match &pre {
            Some(p) => p.apply(&g, true),
            None => g,
        };
        Ok((obj, g.to_flat(dim)))
    };
    let mut x = template.to_flat(dim);
    let (mut obj, mut g) = eval(&x)?;
    let mut evaluations = 1;
    let g0 = norm(&g);
    let mut history = vec![obj.total];
    let mut mem: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let length = problem.source.scale().max(problem.metric.kernel.width);
    let finish = |x: &[f64], obj: Objective, converged: bool, why: &str, it: usize, ev: usize, gn: f64, h: Vec<f64>| OptimResult {
        controls: to_controls(x),
        objective: obj,
        converged,
        termination: why.to_string(),
        iterations: it,
        evaluations: ev,
        gradient_norm: gn,
        history: h,
    };
    if g0 == 0.0 {
        return Ok(finish(&x, obj, true, "zero gradient at the initial controls", 0, evaluations, 0.0, history));
    }
    for it in 0..o.max_iters {
        let gn = norm(&g);
        if gn <= o.grad_tol * g0 {
            return Ok(finish(&x, obj, true, "gradient tolerance reached", it, evaluations, gn, history));
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let use_memory = o.lbfgs && attempt == 0 && !mem.is_empty();
            let (d, t0) = if use_memory {
                (lbfgs_direction(&g, &mem), 1.0)
            } else {
                // Steepest descent with a first trial step of a tenth of the shape scale.
                (g.iter().map(|v| -v).collect::<Vec<_>>(), 0.1 * length / gn)
            };
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = t0;
            for _ in 0..o.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
                evaluations += 1;
                match eval(&trial) {
                    Ok((tobj, tg)) if tobj.total <= obj.total + o.armijo_c1 * t * slope && tobj.total < obj.total => {
                        accepted = Some((trial, tobj, tg));
                        break;
                    }
                    Ok(_) | Err(Error::Numeric { .. }) => t *= o.backtrack_factor,
                    Err(e) => return Err(e),
                }
            }
            if accepted.is_some() {
                break;
            }
            mem.clear();
        }
        let Some((xn, on, gnew)) = accepted else {
            let why = "line search could not decrease the objective";
            return Ok(finish(&x, obj, false, why, it, evaluations, gn, history));
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            mem.push((s, y, 1.0 / sy));
            if mem.len() > o.memory {
                mem.remove(0);
            }
        }
        let decrease = obj.total - on.total;
        x = xn;
        obj = on;
        g = gnew;
        history.push(obj.total);
        if decrease <= o.f_tol * obj.total.abs() {
            let gn = norm(&g);
            return Ok(finish(&x, obj, true, "relative decrease below tolerance", it + 1, evaluations, gn, history));
        }
    }
    let gn = norm(&g);
    let converged = gn <= o.grad_tol * g0;
    let why = if converged {
        "gradient tolerance reached"
    } else {
        "maximum iterations reached"
    };
    Ok(finish(&x, obj, converged, why, o.max_iters, evaluations, gn, history))
}

/// Minimize the relaxed objective from zero controls.
///
/// Returns the path of the best iterate (never silently unconverged: the
/// report carries the `converged` flag), the controls, and the report.
pub fn solve(problem: &MatchProblem) -> Result<(ShapePath, Controls, Report)> {
    problem.validate()?;
    let weight = problem.weight()?;
    let initial_fidelity = problem.initial_fidelity()?;
    let initial_objective = weight * initial_fidelity;
    let res = optimize(problem, weight)?;
    let path = integrate(&problem.source, &res.controls, &problem.running_cost(), problem.scheme)?;
    let growth_energy = growth_energy(problem, &path);
    let report = Report {
        converged: res.converged,
        termination: res.termination,
        iterations: res.iterations,
        evaluations: res.evaluations,
        fidelity_weight: weight,
        objective: res.objective.total,
        initial_objective,
        initial_fidelity,
        final_fidelity: res.objective.fidelity,
        rkhs_energy: res.objective.rkhs,
        elastic_energy: res.objective.elastic,
        growth_energy,
        gradient_norm: res.gradient_norm,
        history: res.history,
        warnings: path.warnings.clone(),
    };
    Ok((path, res.controls, report))
}

/// `Σ_k dt Σ_e measure · B(g_k,e)` along the path.
fn growth_energy(problem: &MatchProblem, path: &ShapePath) -> f64 {
    if problem.growth == GrowthMode::Off {
        return 0.0;
    }
    let dens = problem.metric.elastic.densities(&problem.source);
    let mut total = 0.0;
    for (shape, g) in path.shapes.iter().zip(&path.growth) {
        let vols = shape.element_measures();
        for e in 0..shape.n_elements() {
            let layer = crate::elastic::layer_of(shape, &dens[e], e);
            total += path.dt * dens[e].strain_energy(vols[e], &g.tensor(e), layer);
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Equivalent growth formulations

/// Running costs of the three growth formulations at given controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthEquivalence {
    /// Growth eliminated per step: `κ‖v‖² + inf_g ∫B(ε − g)`.
    pub reduced: f64,
    /// Velocity eliminated per step: `‖g‖²_Ω` at the path growth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_norm: Option<f64>,
    /// Joint cost `κ‖v‖² + ∫B(ε − g)` at the path growth.
    pub joint: f64,
    /// Elastic-free cost `κ‖v‖²`.
    pub pure_lddmm: f64,
    /// Weighted fidelity of the endpoint, shared by all four.
    pub fidelity: f64,
}

/// Evaluate the reduced, growth-norm, and joint formulations (and the
/// elastic-free cost) along the path generated by `controls`.
pub fn growth_distance_equivalence_check(problem: &MatchProblem, controls: &Controls) -> Result<GrowthEquivalence> {
    problem.validate()?;
    let weight = problem.weight()?;
    let cost = problem.running_cost();
    let path = integrate(&problem.source, controls, &cost, problem.scheme)?;
    let set = match problem.growth {
        GrowthMode::Off => AdmissibleSet::Zero,
        GrowthMode::Reduced(s) | GrowthMode::Joint(s) => s,
    };
    let tets = problem.source.kind() == ShapeKind::Tetmesh;
    let model = &problem.metric.elastic;
    let kappa = problem.metric.kappa;
    let mut reduced = 0.0;
    let mut pure = 0.0;
    let mut gnorm = 0.0;
    for k in 0..path.n_steps() {
        let shape = &path.shapes[k];
        let v = &path.controls[k];
        let rk = kappa * rkhs_norm_sq(v);
        pure += path.dt * rk;
        let el = if model.is_none() {
            0.0
        } else if tets {
            let u = eval_velocity(v, shape.vertices())?;
            reduced_elastic_norm_sq(shape, model, &u, set)?.0
        } else {
            let u = eval_velocity(v, shape.vertices())?;
            crate::elastic::elastic_norm_sq(shape, model, &u)?
        };
        reduced += path.dt * (rk + el);
        if tets {
            gnorm += path.dt * growth_norm_sq(shape, kappa, &problem.metric.kernel, model, &path.growth[k])?.value;
        }
    }
    let joint = path.total_energy();
    let fid = weight * fidelity(&problem.source, path.final_shape().vertices(), &problem.target, &problem.fidelity)?;
    Ok(GrowthEquivalence {
        reduced,
        growth_norm: tets.then_some(gnorm),
        joint,
        pure_lddmm: pure,
        fidelity: fid,
    })
}

//! Time integration of the flow ODE and the discrete path cost.
//!
//! The velocity of step `k` is a kernel expansion on the current vertices
//! (moving basis). Layered structures are transported element by element.
//! [`path_gradient`] is the exact reverse sweep of the discrete scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elastic::{sym_from6, Density, ElementInputs};
use crate::error::{Error, Result};
use crate::geometry::{arr, gather, vec3, DiscreteShape, ShapeKind};
use crate::growth::{element_qp, AdmissibleSet, GrowthField};
use crate::hybrid::HybridMetric;
use crate::kernels::{kernel_matvec, kernel_matvec_vjp, rkhs_energy, rkhs_energy_grad, KernelSpec, KernelVelocity};
use crate::linalg::{all_finite, Vec3};
use crate::local::{self, D, V};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// How growth tensors enter the running cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthMode {
    Off,
    /// Growth eliminated per element at every step.
    Reduced(AdmissibleSet),
    /// Growth parameters are part of the controls.
    Joint(AdmissibleSet),
}

impl GrowthMode {
    pub fn control_dof(self) -> usize {
        match self {
            GrowthMode::Joint(set) => set.dof(),
            _ => 0,
        }
    }
}

/// Running cost `dt [κ ‖v_k‖²_V + Σ_e measure · B(ε_e − g_e)]` per step.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningCost {
    pub metric: HybridMetric,
    pub growth: GrowthMode,
}

impl RunningCost {
    pub fn new(metric: HybridMetric, growth: GrowthMode) -> Self {
        RunningCost { metric, growth }
    }

    pub fn check(&self, shape: &DiscreteShape) -> Result<()> {
        self.metric.check_compatible(shape)?;
        if self.growth != GrowthMode::Off && shape.kind() != ShapeKind::Tetmesh {
            return Err(Error::config(format!(
                "growth requires a tetmesh, got {}",
                shape.kind().name()
            )));
        }
        Ok(())
    }
}

/// Per-step kernel coefficients and (joint mode) growth parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Controls {
    pub alpha: Vec<Vec<Vec3>>,
    pub growth: Vec<Vec<f64>>,
}

impl Controls {
    pub fn zeros(n_steps: usize, n_points: usize, growth_len: usize) -> Self {
        Controls {
            alpha: vec![vec![Vec3::zeros(); n_points]; n_steps],
            growth: vec![vec![0.0; growth_len]; n_steps],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.alpha.len()
    }

    /// Flatten as `[α_0 (dim comps per point), g_0, α_1, g_1, …]`.
    pub fn to_flat(&self, dim: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for (a, g) in self.alpha.iter().zip(&self.growth) {
            for p in a {
                out.extend_from_slice(&p.as_slice()[..dim]);
            }
            out.extend_from_slice(g);
        }
        out
    }

    /// Inverse of [`Controls::to_flat`] using `self` as the layout template.
    pub fn from_flat(&self, flat: &[f64], dim: usize) -> Controls {
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("flat control vector too short");
        let mut alpha = Vec::with_capacity(self.alpha.len());
        let mut growth = Vec::with_capacity(self.growth.len());
        for (a, g) in self.alpha.iter().zip(&self.growth) {
            alpha.push(
                a.iter()
                    .map(|_| {
                        let mut p = Vec3::zeros();
                        for c in 0..dim {
                            p[c] = next();
                        }
                        p
                    })
                    .collect(),
            );
            growth.push(g.iter().map(|_| next()).collect());
        }
        Controls { alpha, growth }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().flatten().all(|p| *p == Vec3::zeros()) && self.growth.iter().flatten().all(|g| *g == 0.0)
    }
}

/// Time-discretized trajectory with controls and per-step energies.
#[derive(Clone, Debug)]
pub struct ShapePath {
    pub scheme: Scheme,
    pub dt: f64,
    pub shapes: Vec<DiscreteShape>,
    pub controls: Vec<KernelVelocity>,
    pub growth: Vec<GrowthField>,
    pub step_energies: Vec<f64>,
    pub rkhs_energies: Vec<f64>,
    pub elastic_energies: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ShapePath {
    pub fn n_steps(&self) -> usize {
        self.controls.len()
    }

    pub fn total_energy(&self) -> f64 {
        self.step_energies.iter().sum()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn final_shape(&self) -> &DiscreteShape {
        self.shapes.last().expect("path has at least one shape")
    }
}

type LayerState = (Vec<V<f64>>, Vec<V<f64>>);

fn initial_layers(shape: &DiscreteShape) -> Option<LayerState> {
    shape
        .layered()
        .map(|ls| (ls.transverse.iter().map(arr).collect(), ls.normal.iter().map(arr).collect()))
}

fn axpy(y: &[Vec3], k: &[Vec3], h: f64) -> Vec<Vec3> {
    y.iter().zip(k).map(|(a, b)| a + b * h).collect()
}

/// Advance the vertices `x` one step, with RK4 integrating the coupled
/// vertex system (stage fields use the stage vertex positions). Tracers,
/// when given, follow the same stage fields.
fn advance(
    spec: &KernelSpec,
    x: &[Vec3],
    alpha: &[Vec3],
    dt: f64,
    scheme: Scheme,
    tracers: Option<&[Vec3]>,
) -> (Vec<Vec3>, Option<Vec<Vec3>>) {
    match scheme {
        Scheme::Euler => {
            let next = axpy(x, &kernel_matvec(spec, x, x, alpha), dt);
            let t = tracers.map(|t| axpy(t, &kernel_matvec(spec, t, x, alpha), dt));
            (next, t)
        }
        Scheme::Rk4 => {
            let mut ys = vec![x.to_vec()];
            let mut ks: Vec<Vec<Vec3>> = Vec::with_capacity(4);
            let mut ts = tracers.map(|t| vec![t.to_vec()]);
            let mut tks: Vec<Vec<Vec3>> = Vec::with_capacity(4);
            for (s, h) in [0.5 * dt, 0.5 * dt, dt, 0.0].into_iter().enumerate() {
                let k = kernel_matvec(spec, &ys[s], &ys[s], alpha);
                if let Some(ts) = ts.as_mut() {
                    let tk = kernel_matvec(spec, &ts[s], &ys[s], alpha);
                    if s < 3 {
                        ts.push(axpy(tracers.unwrap(), &tk, h));
                    }
                    tks.push(tk);
                }
                if s < 3 {
                    ys.push(axpy(x, &k, h));
                }
                ks.push(k);
            }
            let combine = |base: &[Vec3], k: &[Vec<Vec3>]| -> Vec<Vec3> {
                (0..base.len())
                    .map(|i| base[i] + (k[0][i] + k[1][i] * 2.0 + k[2][i] * 2.0 + k[3][i]) * (dt / 6.0))
                    .collect()
            };
            (combine(x, &ks), tracers.map(|t| combine(t, &tks)))
        }
    }
}

/// Reverse sweep of [`advance`] for the vertices. Returns `(x̄, ᾱ)`.
fn advance_vjp(spec: &KernelSpec, x: &[Vec3], alpha: &[Vec3], dt: f64, scheme: Scheme, out_bar: &[Vec3]) -> (Vec<Vec3>, Vec<Vec3>) {
    let n = x.len();
    let mut x_bar = out_bar.to_vec();
    let mut a_bar = vec![Vec3::zeros(); n];
    let add = |dst: &mut Vec<Vec3>, src: &[Vec3], s: f64| dst.iter_mut().zip(src).for_each(|(d, v)| *d += v * s);
    match scheme {
        Scheme::Euler => {
            let scaled: Vec<Vec3> = out_bar.iter().map(|b| b * dt).collect();
            let (q, p, c) = kernel_matvec_vjp(spec, x, x, alpha, &scaled);
            add(&mut x_bar, &q, 1.0);
            add(&mut x_bar, &p, 1.0);
            add(&mut a_bar, &c, 1.0);
        }
        Scheme::Rk4 => {
            let steps = [0.5 * dt, 0.5 * dt, dt];
            let mut ys = vec![x.to_vec()];
            for h in steps {
                let last = ys.last().unwrap();
                let k = kernel_matvec(spec, last, last, alpha);
                ys.push(axpy(x, &k, h));
            }
            let w = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
            let mut kb: Vec<Vec<Vec3>> = w.iter().map(|s| out_bar.iter().map(|b| b * *s).collect()).collect();
            for s in (0..4).rev() {
                let (q, p, c) = kernel_matvec_vjp(spec, &ys[s], &ys[s], alpha, &kb[s]);
                add(&mut a_bar, &c, 1.0);
                let y_bar: Vec<Vec3> = q.iter().zip(&p).map(|(a, b)| a + b).collect();
                // y_s = x + h_{s-1} k_{s-1}; y_0 = x.
                add(&mut x_bar, &y_bar, 1.0);
                if s > 0 {
                    add(&mut kb[s - 1], &y_bar, steps[s - 1]);
                }
            }
        }
    }
    (x_bar, a_bar)
}

/// Transport every element's layer vectors from `x0` to `x1`.
fn transport(shape: &DiscreteShape, x0: &[Vec3], x1: &[Vec3], layers: &LayerState) -> (LayerState, Vec<usize>) {
    let ne = shape.n_elements();
    let out: Vec<(V<f64>, V<f64>, bool)> = (0..ne)
        .into_par_iter()
        .map(|e| {
            let idx = shape.element(e);
            let (s, n) = local::transport_layer(&gather::<4>(x0, idx), &gather::<4>(x1, idx), &layers.0[e], &layers.1[e]);
            let ok = s.iter().chain(&n).all(|v| v.is_finite());
            (s, n, ok)
        })
        .collect();
    let bad = out.iter().enumerate().filter(|(_, o)| !o.2).map(|(e, _)| e).collect();
    let s = out.iter().map(|o| o.0).collect();
    let n = out.iter().map(|o| o.1).collect();
    ((s, n), bad)
}

/// Cotangents of the transport inputs given output cotangents.
fn transport_vjp(
    shape: &DiscreteShape,
    x0: &[Vec3],
    x1: &[Vec3],
    layers: &LayerState,
    s_bar: &[V<f64>],
    n_bar: &[V<f64>],
) -> (Vec<Vec3>, Vec<Vec3>, LayerState) {
    let ne = shape.n_elements();
    let per: Vec<[f64; local::LOCAL_DIM]> = (0..ne)
        .into_par_iter()
        .map(|e| {
            let idx = shape.element(e);
            let mut vals = [0.0; local::LOCAL_DIM];
            let a = gather::<4>(x0, idx);
            let b = gather::<4>(x1, idx);
            for i in 0..4 {
                vals[3 * i..3 * i + 3].copy_from_slice(&a[i]);
                vals[12 + 3 * i..12 + 3 * i + 3].copy_from_slice(&b[i]);
            }
            vals[24..27].copy_from_slice(&layers.0[e]);
            vals[27..30].copy_from_slice(&layers.1[e]);
            let d = local::seed(&vals);
            let v4 = |o: usize| -> [V<D>; 4] { std::array::from_fn(|i| [d[o + 3 * i], d[o + 3 * i + 1], d[o + 3 * i + 2]]) };
            let (s, n) = local::transport_layer(&v4(0), &v4(12), &[d[24], d[25], d[26]], &[d[27], d[28], d[29]]);
            let mut acc = [0.0; local::LOCAL_DIM];
            for c in 0..3 {
                for (val, bar) in [(s[c], s_bar[e][c]), (n[c], n_bar[e][c])] {
                    if bar != 0.0 {
                        let (_, g) = local::split(val);
                        acc.iter_mut().zip(g).for_each(|(a, gi)| *a += bar * gi);
                    }
                }
            }
            acc
        })
        .collect();
    let nv = x0.len();
    let mut x0_bar = vec![Vec3::zeros(); nv];
    let mut x1_bar = vec![Vec3::zeros(); nv];
    let mut sb = Vec::with_capacity(ne);
    let mut nb = Vec::with_capacity(ne);
    for (e, g) in per.iter().enumerate() {
        for (i, &vi) in shape.element(e).iter().enumerate() {
            x0_bar[vi] += Vec3::new(g[3 * i], g[3 * i + 1], g[3 * i + 2]);
            x1_bar[vi] += Vec3::new(g[12 + 3 * i], g[13 + 3 * i], g[14 + 3 * i]);
        }
        sb.push([g[24], g[25], g[26]]);
        nb.push([g[27], g[28], g[29]]);
    }
    (x0_bar, x1_bar, (sb, nb))
}

/// Growth tensor of element `e` at one step, `None` when no growth applies.
/// `Err(())` marks elements whose cost vanishes identically.
fn element_growth(
    mode: GrowthMode,
    density: &Density,
    x: &[V<f64>],
    u: &[V<f64>],
    layer: Option<(V<f64>, V<f64>)>,
    params: &[f64],
) -> std::result::Result<Option<local::M<f64>>, ()> {
    match mode {
        GrowthMode::Off | GrowthMode::Reduced(AdmissibleSet::Zero) | GrowthMode::Joint(AdmissibleSet::Zero) => Ok(None),
        GrowthMode::Reduced(AdmissibleSet::Full) => Err(()),
        GrowthMode::Reduced(AdmissibleSet::Scalar) => {
            let (dv, _) = local::tet_dv(&[x[0], x[1], x[2], x[3]], &[u[0], u[1], u[2], u[3]]);
            let eps = nalgebra::Matrix3::from_fn(|a, b| 0.5 * (dv[a][b] + dv[b][a]));
            let rho = match density {
                Density::Isotropic { .. } => eps.trace() / 3.0,
                _ => element_qp(density, &eps, layer, AdmissibleSet::Scalar).1[(0, 0)],
            };
            let z = 0.0;
            Ok(Some([[rho, z, z], [z, rho, z], [z, z, rho]]))
        }
        GrowthMode::Joint(AdmissibleSet::Scalar) => {
            let r = params[0];
            Ok(Some([[r, 0.0, 0.0], [0.0, r, 0.0], [0.0, 0.0, r]]))
        }
        GrowthMode::Joint(AdmissibleSet::Full) => Ok(Some(sym_from6(&[
            params[0], params[1], params[2], params[3], params[4], params[5],
        ]))),
    }
}

struct StepState<'a> {
    x: &'a [Vec3],
    layers: Option<&'a LayerState>,
    growth: &'a [f64],
}

/// Elastic part of one step (not yet multiplied by dt), and the per-element
/// growth tensors used.
fn elastic_step(shape: &DiscreteShape, dens: &[Density], cost: &RunningCost, st: &StepState<'_>, u: &[Vec3]) -> (f64, Vec<Option<local::M<f64>>>) {
    let dof = cost.growth.control_dof();
    let per: Vec<(f64, Option<local::M<f64>>)> = (0..shape.n_elements())
        .into_par_iter()
        .map(|e| {
            if dens[e].is_zero() {
                return (0.0, None);
            }
            let idx = shape.element(e);
            let x: Vec<V<f64>> = idx.iter().map(|&i| arr(&st.x[i])).collect();
            let uu: Vec<V<f64>> = idx.iter().map(|&i| arr(&u[i])).collect();
            let layer = layer_for(dens, e, st.layers);
            let params = &st.growth[e * dof..(e + 1) * dof];
            match element_growth(cost.growth, &dens[e], &x, &uu, layer, params) {
                Err(()) => (0.0, None),
                Ok(g) => (
                    dens[e].energy(&ElementInputs {
                        x: &x,
                        u: &uu,
                        layer,
                        growth: g,
                    }),
                    g,
                ),
            }
        })
        .collect();
    let total = per.iter().map(|p| p.0).sum();
    (total, per.into_iter().map(|p| p.1).collect())
}

fn layer_for(dens: &[Density], e: usize, layers: Option<&LayerState>) -> Option<(V<f64>, V<f64>)> {
    if dens[e].needs_layer() {
        layers.map(|l| (l.0[e], l.1[e]))
    } else {
        None
    }
}

struct Forward {
    xs: Vec<Vec<Vec3>>,
    layers: Vec<Option<LayerState>>,
    rkhs: Vec<f64>,
    elastic: Vec<f64>,
    growth_used: Vec<Vec<Option<local::M<f64>>>>,
    warnings: Vec<String>,
}

fn check_controls(initial: &DiscreteShape, controls: &Controls, cost: &RunningCost) -> Result<()> {
    if controls.n_steps() == 0 {
        return Err(Error::input("at least one time step is required"));
    }
    if controls.growth.len() != controls.n_steps() {
        return Err(Error::input("growth controls must have one entry per step"));
    }
    let nv = initial.n_vertices();
    let glen = initial.n_elements() * cost.growth.control_dof();
    for (k, (a, g)) in controls.alpha.iter().zip(&controls.growth).enumerate() {
        if a.len() != nv {
            return Err(Error::input(format!("step {k}: expected {nv} coefficients, got {}", a.len())));
        }
        if g.len() != glen {
            return Err(Error::input(format!("step {k}: expected {glen} growth parameters, got {}", g.len())));
        }
        if !all_finite(a) || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite controls").at_step(k));
        }
    }
    Ok(())
}

fn forward(initial: &DiscreteShape, controls: &Controls, cost: &RunningCost, scheme: Scheme) -> Result<Forward> {
    cost.check(initial)?;
    check_controls(initial, controls, cost)?;
    let spec = cost.metric.kernel;
    let n = controls.n_steps();
    let dt = 1.0 / n as f64;
    let dens = cost.metric.elastic.densities(initial);
    let planar = initial.dim() == 2;
    let mut xs = vec![initial.vertices().to_vec()];
    let mut layers = vec![initial_layers(initial)];
    let mut out = Forward {
        xs: Vec::new(),
        layers: Vec::new(),
        rkhs: Vec::with_capacity(n),
        elastic: Vec::with_capacity(n),
        growth_used: Vec::with_capacity(n),
        warnings: Vec::new(),
    };
    for k in 0..n {
        let mut alpha = controls.alpha[k].clone();
        if planar {
            alpha.iter_mut().for_each(|a| a.z = 0.0);
        }
        let x = &xs[k];
        let st = StepState {
            x,
            layers: layers[k].as_ref(),
            growth: &controls.growth[k],
        };
        out.rkhs.push(dt * cost.metric.kappa * rkhs_energy(&spec, x, &alpha));
        let (el, used) = if dens.iter().all(Density::is_zero) {
            (0.0, vec![None; initial.n_elements()])
        } else {
            let u = kernel_matvec(&spec, x, x, &alpha);
            elastic_step(initial, &dens, cost, &st, &u)
        };
        out.elastic.push(dt * el);
        out.growth_used.push(used);
        let (next, _) = advance(&spec, x, &alpha, dt, scheme, None);
        if !all_finite(&next) || !(out.rkhs[k] + out.elastic[k]).is_finite() {
            return Err(Error::numeric("non-finite state during integration").at_step(k));
        }
        let next_layers = match &layers[k] {
            Some(l) => {
                let (t, bad) = transport(initial, x, &next, l);
                if let Some(e) = bad.first() {
                    return Err(Error::numeric(format!("layer transport failed at element {e}")).at_step(k));
                }
                Some(t)
            }
            None => None,
        };
        let moved = initial.moved(next.clone(), None);
        let order = initial.cells().order();
        if order > 0 {
            let tol = 1e-14 * moved.scale().powi(order as i32);
            let reference = initial.element_measures();
            for (e, m) in moved.element_measures().iter().enumerate() {
                if *m <= tol || (order == 3 && signed_flip(initial, x, &next, e)) {
                    out.warnings.push(format!("step {k}: element {e} degenerate or inverted"));
                }
                let _ = reference[e];
            }
        }
        xs.push(next);
        layers.push(next_layers);
    }
    out.xs = xs;
    out.layers = layers;
    Ok(out)
}

fn signed_flip(shape: &DiscreteShape, x0: &[Vec3], x1: &[Vec3], e: usize) -> bool {
    let idx = shape.element(e);
    let a = local::tet_signed_volume(&gather::<4>(x0, idx));
    let b = local::tet_signed_volume(&gather::<4>(x1, idx));
    a.signum() != b.signum()
}

fn growth_field_of(shape: &DiscreteShape, mode: GrowthMode, used: &[Option<local::M<f64>>]) -> Result<GrowthField> {
    let ne = shape.n_elements();
    match mode {
        GrowthMode::Off | GrowthMode::Reduced(AdmissibleSet::Zero) | GrowthMode::Joint(AdmissibleSet::Zero) => {
            Ok(GrowthField::zero(ne))
        }
        GrowthMode::Reduced(AdmissibleSet::Scalar) | GrowthMode::Joint(AdmissibleSet::Scalar) => {
            GrowthField::scalar(used.iter().map(|g| g.map(|m| m[0][0]).unwrap_or(0.0)).collect())
        }
        GrowthMode::Reduced(AdmissibleSet::Full) | GrowthMode::Joint(AdmissibleSet::Full) => GrowthField::full(
            used.iter()
                .map(|g| {
                    g.map(|m| nalgebra::Matrix3::from_fn(|a, b| m[a][b]))
                        .unwrap_or_else(nalgebra::Matrix3::zeros)
                })
                .collect(),
        ),
    }
}

/// Integrate the controls from `initial`, recording shapes and energies.
///
/// In the reduced full-set mode the stored growth is zero: the strain is
/// absorbed exactly and no tensor is materialized.
pub fn integrate(initial: &DiscreteShape, controls: &Controls, cost: &RunningCost, scheme: Scheme) -> Result<ShapePath> {
    let fw = forward(initial, controls, cost, scheme)?;
    let n = controls.n_steps();
    let spec = cost.metric.kernel;
    let mut shapes = Vec::with_capacity(n + 1);
    for (x, l) in fw.xs.iter().zip(&fw.layers) {
        let layered = match (initial.layered(), l) {
            (Some(base), Some((s, nn))) => Some(crate::geometry::LayeredStructure {
                transverse: s.iter().map(vec3).collect(),
                normal: nn.iter().map(vec3).collect(),
                layer_index: base.layer_index.clone(),
            }),
            _ => None,
        };
        shapes.push(initial.moved(x.clone(), layered));
    }
    let mut velocities = Vec::with_capacity(n);
    let mut growth = Vec::with_capacity(n);
    for k in 0..n {
        let mut alpha = controls.alpha[k].clone();
        if initial.dim() == 2 {
            alpha.iter_mut().for_each(|a| a.z = 0.0);
        }
        velocities.push(KernelVelocity::new(spec, fw.xs[k].clone(), alpha)?);
        growth.push(if initial.kind() == ShapeKind::Tetmesh {
            growth_field_of(initial, cost.growth, &fw.growth_used[k])?
        } else {
            GrowthField::zero(initial.n_elements())
        });
    }
    Ok(ShapePath {
        scheme,
        dt: 1.0 / n as f64,
        shapes,
        controls: velocities,
        growth,
        step_energies: fw.rkhs.iter().zip(&fw.elastic).map(|(a, b)| a + b).collect(),
        rkhs_energies: fw.rkhs,
        elastic_energies: fw.elastic,
        warnings: fw.warnings,
    })
}

/// Integrate explicit velocities whose control points must track the
/// current vertices.
pub fn integrate_velocities(
    initial: &DiscreteShape,
    velocities: &[KernelVelocity],
    cost: &RunningCost,
    scheme: Scheme,
) -> Result<ShapePath> {
    let n = velocities.len();
    if n == 0 {
        return Err(Error::input("at least one time step is required"));
    }
    let dt = 1.0 / n as f64;
    let mut x = initial.vertices().to_vec();
    let tol = 1e-9 * initial.scale().max(1.0);
    for (k, v) in velocities.iter().enumerate() {
        if v.spec != cost.metric.kernel {
            return Err(Error::config(format!("step {k}: velocity kernel differs from the metric kernel")));
        }
        if v.control_points.len() != x.len()
            || v.control_points.iter().zip(&x).any(|(a, b)| (a - b).norm() > tol)
        {
            return Err(Error::config(format!(
                "step {k}: control points do not coincide with the current vertices"
            )));
        }
        x = advance(&v.spec, &x, &v.coefficients, dt, scheme, None).0;
    }
    let glen = initial.n_elements() * cost.growth.control_dof();
    let controls = Controls {
        alpha: velocities.iter().map(|v| v.coefficients.clone()).collect(),
        growth: vec![vec![0.0; glen]; n],
    };
    integrate(initial, &controls, cost, scheme)
}

/// Trajectories of tracer points under the path's stored controls.
pub fn flow_map(path: &ShapePath, tracers: &[Vec3]) -> Result<Vec<Vec<Vec3>>> {
    if !all_finite(tracers) {
        return Err(Error::input("non-finite tracer coordinates"));
    }
    let mut out = Vec::with_capacity(path.n_steps() + 1);
    let mut y = tracers.to_vec();
    out.push(y.clone());
    for v in &path.controls {
        let (_, t) = advance(&v.spec, &v.control_points, &v.coefficients, path.dt, path.scheme, Some(&y));
        y = t.expect("tracers requested");
        out.push(y.clone());
    }
    Ok(out)
}

/// Path energy and its split into RKHS and elastic parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PathCost {
    pub rkhs: f64,
    pub elastic: f64,
}

impl PathCost {
    pub fn total(&self) -> f64 {
        self.rkhs + self.elastic
    }
}

/// Terminal cost value and its gradient with respect to the final vertices.
pub type Terminal<'a> = dyn Fn(&[Vec3]) -> Result<(f64, Vec<Vec3>)> + Sync + 'a;

/// Running cost plus terminal cost, and the exact gradient of the discrete
/// objective with respect to the controls.
pub fn path_gradient(
    initial: &DiscreteShape,
    controls: &Controls,
    cost: &RunningCost,
    scheme: Scheme,
    terminal: &Terminal<'_>,
) -> Result<(PathCost, f64, Controls)> {
    let fw = forward(initial, controls, cost, scheme)?;
    let n = controls.n_steps();
    let dt = 1.0 / n as f64;
    let spec = cost.metric.kernel;
    let kappa = cost.metric.kappa;
    let dens = cost.metric.elastic.densities(initial);
    let any_elastic = !dens.iter().all(Density::is_zero);
    let planar = initial.dim() == 2;
    let dof = cost.growth.control_dof();
    let ne = initial.n_elements();

    let (term, term_grad) = terminal(&fw.xs[n])?;
    let mut x_bar = term_grad;
    let mut layer_bar: Option<LayerState> = fw.layers[n].as_ref().map(|_| (vec![[0.0; 3]; ne], vec![[0.0; 3]; ne]));
    let mut grad = controls.clone();

    for k in (0..n).rev() {
        let x = &fw.xs[k];
        let mut alpha = controls.alpha[k].clone();
        if planar {
            alpha.iter_mut().for_each(|a| a.z = 0.0);
        }
        // Layer transport k -> k+1 contributes to both endpoint vertex sets.
        let mut this_layer_bar: Option<LayerState> = None;
        if let (Some(l), Some(lb)) = (&fw.layers[k], &layer_bar) {
            let (x0b, x1b, inb) = transport_vjp(initial, x, &fw.xs[k + 1], l, &lb.0, &lb.1);
            x_bar.iter_mut().zip(&x1b).for_each(|(a, b)| *a += b);
            this_layer_bar = Some(inb);
            let (xb, ab) = advance_vjp(&spec, x, &alpha, dt, scheme, &x_bar);
            x_bar = xb;
            x_bar.iter_mut().zip(&x0b).for_each(|(a, b)| *a += b);
            grad.alpha[k] = ab;
        } else {
            let (xb, ab) = advance_vjp(&spec, x, &alpha, dt, scheme, &x_bar);
            x_bar = xb;
            grad.alpha[k] = ab;
        }

        // Running cost of step k.
        let (rx, ra) = rkhs_energy_grad(&spec, x, &alpha);
        let w = dt * kappa;
        x_bar.iter_mut().zip(&rx).for_each(|(a, b)| *a += b * w);
        grad.alpha[k].iter_mut().zip(&ra).for_each(|(a, b)| *a += b * w);
        grad.growth[k].iter_mut().for_each(|g| *g = 0.0);

        if any_elastic {
            let u = kernel_matvec(&spec, x, x, &alpha);
            let layers = fw.layers[k].as_ref();
            let per: Vec<Option<[f64; local::LOCAL_DIM]>> = (0..ne)
                .into_par_iter()
                .map(|e| {
                    if dens[e].is_zero() {
                        return None;
                    }
                    let idx = initial.element(e);
                    let xe: Vec<V<f64>> = idx.iter().map(|&i| arr(&x[i])).collect();
                    let ue: Vec<V<f64>> = idx.iter().map(|&i| arr(&u[i])).collect();
                    let layer = layer_for(&dens, e, layers);
                    let params = &controls.growth[k][e * dof..(e + 1) * dof];
                    // Eliminated growth is held fixed: the minimizer is stationary.
                    let g = element_growth(cost.growth, &dens[e], &xe, &ue, layer, params).ok()?;
                    let (_, gr) = dens[e].energy_grad(&ElementInputs {
                        x: &xe,
                        u: &ue,
                        layer,
                        growth: g,
                    });
                    Some(gr)
                })
                .collect();
            let mut u_bar = vec![Vec3::zeros(); x.len()];
            let mut lb = this_layer_bar.take();
            for (e, gr) in per.iter().enumerate() {
                let Some(gr) = gr else { continue };
                for (i, &vi) in initial.element(e).iter().enumerate() {
                    x_bar[vi] += Vec3::new(gr[3 * i], gr[3 * i + 1], gr[3 * i + 2]) * dt;
                    u_bar[vi] += Vec3::new(gr[12 + 3 * i], gr[13 + 3 * i], gr[14 + 3 * i]) * dt;
                }
                if let Some(lb) = lb.as_mut() {
                    for c in 0..3 {
                        lb.0[e][c] += gr[24 + c] * dt;
                        lb.1[e][c] += gr[27 + c] * dt;
                    }
                }
                if let GrowthMode::Joint(set) = cost.growth {
                    let gslot = &mut grad.growth[k][e * dof..(e + 1) * dof];
                    match set {
                        AdmissibleSet::Scalar => gslot[0] = (gr[30] + gr[31] + gr[32]) * dt,
                        AdmissibleSet::Full => {
                            for c in 0..6 {
                                gslot[c] = gr[30 + c] * dt;
                            }
                        }
                        AdmissibleSet::Zero => {}
                    }
                }
            }
            this_layer_bar = lb;
            let (q, p, c) = kernel_matvec_vjp(&spec, x, x, &alpha, &u_bar);
            for i in 0..x.len() {
                x_bar[i] += q[i] + p[i];
                grad.alpha[k][i] += c[i];
            }
        }
        if planar {
            grad.alpha[k].iter_mut().for_each(|a| a.z = 0.0);
            x_bar.iter_mut().for_each(|a| a.z = 0.0);
        }
        layer_bar = this_layer_bar;
    }
    let pc = PathCost {
        rkhs: fw.rkhs.iter().sum(),
        elastic: fw.elastic.iter().sum(),
    };
    Ok((pc, term, grad))
}

/// Running cost and terminal cost without the gradient.
pub fn path_cost(initial: &DiscreteShape, controls: &Controls, cost: &RunningCost, scheme: Scheme) -> Result<(PathCost, Vec<Vec3>)> {
    let fw = forward(initial, controls, cost, scheme)?;
    let pc = PathCost {
        rkhs: fw.rkhs.iter().sum(),
        elastic: fw.elastic.iter().sum(),
    };
    Ok((pc, fw.xs.last().cloned().unwrap_or_default()))
}

//! Discrete shapes and the per-element operators the metrics are built from.
//!
//! Displacement fields are P1 (one vector per vertex) and strains are P0
//! (constant per element). Element measures act as quadrature weights.

use std::collections::HashMap;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, bbox_diagonal, Vec3};
use crate::local;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Landmarks,
    Polyline2d,
    Polyline3d,
    Trimesh,
    Tetmesh,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Landmarks => "landmarks",
            ShapeKind::Polyline2d => "polyline2d",
            ShapeKind::Polyline3d => "polyline3d",
            ShapeKind::Trimesh => "trimesh",
            ShapeKind::Tetmesh => "tetmesh",
        }
    }

    pub fn is_polyline(self) -> bool {
        matches!(self, ShapeKind::Polyline2d | ShapeKind::Polyline3d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cells {
    None,
    Edges(Vec<[usize; 2]>),
    Triangles(Vec<[usize; 3]>),
    Tets(Vec<[usize; 4]>),
}

impl Cells {
    pub fn len(&self) -> usize {
        match self {
            Cells::None => 0,
            Cells::Edges(c) => c.len(),
            Cells::Triangles(c) => c.len(),
            Cells::Tets(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vertex indices of element `e`.
    pub fn element(&self, e: usize) -> &[usize] {
        match self {
            Cells::None => &[],
            Cells::Edges(c) => &c[e],
            Cells::Triangles(c) => &c[e],
            Cells::Tets(c) => &c[e],
        }
    }

    /// Topological dimension of the elements (1 for edges, 3 for tets).
    pub fn order(&self) -> usize {
        match self {
            Cells::None => 0,
            Cells::Edges(_) => 1,
            Cells::Triangles(_) => 2,
            Cells::Tets(_) => 3,
        }
    }
}

/// Foliation data of a layered volume.
///
/// `transverse` (S) and `normal` (N) are stored per element, `layer_index`
/// (s in [0, 1]) per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredStructure {
    pub transverse: Vec<Vec3>,
    pub layer_index: Vec<f64>,
    pub normal: Vec<Vec3>,
}

impl LayeredStructure {
    /// Mean layer index over the vertices of an element.
    pub fn element_layer(&self, cells: &Cells, e: usize) -> f64 {
        let idx = cells.element(e);
        idx.iter().map(|&i| self.layer_index[i]).sum::<f64>() / idx.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteShape {
    kind: ShapeKind,
    dim: usize,
    vertices: Vec<Vec3>,
    cells: Cells,
    closed: bool,
    layered: Option<LayeredStructure>,
}

/// Orthonormal element frame and element measure.
///
/// Edges: `[τ, ν₁, ν₂]` (in the plane, `ν₁` is `τ` rotated by 90° and `ν₂ = e₃`).
/// Triangles: `[τ₁, τ₂, ν]` with `ν = τ₁ × τ₂`. Tets: the canonical basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementFrame {
    pub axes: [Vec3; 3],
    pub measure: f64,
}

/// Frame projections of the tangential Jacobian on a triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleStrain {
    pub a11: f64,
    pub a22: f64,
    pub a12_plus_a21: f64,
    pub a13: f64,
    pub a23: f64,
    pub a12_minus_a21: f64,
}

pub(crate) fn arr(p: &Vec3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

pub(crate) fn vec3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub(crate) fn gather<const K: usize>(points: &[Vec3], idx: &[usize]) -> [[f64; 3]; K] {
    std::array::from_fn(|k| arr(&points[idx[k]]))
}

const DEGENERACY: f64 = 1e-14;

impl DiscreteShape {
    pub fn landmarks(points: Vec<Vec3>, dim: usize) -> Result<Self> {
        Self::build(ShapeKind::Landmarks, dim, points, Cells::None, false, None)
    }

    /// Polyline through `points` in order; `closed` adds the wrap-around edge.
    pub fn polyline(points: Vec<Vec3>, dim: usize, closed: bool) -> Result<Self> {
        let n = points.len();
        let min = if closed { 3 } else { 2 };
        if n < min {
            return Err(Error::input(format!("polyline needs at least {min} points, got {n}")));
        }
        let mut edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
        if closed {
            edges.push([n - 1, 0]);
        }
        let kind = match dim {
            2 => ShapeKind::Polyline2d,
            3 => ShapeKind::Polyline3d,
            _ => return Err(Error::input(format!("polyline dimension must be 2 or 3, got {dim}"))),
        };
        Self::build(kind, dim, points, Cells::Edges(edges), closed, None)
    }

    pub fn trimesh(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(ShapeKind::Trimesh, 3, vertices, Cells::Triangles(triangles), false, None)
    }

    pub fn tetmesh(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self> {
        Self::build(ShapeKind::Tetmesh, 3, vertices, Cells::Tets(tets), false, None)
    }

    /// Attach a layered structure to a tet mesh.
    pub fn with_layers(mut self, layered: LayeredStructure) -> Result<Self> {
        if self.kind != ShapeKind::Tetmesh {
            return Err(Error::input("layered structures require a tetmesh"));
        }
        let ne = self.n_elements();
        if layered.transverse.len() != ne || layered.normal.len() != ne {
            return Err(Error::input(format!(
                "layered structure needs {ne} transverse and normal vectors, got {} and {}",
                layered.transverse.len(),
                layered.normal.len()
            )));
        }
        if layered.layer_index.len() != self.n_vertices() {
            return Err(Error::input("layer_index must have one value per vertex"));
        }
        for (e, (s, n)) in layered.transverse.iter().zip(&layered.normal).enumerate() {
            if (n.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::input(format!("layer normal of element {e} is not unit length")));
            }
            if !(s.norm() > 0.0) {
                return Err(Error::input(format!("transverse field vanishes at element {e}")));
            }
        }
        if layered.layer_index.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::input("layer_index values must lie in [0, 1]"));
        }
        self.layered = Some(layered);
        Ok(self)
    }

    fn build(
        kind: ShapeKind,
        dim: usize,
        mut vertices: Vec<Vec3>,
        cells: Cells,
        closed: bool,
        layered: Option<LayeredStructure>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::input(format!("dimension must be 2 or 3, got {dim}")));
        }
        if matches!(kind, ShapeKind::Trimesh | ShapeKind::Tetmesh | ShapeKind::Polyline3d) && dim != 3 {
            return Err(Error::input(format!("{} requires dimension 3", kind.name())));
        }
        if vertices.is_empty() {
            return Err(Error::input("shape has no vertices"));
        }
        if !all_finite(&vertices) {
            return Err(Error::input("shape has non-finite vertex coordinates"));
        }
        if dim == 2 {
            if vertices.iter().any(|p| p.z != 0.0) {
                return Err(Error::input("planar shape has nonzero third coordinate"));
            }
            for p in &mut vertices {
                p.z = 0.0;
            }
        }
        let n = vertices.len();
        for e in 0..cells.len() {
            if let Some(&bad) = cells.element(e).iter().find(|&&i| i >= n) {
                return Err(Error::input(format!("element {e} references vertex {bad} but only {n} exist")));
            }
        }
        let shape = DiscreteShape {
            kind,
            dim,
            vertices,
            cells,
            closed,
            layered,
        };
        shape.check_measures()?;
        shape.check_orientation()?;
        Ok(shape)
    }

    fn check_measures(&self) -> Result<()> {
        let order = self.cells.order();
        if order == 0 {
            return Ok(());
        }
        let tol = DEGENERACY * bbox_diagonal(&self.vertices).powi(order as i32);
        for (e, m) in self.raw_measures().into_iter().enumerate() {
            if !(m.abs() > tol) {
                return Err(Error::geometry(e, format!("element measure {m:e} is degenerate")));
            }
        }
        Ok(())
    }

    fn check_orientation(&self) -> Result<()> {
        match &self.cells {
            Cells::Triangles(tris) => {
                let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
                for (e, t) in tris.iter().enumerate() {
                    for k in 0..3 {
                        let edge = (t[k], t[(k + 1) % 3]);
                        if let Some(&other) = seen.get(&edge) {
                            return Err(Error::geometry(
                                e,
                                format!("orientation inconsistent with element {other} along edge {edge:?}"),
                            ));
                        }
                        seen.insert(edge, e);
                    }
                }
                Ok(())
            }
            Cells::Tets(_) => {
                let signed = self.raw_measures();
                let positive = signed[0] > 0.0;
                match signed.iter().position(|&v| (v > 0.0) != positive) {
                    Some(e) => Err(Error::geometry(e, "tet orientation differs from element 0")),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Element measures; tets carry their sign.
    fn raw_measures(&self) -> Vec<f64> {
        let x = &self.vertices;
        (0..self.n_elements())
            .map(|e| {
                let idx = self.cells.element(e);
                match &self.cells {
                    Cells::Edges(_) => (x[idx[1]] - x[idx[0]]).norm(),
                    Cells::Triangles(_) => 0.5 * (x[idx[1]] - x[idx[0]]).cross(&(x[idx[2]] - x[idx[0]])).norm(),
                    Cells::Tets(_) => local::tet_signed_volume(&gather::<4>(x, idx)),
                    Cells::None => 0.0,
                }
            })
            .collect()
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn cells(&self) -> &Cells {
        &self.cells
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn layered(&self) -> Option<&LayeredStructure> {
        self.layered.as_ref()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.cells.len()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        self.cells.element(e)
    }

    /// Length, area, or (unsigned) volume of every element.
    pub fn element_measures(&self) -> Vec<f64> {
        self.raw_measures().into_iter().map(f64::abs).collect()
    }

    pub fn total_measure(&self) -> f64 {
        self.element_measures().iter().sum()
    }

    /// Bounding-box diagonal, the natural length scale of the shape.
    pub fn scale(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    /// Same connectivity and layers, new vertex positions (no validation).
    pub(crate) fn moved(&self, vertices: Vec<Vec3>, layered: Option<LayeredStructure>) -> Self {
        DiscreteShape {
            vertices,
            layered,
            cells: self.cells.clone(),
            ..*self
        }
    }

    /// Copy with vertex positions replaced after full validation.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.n_vertices() {
            return Err(Error::input("vertex count mismatch"));
        }
        Self::build(self.kind, self.dim, vertices, self.cells.clone(), self.closed, self.layered.clone())
    }

    fn require_vertex_values(&self, v: &[Vec3]) -> Result<()> {
        if v.len() != self.n_vertices() {
            return Err(Error::input(format!(
                "expected one vector per vertex ({}), got {}",
                self.n_vertices(),
                v.len()
            )));
        }
        if !all_finite(v) {
            return Err(Error::input("non-finite vertex values"));
        }
        Ok(())
    }

    /// Vertices on the boundary: endpoints of open polylines, vertices of
    /// boundary edges for triangle meshes, vertices of boundary faces for tets.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut flag = vec![false; self.n_vertices()];
        match &self.cells {
            Cells::None => {}
            Cells::Edges(_) => {
                if !self.closed {
                    flag[0] = true;
                    let last = self.n_vertices() - 1;
                    flag[last] = true;
                }
            }
            Cells::Triangles(tris) => {
                let mut count: HashMap<[usize; 2], usize> = HashMap::new();
                for t in tris {
                    for k in 0..3 {
                        let mut key = [t[k], t[(k + 1) % 3]];
                        key.sort_unstable();
                        *count.entry(key).or_default() += 1;
                    }
                }
                for (key, c) in count {
                    if c == 1 {
                        key.iter().for_each(|&i| flag[i] = true);
                    }
                }
            }
            Cells::Tets(tets) => {
                let mut count: HashMap<[usize; 3], usize> = HashMap::new();
                for t in tets {
                    for skip in 0..4 {
                        let mut key = [0; 3];
                        let mut j = 0;
                        for (k, &i) in t.iter().enumerate() {
                            if k != skip {
                                key[j] = i;
                                j += 1;
                            }
                        }
                        key.sort_unstable();
                        *count.entry(key).or_default() += 1;
                    }
                }
                for (key, c) in count {
                    if c == 1 {
                        key.iter().for_each(|&i| flag[i] = true);
                    }
                }
            }
        }
        flag
    }

    /// Area-weighted vertex normals of a triangle mesh.
    pub fn vertex_normals(&self) -> Result<Vec<Vec3>> {
        let Cells::Triangles(tris) = &self.cells else {
            return Err(Error::input("vertex normals require a trimesh"));
        };
        let x = &self.vertices;
        let mut acc = vec![Vec3::zeros(); x.len()];
        for t in tris {
            // |e1 × e2| is twice the area, so the raw cross product is area-weighted.
            let n = (x[t[1]] - x[t[0]]).cross(&(x[t[2]] - x[t[0]]));
            for &i in t {
                acc[i] += n;
            }
        }
        acc.into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = n.norm();
                if len > 0.0 {
                    Ok(n / len)
                } else {
                    Err(Error::input(format!("vertex {i} has no well-defined normal")))
                }
            })
            .collect()
    }
}

fn require_cells(shape: &DiscreteShape, order: usize, what: &str) -> Result<()> {
    if shape.cells.order() != order {
        return Err(Error::input(format!("{what} is not defined for {}", shape.kind.name())));
    }
    Ok(())
}

pub fn build_frames(shape: &DiscreteShape) -> Result<Vec<ElementFrame>> {
    if shape.kind == ShapeKind::Landmarks {
        return Err(Error::input("landmarks have no element frames"));
    }
    let x = &shape.vertices;
    let measures = shape.element_measures();
    (0..shape.n_elements())
        .map(|e| {
            let idx = shape.element(e);
            let axes = match &shape.cells {
                Cells::Edges(_) => {
                    let tau = (x[idx[1]] - x[idx[0]]) / measures[e];
                    if shape.dim == 2 {
                        [tau, Vec3::new(-tau.y, tau.x, 0.0), Vec3::z()]
                    } else {
                        let helper = if tau.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                        let n1 = tau.cross(&helper).normalize();
                        [tau, n1, tau.cross(&n1)]
                    }
                }
                Cells::Triangles(_) => {
                    let (axes, _) = local::triangle_frame(&gather::<3>(x, idx));
                    [vec3(&axes[0]), vec3(&axes[1]), vec3(&axes[2])]
                }
                _ => [Vec3::x(), Vec3::y(), Vec3::z()],
            };
            Ok(ElementFrame {
                axes,
                measure: measures[e],
            })
        })
        .collect()
}

/// Arc-length derivative of the P1 field on every edge.
pub fn curve_strain(shape: &DiscreteShape, v: &[Vec3]) -> Result<Vec<Vec3>> {
    require_cells(shape, 1, "curve strain")?;
    shape.require_vertex_values(v)?;
    Ok((0..shape.n_elements())
        .map(|e| {
            let idx = shape.element(e);
            let (_, _, w) = local::edge_strain(&gather::<2>(&shape.vertices, idx), &gather::<2>(v, idx));
            vec3(&w)
        })
        .collect())
}

pub fn triangle_strain_components(shape: &DiscreteShape, v: &[Vec3]) -> Result<Vec<TriangleStrain>> {
    require_cells(shape, 2, "triangle strain")?;
    shape.require_vertex_values(v)?;
    Ok((0..shape.n_elements())
        .map(|e| {
            let idx = shape.element(e);
            let (a, _) = local::triangle_strain(&gather::<3>(&shape.vertices, idx), &gather::<3>(v, idx));
            TriangleStrain {
                a11: a.a11,
                a22: a.a22,
                a12_plus_a21: a.a12 + a.a21,
                a13: a.a13,
                a23: a.a23,
                a12_minus_a21: a.a12 - a.a21,
            }
        })
        .collect())
}

/// Constant Jacobian `dv` of the P1 field on every tet.
pub fn tet_strain(shape: &DiscreteShape, v: &[Vec3]) -> Result<Vec<Matrix3<f64>>> {
    require_cells(shape, 3, "tet strain")?;
    shape.require_vertex_values(v)?;
    Ok((0..shape.n_elements())
        .map(|e| {
            let idx = shape.element(e);
            let (dv, _) = local::tet_dv(&gather::<4>(&shape.vertices, idx), &gather::<4>(v, idx));
            Matrix3::from_fn(|a, b| dv[a][b])
        })
        .collect())
}

/// Extrude a triangle mesh along its vertex normals into a layered tet shell.
///
/// Layer `l` sits at `x + (l / n_layers) δ ν₀(x)`; vertex `i` of layer `l`
/// has index `l · n + i`. Each prism is split into three tets with diagonals
/// chosen from the global vertex order, so neighbouring prisms conform.
pub fn extrude_shell(surface: &DiscreteShape, delta: f64, n_layers: usize) -> Result<DiscreteShape> {
    let Cells::Triangles(tris) = &surface.cells else {
        return Err(Error::input("extrusion requires a trimesh"));
    };
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::input(format!("shell thickness must be positive, got {delta}")));
    }
    if n_layers == 0 {
        return Err(Error::input("at least one layer is required"));
    }
    let normals = surface.vertex_normals()?;
    let m = surface.n_vertices();
    let mut vertices = Vec::with_capacity(m * (n_layers + 1));
    let mut layer_index = Vec::with_capacity(m * (n_layers + 1));
    for l in 0..=n_layers {
        let s = l as f64 / n_layers as f64;
        for (p, n) in surface.vertices.iter().zip(&normals) {
            vertices.push(p + n * (s * delta));
            layer_index.push(s);
        }
    }
    let tol = DEGENERACY * bbox_diagonal(&vertices).powi(3);
    let mut tets = Vec::with_capacity(3 * tris.len() * n_layers);
    let mut transverse = Vec::with_capacity(tets.capacity());
    let mut normal = Vec::with_capacity(tets.capacity());
    for (f, t) in tris.iter().enumerate() {
        let x = &surface.vertices;
        let face_n = (x[t[1]] - x[t[0]]).cross(&(x[t[2]] - x[t[0]])).normalize();
        let mut sorted = *t;
        sorted.sort_unstable();
        // Sorting either preserves or reverses the face orientation.
        let parity = if is_even_rotation(t, &sorted) { 1.0 } else { -1.0 };
        let [a, b, c] = sorted;
        for l in 0..n_layers {
            let lo = |i: usize| l * m + i;
            let hi = |i: usize| (l + 1) * m + i;
            for mut tet in [
                [lo(a), lo(b), lo(c), hi(a)],
                [lo(b), lo(c), hi(a), hi(b)],
                [lo(c), hi(a), hi(b), hi(c)],
            ] {
                let vol = parity * local::tet_signed_volume(&gather::<4>(&vertices, &tet));
                if !(vol > tol) {
                    return Err(Error::geometry(
                        tets.len(),
                        format!("extruded prism of face {f} is inverted; use a smaller thickness than {delta}"),
                    ));
                }
                if parity < 0.0 {
                    tet.swap(0, 1);
                }
                tets.push(tet);
                transverse.push(face_n * delta);
                normal.push(face_n);
            }
        }
    }
    DiscreteShape::tetmesh(vertices, tets)?.with_layers(LayeredStructure {
        transverse,
        layer_index,
        normal,
    })
}

fn is_even_rotation(original: &[usize; 3], sorted: &[usize; 3]) -> bool {
    (0..3).any(|r| (0..3).all(|k| original[(k + r) % 3] == sorted[k]))
}

/// Copy per-vertex surface values to every layer of an extruded shell.
pub fn lift_to_shell(values: &[Vec3], n_layers: usize) -> Vec<Vec3> {
    (0..=n_layers).flat_map(|_| values.iter().copied()).collect()
}

/// Result of moving a shape: the new shape and any degeneracy warnings.
#[derive(Clone, Debug)]
pub struct Advected {
    pub shape: DiscreteShape,
    pub warnings: Vec<String>,
}

/// Move every vertex by its displacement, keeping connectivity.
///
/// Layered structures follow the per-element affine map `A` taking the old
/// element to the new one: `S ↦ A S`, `N ↦ A⁻ᵀ N / |A⁻ᵀ N|`. Degenerate
/// elements after the move are reported as warnings and keep their old
/// layer vectors.
pub fn advect(shape: &DiscreteShape, displacement: &[Vec3]) -> Result<Advected> {
    shape.require_vertex_values(displacement)?;
    let mut vertices: Vec<Vec3> = shape.vertices.iter().zip(displacement).map(|(x, d)| x + d).collect();
    if shape.dim == 2 {
        vertices.iter_mut().for_each(|p| p.z = 0.0);
    }
    let moved = shape.moved(vertices, None);
    let mut warnings = Vec::new();
    let order = shape.cells.order();
    let signed_old = shape.raw_measures();
    let signed_new = moved.raw_measures();
    let tol = DEGENERACY * moved.scale().powi(order as i32);
    let mut bad = vec![false; shape.n_elements()];
    for e in 0..shape.n_elements() {
        let flipped = order == 3 && signed_old[e].signum() != signed_new[e].signum();
        if signed_new[e].abs() <= tol || flipped {
            bad[e] = true;
            warnings.push(format!("element {e} degenerate or inverted after advection"));
        }
    }
    let layered = shape.layered.as_ref().map(|ls| {
        let mut out = ls.clone();
        for e in 0..shape.n_elements() {
            if bad[e] {
                continue;
            }
            let idx = shape.element(e);
            let (s, n) = local::transport_layer(
                &gather::<4>(&shape.vertices, idx),
                &gather::<4>(&moved.vertices, idx),
                &arr(&ls.transverse[e]),
                &arr(&ls.normal[e]),
            );
            out.transverse[e] = vec3(&s);
            out.normal[e] = vec3(&n);
        }
        out
    });
    Ok(Advected {
        shape: DiscreteShape { layered, ..moved },
        warnings,
    })
}

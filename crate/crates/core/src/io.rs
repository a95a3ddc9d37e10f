//! File formats and canonical JSON output.
//!
//! Landmarks and polylines are JSON, triangle meshes Wavefront OBJ, and tet
//! meshes a line-based ASCII format (`v x y z`, `t i j k l`, 0-based).
//! Floats are written with 17 significant digits so every file reads back
//! bit-identically, and JSON object keys are sorted.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::{Error, Result};
use crate::flow::{Controls, ShapePath};
use crate::geometry::{Cells, DiscreteShape, ShapeKind};
use crate::growth::{GrowthField, GrowthFieldData};
use crate::kernels::{KernelConfig, KernelVelocity};
use crate::linalg::Vec3;

/// Float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Canonical;

impl Formatter for Canonical {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::input(format!("json: {e}"))
}

/// Serialize with sorted keys and fixed float formatting.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // Going through `Value` sorts object keys.
    let v = serde_json::to_value(value).map_err(json_err)?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Canonical);
    v.serialize(&mut ser).map_err(json_err)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("json output is utf-8"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_canonical_json(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Shapes

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFormat {
    Json,
    Obj,
    Tet,
}

impl ShapeFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("json") => Ok(ShapeFormat::Json),
            Some("obj") => Ok(ShapeFormat::Obj),
            Some("tet") => Ok(ShapeFormat::Tet),
            _ => Err(io_err(path, "unknown shape format (expected .json, .obj or .tet)")),
        }
    }

    pub fn for_shape(shape: &DiscreteShape) -> Self {
        match shape.kind() {
            ShapeKind::Trimesh => ShapeFormat::Obj,
            ShapeKind::Tetmesh => ShapeFormat::Tet,
            _ => ShapeFormat::Json,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ShapeFormat::Json => "json",
            ShapeFormat::Obj => "obj",
            ShapeFormat::Tet => "tet",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeJson {
    kind: ShapeKind,
    points: Vec<Vec<f64>>,
    #[serde(default)]
    closed: bool,
}

fn point_from(p: &[f64], dim: usize) -> Result<Vec3> {
    if p.len() != dim {
        return Err(Error::input(format!("expected {dim} coordinates per point, got {}", p.len())));
    }
    let mut v = Vec3::zeros();
    for (c, x) in p.iter().enumerate() {
        v[c] = *x;
    }
    Ok(v)
}

fn point_to(p: &Vec3, dim: usize) -> Vec<f64> {
    p.as_slice()[..dim].to_vec()
}

pub fn shape_from_json_str(text: &str) -> Result<DiscreteShape> {
    let s: ShapeJson = serde_json::from_str(text).map_err(json_err)?;
    let dim = match s.kind {
        ShapeKind::Polyline2d => 2,
        ShapeKind::Polyline3d => 3,
        ShapeKind::Landmarks => match s.points.first().map(Vec::len) {
            Some(d @ (2 | 3)) => d,
            Some(d) => return Err(Error::input(format!("landmarks need 2 or 3 coordinates, got {d}"))),
            None => return Err(Error::input("landmark set is empty")),
        },
        other => {
            return Err(Error::input(format!(
                "{} shapes are stored as .obj or .tet files",
                other.name()
            )))
        }
    };
    let pts = s.points.iter().map(|p| point_from(p, dim)).collect::<Result<Vec<_>>>()?;
    if s.kind.is_polyline() {
        DiscreteShape::polyline(pts, dim, s.closed)
    } else {
        if s.closed {
            return Err(Error::input("landmarks cannot be closed"));
        }
        DiscreteShape::landmarks(pts, dim)
    }
}

pub fn shape_to_json_string(shape: &DiscreteShape) -> Result<String> {
    if !matches!(shape.cells(), Cells::None | Cells::Edges(_)) {
        return Err(Error::input(format!("{} shapes cannot be written as json", shape.kind().name())));
    }
    to_canonical_json(&ShapeJson {
        kind: shape.kind(),
        points: shape.vertices().iter().map(|p| point_to(p, shape.dim())).collect(),
        closed: shape.closed(),
    })
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let t = tok.ok_or_else(|| Error::input(format!("line {line}: missing coordinate")))?;
    t.parse::<f64>().map_err(|_| Error::input(format!("line {line}: bad number {t:?}")))
}

fn parse_vertex(rest: &mut std::str::SplitWhitespace<'_>, line: usize) -> Result<Vec3> {
    let x = parse_f64(rest.next(), line)?;
    let y = parse_f64(rest.next(), line)?;
    let z = parse_f64(rest.next(), line)?;
    Ok(Vec3::new(x, y, z))
}

/// Parse triangles from an OBJ file. Faces with more than three vertices are
/// fan-triangulated; texture and normal indices are ignored.
pub fn parse_obj(text: &str) -> Result<DiscreteShape> {
    let mut v = Vec::new();
    let mut faces = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => v.push(parse_vertex(&mut it, line)?),
            Some("f") => {
                let idx = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|_| Error::input(format!("line {line}: bad face index {t:?}")))?;
                        let n = v.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 {
                            return Err(Error::input(format!("line {line}: face index out of range")));
                        }
                        Ok(i as usize)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::input(format!("line {line}: face needs three vertices")));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    DiscreteShape::trimesh(v, faces)
}

pub fn format_obj(shape: &DiscreteShape) -> Result<String> {
    let Cells::Triangles(tris) = shape.cells() else {
        return Err(Error::input("obj output needs a trimesh"));
    };
    let mut s = String::new();
    for p in shape.vertices() {
        s.push_str(&format!("v {} {} {}\n", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)));
    }
    for t in tris {
        s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    Ok(s)
}

pub fn parse_tet(text: &str) -> Result<DiscreteShape> {
    let mut v = Vec::new();
    let mut tets = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => v.push(parse_vertex(&mut it, line)?),
            Some("t") => {
                let mut t = [0usize; 4];
                for slot in &mut t {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::input(format!("line {line}: tet needs four indices")))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| Error::input(format!("line {line}: bad tet index {tok:?}")))?;
                }
                tets.push(t);
            }
            Some(t) if t.starts_with('#') => {}
            None => {}
            Some(other) => return Err(Error::input(format!("line {line}: unknown record {other:?}"))),
        }
    }
    DiscreteShape::tetmesh(v, tets)
}

pub fn format_tet(shape: &DiscreteShape) -> Result<String> {
    let Cells::Tets(tets) = shape.cells() else {
        return Err(Error::input("tet output needs a tetmesh"));
    };
    let mut s = String::new();
    for p in shape.vertices() {
        s.push_str(&format!("v {} {} {}\n", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)));
    }
    for t in tets {
        s.push_str(&format!("t {} {} {} {}\n", t[0], t[1], t[2], t[3]));
    }
    Ok(s)
}

pub fn parse_shape(text: &str, format: ShapeFormat) -> Result<DiscreteShape> {
    match format {
        ShapeFormat::Json => shape_from_json_str(text),
        ShapeFormat::Obj => parse_obj(text),
        ShapeFormat::Tet => parse_tet(text),
    }
}

pub fn format_shape(shape: &DiscreteShape, format: ShapeFormat) -> Result<String> {
    match format {
        ShapeFormat::Json => shape_to_json_string(shape),
        ShapeFormat::Obj => format_obj(shape),
        ShapeFormat::Tet => format_tet(shape),
    }
}

pub fn read_shape(path: &Path) -> Result<DiscreteShape> {
    let format = ShapeFormat::from_path(path)?;
    let text = read_text(path)?;
    parse_shape(&text, format).map_err(|e| match e {
        Error::Input(m) => io_err(path, m),
        other => other,
    })
}

pub fn write_shape(path: &Path, shape: &DiscreteShape) -> Result<()> {
    write_text(path, &format_shape(shape, ShapeFormat::from_path(path)?)?)
}

// ---------------------------------------------------------------------------
// Velocities, growth, controls, trajectories

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityFile {
    pub kernel: KernelConfig,
    pub dim: usize,
    pub control_points: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<f64>>,
}

impl VelocityFile {
    pub fn from_velocity(v: &KernelVelocity) -> Self {
        let d = v.spec.dim;
        VelocityFile {
            kernel: v.spec.config(),
            dim: d,
            control_points: v.control_points.iter().map(|p| point_to(p, d)).collect(),
            coefficients: v.coefficients.iter().map(|p| point_to(p, d)).collect(),
        }
    }

    pub fn to_velocity(&self) -> Result<KernelVelocity> {
        let spec = self.kernel.with_dim(self.dim)?;
        let pts = self.control_points.iter().map(|p| point_from(p, self.dim)).collect::<Result<_>>()?;
        let coef = self.coefficients.iter().map(|p| point_from(p, self.dim)).collect::<Result<_>>()?;
        KernelVelocity::new(spec, pts, coef)
    }
}

pub fn read_velocity(path: &Path) -> Result<KernelVelocity> {
    read_json::<VelocityFile>(path)?.to_velocity()
}

pub fn write_velocity(path: &Path, v: &KernelVelocity) -> Result<()> {
    write_json(path, &VelocityFile::from_velocity(v))
}

pub fn read_growth(path: &Path, n_elements: usize) -> Result<GrowthField> {
    let data: GrowthFieldData = read_json(path)?;
    GrowthField::from_data(&data, n_elements)
}

pub fn write_growth(path: &Path, g: &GrowthField) -> Result<()> {
    write_json(path, &g.to_data())
}

/// Per-step controls; `alpha[k][i]` has `dim` components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsFile {
    pub dim: usize,
    pub alpha: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub growth: Vec<Vec<f64>>,
}

impl ControlsFile {
    pub fn from_controls(c: &Controls, dim: usize) -> Self {
        ControlsFile {
            dim,
            alpha: c.alpha.iter().map(|a| a.iter().map(|p| point_to(p, dim)).collect()).collect(),
            growth: c.growth.clone(),
        }
    }

    pub fn to_controls(&self) -> Result<Controls> {
        let alpha = self
            .alpha
            .iter()
            .map(|a| a.iter().map(|p| point_from(p, self.dim)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let growth = if self.growth.is_empty() {
            vec![Vec::new(); alpha.len()]
        } else {
            self.growth.clone()
        };
        if growth.len() != alpha.len() {
            return Err(Error::input("growth controls and velocity controls differ in step count"));
        }
        Ok(Controls { alpha, growth })
    }
}

/// `{"times": [...], "shapes": [[point, ...], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub shapes: Vec<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn from_path(path: &ShapePath) -> Self {
        let d = path.shapes[0].dim();
        Trajectory {
            times: path.times(),
            shapes: path
                .shapes
                .iter()
                .map(|s| s.vertices().iter().map(|p| point_to(p, d)).collect())
                .collect(),
        }
    }

    pub fn from_points(times: Vec<f64>, points: &[Vec<Vec3>], dim: usize) -> Self {
        Trajectory {
            times,
            shapes: points.iter().map(|s| s.iter().map(|p| point_to(p, dim)).collect()).collect(),
        }
    }
}

/// CSV with columns `step,t,energy,rkhs,elastic`; `t` is the step start time.
pub fn energies_csv(path: &ShapePath) -> String {
    let mut s = String::from("step,t,energy,rkhs,elastic\n");
    for k in 0..path.n_steps() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            k,
            fmt_f64(k as f64 * path.dt),
            fmt_f64(path.step_energies[k]),
            fmt_f64(path.rkhs_energies[k]),
            fmt_f64(path.elastic_energies[k])
        ));
    }
    s
}

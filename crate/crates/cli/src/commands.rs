//! Command implementations. Each returns the process exit code on success.

use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::Serialize;
use shapeflow::flow::{flow_map, integrate};
use shapeflow::growth::{growth_norm_sq, reduced_elastic_norm_sq};
use shapeflow::hybrid::hybrid_norm_sq;
use shapeflow::io::{
    energies_csv, fmt_f64, read_growth, read_json, read_shape, read_velocity, to_canonical_json, write_json,
    write_shape, write_text, write_velocity, ControlsFile, ShapeFormat, Trajectory,
};
use shapeflow::kernels::{eval_velocity, rkhs_norm_sq};
use shapeflow::matching::{solve, Report};
use shapeflow::{
    elastic, DiscreteShape, ElasticModel, FidelitySpec, HybridMetric, MatchProblem, RunningCost, Scheme, ShapeKind,
    ShapePath, Vec3,
};

use crate::config::{GridConfig, RunConfig, TestField};
use crate::CliError;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.output
        .dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output.dir".into()))
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("missing required field `{name}`")))
}

fn metric_for(cfg: &RunConfig, dim: usize) -> Result<HybridMetric, CliError> {
    Ok(required(&cfg.metric, "metric")?.build(dim)?)
}

fn write_shape_series(dir: &Path, shapes: &[DiscreteShape], format: ShapeFormat) -> Result<(), CliError> {
    for (k, s) in shapes.iter().enumerate() {
        write_shape(&dir.join(format!("shape_{k:03}.{}", format.extension())), s)?;
    }
    Ok(())
}

fn write_path_outputs(cfg: &RunConfig, dir: &Path, path: &ShapePath, format: ShapeFormat) -> Result<(), CliError> {
    write_json(&dir.join("trajectory.json"), &Trajectory::from_path(path))?;
    write_text(&dir.join("energies.csv"), &energies_csv(path))?;
    if cfg.output.shape_files {
        write_shape_series(&dir.join("shapes"), &path.shapes, format)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MatchReport<'a> {
    #[serde(flatten)]
    report: &'a Report,
    seed: u64,
    n_steps: usize,
    scheme: Scheme,
    shape_kind: &'static str,
}

pub fn cmd_match(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate(&["source", "target", "metric"])?;
    let source_path = required(&cfg.source, "source")?;
    let source = read_shape(source_path)?;
    let target = read_shape(required(&cfg.target, "target")?)?;
    let metric = metric_for(cfg, source.dim())?;
    let fidelity = cfg.fidelity.unwrap_or_else(FidelitySpec::landmark);
    let mut problem = MatchProblem::new(source, target, metric, fidelity);
    problem.growth = cfg.growth.mode();
    problem.fidelity_weight = cfg.fidelity_weight;
    problem.n_steps = cfg.n_steps;
    problem.scheme = cfg.scheme;
    problem.optimizer = cfg.optimizer;
    problem.validate()?;
    let dir = out_dir(cfg)?;
    info!(
        "match: {} vertices, {} steps, {:?}",
        problem.source.n_vertices(),
        problem.n_steps,
        problem.scheme
    );

    let (path, controls, report) = solve(&problem)?;
    info!(
        "{} after {} iterations: objective {}, fidelity {} -> {}",
        report.termination,
        report.iterations,
        fmt_f64(report.objective),
        fmt_f64(report.initial_fidelity),
        fmt_f64(report.final_fidelity)
    );
    for w in &report.warnings {
        log::warn!("{w}");
    }
    debug!("objective history: {:?}", report.history);

    write_path_outputs(cfg, &dir, &path, ShapeFormat::from_path(source_path)?)?;
    write_json(&dir.join("controls.json"), &ControlsFile::from_controls(&controls, problem.source.dim()))?;
    write_json(
        &dir.join("report.json"),
        &MatchReport {
            report: &report,
            seed: cfg.seed,
            n_steps: problem.n_steps,
            scheme: problem.scheme,
            shape_kind: problem.source.kind().name(),
        },
    )?;
    Ok(if report.converged { 0 } else { 2 })
}

/// Lines of an axis-aligned lattice, each sampled at `samples` points.
pub fn grid_lines(g: &GridConfig) -> Vec<Vec<Vec3>> {
    let d = g.min.len();
    let coord = |axis: usize, i: usize, n: usize| g.min[axis] + (g.max[axis] - g.min[axis]) * i as f64 / (n - 1) as f64;
    let mut lines = Vec::new();
    for axis in 0..d {
        let others: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
        let counts: Vec<usize> = others.iter().map(|&a| g.lines[a]).collect();
        let total: usize = counts.iter().product();
        for flat in 0..total {
            let mut base = Vec3::zeros();
            let mut rem = flat;
            for (&a, &n) in others.iter().zip(&counts) {
                base[a] = coord(a, rem % n, n);
                rem /= n;
            }
            lines.push(
                (0..g.samples)
                    .map(|s| {
                        let mut p = base;
                        p[axis] = coord(axis, s, g.samples);
                        p
                    })
                    .collect(),
            );
        }
    }
    lines
}

/// Deformation grid: `frames[t][line][sample]`.
#[derive(Serialize)]
struct GridFile {
    times: Vec<f64>,
    frames: Vec<Vec<Vec<Vec<f64>>>>,
}

pub fn cmd_rollout(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate(&["source", "metric", "controls"])?;
    let source_path = required(&cfg.source, "source")?;
    let source = read_shape(source_path)?;
    let metric = metric_for(cfg, source.dim())?;
    let file: ControlsFile = read_json(required(&cfg.controls, "controls")?)?;
    if file.dim != source.dim() {
        return Err(CliError::Config(format!(
            "controls have dimension {} but the source has dimension {}",
            file.dim,
            source.dim()
        )));
    }
    let controls = file.to_controls()?;
    let growth = cfg.growth.mode();
    let glen = source.n_elements() * growth.control_dof();
    for (k, (a, g)) in controls.alpha.iter().zip(&controls.growth).enumerate() {
        if a.len() != source.n_vertices() {
            return Err(CliError::Config(format!(
                "controls step {k} has {} momenta but the source has {} vertices",
                a.len(),
                source.n_vertices()
            )));
        }
        if g.len() != glen {
            return Err(CliError::Config(format!(
                "controls step {k} has {} growth parameters, expected {glen}",
                g.len()
            )));
        }
    }
    if controls.n_steps() == 0 {
        return Err(CliError::Config("controls contain no time steps".into()));
    }
    let dir = out_dir(cfg)?;
    let cost = RunningCost::new(metric, growth);
    let path = integrate(&source, &controls, &cost, cfg.scheme)?;
    info!("rollout: {} steps, energy {}", path.n_steps(), fmt_f64(path.total_energy()));
    write_path_outputs(cfg, &dir, &path, ShapeFormat::from_path(source_path)?)?;

    let d = source.dim();
    if let Some(t) = &cfg.tracers {
        let tracers = read_shape(t)?;
        if tracers.dim() != d {
            return Err(CliError::Config("tracers and source differ in dimension".into()));
        }
        let traj = flow_map(&path, tracers.vertices())?;
        write_json(&dir.join("tracers.json"), &Trajectory::from_points(path.times(), &traj, d))?;
    }
    if let Some(g) = &cfg.grid {
        if g.min.len() != d {
            return Err(CliError::Config(format!("grid must have {d} axes to match the source")));
        }
        let lines = grid_lines(g);
        let per_line = g.samples;
        let flat: Vec<Vec3> = lines.iter().flatten().copied().collect();
        let traj = flow_map(&path, &flat)?;
        let frames = traj
            .iter()
            .map(|pts| {
                pts.chunks(per_line)
                    .map(|line| line.iter().map(|p| p.iter().take(d).copied().collect()).collect())
                    .collect()
            })
            .collect();
        write_json(
            &dir.join("grid.json"),
            &GridFile {
                times: path.times(),
                frames,
            },
        )?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct EnergyRecord {
    kappa: f64,
    elastic_model: &'static str,
    /// `‖v‖²_V`.
    rkhs_norm_sq: f64,
    elastic_norm_sq: f64,
    hybrid_norm_sq: f64,
    reduced_elastic_norm_sq: Option<f64>,
    growth_norm_sq: Option<f64>,
}

pub fn cmd_energy(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate(&["shape", "velocity"])?;
    let shape = read_shape(required(&cfg.shape, "shape")?)?;
    let v = read_velocity(required(&cfg.velocity, "velocity")?)?;
    let metric = match &cfg.metric {
        Some(m) => m.build(shape.dim())?,
        None => HybridMetric::lddmm(1.0, v.spec)?,
    };
    if v.spec != metric.kernel {
        return Err(CliError::Config("velocity kernel differs from the metric kernel".into()));
    }
    metric.check_compatible(&shape)?;
    let at = eval_velocity(&v, shape.vertices())?;
    let model = &metric.elastic;
    let el = elastic::elastic_norm_sq(&shape, model, &at)?;
    let volumetric = shape.kind() == ShapeKind::Tetmesh && !model.is_none();
    let reduced = if volumetric {
        Some(reduced_elastic_norm_sq(&shape, model, &at, cfg.growth.set)?.0)
    } else {
        None
    };
    let growth = match &cfg.growth_field {
        Some(p) => {
            let g = read_growth(p, shape.n_elements())?;
            Some(growth_norm_sq(&shape, metric.kappa, &metric.kernel, model, &g)?.value)
        }
        None => None,
    };
    let record = EnergyRecord {
        kappa: metric.kappa,
        elastic_model: model.name(),
        rkhs_norm_sq: rkhs_norm_sq(&v),
        elastic_norm_sq: el,
        hybrid_norm_sq: hybrid_norm_sq(&metric, &shape, &v)?,
        reduced_elastic_norm_sq: reduced,
        growth_norm_sq: growth,
    };
    print!("{}", to_canonical_json(&record)?);
    if let Some(dir) = &cfg.output.dir {
        write_json(&dir.join("energy.json"), &record)?;
    }
    Ok(0)
}

fn shell_field(field: &TestField, surface: &DiscreteShape) -> Result<Vec<Vec3>, CliError> {
    match field {
        TestField::Affine { matrix, offset } => {
            let a = nalgebra::Matrix3::from_fn(|i, j| matrix[i][j]);
            let b = Vec3::from(*offset);
            Ok(surface.vertices().iter().map(|p| a * p + b).collect())
        }
        TestField::Velocity { path } => Ok(eval_velocity(&read_velocity(path)?, surface.vertices())?),
    }
}

pub fn cmd_shell_limit(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate(&["surface", "shell"])?;
    let surface = read_shape(required(&cfg.surface, "surface")?)?;
    let sc = required(&cfg.shell, "shell")?;
    let v0 = shell_field(&sc.field, &surface)?;
    let rows = elastic::shell_limit(&surface, sc.lambda_tan, sc.mu_tan, sc.mu_ang, &v0, &sc.deltas, sc.n_layers)
        .map_err(|e| match e {
            shapeflow::Error::Geometry { .. } => CliError::Config(format!(
                "{e}; the largest thickness {} is too large for this surface, try a smaller one",
                sc.deltas[0]
            )),
            other => other.into(),
        })?;
    let mut csv = String::from("delta,volumetric,surface,rel_err\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.delta),
            fmt_f64(r.volumetric),
            fmt_f64(r.surface),
            fmt_f64(r.rel_err)
        ));
        info!("delta {:.3e}: rel. err {:.3e}", r.delta, r.rel_err);
    }
    print!("{csv}");
    if let Some(dir) = &cfg.output.dir {
        write_text(&dir.join("shell_limit.csv"), &csv)?;
        write_json(&dir.join("shell_limit.json"), &rows)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct GrowthNormRecord {
    value: f64,
    beta_gg: f64,
    yank_pairing: f64,
    rkhs: f64,
}

pub fn cmd_growth_norm(cfg: &RunConfig) -> Result<i32, CliError> {
    cfg.validate(&["shape", "growth_field", "metric"])?;
    let shape = read_shape(required(&cfg.shape, "shape")?)?;
    let metric = metric_for(cfg, shape.dim())?;
    if matches!(metric.elastic, ElasticModel::None) {
        return Err(CliError::Config("growth-norm needs an elastic model".into()));
    }
    let g = read_growth(required(&cfg.growth_field, "growth_field")?, shape.n_elements())?;
    let gn = growth_norm_sq(&shape, metric.kappa, &metric.kernel, &metric.elastic, &g)?;
    let record = GrowthNormRecord {
        value: gn.value,
        beta_gg: gn.beta_gg,
        yank_pairing: gn.yank_pairing,
        rkhs: gn.rkhs,
    };
    print!("{}", to_canonical_json(&record)?);
    if let Some(dir) = &cfg.output.dir {
        write_json(&dir.join("growth_norm.json"), &record)?;
        write_velocity(&dir.join("growth_velocity.json"), &gn.velocity)?;
    }
    Ok(0)
}

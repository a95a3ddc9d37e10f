//! Run configuration shared by all commands.
//!
//! Configs are JSON (canonical) or TOML, chosen by the file extension.
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapeflow::hybrid::HybridConfig;
use shapeflow::matching::OptimizerSettings;
use shapeflow::{AdmissibleSet, FidelitySpec, GrowthMode, Scheme};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthModeName {
    #[default]
    Off,
    Reduced,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthConfig {
    #[serde(default)]
    pub mode: GrowthModeName,
    #[serde(default = "default_set")]
    pub set: AdmissibleSet,
}

fn default_set() -> AdmissibleSet {
    AdmissibleSet::Scalar
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            mode: GrowthModeName::Off,
            set: default_set(),
        }
    }
}

impl GrowthConfig {
    pub fn mode(&self) -> GrowthMode {
        match self.mode {
            GrowthModeName::Off => GrowthMode::Off,
            GrowthModeName::Reduced => GrowthMode::Reduced(self.set),
            GrowthModeName::Joint => GrowthMode::Joint(self.set),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Write one shape file per time point, in the source format.
    #[serde(default = "default_true")]
    pub shape_files: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            shape_files: true,
        }
    }
}

/// Axis-aligned lattice of deformation-grid lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Number of grid lines per axis.
    pub lines: Vec<usize>,
    /// Sample points along each line.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    50
}

/// Test velocity for the thin-shell comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestField {
    /// `v(x) = A x + b`.
    Affine { matrix: [[f64; 3]; 3], offset: [f64; 3] },
    /// Kernel velocity file evaluated at the surface vertices.
    Velocity { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub lambda_tan: f64,
    pub mu_tan: f64,
    pub mu_ang: f64,
    pub deltas: Vec<f64>,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    pub field: TestField,
}

fn default_layers() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub metric: Option<HybridConfig>,
    #[serde(default)]
    pub growth: GrowthConfig,
    pub fidelity: Option<FidelitySpec>,
    pub fidelity_weight: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Recorded in reports; the computations are deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    pub verbosity: Option<String>,

    /// Stored controls for `rollout`.
    pub controls: Option<PathBuf>,
    /// Landmark shape file of tracer points for `rollout`.
    pub tracers: Option<PathBuf>,
    pub grid: Option<GridConfig>,

    /// Shape, velocity and growth files for `energy` and `growth-norm`.
    pub shape: Option<PathBuf>,
    pub velocity: Option<PathBuf>,
    pub growth_field: Option<PathBuf>,

    /// Surface and settings for `shell-limit`.
    pub surface: Option<PathBuf>,
    pub shell: Option<ShellConfig>,
}

fn default_steps() -> usize {
    shapeflow::matching::DEFAULT_STEPS
}

fn default_scheme() -> Scheme {
    Scheme::Euler
}

impl RunConfig {
    pub fn parse(text: &str, toml_format: bool) -> Result<Self, CliError> {
        if toml_format {
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
        } else {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
        }
    }

    /// Read a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut cfg = Self::parse(&text, is_toml)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.source);
        fix(&mut self.target);
        fix(&mut self.controls);
        fix(&mut self.tracers);
        fix(&mut self.shape);
        fix(&mut self.velocity);
        fix(&mut self.growth_field);
        fix(&mut self.surface);
        fix(&mut self.output.dir);
        if let Some(ShellConfig {
            field: TestField::Velocity { path },
            ..
        }) = &mut self.shell
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Every referenced input file, for the existence check.
    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut out = Vec::new();
        let named = [
            ("source", &self.source),
            ("target", &self.target),
            ("controls", &self.controls),
            ("tracers", &self.tracers),
            ("shape", &self.shape),
            ("velocity", &self.velocity),
            ("growth_field", &self.growth_field),
            ("surface", &self.surface),
        ];
        for (name, p) in named {
            if let Some(p) = p {
                out.push((name, p.as_path()));
            }
        }
        if let Some(ShellConfig {
            field: TestField::Velocity { path },
            ..
        }) = &self.shell
        {
            out.push(("shell.field.path", path.as_path()));
        }
        out
    }

    /// Schema checks that do not depend on file contents.
    pub fn validate(&self, required: &[&str]) -> Result<(), CliError> {
        let mut problems = Vec::new();
        for name in required {
            let present = match *name {
                "source" => self.source.is_some(),
                "target" => self.target.is_some(),
                "metric" => self.metric.is_some(),
                "controls" => self.controls.is_some(),
                "shape" => self.shape.is_some(),
                "velocity" => self.velocity.is_some(),
                "growth_field" => self.growth_field.is_some(),
                "surface" => self.surface.is_some(),
                "shell" => self.shell.is_some(),
                other => unreachable!("unknown config field {other}"),
            };
            if !present {
                problems.push(format!("missing required field `{name}`"));
            }
        }
        for (name, p) in self.inputs() {
            if !p.is_file() {
                problems.push(format!("{name}: file not found: {}", p.display()));
            }
        }
        if self.n_steps == 0 {
            problems.push("n_steps must be at least 1".into());
        }
        if let Some(w) = self.fidelity_weight {
            if !(w > 0.0 && w.is_finite()) {
                problems.push(format!("fidelity_weight must be positive, got {w}"));
            }
        }
        if let Some(v) = &self.verbosity {
            if v != "info" && v != "debug" {
                problems.push(format!("verbosity must be `info` or `debug`, got `{v}`"));
            }
        }
        if let Some(g) = &self.grid {
            let d = g.min.len();
            if !(d == 2 || d == 3) || g.max.len() != d || g.lines.len() != d {
                problems.push("grid: min, max and lines must all have 2 or 3 entries".into());
            } else if g.lines.iter().any(|&n| n < 2) || g.samples < 2 {
                problems.push("grid: need at least 2 lines per axis and 2 samples per line".into());
            } else if g.min.iter().zip(&g.max).any(|(a, b)| !(a < b)) {
                problems.push("grid: min must be below max on every axis".into());
            }
        }
        if let Some(s) = &self.shell {
            if s.deltas.is_empty() {
                problems.push("shell.deltas must not be empty".into());
            }
            if s.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                problems.push("shell.deltas must be positive".into());
            }
            if s.deltas.windows(2).any(|w| !(w[1] < w[0])) {
                problems.push("shell.deltas must be strictly decreasing".into());
            }
            if s.n_layers == 0 {
                problems.push("shell.n_layers must be at least 1".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }
}

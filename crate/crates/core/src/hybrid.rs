//! Hybrid norm `κ‖v‖²_V + ⟦v⟧²` combining the RKHS norm with an elastic energy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elastic::{elastic_norm_sq, elastic_quadratic_form, ElasticModel};
use crate::error::{Error, Result};
use crate::geometry::DiscreteShape;
use crate::kernels::{eval_velocity, gram_matrix, rkhs_norm_sq, KernelConfig, KernelSpec, KernelVelocity};
use crate::linalg::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct HybridMetric {
    pub kappa: f64,
    pub kernel: KernelSpec,
    pub elastic: ElasticModel,
}

/// Serialized form, with the kernel dimension taken from the shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub elastic: ElasticModel,
}

fn default_kappa() -> f64 {
    1.0
}

impl HybridConfig {
    pub fn build(&self, dim: usize) -> Result<HybridMetric> {
        HybridMetric::new(self.kappa, self.kernel.with_dim(dim)?, self.elastic.clone())
    }
}

impl HybridMetric {
    pub fn new(kappa: f64, kernel: KernelSpec, elastic: ElasticModel) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::input(format!("kappa must be positive, got {kappa}")));
        }
        elastic.validate()?;
        Ok(HybridMetric { kappa, kernel, elastic })
    }

    /// Pure LDDMM metric `κ‖v‖²_V`.
    pub fn lddmm(kappa: f64, kernel: KernelSpec) -> Result<Self> {
        Self::new(kappa, kernel, ElasticModel::None)
    }

    pub fn config(&self) -> HybridConfig {
        HybridConfig {
            kappa: self.kappa,
            kernel: self.kernel.config(),
            elastic: self.elastic.clone(),
        }
    }

    pub fn check_compatible(&self, shape: &DiscreteShape) -> Result<()> {
        if self.kernel.dim != shape.dim() {
            return Err(Error::config(format!(
                "kernel dimension {} differs from shape dimension {}",
                self.kernel.dim,
                shape.dim()
            )));
        }
        self.elastic.check_compatible(shape)
    }
}

pub fn hybrid_norm_sq(metric: &HybridMetric, shape: &DiscreteShape, v: &KernelVelocity) -> Result<f64> {
    metric.check_compatible(shape)?;
    if v.spec != metric.kernel {
        return Err(Error::config("velocity kernel differs from the metric kernel"));
    }
    let rkhs = metric.kappa * rkhs_norm_sq(v);
    if metric.elastic.is_none() {
        return Ok(rkhs);
    }
    let at_vertices = eval_velocity(v, shape.vertices())?;
    Ok(rkhs + elastic_norm_sq(shape, &metric.elastic, &at_vertices)?)
}

/// `H = κ G + E` in flattened kernel coordinates on `control_points`.
pub fn hybrid_quadratic_form(metric: &HybridMetric, shape: &DiscreteShape, control_points: &[Vec3]) -> Result<DMatrix<f64>> {
    metric.check_compatible(shape)?;
    let g = gram_matrix(&metric.kernel, control_points)? * metric.kappa;
    if metric.elastic.is_none() {
        return Ok(g);
    }
    Ok(g + elastic_quadratic_form(shape, &metric.elastic, &metric.kernel, control_points)?)
}

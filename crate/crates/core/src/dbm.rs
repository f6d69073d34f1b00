//! Deformation-based morphometry: Jacobian matrices of `phi = x + u`, their
//! log-determinants, and separable Gaussian smoothing on the template grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DeformationField, GridGeometry, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbmConfig {
    pub sigma_mm: f64,
    pub max_nonpositive_fraction: f64,
    pub clamp_epsilon: Option<f64>,
}

impl Default for DbmConfig {
    fn default() -> Self {
        Self {
            sigma_mm: 1.0,
            max_nonpositive_fraction: 0.0,
            clamp_epsilon: None,
        }
    }
}

impl DbmConfig {
    pub fn with_sigma(sigma_mm: f64) -> Self {
        Self {
            sigma_mm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_mm.is_finite() && self.sigma_mm >= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma_mm must be >= 0, got {}", self.sigma_mm)));
        }
        if !(0.0..=1.0).contains(&self.max_nonpositive_fraction) {
            return Err(Error::InvalidConfig(format!(
                "max_nonpositive_fraction must lie in [0, 1], got {}",
                self.max_nonpositive_fraction
            )));
        }
        if let Some(eps) = self.clamp_epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidConfig(format!("clamp_epsilon must be > 0, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Per-voxel 3x3 Jacobian, stored as nine planar channels `J[a][b]` at `3a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    geometry: GridGeometry,
    entries: [Vec<f64>; 9],
}

impl JacobianField {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// `dphi_a / dx_b` over the grid (0-based `a`, `b`).
    pub fn entry(&self, a: usize, b: usize) -> &[f64] {
        &self.entries[3 * a + b]
    }

    pub fn matrix_at(&self, idx: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = self.entries[3 * a + b][idx];
            }
        }
        m
    }

    pub fn determinant(&self) -> Vec<f64> {
        (0..self.geometry.len())
            .into_par_iter()
            .map(|idx| det3(&self.matrix_at(idx)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub nonpositive_voxels: usize,
    #[serde(rename = "min_J")]
    pub min_j: f64,
    #[serde(rename = "max_J")]
    pub max_j: f64,
    #[serde(rename = "mean_lJ")]
    pub mean_lj: f64,
}

#[inline]
pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Derivative of `data` along `axis` at `idx`, in physical units.
/// Central differences in the interior, one-sided on the two boundary faces.
#[inline]
fn axis_derivative(data: &[f64], geometry: &GridGeometry, idx: usize, axis: usize) -> f64 {
    let dims = geometry.dims();
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let pos = geometry.coords(idx)[axis];
    let n = dims[axis];
    let h = geometry.spacing()[axis];
    if pos == 0 {
        (data[idx + stride] - data[idx]) / h
    } else if pos + 1 == n {
        (data[idx] - data[idx - stride]) / h
    } else {
        (data[idx + stride] - data[idx - stride]) / (2.0 * h)
    }
}

/// `J(x) = I + grad u(x)` with derivatives taken in mm.
pub fn jacobian(field: &DeformationField) -> Result<JacobianField> {
    let geometry = *field.geometry();
    let dims = geometry.dims();
    if dims.iter().any(|&d| d < 3) {
        return Err(Error::GridTooSmall(dims));
    }
    let entries: [Vec<f64>; 9] = std::array::from_fn(|e| {
        let (a, b) = (e / 3, e % 3);
        let u = field.channel(a);
        let diag = if a == b { 1.0 } else { 0.0 };
        (0..geometry.len())
            .into_par_iter()
            .map(|idx| diag + axis_derivative(u, &geometry, idx, b))
            .collect()
    });
    Ok(JacobianField { geometry, entries })
}

/// Voxelwise `log det J`. Non-positive determinants are an error unless
/// clamping is enabled and their fraction stays within tolerance.
pub fn log_jacobian(jac: &JacobianField, cfg: &DbmConfig) -> Result<(ScalarVolume, JacobianReport)> {
    cfg.validate()?;
    let dets = jac.determinant();
    if dets.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFiniteData);
    }
    let n = dets.len();
    let nonpositive = dets.iter().filter(|&&d| d <= 0.0).count();
    let fraction = nonpositive as f64 / n as f64;
    if nonpositive > 0 && (cfg.clamp_epsilon.is_none() || fraction > cfg.max_nonpositive_fraction) {
        return Err(Error::NonDiffeomorphicField {
            count: nonpositive,
            fraction,
        });
    }
    let min_j = dets.iter().copied().fold(f64::INFINITY, f64::min);
    let max_j = dets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = cfg.clamp_epsilon.unwrap_or(0.0);
    let lj: Vec<f64> = dets
        .iter()
        .map(|&d| if d <= 0.0 { floor.ln() } else { d.ln() })
        .collect();
    let mean_lj = lj.iter().sum::<f64>() / n as f64;
    let report = JacobianReport {
        nonpositive_voxels: nonpositive,
        min_j,
        max_j,
        mean_lj,
    };
    Ok((ScalarVolume::new(*jac.geometry(), lj)?, report))
}

/// Normalized discrete Gaussian truncated at `ceil(3 sigma)` voxels.
pub fn gaussian_kernel(sigma_voxels: f64) -> Vec<f64> {
    if sigma_voxels <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma_voxels).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma_voxels * sigma_voxels)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    kernel
}

fn convolve_axis(data: &[f64], geometry: &GridGeometry, axis: usize, kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return data.to_vec();
    }
    let dims = geometry.dims();
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let n = dims[axis] as isize;
    let radius = (kernel.len() / 2) as isize;
    (0..data.len())
        .into_par_iter()
        .map(|idx| {
            let pos = geometry.coords(idx)[axis] as isize;
            let base = idx as isize - pos * stride as isize;
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let p = (pos + t as isize - radius).clamp(0, n - 1);
                acc += kv * data[(base + p * stride as isize) as usize];
            }
            acc
        })
        .collect()
}

/// Separable Gaussian smoothing with replicate-edge boundaries.
pub fn gaussian_smooth(vol: &ScalarVolume, cfg: &DbmConfig) -> Result<ScalarVolume> {
    cfg.validate()?;
    if cfg.sigma_mm == 0.0 {
        return Ok(vol.clone());
    }
    let geometry = *vol.geometry();
    let mut data = vol.data().to_vec();
    for axis in 0..3 {
        let kernel = gaussian_kernel(cfg.sigma_mm / geometry.spacing()[axis]);
        data = convolve_axis(&data, &geometry, axis, &kernel);
    }
    ScalarVolume::new(geometry, data)
}

/// Smoothed log-Jacobian map. The report's `mean_lJ` is the mean of the
/// smoothed output.
pub fn dbm_pipeline(field: &DeformationField, cfg: &DbmConfig) -> Result<(ScalarVolume, JacobianReport)> {
    cfg.validate()?;
    let jac = jacobian(field)?;
    let (lj, mut report) = log_jacobian(&jac, cfg)?;
    let smoothed = gaussian_smooth(&lj, cfg)?;
    report.mean_lj = smoothed.mean();
    Ok((smoothed, report))
}

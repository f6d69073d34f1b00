//! Patient-specific regional weighting.
//!
//! A clinical embedding `t` is mapped by a two-layer tanh MLP to per-region
//! offsets `delta`, which are combined with fixed prior weights `p` into one
//! sigmoid gate per region: `w_r = sigmoid(alpha * p_r + beta * delta_r)`.
//! The gates are rasterized onto the atlas as a piecewise-constant weight map.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::atlas::RegionMasks;
use crate::clinical::ClinicalEmbedding;
use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorWeights {
    p: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    m: usize,
    weights: Vec<f64>,
}

impl PriorWeights {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidConfig("prior weights are empty".into()));
        }
        if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidConfig(format!("prior weights must be positive, found {bad}")));
        }
        Ok(Self { p })
    }

    pub fn uniform(m: usize) -> Self {
        Self { p: vec![1.0; m] }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PriorFile = serde_json::from_str(&text).map_err(|e| Error::parse("prior file", path, e))?;
        if file.weights.len() != file.m {
            return Err(Error::parse(
                "prior file",
                path,
                format!("m = {} but {} weights given", file.m, file.weights.len()),
            ));
        }
        Self::new(file.weights).map_err(|e| Error::parse("prior file", path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&PriorFile {
            m: self.p.len(),
            weights: self.p.clone(),
        })
        .expect("prior serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.p {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha and beta must be positive, got {} and {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Which terms of the gate are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// No weighting: `W` is the in-brain indicator.
    Off,
    PriorOnly,
    PatientOnly,
    Full,
}

impl GateMode {
    pub fn uses_prior(self) -> bool {
        matches!(self, GateMode::PriorOnly | GateMode::Full)
    }

    pub fn uses_patient(self) -> bool {
        matches!(self, GateMode::PatientOnly | GateMode::Full)
    }

    pub fn from_flags(prior: bool, patient: bool) -> Self {
        match (prior, patient) {
            (false, false) => GateMode::Off,
            (true, false) => GateMode::PriorOnly,
            (false, true) => GateMode::PatientOnly,
            (true, true) => GateMode::Full,
        }
    }
}

/// Two affine layers with a tanh hidden layer. Matrices are row-major:
/// `w1` is `h x d`, `w2` is `m x h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub d: usize,
    pub h: usize,
    pub m: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, h: usize, m: usize) -> Self {
        Self {
            d,
            h,
            m,
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; m * h],
            b2: vec![0.0; m],
        }
    }

    /// Normal init: `w1 ~ N(0, 1)`, which gives unit-variance pre-activations
    /// for unit-norm embeddings, `w2 ~ N(0, out_scale^2 / h)`, zero biases.
    pub fn init<R: Rng>(d: usize, h: usize, m: usize, out_scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(d, h, m);
        let n1 = Normal::new(0.0, 1.0).unwrap();
        let n2 = Normal::new(0.0, out_scale / (h as f64).sqrt()).unwrap();
        p.w1.iter_mut().for_each(|v| *v = n1.sample(rng));
        p.w2.iter_mut().for_each(|v| *v = n2.sample(rng));
        p
    }

    pub fn check_shapes(&self) -> Result<()> {
        let ok = self.w1.len() == self.h * self.d
            && self.b1.len() == self.h
            && self.w2.len() == self.m * self.h
            && self.b2.len() == self.m;
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "MLP buffers inconsistent with d={}, h={}, m={}",
                self.d, self.h, self.m
            )));
        }
        Ok(())
    }

    /// Parameter buffers in a fixed order: w1, b1, w2, b2.
    pub fn buffers(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Intermediate values of one MLP evaluation needed for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    t: Vec<f64>,
    hidden: Vec<f64>,
}

pub fn offsets(t: &ClinicalEmbedding, mlp: &MlpParams) -> Result<Vec<f64>> {
    offsets_cached(&t.vector, mlp).map(|(delta, _)| delta)
}

pub(crate) fn offsets_cached(t: &[f64], mlp: &MlpParams) -> Result<(Vec<f64>, MlpCache)> {
    mlp.check_shapes()?;
    if t.len() != mlp.d {
        return Err(Error::DimensionMismatch(format!(
            "embedding has {} entries, MLP expects {}",
            t.len(),
            mlp.d
        )));
    }
    let hidden: Vec<f64> = (0..mlp.h)
        .map(|i| {
            let row = &mlp.w1[i * mlp.d..(i + 1) * mlp.d];
            (row.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() + mlp.b1[i]).tanh()
        })
        .collect();
    let delta = (0..mlp.m)
        .map(|r| {
            let row = &mlp.w2[r * mlp.h..(r + 1) * mlp.h];
            row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + mlp.b2[r]
        })
        .collect();
    Ok((
        delta,
        MlpCache {
            t: t.to_vec(),
            hidden,
        },
    ))
}

/// `w_r = sigmoid(alpha * p_r + beta * delta_r)`.
pub fn gates(p: &PriorWeights, delta: &[f64], gp: &GateParams) -> Vec<f64> {
    gates_for_mode(GateMode::Full, p, delta, gp)
}

pub fn gates_for_mode(mode: GateMode, p: &PriorWeights, delta: &[f64], gp: &GateParams) -> Vec<f64> {
    p.values()
        .iter()
        .zip(delta)
        .map(|(&pr, &dr)| match mode {
            GateMode::Off => 1.0,
            GateMode::PriorOnly => sigmoid(gp.alpha * pr),
            GateMode::PatientOnly => sigmoid(gp.beta * dr),
            GateMode::Full => sigmoid(gp.alpha * pr + gp.beta * dr),
        })
        .collect()
}

/// Voxelwise `W[v] = w_{label(v)}`, zero on background.
pub fn weight_map(w: &[f64], masks: &RegionMasks) -> Result<ScalarVolume> {
    if w.len() != masks.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} region weights for {} regions",
            w.len(),
            masks.m()
        )));
    }
    let data = masks
        .labels()
        .labels()
        .iter()
        .map(|&l| if l == 0 { 0.0 } else { w[l as usize - 1] })
        .collect();
    ScalarVolume::new(*masks.geometry(), data)
}

/// Forward pass of the weighting module for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PswmForward {
    pub mode: GateMode,
    pub delta: Vec<f64>,
    pub w: Vec<f64>,
    cache: Option<MlpCache>,
}

impl PswmForward {
    /// Drops the backward cache, keeping only the outputs.
    pub fn detached(mut self) -> Self {
        self.cache = None;
        self
    }
}

pub fn pswm_forward(
    t: &[f64],
    p: &PriorWeights,
    mlp: &MlpParams,
    gp: &GateParams,
    mode: GateMode,
) -> Result<PswmForward> {
    if p.m() != mlp.m {
        return Err(Error::DimensionMismatch(format!(
            "prior has {} regions, MLP outputs {}",
            p.m(),
            mlp.m
        )));
    }
    let (delta, cache) = offsets_cached(t, mlp)?;
    let w = gates_for_mode(mode, p, &delta, gp);
    Ok(PswmForward {
        mode,
        delta,
        w,
        cache: Some(cache),
    })
}

/// Backpropagates `dL/dw` to `dL/ddelta` and the MLP parameters.
pub fn gates_backward(
    upstream: &[f64],
    fwd: &PswmForward,
    mlp: &MlpParams,
    gp: &GateParams,
) -> Result<(Vec<f64>, MlpParams)> {
    if upstream.len() != fwd.w.len() {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient has {} entries, expected {}",
            upstream.len(),
            fwd.w.len()
        )));
    }
    let mut grads = MlpParams::zeros(mlp.d, mlp.h, mlp.m);
    if !fwd.mode.uses_patient() {
        return Ok((vec![0.0; fwd.w.len()], grads));
    }
    let cache = fwd.cache.as_ref().ok_or(Error::MissingForwardCache)?;
    let g_delta: Vec<f64> = upstream
        .iter()
        .zip(&fwd.w)
        .map(|(&g, &w)| g * gp.beta * w * (1.0 - w))
        .collect();
    let mut g_hidden = vec![0.0; mlp.h];
    for r in 0..mlp.m {
        grads.b2[r] = g_delta[r];
        for i in 0..mlp.h {
            grads.w2[r * mlp.h + i] = g_delta[r] * cache.hidden[i];
            g_hidden[i] += mlp.w2[r * mlp.h + i] * g_delta[r];
        }
    }
    for i in 0..mlp.h {
        let g_pre = g_hidden[i] * (1.0 - cache.hidden[i] * cache.hidden[i]);
        grads.b1[i] = g_pre;
        for j in 0..mlp.d {
            grads.w1[i * mlp.d + j] = g_pre * cache.t[j];
        }
    }
    Ok((g_delta, grads))
}

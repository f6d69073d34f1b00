//! wasm-bindgen wrappers behind `www/index.html`. The plain functions return
//! `morphogate::Result` so they can be tested natively.

use morphogate::dbm::{gaussian_smooth, jacobian, log_jacobian, DbmConfig};
use morphogate::metrics::{decision_curve, default_thresholds};
use morphogate::pswm::{gates, GateParams, PriorWeights};
use morphogate::synthcohort::AnalyticWarp;
use morphogate::volume::GridGeometry;
use morphogate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wasm_bindgen::prelude::*;

const MAX_GRID: usize = 64;

/// Mid-plane slice (row-major, `n * n`) of the smoothed log-Jacobian of a
/// radial bump centred in an `n^3` grid at 1 mm spacing.
pub fn bump_slice(n: usize, radius: f64, amplitude: f64, sigma_mm: f64) -> Result<Vec<f64>> {
    if !(4..=MAX_GRID).contains(&n) {
        return Err(Error::InvalidConfig(format!("grid size {n} outside 4..={MAX_GRID}")));
    }
    let g = GridGeometry::cube(n);
    let c = (n as f64 - 1.0) / 2.0;
    let field = AnalyticWarp::RadialBump { center: [c; 3], radius, amplitude }.sample(g)?;
    let cfg = DbmConfig::with_sigma(sigma_mm);
    let (lj, _) = log_jacobian(&jacobian(&field)?, &cfg)?;
    let smooth = gaussian_smooth(&lj, &cfg)?;
    let mid = n / 2;
    Ok((0..n * n).map(|p| smooth.data()[g.index(mid, p / n, p % n)]).collect())
}

/// Gate value over `steps` evenly spaced offsets in `[lo, hi]`.
pub fn gate_curve(prior: f64, alpha: f64, beta: f64, lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 || !(lo < hi) {
        return Err(Error::InvalidConfig(format!("need steps >= 2 and lo < hi, got {steps}, [{lo}, {hi}]")));
    }
    let gp = GateParams { alpha, beta };
    gp.validate()?;
    let p = PriorWeights::new(vec![prior])?;
    Ok((0..steps)
        .map(|s| {
            let d = lo + (hi - lo) * s as f64 / (steps - 1) as f64;
            gates(&p, &[d], &gp)[0]
        })
        .collect())
}

/// Net-benefit rows `[t, model, treat_all, treat_none]` flattened, for a toy
/// classifier whose logit is `separation * (2y - 1) + N(0, 1)`.
pub fn toy_decision_curve(n: usize, prevalence: f64, separation: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 2 || !(prevalence > 0.0 && prevalence < 1.0) {
        return Err(Error::InvalidConfig(format!("need n >= 2 and prevalence in (0, 1), got {n}, {prevalence}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(prevalence))).collect();
    let probs: Vec<f64> = labels
        .iter()
        .map(|&y| {
            let s = separation * (2.0 * f64::from(y) - 1.0) + noise.sample(&mut rng);
            1.0 / (1.0 + (-s).exp())
        })
        .collect();
    Ok(decision_curve(&probs, &labels, &default_thresholds())?
        .iter()
        .flat_map(|r| [r.threshold, r.model, r.treat_all, r.treat_none])
        .collect())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = bumpSlice)]
pub fn bump_slice_js(n: usize, radius: f64, amplitude: f64, sigma_mm: f64) -> std::result::Result<Vec<f64>, JsError> {
    bump_slice(n, radius, amplitude, sigma_mm).map_err(js)
}

#[wasm_bindgen(js_name = gateCurve)]
pub fn gate_curve_js(prior: f64, alpha: f64, beta: f64, lo: f64, hi: f64, steps: usize) -> std::result::Result<Vec<f64>, JsError> {
    gate_curve(prior, alpha, beta, lo, hi, steps).map_err(js)
}

#[wasm_bindgen(js_name = decisionCurve)]
pub fn decision_curve_js(n: usize, prevalence: f64, separation: f64, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    toy_decision_curve(n, prevalence, separation, seed).map_err(js)
}

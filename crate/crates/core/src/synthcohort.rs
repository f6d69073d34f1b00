//! Synthetic cohorts with analytic warps, planted regional effects and known
//! outcomes.
//!
//! Every subject's displacement field is a sum of radial bumps, one per atlas
//! region, whose amplitudes are solved so that the analytic region-mean
//! log-Jacobian hits a per-region target, plus i.i.d. displacement noise.
//! Targets are anatomical variability for everyone, the planted effect for
//! responders. With clinical coupling the sign of the effect in each effect
//! region depends on the subject's disease-duration subtype.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{brain_mask, build_masks, procedural_parcellation, region_centroids, RegionMasks};
use crate::clinical::{ClinicalRecord, Sex};
use crate::dbm::{det3, gaussian_smooth, jacobian, DbmConfig};
use crate::error::{Error, Result};
use crate::metrics::{improvement_rate, DEFAULT_TAU};
use crate::model::stratified_split;
use crate::pipeline::{write_manifest, ManifestEntry};
use crate::seed;
use crate::volume::{write_volume, DeformationField, GridGeometry, LabelVolume, ScalarVolume};

/// Most negative value of `g (1 - q)` for the Gaussian bump profile,
/// attained at `q = 3`: `-2 e^{-3/2}`.
const BUMP_PROFILE_MIN: f64 = -0.446_260_320_296_860_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticWarp {
    Identity,
    /// `phi(x) = A x + b`.
    Affine { a: [[f64; 3]; 3], b: [f64; 3] },
    /// `u(x) = a exp(-|x-c|^2 / (2 rho^2)) (x - c)`.
    RadialBump { center: [f64; 3], radius: f64, amplitude: f64 },
}

impl AnalyticWarp {
    pub fn validate(&self) -> Result<()> {
        match self {
            AnalyticWarp::Identity => Ok(()),
            AnalyticWarp::Affine { a, .. } => {
                let d = det3(a);
                if d > 0.0 && d.is_finite() {
                    Ok(())
                } else {
                    Err(Error::NonPositiveJacobianRequested(format!("affine determinant {d}")))
                }
            }
            AnalyticWarp::RadialBump { radius, amplitude, .. } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::NonPositiveJacobianRequested(format!("bump radius {radius}")));
                }
                let a = *amplitude;
                if !(a > -1.0 && 1.0 + a * BUMP_PROFILE_MIN > 0.0) {
                    return Err(Error::NonPositiveJacobianRequested(format!(
                        "bump amplitude {a} outside (-1, {:.4})",
                        -1.0 / BUMP_PROFILE_MIN
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn displacement(&self, x: [f64; 3]) -> [f64; 3] {
        match self {
            AnalyticWarp::Identity => [0.0; 3],
            AnalyticWarp::Affine { a, b } => {
                std::array::from_fn(|r| (0..3).map(|c| a[r][c] * x[c]).sum::<f64>() + b[r] - x[r])
            }
            AnalyticWarp::RadialBump { center, radius, amplitude } => {
                let r: [f64; 3] = std::array::from_fn(|i| x[i] - center[i]);
                let g = gaussian_profile(&r, *radius);
                r.map(|ri| amplitude * g * ri)
            }
        }
    }

    /// Closed-form `d phi / d x` at `x`.
    pub fn jacobian_matrix(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        match self {
            AnalyticWarp::Identity => identity3(),
            AnalyticWarp::Affine { a, .. } => *a,
            AnalyticWarp::RadialBump { center, radius, amplitude } => {
                let r: [f64; 3] = std::array::from_fn(|i| x[i] - center[i]);
                let ag = amplitude * gaussian_profile(&r, *radius);
                let rho2 = radius * radius;
                std::array::from_fn(|i| {
                    std::array::from_fn(|j| {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        delta + ag * (delta - r[i] * r[j] / rho2)
                    })
                })
            }
        }
    }

    pub fn jacobian_det(&self, x: [f64; 3]) -> f64 {
        match self {
            AnalyticWarp::RadialBump { center, radius, amplitude } => {
                let (ag, q) = bump_terms(x, center, *radius, *amplitude);
                (1.0 + ag).powi(2) * (1.0 + ag * (1.0 - q))
            }
            _ => det3(&self.jacobian_matrix(x)),
        }
    }

    pub fn log_jacobian_det(&self, x: [f64; 3]) -> f64 {
        match self {
            AnalyticWarp::RadialBump { center, radius, amplitude } => {
                let (ag, q) = bump_terms(x, center, *radius, *amplitude);
                2.0 * ag.ln_1p() + (ag * (1.0 - q)).ln_1p()
            }
            _ => self.jacobian_det(x).ln(),
        }
    }

    /// Samples the displacement at every voxel position.
    pub fn sample(&self, geometry: GridGeometry) -> Result<DeformationField> {
        self.validate()?;
        DeformationField::from_fn(geometry, |x| self.displacement(x))
    }
}

pub fn analytic_warp(kind: &AnalyticWarp, geometry: GridGeometry) -> Result<DeformationField> {
    kind.sample(geometry)
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn gaussian_profile(r: &[f64; 3], radius: f64) -> f64 {
    let r2: f64 = r.iter().map(|v| v * v).sum();
    (-r2 / (2.0 * radius * radius)).exp()
}

fn bump_terms(x: [f64; 3], center: &[f64; 3], radius: f64, amplitude: f64) -> (f64, f64) {
    let r: [f64; 3] = std::array::from_fn(|i| x[i] - center[i]);
    let q = r.iter().map(|v| v * v).sum::<f64>() / (radius * radius);
    (amplitude * (-q / 2.0).exp(), q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub m: usize,
    /// 1-based region indices carrying the responder signal.
    pub effect_regions: Vec<usize>,
    /// Target shift of the region-mean log-Jacobian in responders.
    pub effect_size: f64,
    /// Std-dev (mm) of i.i.d. displacement noise per voxel and channel.
    pub noise_sigma: f64,
    pub label_noise: f64,
    pub clinical_coupling: bool,
    pub seed: u64,
    /// Seed of everything shared between cohorts: atlas, T1 template.
    pub template_seed: u64,
    /// Std-dev of subject-level region-mean log-Jacobian variability.
    pub anatomy_sigma: f64,
    /// With clinical coupling, responders show `-coupling_reversal *
    /// effect_size` in the effect regions that belong to the other duration
    /// subtype.
    pub coupling_reversal: f64,
    /// Responder intensity shift in effect regions, in template std units.
    pub intensity_signal: f64,
    /// Added to the mean age, to emulate a second site.
    pub age_shift: f64,
    /// Fraction held out per class for the test manifest; 0 disables the split.
    pub test_fraction: f64,
    pub id_prefix: String,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            dims: [32, 40, 32],
            spacing_mm: [1.0; 3],
            m: 8,
            effect_regions: vec![2, 5],
            effect_size: 0.15,
            noise_sigma: 0.02,
            label_noise: 0.0,
            clinical_coupling: false,
            seed: 0,
            template_seed: 7,
            anatomy_sigma: 0.015,
            coupling_reversal: 0.7,
            intensity_signal: 0.0,
            age_shift: 0.0,
            test_fraction: 0.2,
            id_prefix: "sub".into(),
        }
    }
}

impl CohortSpec {
    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.dims, self.spacing_mm).map_err(|e| Error::SpecInvalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::SpecInvalid(s));
        if self.n_subjects < 2 {
            return bad(format!("n_subjects must be >= 2, got {}", self.n_subjects));
        }
        if self.dims.iter().any(|&d| d < 3) {
            return bad(format!("every axis needs >= 3 voxels, got {:?}", self.dims));
        }
        self.geometry()?;
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if self.effect_regions.is_empty() {
            return bad("effect_regions must be nonempty".into());
        }
        let mut seen = self.effect_regions.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.effect_regions.len() {
            return bad("effect_regions contains duplicates".into());
        }
        if let Some(&r) = self.effect_regions.iter().find(|&&r| r == 0 || r > self.m) {
            return bad(format!("effect region {r} outside 1..={}", self.m));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        let nonneg = [
            ("noise_sigma", self.noise_sigma),
            ("anatomy_sigma", self.anatomy_sigma),
            ("coupling_reversal", self.coupling_reversal),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.effect_size.is_finite() || !self.intensity_signal.is_finite() || !self.age_shift.is_finite() {
            return bad("effect_size, intensity_signal and age_shift must be finite".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        if self.id_prefix.is_empty() || self.id_prefix.contains(['/', '\\']) {
            return bad("id_prefix must be a nonempty file-name fragment".into());
        }
        Ok(())
    }

    /// Subtype (0 or 1) whose responders show the positive effect in effect
    /// region `k` (position in `effect_regions`). `None` means all of them do.
    fn effect_subtype(&self, k: usize) -> Option<u8> {
        if self.clinical_coupling && self.effect_regions.len() >= 2 {
            Some((k % 2) as u8)
        } else {
            None
        }
    }
}

/// Disease-duration subtype used by the clinical coupling.
pub fn duration_subtype(disease_duration: f64) -> u8 {
    u8::from(disease_duration >= 10.0)
}

/// Region-mean log-Jacobian of one region's bump as a function of amplitude,
/// tabulated for inversion.
#[derive(Debug, Clone)]
struct RegionBump {
    center: [f64; 3],
    radius: f64,
    amplitudes: Vec<f64>,
    means: Vec<f64>,
}

const TABLE_MIN_A: f64 = -0.6;
const TABLE_MAX_A: f64 = 2.2;
/// Bump radius relative to the equivalent-sphere radius of its region.
const BUMP_RADIUS_FACTOR: f64 = 0.8;
const TABLE_STEPS: usize = 169;

impl RegionBump {
    fn new(center: [f64; 3], radius: f64, positions: &[[f64; 3]]) -> Self {
        let mut amplitudes = Vec::new();
        let mut means = Vec::new();
        for s in 0..TABLE_STEPS {
            let a = TABLE_MIN_A + (TABLE_MAX_A - TABLE_MIN_A) * s as f64 / (TABLE_STEPS - 1) as f64;
            let warp = AnalyticWarp::RadialBump {
                center,
                radius,
                amplitude: a,
            };
            let mean = positions.iter().map(|&x| warp.log_jacobian_det(x)).sum::<f64>() / positions.len() as f64;
            // keep the monotone prefix only
            if means.last().is_some_and(|&last| mean <= last) {
                if a > 0.0 {
                    break;
                }
                continue;
            }
            amplitudes.push(a);
            means.push(mean);
        }
        Self {
            center,
            radius,
            amplitudes,
            means,
        }
    }

    fn amplitude_for(&self, target: f64, region: usize) -> Result<f64> {
        let (lo, hi) = (self.means[0], *self.means.last().expect("nonempty table"));
        if !(lo..=hi).contains(&target) {
            return Err(Error::SpecInvalid(format!(
                "region {region}: target mean log-Jacobian {target:.4} outside reachable [{lo:.4}, {hi:.4}]"
            )));
        }
        let k = self.means.partition_point(|&m| m < target).clamp(1, self.means.len() - 1);
        let (m0, m1) = (self.means[k - 1], self.means[k]);
        let (a0, a1) = (self.amplitudes[k - 1], self.amplitudes[k]);
        Ok(a0 + (a1 - a0) * (target - m0) / (m1 - m0))
    }
}

/// Everything shared by all cohorts generated from one `template_seed`.
#[derive(Debug, Clone)]
pub struct CohortTemplate {
    pub atlas: LabelVolume,
    pub masks: RegionMasks,
    pub t1_template: ScalarVolume,
    bumps: Vec<RegionBump>,
}

const T1_BRAIN: f64 = 100.0;
const T1_TEXTURE: f64 = 15.0;
const T1_SUBJECT: f64 = 3.0;
const T1_WHITE: f64 = 1.0;

pub fn cohort_template(spec: &CohortSpec) -> Result<CohortTemplate> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let atlas = procedural_parcellation(&geometry, spec.m, seed::child_seed(spec.template_seed, "atlas"))
        .map_err(|e| Error::SpecInvalid(e.to_string()))?;
    let masks = build_masks(&atlas, spec.m)?;
    let centroids = region_centroids(&masks);
    let mut positions: Vec<Vec<[f64; 3]>> = vec![Vec::new(); spec.m];
    for (idx, &l) in atlas.labels().iter().enumerate() {
        if l > 0 {
            let [i, j, k] = geometry.coords(idx);
            positions[l as usize - 1].push(geometry.position(i, j, k));
        }
    }
    let bumps = (0..spec.m)
        .into_par_iter()
        .map(|r| {
            let volume = masks.count(r + 1) as f64 * geometry.voxel_volume();
            let r_eq = (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt();
            RegionBump::new(centroids[r], BUMP_RADIUS_FACTOR * r_eq, &positions[r])
        })
        .collect();

    let mut rng = seed::stream(spec.template_seed, "t1-template");
    let texture = smooth_noise(geometry, 2.0, &mut rng)?;
    let mask = brain_mask(&geometry);
    let data = texture
        .data()
        .iter()
        .zip(&mask)
        .map(|(&t, &inside)| if inside { T1_BRAIN + T1_TEXTURE * t } else { 0.0 })
        .collect();
    Ok(CohortTemplate {
        atlas,
        masks,
        t1_template: ScalarVolume::new(geometry, data)?,
        bumps,
    })
}

impl CohortTemplate {
    /// Reachable range of the region-mean log-Jacobian target for region `r`.
    pub fn reach(&self, r: usize) -> (f64, f64) {
        let b = &self.bumps[r - 1];
        (b.means[0], *b.means.last().expect("nonempty table"))
    }
}

/// Unit-variance smooth Gaussian random field.
fn smooth_noise(geometry: GridGeometry, sigma_mm: f64, rng: &mut ChaCha8Rng) -> Result<ScalarVolume> {
    let white: Vec<f64> = (0..geometry.len()).map(|_| StandardNormal.sample(rng)).collect();
    let smooth = gaussian_smooth(&ScalarVolume::new(geometry, white)?, &DbmConfig::with_sigma(sigma_mm))?;
    let mean = smooth.mean();
    let var = smooth.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / smooth.data().len() as f64;
    let scale = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
    smooth.map(|v| (v - mean) * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSubject {
    pub subject_id: String,
    /// Label that determined the planted imaging signal.
    pub y_true: u8,
    /// Label implied by the record, after label noise.
    pub y: u8,
    pub subtype: u8,
    /// Target region-mean log-Jacobian per region.
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub effect_regions: Vec<usize>,
    pub clinical_coupling: bool,
    pub subjects: Vec<GroundTruthSubject>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSubject {
    pub record: ClinicalRecord,
    pub truth: GroundTruthSubject,
    pub t1: ScalarVolume,
    pub field: DeformationField,
}

/// Exactly balanced true labels in seeded order.
pub fn draw_labels(spec: &CohortSpec) -> Vec<u8> {
    let n = spec.n_subjects;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
    labels.shuffle(&mut seed::stream(spec.seed, "labels"));
    labels
}

fn subject_id(spec: &CohortSpec, index: usize) -> String {
    format!("{}-{:04}", spec.id_prefix, index)
}

/// Generates subject `index`; depends only on the spec, the template and the
/// index, never on generation order.
pub fn generate_subject(
    spec: &CohortSpec,
    template: &CohortTemplate,
    labels: &[u8],
    index: usize,
) -> Result<SyntheticSubject> {
    let geometry = *template.masks.geometry();
    let mut rng = seed::stream(spec.seed, &format!("subject-{index}"));
    let y_true = labels[index];

    // clinical covariates, whole numbers as on the rating scales
    let z: f64 = StandardNormal.sample(&mut rng);
    let age = (65.0 + spec.age_shift + 7.0 * z).round().clamp(40.0, 89.0);
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    let disease_duration = rng.random_range(2..18u32) as f64;
    let updrs3_pre = rng.random_range(25..70u32) as f64;
    let mut scales = BTreeMap::new();
    scales.insert("MoCA".to_string(), rng.random_range(20..=30u32) as f64);
    scales.insert("MMSE".to_string(), rng.random_range(24..=30u32) as f64);
    let subtype = duration_subtype(disease_duration);

    let y = if rng.random_bool(spec.label_noise) { 1 - y_true } else { y_true };
    let ir = if y == 1 {
        rng.random_range(0.35..0.70)
    } else {
        rng.random_range(-0.10..0.25)
    };
    let record = ClinicalRecord {
        subject_id: subject_id(spec, index),
        age,
        sex,
        disease_duration,
        updrs3_pre,
        scales,
        updrs3_post: Some((updrs3_pre * (1.0 - ir)).round()),
    };
    debug_assert_eq!(improvement_rate(&record, DEFAULT_TAU).map(|l| l.y).ok(), Some(y));

    // region-mean log-Jacobian targets
    let mut targets: Vec<f64> = (0..spec.m)
        .map(|_| spec.anatomy_sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    if y_true == 1 {
        for (k, &r) in spec.effect_regions.iter().enumerate() {
            targets[r - 1] += match spec.effect_subtype(k) {
                Some(s) if s != subtype => -spec.coupling_reversal * spec.effect_size,
                _ => spec.effect_size,
            };
        }
    }
    let bumps: Vec<AnalyticWarp> = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let b = &template.bumps[r];
            Ok(AnalyticWarp::RadialBump {
                center: b.center,
                radius: b.radius,
                amplitude: b.amplitude_for(t, r + 1)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut channels: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(geometry.len()));
    for idx in 0..geometry.len() {
        let [i, j, k] = geometry.coords(idx);
        let x = geometry.position(i, j, k);
        let mut u = [0.0; 3];
        for b in &bumps {
            let d = b.displacement(x);
            for a in 0..3 {
                u[a] += d[a];
            }
        }
        for a in 0..3 {
            let n: f64 = StandardNormal.sample(&mut rng);
            channels[a].push(u[a] + spec.noise_sigma * n);
        }
    }
    let field = DeformationField::new(geometry, channels)?;
    let det = jacobian(&field)?.determinant();
    if let Some(bad) = det.iter().position(|&d| d <= 0.0) {
        return Err(Error::NonPositiveJacobianRequested(format!(
            "subject {} has J = {} at voxel {:?}",
            record.subject_id,
            det[bad],
            geometry.coords(bad)
        )));
    }

    // T1: shared template, smooth subject texture, white noise
    let texture = smooth_noise(geometry, 2.0, &mut rng)?;
    let shifted: Vec<bool> = template
        .atlas
        .labels()
        .iter()
        .map(|&l| y_true == 1 && l > 0 && spec.effect_regions.contains(&(l as usize)))
        .collect();
    let t1_data = template
        .t1_template
        .data()
        .iter()
        .zip(texture.data())
        .zip(&shifted)
        .map(|((&base, &tex), &plant)| {
            let white: f64 = StandardNormal.sample(&mut rng);
            let signal = if plant { spec.intensity_signal * T1_TEXTURE } else { 0.0 };
            base + T1_SUBJECT * tex + T1_WHITE * white + signal
        })
        .collect();
    let t1 = ScalarVolume::new(geometry, t1_data)?;

    Ok(SyntheticSubject {
        truth: GroundTruthSubject {
            subject_id: record.subject_id.clone(),
            y_true,
            y,
            subtype,
            targets,
        },
        record,
        t1,
        field,
    })
}

/// Paths written by [`generate_cohort`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortFiles {
    pub manifest: PathBuf,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub atlas: PathBuf,
    pub ground_truth: PathBuf,
    pub n_subjects: usize,
}

/// Writes the full cohort under `out_dir`: volumes, `atlas.vol`,
/// `manifest.jsonl` (plus `train.jsonl`/`test.jsonl` when splitting) and
/// `ground_truth.json`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<CohortFiles> {
    let template = cohort_template(spec)?;
    let labels = draw_labels(spec);
    let subject_dir = out_dir.join("subjects");
    std::fs::create_dir_all(&subject_dir).map_err(|e| Error::io(&subject_dir, e))?;
    let atlas_path = out_dir.join("atlas.vol");
    write_volume(&template.atlas.clone().into(), &atlas_path)?;

    let rows: Vec<(ManifestEntry, GroundTruthSubject)> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| {
            let s = generate_subject(spec, &template, &labels, i)?;
            let t1 = format!("subjects/{}_t1.vol", s.record.subject_id);
            let field = format!("subjects/{}_field.vol", s.record.subject_id);
            write_volume(&s.t1.into(), out_dir.join(&t1))?;
            write_volume(&s.field.into(), out_dir.join(&field))?;
            Ok((
                ManifestEntry {
                    record: s.record,
                    t1,
                    field,
                },
                s.truth,
            ))
        })
        .collect::<Result<_>>()?;
    let (entries, truth): (Vec<ManifestEntry>, Vec<GroundTruthSubject>) = rows.into_iter().unzip();

    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    let (mut train, mut test) = (None, None);
    if spec.test_fraction > 0.0 {
        let observed: Vec<u8> = truth.iter().map(|t| t.y).collect();
        let (tr, te) = stratified_split(&observed, spec.test_fraction, seed::child_seed(spec.seed, "test-split"));
        let pick = |idx: &[usize]| idx.iter().map(|&i| entries[i].clone()).collect::<Vec<_>>();
        let (tr_path, te_path) = (out_dir.join("train.jsonl"), out_dir.join("test.jsonl"));
        write_manifest(&tr_path, &pick(&tr))?;
        write_manifest(&te_path, &pick(&te))?;
        train = Some(tr_path);
        test = Some(te_path);
    }
    let gt = GroundTruth {
        effect_regions: spec.effect_regions.clone(),
        clinical_coupling: spec.clinical_coupling,
        subjects: truth,
    };
    let gt_path = out_dir.join("ground_truth.json");
    let text = serde_json::to_string_pretty(&gt).map_err(|e| Error::parse("ground truth", &gt_path, e))?;
    std::fs::write(&gt_path, text).map_err(|e| Error::io(&gt_path, e))?;
    Ok(CohortFiles {
        manifest,
        train,
        test,
        atlas: atlas_path,
        ground_truth: gt_path,
        n_subjects: spec.n_subjects,
    })
}

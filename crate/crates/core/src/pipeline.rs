//! Cohort manifests, per-subject feature extraction, the model checkpoint,
//! prediction with frozen statistics, and evaluation reports.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{region_means, RegionMasks};
use crate::clinical::{ClinicalRecord, Embedder, EmbedderSpec};
use crate::dbm::{dbm_pipeline, DbmConfig, JacobianReport};
use crate::error::{Error, Result};
use crate::metrics::{
    balance_downsample, calibration_report, classification_metrics, decision_curve, default_thresholds,
    improvement_rate, CalibrationReport, ClassMetrics, ConfusionCounts, NetBenefitRow,
};
use crate::model::{
    forward_features, train, Ablation, ModelConfig, ModelParams, Moments, NormStats, SubjectFeatures, TrainConfig,
    TrainLog,
};
use crate::pswm::PriorWeights;
use crate::seed;
use crate::synthcohort::{draw_labels, generate_subject, CohortSpec, CohortTemplate, GroundTruthSubject};
use crate::volume::{read_field, read_scalar, DeformationField, ScalarVolume};

/// One manifest line: the clinical record plus volume paths relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub record: ClinicalRecord,
    pub t1: String,
    pub field: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| Error::parse("manifest", path, format!("line {}: {e}", n + 1)))?;
        entry.record.validate()?;
        out.push(entry);
    }
    if out.is_empty() {
        return Err(Error::parse("manifest", path, "no entries"));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).map_err(|err| Error::parse("manifest", path, err))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Un-normalized region means plus the in-brain voxel moments needed to fit
/// z-score statistics later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    pub subject_id: String,
    pub image_means: Vec<f64>,
    pub dbm_means: Vec<f64>,
    pub image_moments: Moments,
    pub dbm_moments: Moments,
    pub embedding: Vec<f64>,
    pub label: Option<u8>,
    pub jacobian: JacobianReport,
}

fn in_brain_moments(vol: &ScalarVolume, masks: &RegionMasks) -> Moments {
    let labels = masks.labels().labels();
    Moments::from_values(vol.data().iter().zip(labels).filter(|(_, &l)| l > 0).map(|(v, _)| v))
}

/// Preprocessing shared by training and prediction: DBM map, region pooling
/// of both modalities, embedding and (when the post score exists) the label.
pub fn raw_features(
    record: &ClinicalRecord,
    t1: &ScalarVolume,
    field: &DeformationField,
    masks: &RegionMasks,
    dbm: &DbmConfig,
    embedder: &Embedder,
    tau: f64,
) -> Result<RawFeatures> {
    masks.geometry().ensure_same(t1.geometry(), "atlas/T1")?;
    masks.geometry().ensure_same(field.geometry(), "atlas/field")?;
    let (lj, jacobian) = dbm_pipeline(field, dbm)?;
    let label = match record.updrs3_post {
        Some(_) => Some(improvement_rate(record, tau)?.y),
        None => None,
    };
    Ok(RawFeatures {
        subject_id: record.subject_id.clone(),
        image_means: region_means(t1, masks)?,
        dbm_means: region_means(&lj, masks)?,
        image_moments: in_brain_moments(t1, masks),
        dbm_moments: in_brain_moments(&lj, masks),
        embedding: embedder.embed(record)?.vector,
        label,
        jacobian,
    })
}

/// Loads every subject of a manifest and extracts its features in parallel.
pub fn manifest_features(
    manifest: &Path,
    masks: &RegionMasks,
    dbm: &DbmConfig,
    embedder: &Embedder,
    tau: f64,
) -> Result<Vec<RawFeatures>> {
    let entries = read_manifest(manifest)?;
    let dir = manifest_dir(manifest);
    entries
        .par_iter()
        .map(|e| {
            let t1 = read_scalar(dir.join(&e.t1))?;
            let field = read_field(dir.join(&e.field))?;
            raw_features(&e.record, &t1, &field, masks, dbm, embedder, tau)
        })
        .collect()
}

/// Generates a synthetic cohort in memory and extracts features subject by
/// subject, without writing volumes.
pub fn synthetic_features(
    spec: &CohortSpec,
    template: &CohortTemplate,
    dbm: &DbmConfig,
    embedder: &Embedder,
    tau: f64,
) -> Result<Vec<(RawFeatures, GroundTruthSubject)>> {
    let labels = draw_labels(spec);
    (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| {
            let s = generate_subject(spec, template, &labels, i)?;
            let raw = raw_features(&s.record, &s.t1, &s.field, &template.masks, dbm, embedder, tau)?;
            Ok((raw, s.truth))
        })
        .collect()
}

/// z-score statistics over the pooled in-brain voxels of `subjects`.
pub fn fit_norm_stats(subjects: &[RawFeatures]) -> Result<NormStats> {
    let (img, dbm) = subjects.iter().fold((Moments::default(), Moments::default()), |(a, b), s| {
        (a.merge(&s.image_moments), b.merge(&s.dbm_moments))
    });
    NormStats::from_moments(&img, &dbm)
}

/// Region means of the z-scored volumes. Pooling commutes with the affine
/// z-score, so this equals pooling the normalized volumes.
pub fn normalize(raw: &RawFeatures, stats: &NormStats) -> SubjectFeatures {
    SubjectFeatures {
        subject_id: raw.subject_id.clone(),
        image_means: raw.image_means.iter().map(|&v| stats.normalize_image(v)).collect(),
        dbm_means: raw.dbm_means.iter().map(|&v| stats.normalize_dbm(v)).collect(),
        embedding: raw.embedding.clone(),
        label: raw.label,
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Everything needed to reproduce predictions: hyperparameters, frozen
/// normalization, threshold, preprocessing settings and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub norm: NormStats,
    pub threshold: f64,
    pub tau: f64,
    pub prior: PriorWeights,
    pub prior_digest: String,
    pub atlas_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atlas_path: Option<PathBuf>,
    pub embedder: EmbedderSpec,
    pub dbm: DbmConfig,
    #[serde(skip)]
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub prob: f64,
    pub class: u8,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    #[serde(flatten)]
    state: ModelState,
    layout: Vec<(String, usize)>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MGCKPT01";

impl ModelState {
    /// Probability and thresholded class (`prob >= threshold` is class 1)
    /// using the frozen training statistics.
    pub fn predict(&self, raw: &RawFeatures) -> Result<Prediction> {
        if raw.embedding.is_empty() {
            return Err(Error::MissingEmbedding(raw.subject_id.clone()));
        }
        let feats = normalize(raw, &self.norm);
        let prob = forward_features(&feats, &self.params, &self.prior, &self.model)?.prob;
        Ok(Prediction {
            prob,
            class: u8::from(prob >= self.threshold),
        })
    }

    pub fn check_atlas(&self, masks: &RegionMasks) -> Result<()> {
        let digest = masks.digest();
        if digest != self.atlas_digest {
            return Err(Error::InvalidConfig(format!(
                "atlas digest {digest} does not match the model's {}",
                self.atlas_digest
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: "morphogate-checkpoint-1".into(),
            state: self.clone(),
            layout: self.params.layout().into_iter().map(|(n, len, _)| (n.to_string(), len)).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let flat = self.params.flatten();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * flat.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::parse("checkpoint", path, reason);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::parse("checkpoint", path, e))?;
        let mut state = header.state;
        state.model.validate()?;
        state.params = ModelParams::zeros(&state.model);
        let expect: Vec<(String, usize)> =
            state.params.layout().into_iter().map(|(n, len, _)| (n.to_string(), len)).collect();
        if expect != header.layout {
            return Err(bad("parameter layout does not match the model configuration"));
        }
        let payload = &bytes[16 + hlen..];
        if payload.len() != 8 * state.params.len() {
            return Err(Error::PayloadSizeMismatch {
                path: path.to_path_buf(),
                expected: 8 * state.params.len(),
                found: payload.len(),
            });
        }
        let flat: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse("checkpoint", path, "non-finite parameter"));
        }
        state.params.load_flat(&flat);
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Settings of one training run besides the data.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embedder: EmbedderSpec,
    pub dbm: DbmConfig,
    pub tau: f64,
}

/// Balances classes, freezes z-score statistics on the kept subjects and
/// trains. The decision threshold is fixed at 0.5.
pub fn fit_model(
    subjects: &[RawFeatures],
    prior: &PriorWeights,
    masks: &RegionMasks,
    opts: &FitOptions,
) -> Result<(ModelState, TrainLog)> {
    let labels: Vec<u8> = subjects
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::UnlabeledSubject(s.subject_id.clone())))
        .collect::<Result<_>>()?;
    if prior.m() != opts.model.m || masks.m() != opts.model.m {
        return Err(Error::DimensionMismatch(format!(
            "model m = {}, prior m = {}, atlas m = {}",
            opts.model.m,
            prior.m(),
            masks.m()
        )));
    }
    let kept = balance_downsample(&labels, seed::child_seed(opts.train.seed, "balance"))?;
    let kept: Vec<RawFeatures> = kept.into_iter().map(|i| subjects[i].clone()).collect();
    let norm = fit_norm_stats(&kept)?;
    let feats: Vec<SubjectFeatures> = kept.iter().map(|r| normalize(r, &norm)).collect();
    let (params, log) = train(&feats, prior, &opts.model, &opts.train)?;
    let state = ModelState {
        model: opts.model.clone(),
        train: opts.train.clone(),
        norm,
        threshold: DEFAULT_THRESHOLD,
        tau: opts.tau,
        prior: prior.clone(),
        prior_digest: prior.digest(),
        atlas_digest: masks.digest(),
        atlas_path: None,
        embedder: opts.embedder.clone(),
        dbm: opts.dbm,
        params,
    };
    Ok((state, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub subject_id: String,
    pub prob: f64,
    pub class: u8,
}

pub fn predict_all(model: &ModelState, subjects: &[RawFeatures]) -> Result<Vec<PredictionRow>> {
    subjects
        .iter()
        .map(|s| {
            let p = model.predict(s)?;
            Ok(PredictionRow {
                subject_id: s.subject_id.clone(),
                prob: p.prob,
                class: p.class,
            })
        })
        .collect()
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("subject_id,prob,class\n");
    for r in rows {
        out.push_str(&format!("{},{:?},{}\n", r.subject_id, r.prob, r.class));
    }
    out
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "subject_id,prob,class" => {}
        _ => return Err(Error::parse("predictions", path, "expected header subject_id,prob,class")),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let bad = |reason: String| Error::parse("predictions", path, format!("line {}: {reason}", n + 2));
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 columns, got {}", cols.len())));
            }
            let prob: f64 = cols[1].parse().map_err(|e| bad(format!("{e}")))?;
            let class: u8 = cols[2].parse().map_err(|e| bad(format!("{e}")))?;
            if !(0.0..=1.0).contains(&prob) || class > 1 {
                return Err(bad("prob must lie in [0, 1] and class in {0, 1}".into()));
            }
            Ok(PredictionRow {
                subject_id: cols[0].to_string(),
                prob,
                class,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub counts: ConfusionCounts,
    pub metrics: ClassMetrics,
    pub acc_percent: String,
    pub tpr_percent: String,
    pub fpr_percent: String,
    pub calibration: CalibrationReport,
    pub net_benefit: Vec<NetBenefitRow>,
}

pub fn evaluate(probs: &[f64], classes: &[u8], labels: &[u8]) -> Result<EvalReport> {
    let counts = ConfusionCounts::from_predictions(classes, labels)?;
    let metrics = classification_metrics(&counts)?;
    Ok(EvalReport {
        n: labels.len(),
        counts,
        acc_percent: metrics.acc.percent(),
        tpr_percent: metrics.tpr.percent(),
        fpr_percent: metrics.fpr.percent(),
        metrics,
        calibration: calibration_report(probs, labels, 10)?,
        net_benefit: decision_curve(probs, labels, &default_thresholds())?,
    })
}

/// Joins predictions with labels from a manifest by subject id.
pub fn evaluate_files(preds: &Path, manifest: &Path, tau: f64) -> Result<EvalReport> {
    let rows = read_predictions(preds)?;
    let entries = read_manifest(manifest)?;
    let mut labels = Vec::with_capacity(rows.len());
    for r in &rows {
        let e = entries
            .iter()
            .find(|e| e.record.subject_id == r.subject_id)
            .ok_or_else(|| Error::UnknownSubject(r.subject_id.clone()))?;
        labels.push(improvement_rate(&e.record, tau)?.y);
    }
    let probs: Vec<f64> = rows.iter().map(|r| r.prob).collect();
    let classes: Vec<u8> = rows.iter().map(|r| r.class).collect();
    evaluate(&probs, &classes, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub dbm: bool,
    pub prior: bool,
    pub patient: bool,
    /// Mean accuracy over seeds, one entry per evaluation set.
    pub mean_acc: Vec<f64>,
    /// Accuracy per seed (outer) and evaluation set (inner).
    pub acc: Vec<Vec<f64>>,
}

/// Trains every ablation configuration once per seed and scores it on each
/// evaluation set.
pub fn run_ablation(
    train_set: &[RawFeatures],
    eval_sets: &[&[RawFeatures]],
    prior: &PriorWeights,
    masks: &RegionMasks,
    opts: &FitOptions,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, ablation) in Ablation::table() {
        let acc: Vec<Vec<f64>> = seeds
            .par_iter()
            .map(|&s| {
                let o = FitOptions {
                    model: ModelConfig {
                        ablation,
                        ..opts.model.clone()
                    },
                    train: TrainConfig {
                        seed: s,
                        ..opts.train.clone()
                    },
                    ..opts.clone()
                };
                let (state, _) = fit_model(train_set, prior, masks, &o)?;
                eval_sets.iter().map(|set| accuracy(&state, set)).collect()
            })
            .collect::<Result<_>>()?;
        let mean_acc = (0..eval_sets.len())
            .map(|k| acc.iter().map(|a| a[k]).sum::<f64>() / acc.len() as f64)
            .collect();
        rows.push(AblationRow {
            name: name.to_string(),
            dbm: ablation.dbm,
            prior: ablation.gate.uses_prior(),
            patient: ablation.gate.uses_patient(),
            mean_acc,
            acc,
        });
    }
    Ok(rows)
}

pub fn accuracy(model: &ModelState, set: &[RawFeatures]) -> Result<f64> {
    let mut correct = 0usize;
    for s in set {
        let y = s.label.ok_or_else(|| Error::UnlabeledSubject(s.subject_id.clone()))?;
        correct += usize::from(model.predict(s)?.class == y);
    }
    Ok(correct as f64 / set.len().max(1) as f64)
}

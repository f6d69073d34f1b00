//! Weighted fusion, the pooled linear head, the logits-based BCE loss, exact
//! reverse-mode gradients through the gating module, and the training loop.
//!
//! The image encoder is atlas region-mean pooling. Because the weight map is
//! constant on each region, pooling the fused volume reduces to
//! `mean_r(X) = w_r * (c_img * mean_r(I) + c_dbm * mean_r(lJ))`, which is what
//! the feature path below evaluates. [`forward_volumes`] evaluates the same
//! logit through the full voxel grid.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{region_means, RegionMasks};
use crate::error::{Error, Result};
use crate::optim::{AdamW, WarmupCosine};
use crate::pswm::{gates_backward, pswm_forward, sigmoid, weight_map, GateMode, GateParams, MlpParams, PriorWeights, PswmForward};
use crate::seed;
use crate::volume::ScalarVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

/// Component toggles of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub dbm: bool,
    pub gate: GateMode,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        dbm: true,
        gate: GateMode::Full,
    };

    /// The five configurations compared in the ablation table, in table order.
    pub fn table() -> [(&'static str, Ablation); 5] {
        [
            ("dbm_only", Ablation { dbm: true, gate: GateMode::Off }),
            ("dbm_prior", Ablation { dbm: true, gate: GateMode::PriorOnly }),
            ("dbm_patient", Ablation { dbm: true, gate: GateMode::PatientOnly }),
            ("full", Ablation::FULL),
            ("no_dbm", Ablation { dbm: false, gate: GateMode::Full }),
        ]
    }

    /// Coefficients of the image and DBM terms. Without DBM the image term
    /// carries weight 1.
    pub fn fusion_coefs(&self, fusion: &FusionConfig) -> (f64, f64) {
        if self.dbm {
            (fusion.lambda, 1.0)
        } else {
            (1.0, 0.0)
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

/// `X = lambda * (W . I) + W . lJ`.
pub fn fuse(image: &ScalarVolume, lj: &ScalarVolume, weight: &ScalarVolume, cfg: &FusionConfig) -> Result<ScalarVolume> {
    fuse_with(image, lj, weight, cfg.lambda, 1.0)
}

pub fn fuse_with(
    image: &ScalarVolume,
    lj: &ScalarVolume,
    weight: &ScalarVolume,
    image_coef: f64,
    dbm_coef: f64,
) -> Result<ScalarVolume> {
    image.geometry().ensure_same(lj.geometry(), "fuse image/lJ")?;
    image.geometry().ensure_same(weight.geometry(), "fuse image/weights")?;
    let data = image
        .data()
        .iter()
        .zip(lj.data())
        .zip(weight.data())
        .map(|((&i, &l), &w)| image_coef * (w * i) + dbm_coef * (w * l))
        .collect();
    ScalarVolume::new(*image.geometry(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub v: Vec<f64>,
    pub b: f64,
}

impl HeadParams {
    pub fn zeros(m: usize) -> Self {
        Self { v: vec![0.0; m], b: 0.0 }
    }
}

/// Logit `s = v . region_means(X) + b` and probability `sigmoid(s)`.
pub fn forward(x: &ScalarVolume, masks: &RegionMasks, head: &HeadParams) -> Result<(f64, f64)> {
    if head.v.len() != masks.m() {
        return Err(Error::DimensionMismatch(format!(
            "head has {} weights for {} regions",
            head.v.len(),
            masks.m()
        )));
    }
    let pooled = region_means(x, masks)?;
    let s = head.v.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + head.b;
    Ok((s, sigmoid(s)))
}

/// Overflow-safe `log(1 + e^s)`.
#[inline]
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Mean of `softplus(s_n) - y_n * s_n`.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&s, &y)| softplus(s) - y as f64 * s)
        .sum();
    Ok(total / logits.len() as f64)
}

/// Streaming count / mean / sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let mut m = Moments::default();
        for &x in values {
            m.count += 1;
            let delta = x - m.mean;
            m.mean += delta / m.count as f64;
            m.m2 += delta * (x - m.mean);
        }
        m
    }

    /// Pairwise combination of two partial moment sets.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + delta * other.count as f64 / n,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / n,
        }
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

/// Per-modality z-score statistics over in-brain voxels of the training cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub image_mean: f64,
    pub image_std: f64,
    pub dbm_mean: f64,
    pub dbm_std: f64,
}

impl NormStats {
    pub fn from_moments(image: &Moments, dbm: &Moments) -> Result<Self> {
        let image_std = image.std();
        let dbm_std = dbm.std();
        if !(image_std > 0.0 && image_std.is_finite()) {
            return Err(Error::DegenerateNormStats("image"));
        }
        if !(dbm_std > 0.0 && dbm_std.is_finite()) {
            return Err(Error::DegenerateNormStats("dbm"));
        }
        Ok(Self {
            image_mean: image.mean,
            image_std,
            dbm_mean: dbm.mean,
            dbm_std,
        })
    }

    pub fn normalize_image(&self, x: f64) -> f64 {
        (x - self.image_mean) / self.image_std
    }

    pub fn normalize_dbm(&self, x: f64) -> f64 {
        (x - self.dbm_mean) / self.dbm_std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub m: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub fusion: FusionConfig,
    pub gate: GateParams,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn new(m: usize, embed_dim: usize) -> Self {
        Self {
            m,
            embed_dim,
            hidden: 32,
            fusion: FusionConfig::default(),
            gate: GateParams::default(),
            ablation: Ablation::FULL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        if !(self.fusion.lambda >= 0.0 && self.fusion.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.fusion.lambda)));
        }
        if self.m == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("m, embedding dim and hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub head: HeadParams,
    pub mlp: MlpParams,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            head: HeadParams::zeros(0),
            mlp: MlpParams::zeros(0, 0, 0),
        }
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            head: HeadParams::zeros(cfg.m),
            mlp: MlpParams::zeros(cfg.embed_dim, cfg.hidden, cfg.m),
        }
    }

    /// Zero head, scaled-normal MLP weights.
    pub fn init<R: Rng>(cfg: &ModelConfig, mlp_out_scale: f64, rng: &mut R) -> Self {
        Self {
            head: HeadParams::zeros(cfg.m),
            mlp: MlpParams::init(cfg.embed_dim, cfg.hidden, cfg.m, mlp_out_scale, rng),
        }
    }

    /// Named buffers in flattening order with their decay flag.
    pub fn layout(&self) -> Vec<(&'static str, usize, bool)> {
        vec![
            ("head.v", self.head.v.len(), true),
            ("head.b", 1, false),
            ("mlp.w1", self.mlp.w1.len(), true),
            ("mlp.b1", self.mlp.b1.len(), false),
            ("mlp.w2", self.mlp.w2.len(), true),
            ("mlp.b2", self.mlp.b2.len(), false),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.head.v);
        out.push(self.head.b);
        for buf in self.mlp.buffers() {
            out.extend_from_slice(buf);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layout().iter().map(|l| l.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let m = self.head.v.len();
        self.head.v.copy_from_slice(&flat[..m]);
        self.head.b = flat[m];
        let mut off = m + 1;
        for buf in self.mlp.buffers_mut() {
            let n = buf.len();
            buf.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        self.layout()
            .into_iter()
            .flat_map(|(_, n, decay)| std::iter::repeat_n(decay, n))
            .collect()
    }
}

/// Region-pooled, z-scored inputs of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub subject_id: String,
    /// Region means of the z-scored image.
    pub image_means: Vec<f64>,
    /// Region means of the z-scored smoothed log-Jacobian.
    pub dbm_means: Vec<f64>,
    pub embedding: Vec<f64>,
    pub label: Option<u8>,
}

/// Per-subject values kept from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `c_img * mean_r(I) + c_dbm * mean_r(lJ)`, before gating.
    pub fused: Vec<f64>,
    pub pswm: PswmForward,
    pub logit: f64,
    pub prob: f64,
}

pub fn forward_features(
    feat: &SubjectFeatures,
    params: &ModelParams,
    prior: &PriorWeights,
    cfg: &ModelConfig,
) -> Result<ForwardCache> {
    if feat.image_means.len() != cfg.m || feat.dbm_means.len() != cfg.m || params.head.v.len() != cfg.m {
        return Err(Error::DimensionMismatch(format!(
            "subject {} features do not match m = {}",
            feat.subject_id, cfg.m
        )));
    }
    let (ci, cd) = cfg.ablation.fusion_coefs(&cfg.fusion);
    let fused: Vec<f64> = feat
        .image_means
        .iter()
        .zip(&feat.dbm_means)
        .map(|(&a, &b)| ci * a + cd * b)
        .collect();
    let pswm = pswm_forward(&feat.embedding, prior, &params.mlp, &cfg.gate, cfg.ablation.gate)?;
    let logit = params
        .head
        .v
        .iter()
        .zip(&pswm.w)
        .zip(&fused)
        .map(|((v, w), f)| v * (w * f))
        .sum::<f64>()
        + params.head.b;
    Ok(ForwardCache {
        fused,
        pswm,
        logit,
        prob: sigmoid(logit),
    })
}

/// Evaluates the logit through the voxel grid: builds `W`, fuses the
/// z-scored volumes and pools with the head.
pub fn forward_volumes(
    image_z: &ScalarVolume,
    lj_z: &ScalarVolume,
    masks: &RegionMasks,
    embedding: &[f64],
    params: &ModelParams,
    prior: &PriorWeights,
    cfg: &ModelConfig,
) -> Result<(f64, f64)> {
    let pswm = pswm_forward(embedding, prior, &params.mlp, &cfg.gate, cfg.ablation.gate)?;
    let w = weight_map(&pswm.w, masks)?;
    let (ci, cd) = cfg.ablation.fusion_coefs(&cfg.fusion);
    let x = fuse_with(image_z, lj_z, &w, ci, cd)?;
    forward(&x, masks, &params.head)
}

/// Gradient of the mean BCE over a batch with respect to every parameter.
/// `dL/ds_n = (p_n - y_n) / N`; the gate gradient is
/// `dL/dw_r = dL/ds * v_r * fused_r`, handed to the gating backward pass.
pub fn backward(caches: &[ForwardCache], labels: &[u8], params: &ModelParams, cfg: &ModelConfig) -> Result<ModelParams> {
    if caches.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if caches.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} caches for {} labels",
            caches.len(),
            labels.len()
        )));
    }
    let n = caches.len() as f64;
    let mut grads = ModelParams::zeros(cfg);
    for (cache, &y) in caches.iter().zip(labels) {
        let ds = (cache.prob - y as f64) / n;
        grads.head.b += ds;
        let mut dw = vec![0.0; cfg.m];
        for r in 0..cfg.m {
            grads.head.v[r] += ds * cache.pswm.w[r] * cache.fused[r];
            dw[r] = ds * params.head.v[r] * cache.fused[r];
        }
        let (_, g_mlp) = gates_backward(&dw, &cache.pswm, &params.mlp, &cfg.gate)?;
        for (acc, g) in grads.mlp.buffers_mut().into_iter().zip(g_mlp.buffers()) {
            for (a, b) in acc.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
    }
    Ok(grads)
}

pub fn batch_loss(feats: &[&SubjectFeatures], params: &ModelParams, prior: &PriorWeights, cfg: &ModelConfig) -> Result<f64> {
    let mut logits = Vec::with_capacity(feats.len());
    let mut labels = Vec::with_capacity(feats.len());
    for f in feats {
        logits.push(forward_features(f, params, prior, cfg)?.logit);
        labels.push(f.label.ok_or_else(|| Error::UnlabeledSubject(f.subject_id.clone()))?);
    }
    bce_loss(&logits, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Std-dev scale of the MLP output layer at initialization.
    pub mlp_init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 0.05,
            warmup_epochs: 10,
            max_epochs: 100,
            batch_size: 4,
            early_stop_patience: 10,
            val_fraction: 0.2,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            mlp_init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.adam_eps, self.mlp_init_scale];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("lr, adam_eps and mlp_init_scale must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and max_epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.max_epochs {
            return Err(Error::InvalidConfig("warmup_epochs must be below max_epochs".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmupCosine {
        WarmupCosine {
            lr_max: self.lr,
            warmup_epochs: self.warmup_epochs as f64,
            max_epochs: self.max_epochs as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

/// Seeded split holding out `fraction` of each class. Returns (train, val).
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::stream(seed, "validation-split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Mini-batch AdamW with warmup/cosine schedule (evaluated at fractional
/// epochs) and early stopping on validation loss. Patience starts counting
/// once warmup ends. Returns the parameters of the best validation epoch.
pub fn train(
    subjects: &[SubjectFeatures],
    prior: &PriorWeights,
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    tc.validate()?;
    if subjects.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let labels: Vec<u8> = subjects
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::UnlabeledSubject(s.subject_id.clone())))
        .collect::<Result<_>>()?;
    let (train_idx, val_idx) = if tc.val_fraction > 0.0 {
        stratified_split(&labels, tc.val_fraction, tc.seed)
    } else {
        ((0..subjects.len()).collect(), Vec::new())
    };
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig("validation split leaves no training subjects".into()));
    }

    let mut params = ModelParams::init(cfg, tc.mlp_init_scale, &mut seed::stream(tc.seed, "init"));
    let mut opt = AdamW::new(tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay, params.decay_mask());
    let schedule = tc.schedule();
    let mut shuffle_rng = seed::stream(tc.seed, "shuffle");
    let val_refs: Vec<&SubjectFeatures> = val_idx.iter().map(|&i| &subjects[i]).collect();

    let steps_per_epoch = train_idx.len().div_ceil(tc.batch_size);
    let mut flat = params.flatten();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };
    let mut order = train_idx.clone();
    for epoch in 0..tc.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut lr = 0.0;
        for (step, batch) in order.chunks(tc.batch_size).enumerate() {
            let caches: Vec<ForwardCache> = batch
                .iter()
                .map(|&i| forward_features(&subjects[i], &params, prior, cfg))
                .collect::<Result<_>>()?;
            let batch_labels: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let grads = backward(&caches, &batch_labels, &params, cfg)?;
            lr = schedule.lr_at(epoch as f64 + step as f64 / steps_per_epoch as f64);
            opt.step(&mut flat, &grads.flatten(), lr);
            params.load_flat(&flat);
        }
        let train_refs: Vec<&SubjectFeatures> = train_idx.iter().map(|&i| &subjects[i]).collect();
        let train_loss = batch_loss(&train_refs, &params, prior, cfg)?;
        let val_loss = if val_refs.is_empty() {
            None
        } else {
            Some(batch_loss(&val_refs, &params, prior, cfg)?)
        };
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, params.clone(), epoch);
        } else if epoch >= tc.warmup_epochs && epoch - best.2.max(tc.warmup_epochs) >= tc.early_stop_patience {
            log.stopped_early = true;
            break;
        }
    }
    log.best_epoch = best.2;
    Ok((best.1, log))
}

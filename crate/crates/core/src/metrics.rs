//! Outcome labels, class balancing, fixed-threshold classification metrics,
//! binned calibration error and decision-curve net benefit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clinical::ClinicalRecord;
use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    pub ir: f64,
    pub y: u8,
    pub tau: f64,
}

/// `ir = (pre - post) / pre`, responder iff `ir >= tau`.
pub fn improvement_rate(rec: &ClinicalRecord, tau: f64) -> Result<OutcomeLabel> {
    let post = rec
        .updrs3_post
        .ok_or_else(|| Error::MissingPostScore(rec.subject_id.clone()))?;
    if rec.updrs3_pre <= 0.0 {
        return Err(Error::ZeroBaseline(rec.subject_id.clone()));
    }
    let ir = (rec.updrs3_pre - post) / rec.updrs3_pre;
    Ok(OutcomeLabel {
        ir,
        y: u8::from(ir >= tau),
        tau,
    })
}

/// Randomly drops majority-class items (without replacement) down to the
/// minority size. Returns the kept indices in their original order.
pub fn balance_downsample(labels: &[u8], seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClassCohort);
    }
    let (minority, majority) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<usize> = rand::seq::index::sample(&mut rng, majority.len(), minority.len())
        .into_iter()
        .map(|i| majority[i])
        .collect();
    kept.extend(minority);
    kept.sort_unstable();
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fn_ += 1,
                (1, 0) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Percentage rounded to two decimals for presentation.
    pub fn percent(&self) -> String {
        format!("{:.2}", 100.0 * self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub acc: Rational,
    pub tpr: Rational,
    pub fpr: Rational,
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassMetrics> {
    if c.tp + c.fn_ == 0 || c.fp + c.tn == 0 {
        return Err(Error::EmptyClass);
    }
    Ok(ClassMetrics {
        acc: Rational {
            num: c.tp + c.tn,
            den: c.total(),
        },
        tpr: Rational {
            num: c.tp,
            den: c.tp + c.fn_,
        },
        fpr: Rational {
            num: c.fp,
            den: c.fp + c.tn,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_prob: Option<f64>,
    pub frac_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

fn check_inputs(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Equal-width binned expected calibration error; empty bins contribute nothing.
pub fn calibration_report(probs: &[f64], labels: &[u8], bins: usize) -> Result<CalibrationReport> {
    check_inputs(probs, labels)?;
    if bins == 0 {
        return Err(Error::InvalidConfig("bin count must be positive".into()));
    }
    let mut sum_p = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sum_p[b] += p;
        pos[b] += y as usize;
        count[b] += 1;
    }
    let n = probs.len() as f64;
    let mut ece = 0.0;
    let table = (0..bins)
        .map(|b| {
            let (mean_prob, frac_positive) = if count[b] > 0 {
                let mp = sum_p[b] / count[b] as f64;
                let fp = pos[b] as f64 / count[b] as f64;
                ece += count[b] as f64 / n * (mp - fp).abs();
                (Some(mp), Some(fp))
            } else {
                (None, None)
            };
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_prob,
                frac_positive,
            }
        })
        .collect();
    Ok(CalibrationReport { ece, bins: table })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetBenefitRow {
    pub threshold: f64,
    pub model: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Net benefit `TP/N - FP/N * t/(1-t)` of treating everyone with `prob >= t`.
pub fn decision_curve(probs: &[f64], labels: &[u8], thresholds: &[f64]) -> Result<Vec<NetBenefitRow>> {
    check_inputs(probs, labels)?;
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::InvalidConfig(format!("threshold {t} outside (0, 1)")));
    }
    let n = probs.len() as f64;
    let prevalence = labels.iter().filter(|&&y| y == 1).count() as f64 / n;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let odds = t / (1.0 - t);
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&p, &y) in probs.iter().zip(labels) {
                if p >= t {
                    if y == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            NetBenefitRow {
                threshold: t,
                model: tp as f64 / n - fp as f64 / n * odds,
                treat_all: prevalence - (1.0 - prevalence) * odds,
                treat_none: 0.0,
            }
        })
        .collect())
}

//! Clinical records, canonical prompt text, and the embedding stage that
//! turns a record into a fixed-length vector.
//!
//! Two embedders are provided. The hashing embedder maps character 3-grams of
//! the prompt into `d` signed buckets and L2-normalizes the result, so the whole
//! pipeline runs offline and deterministically. The table embedder looks up
//! precomputed vectors by subject id, which is how vectors from an external
//! language model are injected.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub subject_id: String,
    pub age: f64,
    pub sex: Sex,
    pub disease_duration: f64,
    pub updrs3_pre: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scales: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updrs3_post: Option<f64>,
}

impl ClinicalRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            subject: self.subject_id.clone(),
            reason,
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(bad(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("age", self.age)?;
        nonneg("disease_duration", self.disease_duration)?;
        nonneg("updrs3_pre", self.updrs3_pre)?;
        if let Some(post) = self.updrs3_post {
            nonneg("updrs3_post", post)?;
        }
        for (name, v) in &self.scales {
            if !v.is_finite() {
                return Err(bad(format!("scale {name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Scales that always appear in the prompt, in this order.
pub const KNOWN_SCALES: [&str; 4] = ["MoCA", "MMSE", "HAMD", "HAMA"];

/// Canonical preoperative prompt. Field order and formatting are fixed and
/// the post-operative score is never included.
pub fn serialize_prompt(rec: &ClinicalRecord) -> String {
    let mut s = format!(
        "Age: {:.1} y. Sex: {}. Disease duration: {:.1} y. UPDRS-III off: {:.1}.",
        rec.age,
        rec.sex.as_str(),
        rec.disease_duration,
        rec.updrs3_pre
    );
    for name in KNOWN_SCALES {
        match rec.scales.get(name) {
            Some(v) => write!(s, " {name}: {v:.1}.").unwrap(),
            None => write!(s, " {name}: not recorded.").unwrap(),
        }
    }
    for (name, v) in &rec.scales {
        if !KNOWN_SCALES.contains(&name.as_str()) {
            write!(s, " {name}: {v:.1}.").unwrap();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEmbedding {
    pub vector: Vec<f64>,
    pub embedder_id: String,
}

impl ClinicalEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Hashing { dim: usize, seed: u64 },
    File { path: PathBuf },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing { dim: 64, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub enum Embedder {
    Hashing { dim: usize, seed: u64 },
    Table { dim: usize, id: String, vectors: HashMap<String, Vec<f64>> },
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self> {
        match spec {
            EmbedderSpec::Hashing { dim, seed } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
                }
                Ok(Embedder::Hashing { dim: *dim, seed: *seed })
            }
            EmbedderSpec::File { path } => Self::load_table(path),
        }
    }

    /// Loads a JSON object mapping subject id to a vector.
    pub fn load_table(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vectors: HashMap<String, Vec<f64>> =
            serde_json::from_str(&text).map_err(|e| Error::parse("embedding table", path, e))?;
        let mut dims = vectors.values().map(Vec::len);
        let dim = dims.next().ok_or_else(|| Error::parse("embedding table", path, "no entries"))?;
        if dim == 0 || dims.any(|d| d != dim) {
            return Err(Error::parse("embedding table", path, "vectors must share a positive length"));
        }
        if vectors.values().flatten().any(|v| !v.is_finite()) {
            return Err(Error::parse("embedding table", path, "non-finite entry"));
        }
        let id = format!("file:{}", path.file_name().and_then(|s| s.to_str()).unwrap_or("table"));
        Ok(Embedder::Table { dim, id, vectors })
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Hashing { dim, .. } | Embedder::Table { dim, .. } => *dim,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Embedder::Hashing { dim, seed } => format!("hashing-3gram-d{dim}-s{seed}"),
            Embedder::Table { id, .. } => id.clone(),
        }
    }

    pub fn embed(&self, rec: &ClinicalRecord) -> Result<ClinicalEmbedding> {
        let vector = match self {
            Embedder::Hashing { dim, seed } => {
                let v = hash_embed(&serialize_prompt(rec), *dim, *seed);
                if v.iter().all(|&x| x == 0.0) {
                    return Err(Error::ZeroVector(rec.subject_id.clone()));
                }
                v
            }
            Embedder::Table { vectors, .. } => vectors
                .get(&rec.subject_id)
                .cloned()
                .ok_or_else(|| Error::UnknownSubject(rec.subject_id.clone()))?,
        };
        Ok(ClinicalEmbedding {
            vector,
            embedder_id: self.id(),
        })
    }
}

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix finalizer spreads the low bits used for bucketing
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of character 3-grams, L2-normalized.
/// Returns all zeros when the text has fewer than three characters or the
/// buckets cancel exactly.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let chars: Vec<char> = text.chars().collect();
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a64(seed, &buf[..len]);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

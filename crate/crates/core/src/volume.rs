//! 3-D grid containers and the `.vol` + `.vol.json` container format.
//!
//! All grids are stored slice-major: voxel `(i, j, k)` lives at
//! `i * h * w + j * w + k` for dims `(s, h, w)`. Physical coordinates are
//! `x = (i * d1, j * d2, k * d3)` in mm, with the origin at voxel `(0, 0, 0)`.
//!
//! On disk a grid is a raw little-endian payload (`name.vol`) next to a JSON
//! header (`name.vol.json`) carrying `dims`, `spacing_mm`, `dtype`,
//! `channels` and `kind`. Displacement fields are stored planar: all of
//! `u1`, then `u2`, then `u3`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("zero-sized axis in {dims:?}")));
        }
        if spacing.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Unit-spacing geometry; panics on zero dims, intended for tests and demos.
    pub fn cube(n: usize) -> Self {
        Self::new([n, n, n], [1.0; 3]).expect("cube geometry")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [_, h, w] = self.dims;
        [idx / (h * w), (idx / w) % h, idx % w]
    }

    /// Physical position (mm) of a voxel center.
    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            i as f64 * self.spacing[0],
            j as f64 * self.spacing[1],
            k as f64 * self.spacing[2],
        ]
    }

    /// True when the voxel touches no boundary face.
    #[inline]
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        let [s, h, w] = self.dims;
        i > 0 && j > 0 && k > 0 && i + 1 < s && j + 1 < h && k + 1 < w
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub(crate) fn ensure_same(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(Error::GeometryMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    geometry: GridGeometry,
    data: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(geometry: GridGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::GeometryMismatch(format!(
                "data length {} does not match grid of {} voxels",
                data.len(),
                geometry.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData);
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: GridGeometry, value: f64) -> Self {
        Self {
            geometry,
            data: vec![value; geometry.len()],
        }
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self::filled(geometry, 0.0)
    }

    /// Builds a volume from a function of voxel indices.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let [s, h, w] = geometry.dims();
        let mut data = Vec::with_capacity(geometry.len());
        for i in 0..s {
            for j in 0..h {
                for k in 0..w {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.geometry.index(i, j, k)]
    }

    /// Sets one voxel. Non-finite values are rejected to keep the invariant.
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFiniteData);
        }
        let idx = self.geometry.index(i, j, k);
        self.data[idx] = value;
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.geometry, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Dense displacement `u` with `phi(x) = x + u(x)` (template to subject).
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    geometry: GridGeometry,
    channels: [Vec<f64>; 3],
}

impl DeformationField {
    pub fn new(geometry: GridGeometry, channels: [Vec<f64>; 3]) -> Result<Self> {
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != geometry.len() {
                return Err(Error::GeometryMismatch(format!(
                    "displacement channel {} has {} values, grid has {}",
                    c + 1,
                    ch.len(),
                    geometry.len()
                )));
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteData);
            }
        }
        Ok(Self { geometry, channels })
    }

    pub fn identity(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            channels: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Samples `u` at every voxel center from a function of physical position.
    pub fn from_fn(geometry: GridGeometry, mut u: impl FnMut([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let n = geometry.len();
        let mut channels = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for idx in 0..n {
            let [i, j, k] = geometry.coords(idx);
            let d = u(geometry.position(i, j, k));
            for c in 0..3 {
                channels[c].push(d[c]);
            }
        }
        Self::new(geometry, channels)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>; 3] {
        &self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let idx = self.geometry.index(i, j, k);
        [self.channels[0][idx], self.channels[1][idx], self.channels[2][idx]]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: [f64; 3]) -> Result<()> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteData);
        }
        let idx = self.geometry.index(i, j, k);
        for c in 0..3 {
            self.channels[c][idx] = value[c];
        }
        Ok(())
    }
}

/// Atlas parcellation; label 0 is background, 1..=m are regions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: GridGeometry,
    labels: Vec<u16>,
}

impl LabelVolume {
    pub fn new(geometry: GridGeometry, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::GeometryMismatch(format!(
                "label count {} does not match grid of {} voxels",
                labels.len(),
                geometry.len()
            )));
        }
        Ok(Self { geometry, labels })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u16 {
        self.labels[self.geometry.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, label: u16) {
        let idx = self.geometry.index(i, j, k);
        self.labels[idx] = label;
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Displacement(DeformationField),
    Labels(LabelVolume),
}

impl Volume {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            Volume::Scalar(v) => v.geometry(),
            Volume::Displacement(v) => v.geometry(),
            Volume::Labels(v) => v.geometry(),
        }
    }

    pub fn kind(&self) -> VolumeKind {
        match self {
            Volume::Scalar(_) => VolumeKind::Scalar,
            Volume::Displacement(_) => VolumeKind::Displacement,
            Volume::Labels(_) => VolumeKind::Labels,
        }
    }
}

impl From<ScalarVolume> for Volume {
    fn from(v: ScalarVolume) -> Self {
        Volume::Scalar(v)
    }
}

impl From<DeformationField> for Volume {
    fn from(v: DeformationField) -> Self {
        Volume::Displacement(v)
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Labels(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Scalar,
    Displacement,
    Labels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U16,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub channels: usize,
    pub kind: VolumeKind,
    #[serde(default = "little_endian", skip_serializing_if = "Option::is_none")]
    pub byte_order: Option<String>,
}

fn little_endian() -> Option<String> {
    Some("little".to_string())
}

/// Path of the JSON sidecar for a payload path.
pub fn header_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let hpath = header_path(path);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: hpath.clone(),
        reason: e.to_string(),
    })?;
    let malformed = |reason: String| Error::MalformedHeader {
        path: hpath.clone(),
        reason,
    };
    if let Some(order) = &header.byte_order {
        if order != "little" {
            return Err(malformed(format!("unsupported byte order {order:?}")));
        }
    }
    match (header.kind, header.dtype, header.channels) {
        (VolumeKind::Scalar, Dtype::F32 | Dtype::F64, 1) => {}
        (VolumeKind::Displacement, Dtype::F32 | Dtype::F64, 3) => {}
        (VolumeKind::Labels, Dtype::U16, 1) => {}
        (kind, dtype, ch) => {
            return Err(malformed(format!(
                "unsupported combination kind={kind:?} dtype={dtype:?} channels={ch}"
            )))
        }
    }
    GridGeometry::new(header.dims, header.spacing_mm).map_err(|e| malformed(e.to_string()))?;
    Ok(header)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let geometry = GridGeometry::new(header.dims, header.spacing_mm)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = geometry.len() * header.channels * header.dtype.width();
    if bytes.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(match header.kind {
        VolumeKind::Labels => {
            let labels = bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            Volume::Labels(LabelVolume::new(geometry, labels)?)
        }
        VolumeKind::Scalar => Volume::Scalar(ScalarVolume::new(geometry, decode_floats(&bytes, header.dtype))?),
        VolumeKind::Displacement => {
            let all = decode_floats(&bytes, header.dtype);
            let n = geometry.len();
            let channels = [all[..n].to_vec(), all[n..2 * n].to_vec(), all[2 * n..].to_vec()];
            Volume::Displacement(DeformationField::new(geometry, channels)?)
        }
    })
}

fn decode_floats(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::U16 => unreachable!("labels are decoded separately"),
    }
}

/// Writes payload and sidecar. Float grids are always written as f64.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let geometry = *volume.geometry();
    let (dtype, channels, payload) = match volume {
        Volume::Scalar(v) => (Dtype::F64, 1, encode_f64(v.data().iter())),
        Volume::Displacement(v) => (Dtype::F64, 3, encode_f64(v.channels().iter().flatten())),
        Volume::Labels(v) => (
            Dtype::U16,
            1,
            v.labels().iter().flat_map(|l| l.to_le_bytes()).collect(),
        ),
    };
    let header = VolumeHeader {
        dims: geometry.dims(),
        spacing_mm: geometry.spacing(),
        dtype,
        channels,
        kind: volume.kind(),
        byte_order: little_endian(),
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let hpath = header_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))?;
    Ok(())
}

fn encode_f64<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn wrong_kind(path: &Path, want: VolumeKind, got: VolumeKind) -> Error {
    Error::MalformedHeader {
        path: header_path(path),
        reason: format!("expected kind {want:?}, found {got:?}"),
    }
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    match read_volume(path)? {
        Volume::Scalar(v) => Ok(v),
        other => Err(wrong_kind(path, VolumeKind::Scalar, other.kind())),
    }
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DeformationField> {
    let path = path.as_ref();
    match read_volume(path)? {
        Volume::Displacement(v) => Ok(v),
        other => Err(wrong_kind(path, VolumeKind::Displacement, other.kind())),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    match read_volume(path)? {
        Volume::Labels(v) => Ok(v),
        other => Err(wrong_kind(path, VolumeKind::Labels, other.kind())),
    }
}

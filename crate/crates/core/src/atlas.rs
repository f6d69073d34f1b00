//! Atlas parcellations: one-hot region masks over in-brain voxels, region
//! pooling, and procedural Voronoi parcellations for desk-scale grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{GridGeometry, LabelVolume, ScalarVolume};

const PARCELLATION_ATTEMPTS: usize = 16;

/// One-hot view of a label volume: `M[r, v] = 1` iff `label(v) = r`.
/// Regions are 1-based; label 0 is background and belongs to no region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    m: usize,
    labels: LabelVolume,
    counts: Vec<usize>,
}

impl RegionMasks {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn labels(&self) -> &LabelVolume {
        &self.labels
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.labels.geometry()
    }

    /// Voxel count of region `r` (1-based).
    pub fn count(&self, r: usize) -> usize {
        self.counts[r - 1]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn in_brain_voxels(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Materialized mask of region `r` (1-based) as 0/1 bytes.
    pub fn one_hot(&self, r: usize) -> Vec<u8> {
        self.labels
            .labels()
            .iter()
            .map(|&l| u8::from(l as usize == r))
            .collect()
    }

    /// `sum_r M[r, v]` for every voxel, by direct summation over all masks.
    pub fn partition_sums(&self) -> Vec<u32> {
        let mut sums = vec![0u32; self.labels.labels().len()];
        for r in 1..=self.m {
            for (s, bit) in sums.iter_mut().zip(self.one_hot(r)) {
                *s += bit as u32;
            }
        }
        sums
    }

    pub fn in_brain_indicator(&self) -> ScalarVolume {
        let data = self
            .labels
            .labels()
            .iter()
            .map(|&l| if l == 0 { 0.0 } else { 1.0 })
            .collect();
        ScalarVolume::new(*self.geometry(), data).expect("indicator is finite")
    }

    /// Content hash identifying this parcellation in checkpoints.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.m as u64).to_le_bytes());
        for d in self.geometry().dims() {
            h.update((d as u64).to_le_bytes());
        }
        for s in self.geometry().spacing() {
            h.update(s.to_le_bytes());
        }
        for l in self.labels.labels() {
            h.update(l.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn build_masks(labels: &LabelVolume, m: usize) -> Result<RegionMasks> {
    if m == 0 {
        return Err(Error::InvalidConfig("region count must be positive".into()));
    }
    let mut counts = vec![0usize; m];
    for &l in labels.labels() {
        let l = l as usize;
        if l > m {
            return Err(Error::LabelOutOfRange { label: l, m });
        }
        if l > 0 {
            counts[l - 1] += 1;
        }
    }
    if let Some(r) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyRegion(r + 1));
    }
    Ok(RegionMasks {
        m,
        labels: labels.clone(),
        counts,
    })
}

/// Mean of `vol` over each region, in region order.
pub fn region_means(vol: &ScalarVolume, masks: &RegionMasks) -> Result<Vec<f64>> {
    vol.geometry().ensure_same(masks.geometry(), "region_means")?;
    let mut sums = vec![0.0; masks.m];
    for (&l, &v) in masks.labels.labels().iter().zip(vol.data()) {
        if l > 0 {
            sums[l as usize - 1] += v;
        }
    }
    Ok(sums
        .into_iter()
        .zip(&masks.counts)
        .map(|(s, &c)| s / c as f64)
        .collect())
}

/// Ellipsoidal "brain" occupying the central part of the grid.
pub fn brain_mask(geometry: &GridGeometry) -> Vec<bool> {
    let dims = geometry.dims();
    let spacing = geometry.spacing();
    let center: [f64; 3] = std::array::from_fn(|a| (dims[a] - 1) as f64 * spacing[a] / 2.0);
    let semi: [f64; 3] = std::array::from_fn(|a| (0.45 * dims[a] as f64 * spacing[a]).max(spacing[a] * 0.5));
    (0..geometry.len())
        .map(|idx| {
            let [i, j, k] = geometry.coords(idx);
            let x = geometry.position(i, j, k);
            (0..3).map(|a| ((x[a] - center[a]) / semi[a]).powi(2)).sum::<f64>() <= 1.0
        })
        .collect()
}

/// Voronoi parcellation of the ellipsoidal brain mask around `m` seed voxels
/// drawn from `seed`. Voxels outside the mask get label 0.
pub fn procedural_parcellation(geometry: &GridGeometry, m: usize, seed: u64) -> Result<LabelVolume> {
    if m == 0 || m > u16::MAX as usize {
        return Err(Error::InvalidConfig(format!("region count {m} out of range")));
    }
    let mask = brain_mask(geometry);
    let inside: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if m > inside.len() {
        return Err(Error::InvalidConfig(format!(
            "{m} regions requested but only {} in-brain voxels",
            inside.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PARCELLATION_ATTEMPTS {
        let picks = rand::seq::index::sample(&mut rng, inside.len(), m);
        let seeds: Vec<[f64; 3]> = picks
            .iter()
            .map(|p| {
                let [i, j, k] = geometry.coords(inside[p]);
                geometry.position(i, j, k)
            })
            .collect();
        let mut labels = vec![0u16; geometry.len()];
        for &idx in &inside {
            let [i, j, k] = geometry.coords(idx);
            let x = geometry.position(i, j, k);
            let mut best = (f64::INFINITY, 0usize);
            for (r, s) in seeds.iter().enumerate() {
                let d2 = (0..3).map(|a| (x[a] - s[a]).powi(2)).sum::<f64>();
                if d2 < best.0 {
                    best = (d2, r);
                }
            }
            labels[idx] = (best.1 + 1) as u16;
        }
        let lv = LabelVolume::new(*geometry, labels)?;
        if build_masks(&lv, m).is_ok() {
            return Ok(lv);
        }
        // burn a draw so the next attempt differs
        let _: u64 = rng.random();
    }
    Err(Error::ParcellationFailed(PARCELLATION_ATTEMPTS))
}

/// Physical centroid (mm) of every region.
pub fn region_centroids(masks: &RegionMasks) -> Vec<[f64; 3]> {
    let g = masks.geometry();
    let mut sums = vec![[0.0; 3]; masks.m];
    for (idx, &l) in masks.labels.labels().iter().enumerate() {
        if l > 0 {
            let [i, j, k] = g.coords(idx);
            let x = g.position(i, j, k);
            for a in 0..3 {
                sums[l as usize - 1][a] += x[a];
            }
        }
    }
    sums.into_iter()
        .zip(&masks.counts)
        .map(|(s, &c)| s.map(|v| v / c as f64))
        .collect()
}

use serde::{Deserialize, Serialize};

use super::{find_max_pixel, intensity, Dataset, PixelCoord, PIXELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group_id: usize,
    /// Sum over pixels of the per-pixel population standard deviation.
    pub diversity_weight_raw: f64,
    /// `min(1, raw / normalization_constant)`.
    pub diversity_weight: f64,
    /// Pixel sum of the reference sample.
    pub intensity: f64,
    /// Highest pixel of the reference sample.
    pub center: PixelCoord,
    /// Lowest sample index in the group.
    pub reference_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Indexed by group id.
    pub per_group: Vec<GroupStats>,
    pub normalization_constant: f64,
}

impl DatasetStats {
    pub fn group(&self, g: usize) -> &GroupStats {
        &self.per_group[g]
    }
}

/// Per-group diversity weight, reference intensity, and reference center.
///
/// The normalization divisor is the total sample count of the dataset.
pub fn compute_stats(dataset: &Dataset) -> Result<DatasetStats> {
    if dataset.is_empty() {
        return Err(Error::Empty("cannot compute stats of an empty dataset".into()));
    }
    let normalization_constant = dataset.len() as f64;
    let samples = dataset.samples();
    let per_group = dataset
        .groups()
        .iter()
        .enumerate()
        .map(|(group_id, members)| {
            let reference_index = *members.iter().min().expect("groups are non-empty");
            let reference = &samples[reference_index].response;
            let raw = pixel_std_sum(members.iter().map(|&i| samples[i].response.pixels()));
            GroupStats {
                group_id,
                diversity_weight_raw: raw,
                diversity_weight: (raw / normalization_constant).min(1.0),
                intensity: intensity(reference),
                center: find_max_pixel(reference),
                reference_index,
            }
        })
        .collect();
    Ok(DatasetStats {
        per_group,
        normalization_constant,
    })
}

/// Σ_ij sqrt(Σ_t (x_ij^t − μ_ij)² / |X|), accumulated in member order.
fn pixel_std_sum<'a>(members: impl Iterator<Item = &'a [f32]> + Clone) -> f64 {
    let n = members.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mut mean = vec![0.0f64; PIXELS];
    for x in members.clone() {
        for (m, &p) in mean.iter_mut().zip(x) {
            *m += p as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sq = vec![0.0f64; PIXELS];
    for x in members {
        for ((s, &m), &p) in sq.iter_mut().zip(&mean).zip(x) {
            let d = p as f64 - m;
            *s += d * d;
        }
    }
    sq.iter().map(|s| (s / n as f64).sqrt()).sum()
}

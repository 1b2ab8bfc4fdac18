//! Calorimeter dataset model: conditioning vectors, 56×30 responses, grouping
//! by identical conditions, and the per-group preprocessing statistics.

pub(crate) mod io;
mod stats;
mod synth;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_stats, save_dataset, save_stats};
pub use stats::{compute_stats, DatasetStats, GroupStats};
pub use synth::{synth_dataset, SynthProfile};

pub const HEIGHT: usize = 56;
pub const WIDTH: usize = 30;
pub const PIXELS: usize = HEIGHT * WIDTH;
pub const COND_DIM: usize = 9;

/// The nine physical variables a response is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVector {
    pub energy: f32,
    pub mass: f32,
    pub charge: f32,
    pub position: [f32; 3],
    pub momentum: [f32; 3],
}

impl ConditioningVector {
    pub fn from_array(v: [f32; COND_DIM]) -> Result<Self> {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("conditioning component {i}")));
        }
        if v[0] <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "energy must be positive, got {}",
                v[0]
            )));
        }
        Ok(Self {
            energy: v[0],
            mass: v[1],
            charge: v[2],
            position: [v[3], v[4], v[5]],
            momentum: [v[6], v[7], v[8]],
        })
    }

    pub fn to_array(&self) -> [f32; COND_DIM] {
        let [x, y, z] = self.position;
        let [px, py, pz] = self.momentum;
        [self.energy, self.mass, self.charge, x, y, z, px, py, pz]
    }

    /// Bit pattern used for group identity.
    pub fn bit_key(&self) -> [u32; COND_DIM] {
        self.to_array().map(f32::to_bits)
    }
}

/// Row/column coordinate on the response grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub k: f64,
    pub l: f64,
}

impl PixelCoord {
    pub fn distance(&self, other: &PixelCoord) -> f64 {
        (self.k - other.k).hypot(self.l - other.l)
    }
}

/// A 56×30 calorimeter image, row-major, all pixels finite and ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pixels: Vec<f32>,
}

impl Response {
    pub fn new(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::Shape(format!(
                "response needs {PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("response pixel {i}")));
        }
        if let Some(i) = pixels.iter().position(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "response pixel {i} is negative ({})",
                pixels[i]
            )));
        }
        Ok(Self { pixels })
    }

    pub fn zeros() -> Self {
        Self {
            pixels: vec![0.0; PIXELS],
        }
    }

    pub fn filled(value: f32) -> Self {
        assert!(value >= 0.0 && value.is_finite());
        Self {
            pixels: vec![value; PIXELS],
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, k: usize, l: usize) -> f32 {
        self.pixels[k * WIDTH + l]
    }

    pub fn set(&mut self, k: usize, l: usize, value: f32) {
        assert!(value >= 0.0 && value.is_finite());
        self.pixels[k * WIDTH + l] = value;
    }
}

/// Pixel sum of a response.
pub fn intensity(x: &Response) -> f64 {
    x.pixels.iter().map(|&p| p as f64).sum()
}

/// Location of the largest pixel; ties go to the smallest row-major index.
pub fn find_max_pixel(x: &Response) -> PixelCoord {
    let mut best = 0;
    for (i, &p) in x.pixels.iter().enumerate() {
        if p > x.pixels[best] {
            best = i;
        }
    }
    PixelCoord {
        k: (best / WIDTH) as f64,
        l: (best % WIDTH) as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub condition: ConditioningVector,
    pub response: Response,
    pub group_id: usize,
}

/// Samples plus the table of condition groups (indexed by group id).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    groups: Vec<Vec<usize>>,
    seed: Option<u64>,
    profile: Option<SynthProfile>,
}

impl Dataset {
    /// Groups samples by bit-identical conditioning vectors, numbering
    /// groups in order of first appearance.
    pub fn from_pairs(pairs: Vec<(ConditioningVector, Response)>) -> Self {
        let mut index: HashMap<[u32; COND_DIM], usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut samples = Vec::with_capacity(pairs.len());
        for (i, (condition, response)) in pairs.into_iter().enumerate() {
            let next = groups.len();
            let group_id = *index.entry(condition.bit_key()).or_insert(next);
            if group_id == next {
                groups.push(Vec::new());
            }
            groups[group_id].push(i);
            samples.push(Sample {
                condition,
                response,
                group_id,
            });
        }
        Self {
            samples,
            groups,
            seed: None,
            profile: None,
        }
    }

    /// Builds a dataset from an explicit group table, checking that every
    /// sample sits in exactly one group of identical conditions.
    pub fn with_groups(
        conditions: Vec<ConditioningVector>,
        responses: Vec<Response>,
        groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if conditions.len() != responses.len() {
            return Err(Error::Shape(format!(
                "{} conditions but {} responses",
                conditions.len(),
                responses.len()
            )));
        }
        let n = conditions.len();
        let mut owner = vec![usize::MAX; n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("group {g} is empty")));
            }
            for &i in members {
                if i >= n {
                    return Err(Error::InvalidArgument(format!(
                        "group {g} references sample {i} of {n}"
                    )));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} appears in groups {} and {g}",
                        owner[i]
                    )));
                }
                owner[i] = g;
            }
            let key = conditions[members[0]].bit_key();
            if members.iter().any(|&i| conditions[i].bit_key() != key) {
                return Err(Error::InvalidArgument(format!(
                    "group {g} mixes different conditioning vectors"
                )));
            }
        }
        if let Some(i) = owner.iter().position(|&g| g == usize::MAX) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} belongs to no group"
            )));
        }
        let samples = conditions
            .into_iter()
            .zip(responses)
            .zip(owner)
            .map(|((condition, response), group_id)| Sample {
                condition,
                response,
                group_id,
            })
            .collect();
        Ok(Self {
            samples,
            groups,
            seed: None,
            profile: None,
        })
    }

    pub fn with_provenance(mut self, seed: Option<u64>, profile: Option<SynthProfile>) -> Self {
        self.seed = seed;
        self.profile = profile;
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn profile(&self) -> Option<&SynthProfile> {
        self.profile.as_ref()
    }

    /// Condition shared by every member of group `g`.
    pub fn group_condition(&self, g: usize) -> &ConditioningVector {
        &self.samples[self.groups[g][0]].condition
    }

    /// New dataset holding only the listed groups (renumbered in the given
    /// order); samples keep their relative order.
    pub fn subset_groups(&self, group_ids: &[usize]) -> Dataset {
        let mut renumber = vec![usize::MAX; self.groups.len()];
        for (new, &old) in group_ids.iter().enumerate() {
            renumber[old] = new;
        }
        let mut groups = vec![Vec::new(); group_ids.len()];
        let mut samples = Vec::new();
        for s in &self.samples {
            let g = renumber[s.group_id];
            if g == usize::MAX {
                continue;
            }
            groups[g].push(samples.len());
            samples.push(Sample {
                group_id: g,
                ..s.clone()
            });
        }
        Dataset {
            samples,
            groups,
            seed: self.seed,
            profile: self.profile.clone(),
        }
    }
}

/// Splits by condition group: `ceil(ratio * n_groups)` shuffled groups go to
/// the first half, the rest to the second.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    let n = dataset.n_groups();
    // Tolerance keeps e.g. 0.7 * 10 = 7.000000000000001 from rounding up.
    let n_first = ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (first, second) = order.split_at(n_first.min(n));
    let mut first = first.to_vec();
    let mut second = second.to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((dataset.subset_groups(&first), dataset.subset_groups(&second)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(e: f32) -> ConditioningVector {
        ConditioningVector::from_array([e, 0.938, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, e]).unwrap()
    }

    fn toy(n_groups: usize, per_group: usize) -> Dataset {
        let mut pairs = Vec::new();
        for g in 0..n_groups {
            for t in 0..per_group {
                pairs.push((cond(1.0 + g as f32), Response::filled(t as f32)));
            }
        }
        Dataset::from_pairs(pairs)
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(intensity(&Response::zeros()), 0.0);
        assert_eq!(intensity(&Response::filled(1.0)), 1680.0);
        let mut x = Response::zeros();
        x.set(3, 3, 1.5);
        x.set(40, 20, 2.5);
        assert_eq!(intensity(&x), 4.0);
    }

    #[test]
    fn max_pixel_examples() {
        let mut x = Response::zeros();
        x.set(12, 7, 5.0);
        assert_eq!(find_max_pixel(&x), PixelCoord { k: 12.0, l: 7.0 });
        assert_eq!(find_max_pixel(&Response::zeros()), PixelCoord { k: 0.0, l: 0.0 });
        let mut x = Response::zeros();
        x.set(10, 2, 3.0);
        x.set(3, 4, 3.0);
        assert_eq!(find_max_pixel(&x), PixelCoord { k: 3.0, l: 4.0 });
    }

    #[test]
    fn response_rejects_bad_pixels() {
        assert!(matches!(Response::new(vec![0.0; 10]), Err(Error::Shape(_))));
        let mut p = vec![0.0; PIXELS];
        p[5] = -1.0;
        assert!(Response::new(p.clone()).is_err());
        p[5] = f32::NAN;
        assert!(matches!(Response::new(p), Err(Error::NonFinite(_))));
    }

    #[test]
    fn conditioning_validation() {
        assert!(ConditioningVector::from_array([0.0; 9]).is_err());
        let mut v = [1.0; 9];
        v[4] = f32::INFINITY;
        assert!(ConditioningVector::from_array(v).is_err());
        let c = cond(3.0);
        assert_eq!(ConditioningVector::from_array(c.to_array()).unwrap(), c);
    }

    #[test]
    fn grouping_uses_exact_equality() {
        let ds = toy(3, 4);
        assert_eq!(ds.n_groups(), 3);
        assert_eq!(ds.groups()[1], vec![4, 5, 6, 7]);
        assert!(ds.samples().iter().all(|s| ds.groups()[s.group_id].len() == 4));
    }

    #[test]
    fn with_groups_rejects_mixed_conditions() {
        let conds = vec![cond(1.0), cond(2.0)];
        let resp = vec![Response::zeros(), Response::zeros()];
        assert!(Dataset::with_groups(conds.clone(), resp.clone(), vec![vec![0, 1]]).is_err());
        assert!(Dataset::with_groups(conds.clone(), resp.clone(), vec![vec![0]]).is_err());
        assert!(Dataset::with_groups(conds, resp, vec![vec![0], vec![1]]).is_ok());
    }

    #[test]
    fn split_counts() {
        let (a, b) = split(&toy(10, 2), 0.8, 1).unwrap();
        assert_eq!((a.n_groups(), b.n_groups()), (8, 2));
        let (a, b) = split(&toy(2, 2), 0.5, 1).unwrap();
        assert_eq!((a.n_groups(), b.n_groups()), (1, 1));
        let (a, b) = split(&toy(10, 2), 0.7, 3).unwrap();
        assert_eq!((a.n_groups(), b.n_groups()), (7, 3));
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let ds = toy(4, 2);
        for r in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(split(&ds, r, 0).is_err());
        }
    }

    #[test]
    fn split_is_deterministic_and_keeps_groups_whole() {
        let ds = toy(12, 3);
        let first = split(&ds, 0.8, 42).unwrap();
        assert_eq!(first, split(&ds, 0.8, 42).unwrap());
        let (a, b) = first;
        let key = |d: &Dataset| -> Vec<[u32; 9]> {
            (0..d.n_groups()).map(|g| d.group_condition(g).bit_key()).collect()
        };
        let (ka, kb) = (key(&a), key(&b));
        assert!(ka.iter().all(|k| !kb.contains(k)));
        assert_eq!(a.len() + b.len(), ds.len());
        assert!(a.groups().iter().chain(b.groups()).all(|g| g.len() == 3));
    }
}

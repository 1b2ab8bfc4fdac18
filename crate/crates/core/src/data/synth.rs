//! Seeded generator of ZDC-like showers.
//!
//! Each group draws one conditioning vector. The condition fixes a shower
//! center (affine in transverse position and momentum, clipped to the grid
//! interior), a base intensity (linear in energy) and a per-group diversity
//! scale in `[0.1, 1]` driven by the longitudinal position. Member responses
//! are Gaussian blobs whose center jitter and log-normal intensity noise
//! are multiplied by that diversity scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ConditioningVector, Dataset, Response, HEIGHT, WIDTH};
use crate::error::{Error, Result};

/// (mass in GeV, charge) of the particle species the generator draws from.
const SPECIES: [(f32, f32); 5] = [
    (0.938_272, 1.0),
    (0.139_570, 1.0),
    (0.139_570, -1.0),
    (0.493_677, 1.0),
    (0.939_565, 0.0),
];

/// Nominal centers stay this many shower widths away from the grid edge.
const CENTER_MARGIN_WIDTHS: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    /// Uniform energy range of the drawn conditions.
    pub energy_min: f64,
    pub energy_max: f64,
    /// Base pixel sum per unit energy.
    pub intensity_per_energy: f64,
    /// Shower standard deviation along rows and columns, in pixels.
    pub shower_width_k: f64,
    pub shower_width_l: f64,
    /// Pixels of center displacement per unit of (position + momentum / 2).
    pub center_gain_k: f64,
    pub center_gain_l: f64,
    /// Standard deviation of the drawn transverse positions.
    pub position_sigma: f64,
    /// Standard deviation of the drawn transverse momenta.
    pub momentum_sigma: f64,
    /// Center jitter (pixels) of a maximally diverse group.
    pub center_jitter: f64,
    /// Log-normal sigma of the intensity of a maximally diverse group.
    pub intensity_noise: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            energy_min: 10.0,
            energy_max: 100.0,
            intensity_per_energy: 2.0,
            shower_width_k: 3.0,
            shower_width_l: 2.0,
            center_gain_k: 8.0,
            center_gain_l: 4.0,
            position_sigma: 1.0,
            momentum_sigma: 0.5,
            center_jitter: 1.5,
            intensity_noise: 0.25,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("energy_min", self.energy_min),
            ("intensity_per_energy", self.intensity_per_energy),
            ("shower_width_k", self.shower_width_k),
            ("shower_width_l", self.shower_width_l),
            ("position_sigma", self.position_sigma),
            ("momentum_sigma", self.momentum_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "profile.{name} must be positive, got {v}"
                )));
            }
        }
        let non_negative = [
            ("center_gain_k", self.center_gain_k),
            ("center_gain_l", self.center_gain_l),
            ("center_jitter", self.center_jitter),
            ("intensity_noise", self.intensity_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "profile.{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.energy_max >= self.energy_min && self.energy_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "profile energy range [{}, {}] is empty",
                self.energy_min, self.energy_max
            )));
        }
        Ok(())
    }

    /// Nominal (k, l) shower center of a condition.
    pub fn center(&self, c: &ConditioningVector) -> (f64, f64) {
        let [x, y, _] = c.position.map(f64::from);
        let [px, py, _] = c.momentum.map(f64::from);
        let k = HEIGHT as f64 / 2.0 + self.center_gain_k * (x + 0.5 * px);
        let l = WIDTH as f64 / 2.0 + self.center_gain_l * (y + 0.5 * py);
        let clip = |v: f64, len: usize, width: f64| {
            let margin = (CENTER_MARGIN_WIDTHS * width).min((len as f64 - 1.0) / 2.0);
            v.clamp(margin, len as f64 - 1.0 - margin)
        };
        (
            clip(k, HEIGHT, self.shower_width_k),
            clip(l, WIDTH, self.shower_width_l),
        )
    }

    pub fn base_intensity(&self, c: &ConditioningVector) -> f64 {
        self.intensity_per_energy * c.energy as f64
    }

    /// Multiplier in `[0.1, 1]` on jitter and intensity noise.
    pub fn diversity_scale(&self, c: &ConditioningVector) -> f64 {
        let z = c.position[2] as f64 / self.position_sigma;
        0.1 + 0.9 * (0.5 + 0.5 * (2.0 * z).tanh())
    }

    fn draw_condition(&self, rng: &mut ChaCha8Rng) -> ConditioningVector {
        let pos = Normal::new(0.0, self.position_sigma).expect("validated sigma");
        let mom = Normal::new(0.0, self.momentum_sigma).expect("validated sigma");
        let energy = if self.energy_max > self.energy_min {
            rng.random_range(self.energy_min..self.energy_max)
        } else {
            self.energy_min
        };
        let (mass, charge) = SPECIES[rng.random_range(0..SPECIES.len())];
        let position = [pos.sample(rng), pos.sample(rng), pos.sample(rng)];
        let (px, py) = (mom.sample(rng), mom.sample(rng));
        let m = mass as f64;
        let pz = (energy * energy - m * m - px * px - py * py).max(0.0).sqrt();
        ConditioningVector {
            energy: energy as f32,
            mass,
            charge,
            position: position.map(|v| v as f32),
            momentum: [px as f32, py as f32, pz as f32],
        }
    }

    fn render(&self, center: (f64, f64), total: f64) -> Response {
        let (ck, cl) = center;
        let (sk, sl) = (self.shower_width_k, self.shower_width_l);
        let amplitude = total / (2.0 * std::f64::consts::PI * sk * sl);
        let mut pixels = Vec::with_capacity(HEIGHT * WIDTH);
        for k in 0..HEIGHT {
            let dk = (k as f64 - ck) / sk;
            for l in 0..WIDTH {
                let dl = (l as f64 - cl) / sl;
                pixels.push((amplitude * (-0.5 * (dk * dk + dl * dl)).exp()) as f32);
            }
        }
        Response::new(pixels).expect("rendered blob is finite and non-negative")
    }
}

/// Deterministic synthetic dataset: `n_groups` condition groups of
/// `samples_per_group` responses each, laid out group by group.
pub fn synth_dataset(
    seed: u64,
    n_groups: usize,
    samples_per_group: usize,
    profile: &SynthProfile,
) -> Result<Dataset> {
    if n_groups == 0 {
        return Err(Error::InvalidArgument("n_groups must be at least 1".into()));
    }
    if samples_per_group < 2 {
        return Err(Error::InvalidArgument(format!(
            "samples_per_group must be at least 2 (got {samples_per_group}); \
             per-group variance is undefined otherwise"
        )));
    }
    profile.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conditions: Vec<ConditioningVector> = Vec::with_capacity(n_groups);
    while conditions.len() < n_groups {
        let c = profile.draw_condition(&mut rng);
        // Keep groups distinct even in the (improbable) event of a repeat draw.
        if conditions.iter().all(|o| o.bit_key() != c.bit_key()) {
            conditions.push(c);
        }
    }

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pairs = Vec::with_capacity(n_groups * samples_per_group);
    for c in &conditions {
        let (ck, cl) = profile.center(c);
        let base = profile.base_intensity(c);
        let spread = profile.diversity_scale(c);
        let jitter = profile.center_jitter * spread;
        let noise = profile.intensity_noise * spread;
        for _ in 0..samples_per_group {
            let dk: f64 = unit.sample(&mut rng);
            let dl: f64 = unit.sample(&mut rng);
            let dn: f64 = unit.sample(&mut rng);
            let center = (ck + jitter * dk, cl + jitter * dl);
            let total = base * (noise * dn - 0.5 * noise * noise).exp();
            pairs.push((*c, profile.render(center, total)));
        }
    }
    Ok(Dataset::from_pairs(pairs).with_provenance(Some(seed), Some(profile.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_stats, find_max_pixel, intensity};

    #[test]
    fn deterministic() {
        let p = SynthProfile::default();
        let a = synth_dataset(7, 4, 4, &p).unwrap();
        let b = synth_dataset(7, 4, 4, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        assert_eq!(a.n_groups(), 4);
        assert_ne!(a, synth_dataset(8, 4, 4, &p).unwrap());
    }

    #[test]
    fn zero_noise_gives_identical_members() {
        let p = SynthProfile {
            center_jitter: 0.0,
            intensity_noise: 0.0,
            ..SynthProfile::default()
        };
        let ds = synth_dataset(3, 5, 4, &p).unwrap();
        let stats = compute_stats(&ds).unwrap();
        assert!(stats.per_group.iter().all(|g| g.diversity_weight_raw == 0.0));
    }

    #[test]
    fn diversity_has_spread() {
        let ds = synth_dataset(7, 64, 8, &SynthProfile::default()).unwrap();
        let stats = compute_stats(&ds).unwrap();
        let raw: Vec<f64> = stats.per_group.iter().map(|g| g.diversity_weight_raw).collect();
        let max = raw.iter().cloned().fold(f64::MIN, f64::max);
        let min = raw.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max > min, "min {min} max {max}");
        // Both calm and turbulent groups should be present.
        assert!(max > 3.0 * min, "min {min} max {max}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = SynthProfile::default();
        assert!(synth_dataset(1, 4, 1, &p).is_err());
        assert!(synth_dataset(1, 0, 4, &p).is_err());
        for bad in [
            SynthProfile { shower_width_k: 0.0, ..p.clone() },
            SynthProfile { shower_width_l: -1.0, ..p.clone() },
            SynthProfile { position_sigma: 0.0, ..p.clone() },
            SynthProfile { center_jitter: -0.1, ..p.clone() },
            SynthProfile { energy_max: 1.0, ..p.clone() },
        ] {
            assert!(synth_dataset(1, 2, 2, &bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn conditioning_predicts_center_and_intensity() {
        let p = SynthProfile {
            center_jitter: 0.0,
            intensity_noise: 0.0,
            ..SynthProfile::default()
        };
        let ds = synth_dataset(11, 16, 2, &p).unwrap();
        for s in ds.samples() {
            let (k, l) = p.center(&s.condition);
            let c = find_max_pixel(&s.response);
            assert!((c.k - k).abs() <= 0.5 + 1e-9 && (c.l - l).abs() <= 0.5 + 1e-9);
            let rel = (intensity(&s.response) - p.base_intensity(&s.condition)).abs()
                / p.base_intensity(&s.condition);
            assert!(rel < 0.02, "relative intensity error {rel}");
        }
    }
}

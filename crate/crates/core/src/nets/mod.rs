//! Differentiable generator, discriminator, and auxiliary regressor.

mod arch;
mod gradcheck;
mod layers;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ConditioningVector, Dataset, PixelCoord, Response, COND_DIM, HEIGHT, WIDTH};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use arch::{
    conditioning_specs, normalize_conditions, DiscriminatorNet, DiscriminatorTrace, GeneratorNet,
    GeneratorTrace, Networks, RegressorNet, RegressorTrace,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ProbeResult, GRAD_FLOOR};
pub use layers::{Exec, Mode};
pub use params::{Grads, NamedTensor, ParamKind, ParamSet, ParamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softplus,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub latent_dim: usize,
    pub base_channels: usize,
    pub conditioning_embed_dim: usize,
    pub output_activation: OutputActivation,
    /// Image geometry; 56 × 30 for calorimeter responses.
    pub height: usize,
    pub width: usize,
    /// Generator seed grid, upsampled ×8 and center-cropped to the image.
    pub seed_height: usize,
    pub seed_width: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            base_channels: 8,
            conditioning_embed_dim: 4,
            output_activation: OutputActivation::Softplus,
            height: HEIGHT,
            width: WIDTH,
            seed_height: 7,
            seed_width: 5,
        }
    }
}

impl ArchitectureConfig {
    /// 4 × 4 images with a handful of channels, for gradient checks.
    pub fn toy() -> Self {
        Self {
            latent_dim: 3,
            base_channels: 2,
            conditioning_embed_dim: 2,
            output_activation: OutputActivation::Softplus,
            height: 4,
            width: 4,
            seed_height: 1,
            seed_width: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("latent_dim", self.latent_dim),
            ("base_channels", self.base_channels),
            ("conditioning_embed_dim", self.conditioning_embed_dim),
            ("height", self.height),
            ("width", self.width),
            ("seed_height", self.seed_height),
            ("seed_width", self.seed_width),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!(
                "architecture.{name} must be positive"
            )));
        }
        if self.seed_height * 8 < self.height || self.seed_width * 8 < self.width {
            return Err(Error::InvalidArgument(format!(
                "seed grid {}×{} upsampled ×8 cannot cover {}×{}",
                self.seed_height, self.seed_width, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn networks(&self) -> Result<Networks> {
        self.validate()?;
        Ok(Networks::build(self))
    }

    fn is_calorimeter(&self) -> bool {
        (self.height, self.width) == (HEIGHT, WIDTH)
    }
}

/// Latent code `z ~ N(0, I_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Every tensor of the three networks plus the fixed conditioning
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ArchitectureConfig,
    pub conditioning: ParamSet<T>,
    pub generator: ParamSet<T>,
    pub discriminator: ParamSet<T>,
    pub regressor: ParamSet<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            conditioning: self.conditioning.cast(),
            generator: self.generator.cast(),
            discriminator: self.discriminator.cast(),
            regressor: self.regressor.cast(),
        }
    }

    /// Named sets in checkpoint order.
    pub fn sets(&self) -> [(&'static str, &ParamSet<T>); 4] {
        [
            ("conditioning", &self.conditioning),
            ("generator", &self.generator),
            ("discriminator", &self.discriminator),
            ("regressor", &self.regressor),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.sets().iter().all(|(_, s)| s.is_finite())
    }

    /// Verifies every tensor against the layout of `self.config`.
    pub fn check_layout(&self) -> Result<Networks> {
        let nets = self.config.networks()?;
        self.conditioning
            .check_layout(&conditioning_specs(), "conditioning")?;
        self.generator.check_layout(&nets.generator.specs, "generator")?;
        self.discriminator
            .check_layout(&nets.discriminator.specs, "discriminator")?;
        self.regressor.check_layout(&nets.regressor.specs, "regressor")?;
        Ok(nets)
    }

    /// Sets the conditioning normalization to the per-component mean and
    /// standard deviation of the dataset's conditions (unit scale for
    /// constant components).
    pub fn fit_conditioning(&mut self, dataset: &Dataset) {
        let n = dataset.len().max(1) as f64;
        let mut mean = [0.0f64; COND_DIM];
        for s in dataset.samples() {
            for (m, v) in mean.iter_mut().zip(s.condition.to_array()) {
                *m += v as f64 / n;
            }
        }
        let mut var = [0.0f64; COND_DIM];
        for s in dataset.samples() {
            for ((q, m), v) in var.iter_mut().zip(&mean).zip(s.condition.to_array()) {
                *q += (v as f64 - m).powi(2) / n;
            }
        }
        let shift = self.conditioning.tensor_mut(0).data_mut();
        for (d, m) in shift.iter_mut().zip(mean) {
            *d = T::of(m);
        }
        let scale = self.conditioning.tensor_mut(1).data_mut();
        for (d, v) in scale.iter_mut().zip(var) {
            let sd = v.sqrt();
            *d = T::of(if sd > 1e-6 { sd } else { 1.0 });
        }
    }
}

fn init_set<T: Real>(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> ParamSet<T> {
    let entries = specs
        .iter()
        .map(|spec| {
            let len: usize = spec.shape.iter().product();
            let data: Vec<T> = match spec.kind {
                ParamKind::Weight => {
                    let sigma = 1.0 / (spec.fan_in.max(1) as f64).sqrt();
                    (0..len)
                        .map(|_| T::of(truncated_normal(rng) * sigma))
                        .collect()
                }
                ParamKind::Scale | ParamKind::RunningVar => vec![T::one(); len],
                ParamKind::Constant if spec.name.ends_with("scale") => vec![T::one(); len],
                _ => vec![T::zero(); len],
            };
            NamedTensor {
                spec: spec.clone(),
                tensor: Tensor::from_vec(&spec.shape, data),
            }
        })
        .collect();
    ParamSet::from_entries(entries)
}

/// Standard normal truncated to `[-2, 2]` by resampling.
fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() < 2.0 {
            return v;
        }
    }
}

/// Deterministic initialization: weights ~ N(0, 1/fan_in) truncated at two
/// standard deviations, biases and shifts zero, batch-norm scales one,
/// identity conditioning normalization.
pub fn init_params<T: Real>(config: &ArchitectureConfig, seed: u64) -> Result<ModelParams<T>> {
    let nets = config.networks()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelParams {
        config: config.clone(),
        conditioning: init_set(&conditioning_specs(), &mut rng),
        generator: init_set(&nets.generator.specs, &mut rng),
        discriminator: init_set(&nets.discriminator.specs, &mut rng),
        regressor: init_set(&nets.regressor.specs, &mut rng),
    })
}

pub fn conditions_tensor<T: Real>(conds: &[&ConditioningVector]) -> Tensor<T> {
    let data = conds
        .iter()
        .flat_map(|c| c.to_array())
        .map(|v| T::of(v as f64))
        .collect();
    Tensor::from_vec(&[conds.len(), COND_DIM], data)
}

pub fn responses_tensor<T: Real>(xs: &[&Response]) -> Tensor<T> {
    let data = xs
        .iter()
        .flat_map(|x| x.pixels().iter())
        .map(|&v| T::of(v as f64))
        .collect();
    Tensor::from_vec(&[xs.len(), 1, HEIGHT, WIDTH], data)
}

pub fn latents_tensor<T: Real>(zs: &[&LatentCode]) -> Tensor<T> {
    let dim = zs.first().map_or(0, |z| z.dim());
    let data = zs.iter().flat_map(|z| z.0.iter()).map(|&v| T::of(v)).collect();
    Tensor::from_vec(&[zs.len(), dim], data)
}

/// Converts one `[1, h, w]` generator sample to a response.
pub fn tensor_to_response<T: Real>(x: &[T]) -> Result<Response> {
    Response::new(x.iter().map(|v| v.as_f64() as f32).collect())
}

fn calorimeter_networks<T: Real>(params: &ModelParams<T>) -> Result<Networks> {
    if !params.config.is_calorimeter() {
        return Err(Error::Shape(format!(
            "model is configured for {}×{} images, responses are {HEIGHT}×{WIDTH}",
            params.config.height, params.config.width
        )));
    }
    params.check_layout()
}

/// `G(z, c)` with batch-norm running statistics.
pub fn generator_forward<T: Real>(
    params: &ModelParams<T>,
    c: &ConditioningVector,
    z: &LatentCode,
) -> Result<Response> {
    let nets = calorimeter_networks(params)?;
    if z.dim() != params.config.latent_dim {
        return Err(Error::Shape(format!(
            "latent code has {} components, model expects {}",
            z.dim(),
            params.config.latent_dim
        )));
    }
    let trace = nets.generator.forward(
        params,
        &conditions_tensor(&[c]),
        &latents_tensor(&[z]),
        Mode::Eval,
        Exec::Sequential,
    );
    tensor_to_response(trace.output().data())
}

/// `D(x, c)` in `(0, 1)`.
pub fn discriminator_forward<T: Real>(
    params: &ModelParams<T>,
    x: &Response,
    c: &ConditioningVector,
) -> Result<f64> {
    let nets = calorimeter_networks(params)?;
    let trace = nets.discriminator.forward(
        params,
        &responses_tensor(&[x]),
        &conditions_tensor(&[c]),
        Exec::Sequential,
    );
    Ok(trace.probs()[0].as_f64())
}

/// Predicted shower center `(k̂, l̂)` in `[0, 56] × [0, 30]`.
pub fn regressor_forward<T: Real>(params: &ModelParams<T>, x: &Response) -> Result<PixelCoord> {
    let nets = calorimeter_networks(params)?;
    let trace = nets
        .regressor
        .forward(params, &responses_tensor(&[x]), Exec::Sequential);
    let c = trace.coords();
    Ok(PixelCoord {
        k: c[0].as_f64(),
        l: c[1].as_f64(),
    })
}

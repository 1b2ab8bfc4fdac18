//! Generator, discriminator, and shower-center regressor layouts.
//!
//! Generator: `[z, ĉ] → dense → (4C, h₀, w₀) → BN → ReLU →
//! [convT(4, s2) → BN → ReLU] × 2 → convT(4, s2) → 1 channel → center crop
//! → softplus`, where `ĉ` is the normalized condition and `(h₀, w₀)` the
//! seed grid (7 × 5 for 56 × 30; 40 columns are cropped to the central 30).
//!
//! Discriminator: the condition is embedded by a dense layer and each
//! embedding component is broadcast as a constant plane next to the image;
//! three `conv(3, s2) → leaky ReLU` blocks feed a dense logit.
//!
//! Regressor: three `conv(3, s2) → leaky ReLU` blocks, a dense layer to two
//! sigmoid units scaled by the image height and width.

use super::layers::{sigmoid_scalar, Exec, Mode, Op, Sequential, Trace};
use super::params::{Grads, ParamKind, ParamSpec};
use super::{ArchitectureConfig, ModelParams, OutputActivation};
use crate::data::COND_DIM;
use crate::tensor::{Real, Tensor};

const KERNEL_UP: usize = 4;
const KERNEL_DOWN: usize = 3;
const STRIDE: usize = 2;

#[derive(Default)]
struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape,
            kind,
            fan_in,
        });
        self.specs.len() - 1
    }

    fn dense(&mut self, name: &str, inp: usize, out: usize) -> Op {
        let w = self.add(format!("{name}.weight"), vec![out, inp], ParamKind::Weight, inp);
        let b = self.add(format!("{name}.bias"), vec![out], ParamKind::Bias, inp);
        Op::Dense { w, b }
    }

    fn conv(&mut self, name: &str, in_c: usize, out_c: usize) -> Op {
        let k = KERNEL_DOWN;
        let fan = in_c * k * k;
        let w = self.add(format!("{name}.weight"), vec![out_c, in_c, k, k], ParamKind::Weight, fan);
        let b = self.add(format!("{name}.bias"), vec![out_c], ParamKind::Bias, fan);
        Op::Conv {
            w,
            b,
            stride: STRIDE,
            pad: 1,
        }
    }

    fn conv_t(&mut self, name: &str, in_c: usize, out_c: usize) -> Op {
        let k = KERNEL_UP;
        // Each output pixel sees (k / stride)² taps per input channel.
        let fan = in_c * (k / STRIDE) * (k / STRIDE);
        let w = self.add(format!("{name}.weight"), vec![in_c, out_c, k, k], ParamKind::Weight, fan);
        let b = self.add(format!("{name}.bias"), vec![out_c], ParamKind::Bias, fan);
        Op::ConvT {
            w,
            b,
            stride: STRIDE,
            pad: 1,
        }
    }

    fn batch_norm(&mut self, name: &str, c: usize) -> Op {
        Op::BatchNorm {
            gamma: self.add(format!("{name}.gamma"), vec![c], ParamKind::Scale, 0),
            beta: self.add(format!("{name}.beta"), vec![c], ParamKind::Shift, 0),
            mean: self.add(format!("{name}.running_mean"), vec![c], ParamKind::RunningMean, 0),
            var: self.add(format!("{name}.running_var"), vec![c], ParamKind::RunningVar, 0),
        }
    }
}

fn down(len: usize) -> usize {
    (len + 2 - KERNEL_DOWN) / STRIDE + 1
}

/// Normalizes raw `[n, 9]` conditions with the model's fixed shift/scale.
pub fn normalize_conditions<T: Real>(params: &ModelParams<T>, conds: &Tensor<T>) -> Tensor<T> {
    let shift = params.conditioning.tensor(0).data();
    let scale = params.conditioning.tensor(1).data();
    let mut out = conds.clone();
    for row in out.data_mut().chunks_mut(COND_DIM) {
        for ((v, &s), &d) in row.iter_mut().zip(shift).zip(scale) {
            *v = (*v - s) / d;
        }
    }
    out
}

pub fn conditioning_specs() -> Vec<ParamSpec> {
    ["cond.shift", "cond.scale"]
        .into_iter()
        .map(|name| ParamSpec {
            name: name.into(),
            shape: vec![COND_DIM],
            kind: ParamKind::Constant,
            fan_in: 0,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GeneratorNet {
    pub specs: Vec<ParamSpec>,
    trunk: Sequential,
    latent_dim: usize,
}

pub struct GeneratorTrace<T> {
    trunk: Trace<T>,
}

impl<T: Real> GeneratorTrace<T> {
    /// `[n, 1, height, width]`.
    pub fn output(&self) -> &Tensor<T> {
        self.trunk.output()
    }
}

impl GeneratorNet {
    fn new(cfg: &ArchitectureConfig) -> Self {
        let mut b = Builder::default();
        let c = cfg.base_channels;
        let (h0, w0) = (cfg.seed_height, cfg.seed_width);
        let (full_h, full_w) = (h0 * 8, w0 * 8);
        let mut ops = vec![
            b.dense("gen.fc", cfg.latent_dim + COND_DIM, 4 * c * h0 * w0),
            Op::Reshape(vec![4 * c, h0, w0]),
            b.batch_norm("gen.bn0", 4 * c),
            Op::Relu,
            b.conv_t("gen.up1", 4 * c, 2 * c),
            b.batch_norm("gen.bn1", 2 * c),
            Op::Relu,
            b.conv_t("gen.up2", 2 * c, c),
            b.batch_norm("gen.bn2", c),
            Op::Relu,
            b.conv_t("gen.up3", c, 1),
            Op::Crop {
                top: (full_h - cfg.height) / 2,
                left: (full_w - cfg.width) / 2,
                height: cfg.height,
                width: cfg.width,
            },
        ];
        ops.push(match cfg.output_activation {
            OutputActivation::Softplus => Op::Softplus,
            OutputActivation::Relu => Op::Relu,
        });
        Self {
            specs: b.specs,
            trunk: Sequential::new(ops),
            latent_dim: cfg.latent_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `conds: [n, 9]` raw conditions, `z: [n, latent_dim]`.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        conds: &Tensor<T>,
        z: &Tensor<T>,
        mode: Mode,
        exec: Exec,
    ) -> GeneratorTrace<T> {
        let n = conds.batch();
        assert_eq!(z.shape(), [n, self.latent_dim], "latent batch shape");
        let cn = normalize_conditions(params, conds);
        let width = self.latent_dim + COND_DIM;
        let mut input = Vec::with_capacity(n * width);
        for s in 0..n {
            input.extend_from_slice(z.sample(s));
            input.extend_from_slice(cn.sample(s));
        }
        let input = Tensor::from_vec(&[n, width], input);
        GeneratorTrace {
            trunk: self.trunk.forward(&params.generator, input, mode, exec),
        }
    }

    /// Returns the gradient with respect to the latent codes.
    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        trace: &GeneratorTrace<T>,
        grad_out: Tensor<T>,
        grads: &mut Grads<T>,
        exec: Exec,
    ) -> Tensor<T> {
        let gin = self
            .trunk
            .backward(&params.generator, &trace.trunk, grad_out, grads, true, exec)
            .expect("input gradient requested");
        let n = gin.batch();
        let mut gz = Vec::with_capacity(n * self.latent_dim);
        for s in 0..n {
            gz.extend_from_slice(&gin.sample(s)[..self.latent_dim]);
        }
        Tensor::from_vec(&[n, self.latent_dim], gz)
    }

    pub fn update_running_stats<T: Real>(&self, params: &mut ModelParams<T>, trace: &GeneratorTrace<T>) {
        self.trunk.update_running_stats(&mut params.generator, &trace.trunk);
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    pub specs: Vec<ParamSpec>,
    embed: Sequential,
    trunk: Sequential,
    embed_dim: usize,
}

pub struct DiscriminatorTrace<T> {
    embed: Trace<T>,
    trunk: Trace<T>,
    probs: Vec<T>,
}

impl<T: Real> DiscriminatorTrace<T> {
    /// `D(x, c)` per sample, in `(0, 1)`.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

impl DiscriminatorNet {
    fn new(cfg: &ArchitectureConfig) -> Self {
        let mut b = Builder::default();
        let c = cfg.base_channels;
        let e = cfg.conditioning_embed_dim;
        let embed = Sequential::new(vec![b.dense("disc.embed", COND_DIM, e)]);
        let (h3, w3) = (down(down(down(cfg.height))), down(down(down(cfg.width))));
        let trunk = Sequential::new(vec![
            b.conv("disc.conv1", 1 + e, c),
            Op::LeakyRelu,
            b.conv("disc.conv2", c, 2 * c),
            Op::LeakyRelu,
            b.conv("disc.conv3", 2 * c, 4 * c),
            Op::LeakyRelu,
            Op::Reshape(vec![4 * c * h3 * w3]),
            b.dense("disc.out", 4 * c * h3 * w3, 1),
        ]);
        Self {
            specs: b.specs,
            embed,
            trunk,
            embed_dim: e,
        }
    }

    /// `x: [n, 1, h, w]`, `conds: [n, 9]` raw conditions.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        conds: &Tensor<T>,
        exec: Exec,
    ) -> DiscriminatorTrace<T> {
        let n = x.batch();
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let cn = normalize_conditions(params, conds);
        let embed = self
            .embed
            .forward(&params.discriminator, cn, Mode::Train, exec);
        let plane = h * w;
        let e = self.embed_dim;
        let mut input = Vec::with_capacity(n * (1 + e) * plane);
        for s in 0..n {
            input.extend_from_slice(x.sample(s));
            for &v in embed.output().sample(s) {
                input.extend(std::iter::repeat_n(v, plane));
            }
        }
        let input = Tensor::from_vec(&[n, 1 + e, h, w], input);
        let trunk = self.trunk.forward(&params.discriminator, input, Mode::Train, exec);
        let probs = trunk.output().data().iter().map(|&l| sigmoid_scalar(l)).collect();
        DiscriminatorTrace {
            embed,
            trunk,
            probs,
        }
    }

    /// Backpropagates `dL/dlogit`; returns `dL/dx` when requested.
    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        trace: &DiscriminatorTrace<T>,
        grad_logits: &[T],
        grads: &mut Grads<T>,
        need_x_grad: bool,
        exec: Exec,
    ) -> Option<Tensor<T>> {
        let n = grad_logits.len();
        let g = Tensor::from_vec(&[n, 1], grad_logits.to_vec());
        let gin = self
            .trunk
            .backward(&params.discriminator, &trace.trunk, g, grads, true, exec)
            .expect("input gradient requested");
        let (h, w) = (gin.shape()[2], gin.shape()[3]);
        let plane = h * w;
        let e = self.embed_dim;
        let mut gx = Vec::with_capacity(n * plane);
        let mut ge = Vec::with_capacity(n * e);
        for s in 0..n {
            let gs = gin.sample(s);
            gx.extend_from_slice(&gs[..plane]);
            for j in 0..e {
                ge.push(gs[(1 + j) * plane..(2 + j) * plane].iter().copied().sum::<T>());
            }
        }
        self.embed.backward(
            &params.discriminator,
            &trace.embed,
            Tensor::from_vec(&[n, e], ge),
            grads,
            false,
            exec,
        );
        need_x_grad.then(|| Tensor::from_vec(&[n, 1, h, w], gx))
    }
}

#[derive(Debug, Clone)]
pub struct RegressorNet {
    pub specs: Vec<ParamSpec>,
    trunk: Sequential,
    height: usize,
    width: usize,
}

pub struct RegressorTrace<T> {
    trunk: Trace<T>,
    coords: Vec<T>,
}

impl<T: Real> RegressorTrace<T> {
    /// Predicted `(k, l)` per sample, flattened `[n * 2]`.
    pub fn coords(&self) -> &[T] {
        &self.coords
    }
}

impl RegressorNet {
    fn new(cfg: &ArchitectureConfig) -> Self {
        let mut b = Builder::default();
        let c = cfg.base_channels;
        let (h3, w3) = (down(down(down(cfg.height))), down(down(down(cfg.width))));
        let trunk = Sequential::new(vec![
            b.conv("reg.conv1", 1, c),
            Op::LeakyRelu,
            b.conv("reg.conv2", c, 2 * c),
            Op::LeakyRelu,
            b.conv("reg.conv3", 2 * c, 4 * c),
            Op::LeakyRelu,
            Op::Reshape(vec![4 * c * h3 * w3]),
            b.dense("reg.out", 4 * c * h3 * w3, 2),
            Op::Sigmoid,
        ]);
        Self {
            specs: b.specs,
            trunk,
            height: cfg.height,
            width: cfg.width,
        }
    }

    fn scales<T: Real>(&self) -> [T; 2] {
        [T::of(self.height as f64), T::of(self.width as f64)]
    }

    pub fn forward<T: Real>(&self, params: &ModelParams<T>, x: &Tensor<T>, exec: Exec) -> RegressorTrace<T> {
        let trunk = self.trunk.forward(&params.regressor, x.clone(), Mode::Train, exec);
        let sc = self.scales::<T>();
        let coords = trunk
            .output()
            .data()
            .iter()
            .enumerate()
            .map(|(i, &u)| u * sc[i % 2])
            .collect();
        RegressorTrace { trunk, coords }
    }

    /// Backpropagates `dL/d(k̂, l̂)`; returns `dL/dx` when requested.
    pub fn backward<T: Real>(
        &self,
        params: &ModelParams<T>,
        trace: &RegressorTrace<T>,
        grad_coords: &[T],
        grads: &mut Grads<T>,
        need_x_grad: bool,
        exec: Exec,
    ) -> Option<Tensor<T>> {
        let sc = self.scales::<T>();
        let g: Vec<T> = grad_coords
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sc[i % 2])
            .collect();
        let n = g.len() / 2;
        self.trunk.backward(
            &params.regressor,
            &trace.trunk,
            Tensor::from_vec(&[n, 2], g),
            grads,
            need_x_grad,
            exec,
        )
    }
}

/// The three networks built from one architecture config.
#[derive(Debug, Clone)]
pub struct Networks {
    pub config: ArchitectureConfig,
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub regressor: RegressorNet,
}

impl Networks {
    pub(super) fn build(config: &ArchitectureConfig) -> Self {
        Self {
            config: config.clone(),
            generator: GeneratorNet::new(config),
            discriminator: DiscriminatorNet::new(config),
            regressor: RegressorNet::new(config),
        }
    }
}

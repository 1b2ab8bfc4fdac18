//! Layer primitives with explicit backward passes.
//!
//! A [`Sequential`] is a list of [`Op`]s that reference tensors of a
//! [`ParamSet`] by index. The forward pass records every intermediate
//! activation in a [`Trace`], which the backward pass consumes.

use rayon::prelude::*;

use super::params::{Grads, ParamSet};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics.
    Train,
    /// Batch-norm uses running statistics.
    Eval,
}

/// How per-sample work inside convolution layers is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Fixed-order loops; bit-reproducible.
    Sequential,
    /// Samples spread over the rayon pool; parameter gradients are reduced
    /// in a scheduler-dependent order.
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `y = W x + b`, `W: [out, in]`; input flattened per sample.
    Dense { w: usize, b: usize },
    /// `W: [out_c, in_c, k, k]`.
    Conv { w: usize, b: usize, stride: usize, pad: usize },
    /// `W: [in_c, out_c, k, k]`.
    ConvT { w: usize, b: usize, stride: usize, pad: usize },
    BatchNorm { gamma: usize, beta: usize, mean: usize, var: usize },
    Relu,
    LeakyRelu,
    Softplus,
    Sigmoid,
    /// Per-sample target shape.
    Reshape(Vec<usize>),
    Crop { top: usize, left: usize, height: usize, width: usize },
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
    count: usize,
    train: bool,
}

#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `acts[0]` is the input, `acts[i + 1]` the output of op `i`.
    acts: Vec<Tensor<T>>,
    bn: Vec<Option<BnCache<T>>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("trace holds the input")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequential {
    pub ops: Vec<Op>,
}

/// Valid range of "small" indices for one kernel offset, where the
/// matching "big" index is `small * stride + off`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    off: isize,
}

fn taps(small_len: usize, big_len: usize, k: usize, stride: usize, pad: usize) -> Vec<Tap> {
    (0..k)
        .map(|kk| {
            let off = kk as isize - pad as isize;
            let s = stride as isize;
            // smallest small with small*s + off >= 0
            let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
            // largest small with small*s + off <= big_len - 1
            let top = big_len as isize - 1 - off;
            let hi = if top < 0 { 0 } else { top / s + 1 };
            let lo = lo.min(small_len as isize) as usize;
            let hi = (hi.min(small_len as isize) as usize).max(lo);
            Tap { lo, hi, off }
        })
        .collect()
}

/// Spatial correlation geometry between a "small" plane (conv output,
/// transposed-conv input) and a "big" plane.
struct Geometry {
    stride: usize,
    small_w: usize,
    big_w: usize,
    ty: Vec<Tap>,
    tx: Vec<Tap>,
}

impl Geometry {
    fn new(small: (usize, usize), big: (usize, usize), k: usize, stride: usize, pad: usize) -> Self {
        Self {
            stride,
            small_w: small.1,
            big_w: big.1,
            ty: taps(small.0, big.0, k, stride, pad),
            tx: taps(small.1, big.1, k, stride, pad),
        }
    }

    #[inline]
    fn big_index(&self, tap: Tap, small: usize) -> usize {
        (small as isize * self.stride as isize + tap.off) as usize
    }

    /// `small[ys, xs] += w * big[yb, xb]`
    fn accum_small<T: Real>(&self, small: &mut [T], big: &[T], w: T, ky: usize, kx: usize) {
        let (ty, tx) = (self.ty[ky], self.tx[kx]);
        for ys in ty.lo..ty.hi {
            let yb = self.big_index(ty, ys);
            let srow = &mut small[ys * self.small_w..(ys + 1) * self.small_w];
            let brow = &big[yb * self.big_w..(yb + 1) * self.big_w];
            for xs in tx.lo..tx.hi {
                srow[xs] += w * brow[self.big_index(tx, xs)];
            }
        }
    }

    /// `big[yb, xb] += w * small[ys, xs]`
    fn accum_big<T: Real>(&self, big: &mut [T], small: &[T], w: T, ky: usize, kx: usize) {
        let (ty, tx) = (self.ty[ky], self.tx[kx]);
        for ys in ty.lo..ty.hi {
            let yb = self.big_index(ty, ys);
            let srow = &small[ys * self.small_w..(ys + 1) * self.small_w];
            let brow = &mut big[yb * self.big_w..(yb + 1) * self.big_w];
            for xs in tx.lo..tx.hi {
                brow[self.big_index(tx, xs)] += w * srow[xs];
            }
        }
    }

    /// `Σ small[ys, xs] * big[yb, xb]`
    fn dot<T: Real>(&self, small: &[T], big: &[T], ky: usize, kx: usize) -> T {
        let (ty, tx) = (self.ty[ky], self.tx[kx]);
        let mut acc = T::zero();
        for ys in ty.lo..ty.hi {
            let yb = self.big_index(ty, ys);
            let srow = &small[ys * self.small_w..(ys + 1) * self.small_w];
            let brow = &big[yb * self.big_w..(yb + 1) * self.big_w];
            for xs in tx.lo..tx.hi {
                acc += srow[xs] * brow[self.big_index(tx, xs)];
            }
        }
        acc
    }
}

/// Runs `f(n, chunk)` over consecutive per-sample chunks of `out`.
fn for_each_sample<T: Real, F>(out: &mut [T], per: usize, exec: Exec, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if per == 0 {
        return;
    }
    match exec {
        Exec::Sequential => out.chunks_mut(per).enumerate().for_each(|(n, c)| f(n, c)),
        Exec::Parallel => out
            .par_chunks_mut(per)
            .enumerate()
            .for_each(|(n, c)| f(n, c)),
    }
}

/// Sums per-sample contributions `f(n, acc)` into one buffer of `len`.
fn sum_over_samples<T: Real, F>(n: usize, len: usize, exec: Exec, f: F) -> Vec<T>
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    match exec {
        Exec::Sequential => {
            let mut acc = vec![T::zero(); len];
            (0..n).for_each(|i| f(i, &mut acc));
            acc
        }
        Exec::Parallel => (0..n)
            .into_par_iter()
            .fold(
                || vec![T::zero(); len],
                |mut acc, i| {
                    f(i, &mut acc);
                    acc
                },
            )
            .reduce(
                || vec![T::zero(); len],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            ),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

fn conv_t_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len - 1) * stride + k - 2 * pad
}

/// (channels, spatial size) for batch-norm: 2-D inputs have spatial size 1.
fn bn_layout(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        2 => (shape[1], 1),
        _ => (shape[1], shape[2..].iter().product()),
    }
}

impl Sequential {
    pub fn new(ops: Vec<Op>) -> Self {
        Self { ops }
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamSet<T>,
        input: Tensor<T>,
        mode: Mode,
        exec: Exec,
    ) -> Trace<T> {
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        let mut bn = Vec::with_capacity(self.ops.len());
        acts.push(input);
        for op in &self.ops {
            let x = acts.last().expect("non-empty");
            let (y, cache) = forward_op(op, params, x, mode, exec);
            acts.push(y);
            bn.push(cache);
        }
        Trace { acts, bn }
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input when `need_input_grad` is set.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        trace: &Trace<T>,
        grad_out: Tensor<T>,
        grads: &mut Grads<T>,
        need_input_grad: bool,
        exec: Exec,
    ) -> Option<Tensor<T>> {
        let mut g = grad_out;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let want_input = i > 0 || need_input_grad;
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            g = backward_op(op, params, x, y, trace.bn[i].as_ref(), &g, grads, want_input, exec)?;
        }
        Some(g)
    }

    /// Folds the batch statistics of a training-mode trace into the
    /// running mean/variance buffers.
    pub fn update_running_stats<T: Real>(&self, params: &mut ParamSet<T>, trace: &Trace<T>) {
        let mom = T::of(BN_MOMENTUM);
        for (op, cache) in self.ops.iter().zip(&trace.bn) {
            let (Op::BatchNorm { mean, var, .. }, Some(c)) = (op, cache) else {
                continue;
            };
            if !c.train {
                continue;
            }
            let unbias = if c.count > 1 {
                T::of(c.count as f64 / (c.count - 1) as f64)
            } else {
                T::one()
            };
            for (r, &b) in params.tensor_mut(*mean).data_mut().iter_mut().zip(&c.batch_mean) {
                *r = (T::one() - mom) * *r + mom * b;
            }
            for (r, &b) in params.tensor_mut(*var).data_mut().iter_mut().zip(&c.batch_var) {
                *r = (T::one() - mom) * *r + mom * b * unbias;
            }
        }
    }
}

fn forward_op<T: Real>(
    op: &Op,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    mode: Mode,
    exec: Exec,
) -> (Tensor<T>, Option<BnCache<T>>) {
    let n = x.batch();
    match op {
        Op::Dense { w, b } => {
            let (w, b) = (params.tensor(*w), params.tensor(*b));
            let (out, inp) = (w.shape()[0], w.shape()[1]);
            assert_eq!(x.per_sample(), inp, "dense input width");
            let mut y = Tensor::zeros(&[n, out]);
            for s in 0..n {
                let xs = x.sample(s);
                let ys = &mut y.data_mut()[s * out..(s + 1) * out];
                for (o, yo) in ys.iter_mut().enumerate() {
                    let row = &w.data()[o * inp..(o + 1) * inp];
                    *yo = b.data()[o] + row.iter().zip(xs).map(|(&a, &v)| a * v).sum::<T>();
                }
            }
            (y, None)
        }
        Op::Conv { w, b, stride, pad } => {
            let (w, b) = (params.tensor(*w), params.tensor(*b));
            let (out_c, in_c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
            let (ih, iw) = (x.shape()[2], x.shape()[3]);
            assert_eq!(x.shape()[1], in_c, "conv input channels");
            let (oh, ow) = (conv_out(ih, k, *stride, *pad), conv_out(iw, k, *stride, *pad));
            let geo = Geometry::new((oh, ow), (ih, iw), k, *stride, *pad);
            let mut y = Tensor::zeros(&[n, out_c, oh, ow]);
            let (wd, bd) = (w.data(), b.data());
            for_each_sample(y.data_mut(), out_c * oh * ow, exec, |s, out| {
                let inp = x.sample(s);
                for o in 0..out_c {
                    let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bd[o]);
                    for i in 0..in_c {
                        let src = &inp[i * ih * iw..(i + 1) * ih * iw];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wd[((o * in_c + i) * k + ky) * k + kx];
                                geo.accum_small(plane, src, wv, ky, kx);
                            }
                        }
                    }
                }
            });
            (y, None)
        }
        Op::ConvT { w, b, stride, pad } => {
            let (w, b) = (params.tensor(*w), params.tensor(*b));
            let (in_c, out_c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
            let (ih, iw) = (x.shape()[2], x.shape()[3]);
            assert_eq!(x.shape()[1], in_c, "transposed conv input channels");
            let (oh, ow) = (conv_t_out(ih, k, *stride, *pad), conv_t_out(iw, k, *stride, *pad));
            let geo = Geometry::new((ih, iw), (oh, ow), k, *stride, *pad);
            let mut y = Tensor::zeros(&[n, out_c, oh, ow]);
            let (wd, bd) = (w.data(), b.data());
            for_each_sample(y.data_mut(), out_c * oh * ow, exec, |s, out| {
                let inp = x.sample(s);
                for o in 0..out_c {
                    let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
                    plane.iter_mut().for_each(|v| *v = bd[o]);
                    for i in 0..in_c {
                        let src = &inp[i * ih * iw..(i + 1) * ih * iw];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wd[((i * out_c + o) * k + ky) * k + kx];
                                geo.accum_big(plane, src, wv, ky, kx);
                            }
                        }
                    }
                }
            });
            (y, None)
        }
        Op::BatchNorm {
            gamma,
            beta,
            mean,
            var,
        } => {
            let (c, sp) = bn_layout(x.shape());
            let gamma = params.tensor(*gamma).data();
            let beta = params.tensor(*beta).data();
            let count = n * sp;
            let eps = T::of(BN_EPS);
            let (batch_mean, batch_var, train) = match mode {
                Mode::Train => {
                    let mut m = vec![T::zero(); c];
                    let mut v = vec![T::zero(); c];
                    for s in 0..n {
                        let xs = x.sample(s);
                        for ch in 0..c {
                            m[ch] += xs[ch * sp..(ch + 1) * sp].iter().copied().sum::<T>();
                        }
                    }
                    m.iter_mut().for_each(|v| *v = *v / T::of(count as f64));
                    for s in 0..n {
                        let xs = x.sample(s);
                        for ch in 0..c {
                            v[ch] += xs[ch * sp..(ch + 1) * sp]
                                .iter()
                                .map(|&a| (a - m[ch]) * (a - m[ch]))
                                .sum::<T>();
                        }
                    }
                    v.iter_mut().for_each(|x| *x = *x / T::of(count as f64));
                    (m, v, true)
                }
                Mode::Eval => (
                    params.tensor(*mean).data().to_vec(),
                    params.tensor(*var).data().to_vec(),
                    false,
                ),
            };
            let inv_std: Vec<T> = batch_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); x.len()];
            let mut y = Tensor::zeros(x.shape());
            for s in 0..n {
                let base = s * c * sp;
                for ch in 0..c {
                    for j in 0..sp {
                        let idx = base + ch * sp + j;
                        let h = (x.data()[idx] - batch_mean[ch]) * inv_std[ch];
                        xhat[idx] = h;
                        y.data_mut()[idx] = gamma[ch] * h + beta[ch];
                    }
                }
            }
            let cache = BnCache {
                xhat,
                inv_std,
                batch_mean,
                batch_var,
                count,
                train,
            };
            (y, Some(cache))
        }
        Op::Relu => (map(x, |v| v.max(T::zero())), None),
        Op::LeakyRelu => {
            let a = T::of(LEAKY_SLOPE);
            (map(x, |v| if v > T::zero() { v } else { a * v }), None)
        }
        Op::Softplus => (map(x, softplus), None),
        Op::Sigmoid => (map(x, sigmoid), None),
        Op::Reshape(shape) => {
            let mut full = vec![n];
            full.extend_from_slice(shape);
            (x.clone().reshaped(&full), None)
        }
        Op::Crop {
            top,
            left,
            height,
            width,
        } => {
            let (c, ih, iw) = (x.shape()[1], x.shape()[2], x.shape()[3]);
            assert!(top + height <= ih && left + width <= iw, "crop window");
            let mut y = Tensor::zeros(&[n, c, *height, *width]);
            let out = y.data_mut();
            let mut o = 0;
            for plane in x.data().chunks(ih * iw) {
                for r in *top..top + height {
                    out[o..o + width].copy_from_slice(&plane[r * iw + left..r * iw + left + width]);
                    o += width;
                }
            }
            (y, None)
        }
    }
}

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_vec(x.shape(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&u, &v)| f(u, v)).collect(),
    )
}

#[allow(clippy::too_many_arguments)]
fn backward_op<T: Real>(
    op: &Op,
    params: &ParamSet<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    bn: Option<&BnCache<T>>,
    g: &Tensor<T>,
    grads: &mut Grads<T>,
    want_input: bool,
    exec: Exec,
) -> Option<Tensor<T>> {
    let n = x.batch();
    match op {
        Op::Dense { w: wi, b: bi } => {
            let w = params.tensor(*wi);
            let (out, inp) = (w.shape()[0], w.shape()[1]);
            {
                let gw = grads.get_mut(*wi).data_mut();
                for s in 0..n {
                    let xs = x.sample(s);
                    let gs = g.sample(s);
                    for o in 0..out {
                        let go = gs[o];
                        for (a, &v) in gw[o * inp..(o + 1) * inp].iter_mut().zip(xs) {
                            *a += go * v;
                        }
                    }
                }
            }
            {
                let gb = grads.get_mut(*bi).data_mut();
                for s in 0..n {
                    for (a, &v) in gb.iter_mut().zip(g.sample(s)) {
                        *a += v;
                    }
                }
            }
            if !want_input {
                return None;
            }
            let mut dx = Tensor::zeros(x.shape());
            for s in 0..n {
                let gs = g.sample(s);
                let dxs = &mut dx.data_mut()[s * inp..(s + 1) * inp];
                for o in 0..out {
                    let go = gs[o];
                    for (a, &wv) in dxs.iter_mut().zip(&w.data()[o * inp..(o + 1) * inp]) {
                        *a += go * wv;
                    }
                }
            }
            Some(dx)
        }
        Op::Conv {
            w: wi,
            b: bi,
            stride,
            pad,
        } => {
            let w = params.tensor(*wi);
            let (out_c, in_c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
            let (ih, iw) = (x.shape()[2], x.shape()[3]);
            let (oh, ow) = (g.shape()[2], g.shape()[3]);
            let geo = Geometry::new((oh, ow), (ih, iw), k, *stride, *pad);
            let wlen = w.len();
            let acc = sum_over_samples(n, wlen + out_c, exec, |s, acc| {
                let inp = x.sample(s);
                let gs = g.sample(s);
                for o in 0..out_c {
                    let gp = &gs[o * oh * ow..(o + 1) * oh * ow];
                    acc[wlen + o] += gp.iter().copied().sum::<T>();
                    for i in 0..in_c {
                        let src = &inp[i * ih * iw..(i + 1) * ih * iw];
                        for ky in 0..k {
                            for kx in 0..k {
                                acc[((o * in_c + i) * k + ky) * k + kx] += geo.dot(gp, src, ky, kx);
                            }
                        }
                    }
                }
            });
            add_slice(grads.get_mut(*wi).data_mut(), &acc[..wlen]);
            add_slice(grads.get_mut(*bi).data_mut(), &acc[wlen..]);
            if !want_input {
                return None;
            }
            let mut dx = Tensor::zeros(x.shape());
            let wd = w.data();
            for_each_sample(dx.data_mut(), in_c * ih * iw, exec, |s, dxs| {
                let gs = g.sample(s);
                for i in 0..in_c {
                    let dst = &mut dxs[i * ih * iw..(i + 1) * ih * iw];
                    for o in 0..out_c {
                        let gp = &gs[o * oh * ow..(o + 1) * oh * ow];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wd[((o * in_c + i) * k + ky) * k + kx];
                                geo.accum_big(dst, gp, wv, ky, kx);
                            }
                        }
                    }
                }
            });
            Some(dx)
        }
        Op::ConvT {
            w: wi,
            b: bi,
            stride,
            pad,
        } => {
            let w = params.tensor(*wi);
            let (in_c, out_c, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
            let (ih, iw) = (x.shape()[2], x.shape()[3]);
            let (oh, ow) = (g.shape()[2], g.shape()[3]);
            let geo = Geometry::new((ih, iw), (oh, ow), k, *stride, *pad);
            let wlen = w.len();
            let acc = sum_over_samples(n, wlen + out_c, exec, |s, acc| {
                let inp = x.sample(s);
                let gs = g.sample(s);
                for o in 0..out_c {
                    let gp = &gs[o * oh * ow..(o + 1) * oh * ow];
                    acc[wlen + o] += gp.iter().copied().sum::<T>();
                    for i in 0..in_c {
                        let src = &inp[i * ih * iw..(i + 1) * ih * iw];
                        for ky in 0..k {
                            for kx in 0..k {
                                acc[((i * out_c + o) * k + ky) * k + kx] += geo.dot(src, gp, ky, kx);
                            }
                        }
                    }
                }
            });
            add_slice(grads.get_mut(*wi).data_mut(), &acc[..wlen]);
            add_slice(grads.get_mut(*bi).data_mut(), &acc[wlen..]);
            if !want_input {
                return None;
            }
            let mut dx = Tensor::zeros(x.shape());
            let wd = w.data();
            for_each_sample(dx.data_mut(), in_c * ih * iw, exec, |s, dxs| {
                let gs = g.sample(s);
                for i in 0..in_c {
                    let dst = &mut dxs[i * ih * iw..(i + 1) * ih * iw];
                    for o in 0..out_c {
                        let gp = &gs[o * oh * ow..(o + 1) * oh * ow];
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wd[((i * out_c + o) * k + ky) * k + kx];
                                geo.accum_small(dst, gp, wv, ky, kx);
                            }
                        }
                    }
                }
            });
            Some(dx)
        }
        Op::BatchNorm { gamma, beta, .. } => {
            let cache = bn.expect("batch-norm trace");
            let (c, sp) = bn_layout(x.shape());
            let gam = params.tensor(*gamma).data().to_vec();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for s in 0..n {
                let base = s * c * sp;
                for ch in 0..c {
                    for j in 0..sp {
                        let idx = base + ch * sp + j;
                        sum_g[ch] += g.data()[idx];
                        sum_gx[ch] += g.data()[idx] * cache.xhat[idx];
                    }
                }
            }
            add_slice(grads.get_mut(*gamma).data_mut(), &sum_gx);
            add_slice(grads.get_mut(*beta).data_mut(), &sum_g);
            if !want_input {
                return None;
            }
            let mut dx = Tensor::zeros(x.shape());
            let m = T::of(cache.count as f64);
            for s in 0..n {
                let base = s * c * sp;
                for ch in 0..c {
                    let scale = gam[ch] * cache.inv_std[ch];
                    for j in 0..sp {
                        let idx = base + ch * sp + j;
                        dx.data_mut()[idx] = if cache.train {
                            scale / m
                                * (m * g.data()[idx] - sum_g[ch] - cache.xhat[idx] * sum_gx[ch])
                        } else {
                            scale * g.data()[idx]
                        };
                    }
                }
            }
            Some(dx)
        }
        Op::Relu => want_input.then(|| {
            zip_map(g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })
        }),
        Op::LeakyRelu => want_input.then(|| {
            let a = T::of(LEAKY_SLOPE);
            zip_map(g, x, |gv, xv| if xv > T::zero() { gv } else { a * gv })
        }),
        Op::Softplus => want_input.then(|| zip_map(g, x, |gv, xv| gv * sigmoid(xv))),
        Op::Sigmoid => want_input.then(|| zip_map(g, y, |gv, yv| gv * yv * (T::one() - yv))),
        Op::Reshape(_) => want_input.then(|| g.clone().reshaped(x.shape())),
        Op::Crop {
            top,
            left,
            height,
            width,
        } => want_input.then(|| {
            let (ih, iw) = (x.shape()[2], x.shape()[3]);
            let mut dx = Tensor::zeros(x.shape());
            let dxd = dx.data_mut();
            let mut o = 0;
            for plane in dxd.chunks_mut(ih * iw) {
                for r in *top..top + height {
                    plane[r * iw + left..r * iw + left + width]
                        .copy_from_slice(&g.data()[o..o + width]);
                    o += width;
                }
            }
            dx
        }),
    }
}

fn add_slice<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_ranges_cover_valid_indices() {
        for &(small, big, k, s, p) in &[(28, 56, 3, 2, 1), (7, 14, 4, 2, 1), (4, 8, 4, 2, 1), (1, 1, 3, 2, 1)] {
            let t = taps(small, big, k, s, p);
            for (kk, tap) in t.iter().enumerate() {
                for sm in 0..small {
                    let b = sm as isize * s as isize + kk as isize - p as isize;
                    let valid = b >= 0 && b < big as isize;
                    assert_eq!(valid, (tap.lo..tap.hi).contains(&sm), "{small} {big} {k} {kk} {sm}");
                }
            }
        }
    }

    #[test]
    fn output_sizes() {
        assert_eq!(conv_out(56, 3, 2, 1), 28);
        assert_eq!(conv_out(30, 3, 2, 1), 15);
        assert_eq!(conv_out(15, 3, 2, 1), 8);
        assert_eq!(conv_out(1, 3, 2, 1), 1);
        assert_eq!(conv_t_out(7, 4, 2, 1), 14);
        assert_eq!(conv_t_out(5, 4, 2, 1), 10);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!(sigmoid(-1000.0f64) >= 0.0 && sigmoid(1000.0f64) <= 1.0);
    }
}

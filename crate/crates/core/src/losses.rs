//! Generator and discriminator objectives.
//!
//! The total generator loss is
//! `L = L_adv + λ_div·L_div + λ_in·L_in + λ_aux·L_aux`.
//! Each term has a scalar entry point on domain types and a batched kernel
//! returning the value together with its gradient, which the training step
//! and the gradient checks share.

use serde::{Deserialize, Serialize};

use crate::data::{intensity, PixelCoord, Response};
use crate::error::{Error, Result};
use crate::nets::LatentCode;
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const LOG_EPS: f64 = 1e-7;

/// Guard added to the image distance in the diversity ratio.
pub const DIVERSITY_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_div: f64,
    pub lambda_in: f64,
    pub lambda_aux: f64,
}

impl LossWeights {
    /// Best cell of the reference grid search.
    pub const REFERENCE: LossWeights = LossWeights {
        lambda_div: 1e-1,
        lambda_in: 1e-10,
        lambda_aux: 1e-3,
    };

    pub const NONE: LossWeights = LossWeights {
        lambda_div: 0.0,
        lambda_in: 0.0,
        lambda_aux: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_div", self.lambda_div),
            ("lambda_in", self.lambda_in),
            ("lambda_aux", self.lambda_aux),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::REFERENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub div: f64,
    pub intensity: f64,
    pub aux: f64,
    pub total: f64,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossForm {
    /// `−mean log D(G(z, c), c)`.
    #[default]
    NonSaturating,
    /// `mean log(1 − D(G(z, c), c))`.
    Saturating,
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let eps = T::of(LOG_EPS);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

fn check_probs<T: Real>(name: &str, ps: &[T]) -> Result<()> {
    if ps.is_empty() {
        return Err(Error::Empty(format!("{name} batch")));
    }
    if let Some(p) = ps.iter().find(|p| !(p.as_f64() >= 0.0 && p.as_f64() <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "{name} contains {p:?}, outside [0, 1]"
        )));
    }
    Ok(())
}

/// Discriminator loss `−mean log D(x) − mean log(1 − D(x̂))` with gradients
/// with respect to every probability.
pub fn d_loss_grad<T: Real>(d_real: &[T], d_fake: &[T]) -> (T, Vec<T>, Vec<T>) {
    let (nr, nf) = (T::of(d_real.len() as f64), T::of(d_fake.len() as f64));
    let mut loss = T::zero();
    let g_real = d_real
        .iter()
        .map(|&p| {
            let (q, clamped) = clamp_prob(p);
            loss -= q.ln() / nr;
            if clamped {
                T::zero()
            } else {
                -T::one() / (q * nr)
            }
        })
        .collect();
    let g_fake = d_fake
        .iter()
        .map(|&p| {
            let (q, clamped) = clamp_prob(p);
            loss -= (T::one() - q).ln() / nf;
            if clamped {
                T::zero()
            } else {
                T::one() / ((T::one() - q) * nf)
            }
        })
        .collect();
    (loss, g_real, g_fake)
}

/// Generator adversarial loss with its gradient per probability.
pub fn g_adv_grad<T: Real>(d_fake: &[T], form: GeneratorLossForm) -> (T, Vec<T>) {
    let n = T::of(d_fake.len() as f64);
    let mut loss = T::zero();
    let grad = d_fake
        .iter()
        .map(|&p| {
            let (q, clamped) = clamp_prob(p);
            let g = match form {
                GeneratorLossForm::NonSaturating => {
                    loss -= q.ln() / n;
                    -T::one() / (q * n)
                }
                GeneratorLossForm::Saturating => {
                    loss += (T::one() - q).ln() / n;
                    -T::one() / ((T::one() - q) * n)
                }
            };
            if clamped {
                T::zero()
            } else {
                g
            }
        })
        .collect();
    (loss, grad)
}

/// `mean[(k̂ − k)² + (l̂ − l)²]` over flattened `(k, l)` pairs.
pub fn aux_grad<T: Real>(predicted: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(predicted.len(), target.len());
    let n = T::of((predicted.len() / 2) as f64);
    let mut loss = T::zero();
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d / n;
            T::of(2.0) * d / n
        })
        .collect();
    (loss, grad)
}

/// `mean_i |f_in(x_ref,i) − f_in(x̂_i)|` given reference pixel sums.
pub fn intensity_grad<T: Real>(reference_sums: &[T], generated: &Tensor<T>) -> (T, Tensor<T>) {
    let n = generated.batch();
    assert_eq!(reference_sums.len(), n);
    let nt = T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(generated.shape());
    let per = generated.per_sample();
    for (i, &r) in reference_sums.iter().enumerate() {
        let sum: T = generated.sample(i).iter().copied().sum();
        let d = r - sum;
        loss += d.abs() / nt;
        // d|r − s|/ds = −sign(r − s)
        let g = if d > T::zero() {
            -T::one() / nt
        } else if d < T::zero() {
            T::one() / nt
        } else {
            T::zero()
        };
        grad.data_mut()[i * per..(i + 1) * per]
            .iter_mut()
            .for_each(|v| *v = g);
    }
    (loss, grad)
}

fn mean_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    s / T::of(a.len() as f64)
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean over pairs of `w · d_z / (d_I + eps)`, with gradients with respect
/// to both images of every pair. Rows of `x1`/`x2` and `z1`/`z2` are paired.
pub fn diversity_grad<T: Real>(
    weights: &[T],
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    z1: &Tensor<T>,
    z2: &Tensor<T>,
    eps: T,
) -> (T, Tensor<T>, Tensor<T>) {
    let n = weights.len();
    assert!(x1.batch() == n && x2.batch() == n && z1.batch() == n && z2.batch() == n);
    let nt = T::of(n as f64);
    let per = x1.per_sample();
    let pt = T::of(per as f64);
    let mut loss = T::zero();
    let mut g1 = Tensor::zeros(x1.shape());
    let mut g2 = Tensor::zeros(x2.shape());
    for p in 0..n {
        let (a, b) = (x1.sample(p), x2.sample(p));
        let dz = mean_abs_diff(z1.sample(p), z2.sample(p));
        let di = mean_abs_diff(a, b);
        let denom = di + eps;
        loss += weights[p] * dz / denom / nt;
        // ∂/∂a_j = −w·d_z/(d_I+eps)² · sign(a_j − b_j)/P / n
        let coef = -weights[p] * dz / (denom * denom) / pt / nt;
        let (r1, r2) = (
            &mut g1.data_mut()[p * per..(p + 1) * per],
            &mut g2.data_mut()[p * per..(p + 1) * per],
        );
        for j in 0..per {
            let s = sign(a[j] - b[j]) * coef;
            r1[j] = s;
            r2[j] = -s;
        }
    }
    (loss, g1, g2)
}

/// `−mean log d_real − mean log(1 − d_fake)`.
pub fn adversarial_d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    check_probs("d_real", d_real)?;
    check_probs("d_fake", d_fake)?;
    if d_real.len() != d_fake.len() {
        return Err(Error::Shape(format!(
            "d_real has {} entries, d_fake {}",
            d_real.len(),
            d_fake.len()
        )));
    }
    Ok(d_loss_grad(d_real, d_fake).0)
}

pub fn adversarial_g_loss(d_fake: &[f64], form: GeneratorLossForm) -> Result<f64> {
    check_probs("d_fake", d_fake)?;
    Ok(g_adv_grad(d_fake, form).0)
}

/// Mean squared Euclidean error between predicted and target centers.
pub fn aux_loss(predicted: &[PixelCoord], target: &[PixelCoord]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != target.len() {
        return Err(Error::Shape(format!(
            "aux loss needs equal non-empty batches, got {} and {}",
            predicted.len(),
            target.len()
        )));
    }
    let flat = |cs: &[PixelCoord]| -> Vec<f64> { cs.iter().flat_map(|c| [c.k, c.l]).collect() };
    Ok(aux_grad(&flat(predicted), &flat(target)).0)
}

/// `|f_in(x_ref) − f_in(x_gen)|`.
pub fn intensity_loss(x_ref: &Response, x_gen: &Response) -> f64 {
    (intensity(x_ref) - intensity(x_gen)).abs()
}

/// Mean of [`intensity_loss`] over paired batches.
pub fn intensity_loss_batch(x_ref: &[Response], x_gen: &[Response]) -> Result<f64> {
    if x_ref.is_empty() || x_ref.len() != x_gen.len() {
        return Err(Error::Shape("intensity loss needs equal non-empty batches".into()));
    }
    Ok(x_ref
        .iter()
        .zip(x_gen)
        .map(|(a, b)| intensity_loss(a, b))
        .sum::<f64>()
        / x_ref.len() as f64)
}

/// `weight · d_z(z1, z2) / (d_I(x1, x2) + eps)` with mean absolute
/// distances; identical latent codes are rejected.
pub fn diversity_loss(
    weight: f64,
    x1: &Response,
    x2: &Response,
    z1: &LatentCode,
    z2: &LatentCode,
    eps: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidArgument(format!(
            "diversity weight must lie in [0, 1], got {weight}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if z1.dim() != z2.dim() || z1.dim() == 0 {
        return Err(Error::Shape("latent codes must share a positive dimension".into()));
    }
    if z1 == z2 {
        return Err(Error::Precondition(
            "diversity loss needs two distinct latent codes".into(),
        ));
    }
    let to64 = |x: &Response| -> Vec<f64> { x.pixels().iter().map(|&p| p as f64).collect() };
    let d_i = mean_abs_diff(&to64(x1), &to64(x2));
    let d_z = mean_abs_diff(&z1.0, &z2.0);
    Ok(weight * d_z / (d_i + eps))
}

/// Combines the four generator terms.
pub fn total_generator_loss(
    adv: f64,
    div: f64,
    intensity: f64,
    aux: f64,
    w: LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    for (name, v) in [("adv", adv), ("div", div), ("intensity", intensity), ("aux", aux)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss term is {v}")));
        }
    }
    Ok(LossBreakdown {
        adv,
        div,
        intensity,
        aux,
        total: adv + w.lambda_div * div + w.lambda_in * intensity + w.lambda_aux * aux,
        weights: w,
    })
}

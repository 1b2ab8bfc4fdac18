//! Per-network objectives with their parameter gradients.
//!
//! Each function evaluates one loss on a fixed batch and backpropagates it
//! into the parameters of the network being optimized; the other networks
//! are treated as constants.

use crate::losses::{
    aux_grad, d_loss_grad, diversity_grad, g_adv_grad, intensity_grad, total_generator_loss,
    GeneratorLossForm, LossBreakdown, LossWeights,
};
use crate::nets::{Exec, GeneratorTrace, Grads, ModelParams, Mode, Networks};
use crate::tensor::{Real, Tensor};
use crate::error::Result;

/// Inputs of one generator update. Rows are individual generated samples;
/// `pairs` lists `(row_a, row_b, diversity_weight)` triples that share a
/// condition but not a latent code.
#[derive(Debug, Clone)]
pub struct GeneratorBatch<T> {
    /// `[n, 9]` raw conditions.
    pub conds: Tensor<T>,
    /// `[n, latent_dim]`.
    pub z: Tensor<T>,
    /// Pixel sum of each row's group reference sample.
    pub reference_sums: Vec<T>,
    /// `(k, l)` of each row's group reference center, flattened.
    pub centers: Vec<T>,
    pub pairs: Vec<(usize, usize, T)>,
}

pub struct GeneratorEval<T> {
    pub breakdown: LossBreakdown,
    pub grads: Grads<T>,
    pub trace: GeneratorTrace<T>,
}

fn rows<T: Real>(x: &Tensor<T>, idx: impl Iterator<Item = usize>) -> Tensor<T> {
    let parts: Vec<Tensor<T>> = idx.map(|i| x.slice_batch(i, i + 1)).collect();
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Tensor::concat_batch(&refs)
}

fn axpy<T: Real>(dst: &mut Tensor<T>, alpha: T, src: &Tensor<T>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += alpha * s;
    }
}

/// `L_adv + λ_div L_div + λ_in L_in + λ_aux L_aux` for the generator, with
/// discriminator and regressor frozen. Terms whose strength is zero are not
/// evaluated and report 0.
pub fn generator_objective<T: Real>(
    nets: &Networks,
    params: &ModelParams<T>,
    batch: &GeneratorBatch<T>,
    weights: LossWeights,
    form: GeneratorLossForm,
    diversity_eps: f64,
    exec: Exec,
) -> Result<GeneratorEval<T>> {
    let trace = nets
        .generator
        .forward(params, &batch.conds, &batch.z, Mode::Train, exec);
    let x = trace.output();

    let d = nets.discriminator.forward(params, x, &batch.conds, exec);
    let (adv, dprob) = g_adv_grad(d.probs(), form);
    let dlogit: Vec<T> = dprob
        .iter()
        .zip(d.probs())
        .map(|(&g, &p)| g * p * (T::one() - p))
        .collect();
    let mut scratch = params.discriminator.zero_grads();
    let mut dx = nets
        .discriminator
        .backward(params, &d, &dlogit, &mut scratch, true, exec)
        .expect("input gradient requested");

    let mut intensity = T::zero();
    if weights.lambda_in > 0.0 {
        let (l, g) = intensity_grad(&batch.reference_sums, x);
        intensity = l;
        axpy(&mut dx, T::of(weights.lambda_in), &g);
    }

    let mut aux = T::zero();
    if weights.lambda_aux > 0.0 {
        let r = nets.regressor.forward(params, x, exec);
        let (l, gc) = aux_grad(r.coords(), &batch.centers);
        aux = l;
        let mut scratch = params.regressor.zero_grads();
        let g = nets
            .regressor
            .backward(params, &r, &gc, &mut scratch, true, exec)
            .expect("input gradient requested");
        axpy(&mut dx, T::of(weights.lambda_aux), &g);
    }

    let mut div = T::zero();
    if weights.lambda_div > 0.0 && !batch.pairs.is_empty() {
        let a = || batch.pairs.iter().map(|p| p.0);
        let b = || batch.pairs.iter().map(|p| p.1);
        let w: Vec<T> = batch.pairs.iter().map(|p| p.2).collect();
        let (l, ga, gb) = diversity_grad(
            &w,
            &rows(x, a()),
            &rows(x, b()),
            &rows(&batch.z, a()),
            &rows(&batch.z, b()),
            T::of(diversity_eps),
        );
        div = l;
        let lam = T::of(weights.lambda_div);
        let per = x.per_sample();
        for (p, (ra, rb)) in a().zip(b()).enumerate() {
            for j in 0..per {
                dx.data_mut()[ra * per + j] += lam * ga.sample(p)[j];
                dx.data_mut()[rb * per + j] += lam * gb.sample(p)[j];
            }
        }
    }

    let mut grads = params.generator.zero_grads();
    nets.generator.backward(params, &trace, dx, &mut grads, exec);
    let breakdown = total_generator_loss(
        adv.as_f64(),
        div.as_f64(),
        intensity.as_f64(),
        aux.as_f64(),
        weights,
    )?;
    Ok(GeneratorEval {
        breakdown,
        grads,
        trace,
    })
}

/// Discriminator loss on real and (detached) generated samples.
pub fn discriminator_objective<T: Real>(
    nets: &Networks,
    params: &ModelParams<T>,
    real: &Tensor<T>,
    real_conds: &Tensor<T>,
    fake: &Tensor<T>,
    fake_conds: &Tensor<T>,
    exec: Exec,
) -> (T, Grads<T>) {
    let n_real = real.batch();
    let x = Tensor::concat_batch(&[real, fake]);
    let c = Tensor::concat_batch(&[real_conds, fake_conds]);
    let d = nets.discriminator.forward(params, &x, &c, exec);
    let (loss, g_real, g_fake) = d_loss_grad(&d.probs()[..n_real], &d.probs()[n_real..]);
    let dlogit: Vec<T> = g_real
        .iter()
        .chain(&g_fake)
        .zip(d.probs())
        .map(|(&g, &p)| g * p * (T::one() - p))
        .collect();
    let mut grads = params.discriminator.zero_grads();
    nets.discriminator
        .backward(params, &d, &dlogit, &mut grads, false, exec);
    (loss, grads)
}

/// Center-regression loss of the regressor on images with known centers.
pub fn regressor_objective<T: Real>(
    nets: &Networks,
    params: &ModelParams<T>,
    x: &Tensor<T>,
    centers: &[T],
    exec: Exec,
) -> (T, Grads<T>) {
    let r = nets.regressor.forward(params, x, exec);
    let (loss, gc) = aux_grad(r.coords(), centers);
    let mut grads = params.regressor.zero_grads();
    nets.regressor
        .backward(params, &r, &gc, &mut grads, false, exec);
    (loss, grads)
}

//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

const STEP: f64 = 1e-6;

/// Multiple of the rounding error of a central difference treated as noise.
const ROUNDOFF_FACTOR: f64 = 16.0;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `relative_error(analytic, numeric)`.
    pub rel_error: f64,
    /// Relative error after discounting the rounding error of the quotient.
    pub excess_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub max_rel_error: f64,
    pub max_excess_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences on `probe_count` randomly chosen coordinates (all of them
/// when there are fewer).
///
/// `loss_fn` maps a parameter vector to `(loss, gradient)`. Discrepancies
/// within the rounding error of the difference quotient, about
/// `ε·(|L₊| + |L₋|) / 2h`, are not counted.
pub fn grad_check<F>(
    loss_fn: F,
    params: &[f64],
    probe_count: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (loss, grad) = loss_fn(params);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} at the probe point")));
    }
    if grad.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, params.len(), probe_count.min(params.len())).into_vec();
    indices.sort_unstable();

    let mut probe = params.to_vec();
    let mut probes = Vec::with_capacity(indices.len());
    for index in indices {
        let h = STEP * params[index].abs().max(1.0);
        probe[index] = params[index] + h;
        let (up, _) = loss_fn(&probe);
        probe[index] = params[index] - h;
        let (down, _) = loss_fn(&probe);
        probe[index] = params[index];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss at perturbed coordinate {index}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let noise = ROUNDOFF_FACTOR * f64::EPSILON * (up.abs() + down.abs()) / (2.0 * h);
        let excess = ((grad[index] - numeric).abs() - noise).max(0.0);
        probes.push(ProbeResult {
            index,
            analytic: grad[index],
            numeric,
            rel_error: relative_error(grad[index], numeric),
            excess_error: excess / grad[index].abs().max(numeric.abs()).max(GRAD_FLOOR),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    let max_excess_error = probes.iter().map(|p| p.excess_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_excess_error <= tolerance,
        probes,
        max_rel_error,
        max_excess_error,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let p: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        let r = grad_check(
            |p| (0.5 * p.iter().map(|v| v * v).sum::<f64>(), p.to_vec()),
            &p,
            10,
            1e-3,
            1,
        )
        .unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        assert_eq!(r.probes.len(), 10);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = vec![1.0; 5];
        let r = grad_check(|p| (3.0, vec![0.0; p.len()]), &p, 50, 1e-3, 0).unwrap();
        assert!(r.passed);
        assert!(r.probes.iter().all(|q| q.numeric == 0.0 && q.analytic == 0.0));
        assert_eq!(r.probes.len(), 5);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = vec![1.0, 2.0];
        let r = grad_check(|p| (p[0] * p[1], vec![p[1], 2.0 * p[0]]), &p, 2, 1e-3, 0).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_loss_errors() {
        let p = vec![1.0];
        assert!(grad_check(|_| (f64::NAN, vec![0.0]), &p, 1, 1e-3, 0).is_err());
    }

    #[test]
    fn rounding_noise_on_a_large_loss_is_ignored() {
        // p[1] does not enter the loss; the offset makes differences noisy
        let p = vec![0.3, 0.7];
        let r = grad_check(|p| (150.0 + p[0].sin() * 1e3, vec![p[0].cos() * 1e3, 0.0]), &p, 2, 1e-3, 0)
            .unwrap();
        assert!(r.passed, "{}", r.max_excess_error);
        let r = grad_check(|p| (150.0 + p[0] * 1e3, vec![1.01e3, 0.0]), &p, 2, 1e-3, 0).unwrap();
        assert!(!r.passed);
    }
}

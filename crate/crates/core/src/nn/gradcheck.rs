//! Central-difference gradient verification.
//!
//! The model is lifted to `f64` first. In `f32` the loss itself carries
//! ~1e-7 absolute noise, which at epsilon = 1e-3 swamps small gradients.
//!
//! A coordinate whose `+epsilon` or `-epsilon` probe takes a different ReLU
//! or pooling branch than the unperturbed pass straddles a kink, where a
//! central difference does not estimate the derivative. Such coordinates
//! are counted in [`GradCheckReport::kinks`] and left out of the maximum.

use super::model::{loss_cross_entropy, Model};
use super::tensor::Tensor;
use super::NnError;

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many evenly spaced coordinates per parameter
    /// tensor. `None` checks every coordinate.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinates compared (kinks excluded).
    pub checked: usize,
    pub kinks: usize,
    /// (layer, slot, flat index) of the worst coordinate.
    pub worst: Option<(usize, usize, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Largest relative error between backprop and central differences over
/// every parameter (kink-straddling coordinates excluded).
pub fn grad_check(
    model: &Model<f32>,
    input: &Tensor<f32>,
    true_class: usize,
    epsilon: f64,
) -> Result<f64, NnError> {
    let opts = GradCheckOptions {
        epsilon,
        max_per_tensor: None,
    };
    Ok(grad_check_with(model, input, true_class, &opts)?.max_relative_error)
}

pub fn grad_check_with(
    model: &Model<f32>,
    input: &Tensor<f32>,
    true_class: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    if !(opts.epsilon > 0.0) {
        return Err(NnError::InvalidConfig("epsilon must be positive".into()));
    }
    let mut probe: Model<f64> = model.cast();
    let x: Tensor<f64> = input.cast();
    let (_, analytic) = probe.backward(&x, true_class)?;
    let base_branches = probe.branch_signature(&probe.forward_trace(&x)?);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        kinks: 0,
        worst: None,
    };
    let probe_loss = |m: &Model<f64>| -> Result<(f64, bool), NnError> {
        let acts = m.forward_trace(&x)?;
        let same = m.branch_signature(&acts) == base_branches;
        Ok((loss_cross_entropy(acts.last().expect("trace"), true_class)?, same))
    };
    for layer in 0..probe.params().len() {
        for slot in 0..probe.params()[layer].len() {
            let len = probe.params()[layer][slot].len();
            for idx in sample_indices(len, opts.max_per_tensor) {
                let original = probe.params()[layer][slot].data()[idx];
                probe.params_mut()[layer][slot].data_mut()[idx] = original + opts.epsilon;
                let (plus, plus_same) = probe_loss(&probe)?;
                probe.params_mut()[layer][slot].data_mut()[idx] = original - opts.epsilon;
                let (minus, minus_same) = probe_loss(&probe)?;
                probe.params_mut()[layer][slot].data_mut()[idx] = original;
                if !(plus_same && minus_same) {
                    report.kinks += 1;
                    continue;
                }

                let numeric = (plus - minus) / (2.0 * opts.epsilon);
                let a = analytic.per_layer[layer][slot].data()[idx];
                let err = relative_error(a, numeric);
                report.checked += 1;
                if err > report.max_relative_error || report.worst.is_none() {
                    report.max_relative_error = report.max_relative_error.max(err);
                    report.worst = Some((layer, slot, idx));
                }
            }
        }
    }
    Ok(report)
}

fn sample_indices(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(cap) if cap < len => (0..cap).map(|i| i * len / cap).collect(),
        _ => (0..len).collect(),
    }
}

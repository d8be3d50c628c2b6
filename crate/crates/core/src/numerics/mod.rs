//! Dense-network numerics shared by the scoring heads and the decoder.

mod adam;
mod dense;
mod fit;
mod gradcheck;
mod mlp;
mod plateau;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::{affine, DenseParams, Matrix};
pub use fit::{fit_bce, FitReport, TrainConfig};
pub use gradcheck::{assign_flat, finite_diff_grad, flatten, max_relative_error};
pub use mlp::{Mlp, MlpCache};
pub use plateau::PlateauScheduler;

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Named, mutable views onto a model's parameter blocks, in a fixed order.
///
/// Gradients are represented by a value of the same type with identical
/// shapes, so optimizers can zip the two block lists.
pub trait Parameterized {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(non_snake_case)]
pub fn tanh_(x: f64) -> f64 {
    x.tanh()
}

/// `ln σ(x)` without cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-7, 1-1e-7]`.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::dim("bce_loss", p.len(), y.len()));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Mean binary cross-entropy computed directly from logits.
pub fn bce_with_logits(logits: &[f64], y: &[f64]) -> Result<f64> {
    if logits.len() != y.len() {
        return Err(Error::dim("bce_with_logits", logits.len(), y.len()));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter()
        .zip(y)
        .map(|(&z, &y)| -(y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z)))
        .sum();
    Ok(total / logits.len() as f64)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn activation_fixed_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_(0.0), 0.0);
        assert!(sigmoid(500.0) <= 1.0 && sigmoid(-500.0) >= 0.0);
        assert!(sigmoid(-500.0).is_finite());
    }

    #[test]
    fn bce_of_half_is_ln2() {
        let l = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() <= 1e-6);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let p: [f64; 5] = [0.13, 0.77, 0.5, 0.999, 0.02];
        let y = [0.0, 1.0, 1.0, 0.0, 1.0];
        let mut acc = 0.0;
        for i in 0..p.len() {
            acc += if y[i] == 1.0 { -p[i].ln() } else { -(1.0 - p[i]).ln() };
        }
        assert!((bce_loss(&p, &y).unwrap() - acc / 5.0).abs() < 1e-12);
    }

    #[test]
    fn logit_bce_agrees_with_probability_bce() {
        let z = [-3.0, 0.2, 4.0];
        let y = [0.0, 1.0, 1.0];
        let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
        let a = bce_loss(&p, &y).unwrap();
        let b = bce_with_logits(&z, &y).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -500.0f64..500.0) {
            prop_assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-12);
        }

        #[test]
        fn activations_are_monotone(x in -30.0f64..30.0, dx in 1e-3f64..5.0) {
            prop_assert!(sigmoid(x) <= sigmoid(x + dx));
            prop_assert!(tanh_(x) <= tanh_(x + dx));
            if x.abs() < 8.0 {
                prop_assert!(sigmoid(x) < sigmoid(x + dx));
                prop_assert!(tanh_(x) < tanh_(x + dx));
            }
        }
    }
}

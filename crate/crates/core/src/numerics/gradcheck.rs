use super::Parameterized;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `theta`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let plus = f(&point);
        point[i] = theta[i] - h;
        let minus = f(&point);
        point[i] = theta[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// All parameters of `model` in block order.
pub fn flatten<P: Parameterized>(model: &P) -> Vec<f64> {
    model
        .blocks()
        .into_iter()
        .flat_map(|(_, b)| b.iter().copied())
        .collect()
}

/// Inverse of [`flatten`].
pub fn assign_flat<P: Parameterized>(model: &mut P, values: &[f64]) {
    let mut offset = 0;
    for (_, block) in model.blocks_mut() {
        let n = block.len();
        block.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, values.len(), "flat parameter length mismatch");
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
///
/// The floor keeps entries whose true gradient is essentially zero from
/// dominating through round-off.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_six_at_three() {
        let g = finite_diff_grad(|t| t[0] * t[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        assert!(finite_diff_grad(|t| (t[0]).ln(), &[0.0], 1e-5).is_err());
    }
}

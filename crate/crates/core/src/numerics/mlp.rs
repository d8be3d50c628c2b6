use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseParams, Parameterized};
use crate::error::{Error, Result};

/// Stack of affine layers with `tanh` between them; the last layer emits logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseParams>,
}

/// Layer inputs recorded by [`Mlp::forward_cached`]; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    /// `hidden` lists the widths of the intermediate layers (empty = single affine layer).
    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(out_dim);
        let layers = widths
            .windows(2)
            .map(|w| DenseParams::glorot(rng, w[1], w[0]))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseParams::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseParams::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseParams::out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::dim("layer bias", layer.out_dim(), layer.bias.len()));
            }
            if !layer.is_finite() {
                return Err(Error::NonFinite("network weights".into()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::dim("network input", self.in_dim(), x.len()));
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            layer.weight.matvec_acc(&current, 0, &mut z);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(std::mem::replace(&mut current, z));
        }
        Ok((current, MlpCache { activations }))
    }

    /// Accumulates into `grads` the gradient given `d loss / d logits`.
    pub fn backward(&self, cache: &MlpCache, grad_logits: &[f64], grads: &mut Mlp) {
        let mut delta = grad_logits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.activations[i];
            let g = &mut grads.layers[i];
            g.weight.add_outer(&delta, input, 0);
            for (b, d) in g.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            if i > 0 {
                let mut upstream = vec![0.0; input.len()];
                self.layers[i].weight.matvec_t_acc(&delta, &mut upstream);
                // input = tanh(z) for hidden layers
                for (u, a) in upstream.iter_mut().zip(input) {
                    *u *= 1.0 - a * a;
                }
                delta = upstream;
            }
        }
    }
}

impl Parameterized for Mlp {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.weight"), l.weight.as_slice()));
            out.push((format!("layers.{i}.bias"), l.bias.as_slice()));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.weight"), l.weight.as_mut_slice()));
            out.push((format!("layers.{i}.bias"), l.bias.as_mut_slice()));
        }
        out
    }
}

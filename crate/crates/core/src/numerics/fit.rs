use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, bce_with_logits, sigmoid, AdamConfig, AdamState, Mlp, PlateauScheduler};
use crate::error::{Error, Result};

/// Optimization settings shared by every trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before training stops.
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Hidden layer widths of the scoring heads; empty means a single affine layer.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            plateau_patience: 3,
            plateau_factor: 0.1,
            min_lr: 1e-6,
            hidden: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::InvalidParameter("plateau factor must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler::new(self.plateau_patience, self.plateau_factor, self.min_lr)
    }
}

/// Outcome of a training run. Losses refer to the retained (best) epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub initial_train_loss: f64,
}

fn mean_loss(net: &Mlp, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        total += bce_with_logits(&net.forward(x)?, y)?;
    }
    Ok(total / xs.len() as f64)
}

/// Mini-batch Adam on mean binary cross-entropy, keeping the parameters with
/// the lowest validation loss. The training loss is monitored instead when
/// no validation data is given.
pub fn fit_bce<R: Rng + ?Sized>(
    init: Mlp,
    train_x: &[Vec<f64>],
    train_y: &[Vec<f64>],
    val_x: &[Vec<f64>],
    val_y: &[Vec<f64>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(Mlp, FitReport)> {
    config.validate()?;
    init.validate()?;
    if train_x.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::dim("targets", train_x.len(), train_y.len()));
    }

    let mut net = init;
    let mut adam = AdamState::new(config.adam());
    let mut scheduler = config.scheduler();
    let monitor = |net: &Mlp| -> Result<(f64, f64)> {
        let train = mean_loss(net, train_x, train_y)?;
        let val = if val_x.is_empty() {
            train
        } else {
            mean_loss(net, val_x, val_y)?
        };
        Ok((train, val))
    };

    let (initial_train_loss, initial_val) = monitor(&net)?;
    let mut best = (net.clone(), initial_train_loss, initial_val, 0usize);
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = net.zeros_like();
            let scale = 1.0 / (batch.len() * net.out_dim()) as f64;
            for &i in batch {
                let (logits, cache) = net.forward_cached(&train_x[i])?;
                let g: Vec<f64> = logits
                    .iter()
                    .zip(&train_y[i])
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                net.backward(&cache, &g, &mut grads);
            }
            adam_step(&mut adam, &mut net, &grads)?;
        }

        let (train_loss, val_loss) = monitor(&net)?;
        log::debug!(
            "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {:.2e}",
            adam.lr
        );
        adam.lr = scheduler.update(val_loss, adam.lr);
        if val_loss < best.2 {
            best = (net.clone(), train_loss, val_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }

    let (net, train_loss, val_loss, best_epoch) = best;
    Ok((
        net,
        FitReport {
            epochs_run,
            best_epoch,
            train_loss,
            val_loss,
            initial_train_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn learns_a_threshold_and_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 - 100.0) / 30.0]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![f64::from(x[0] > 0.5)]).collect();
        let net = Mlp::glorot(&mut rng, 1, &[], 1);
        let config = TrainConfig {
            lr: 0.05,
            ..TrainConfig::default()
        };
        let (net, report) = fit_bce(net, &xs, &ys, &[], &[], &config, &mut rng).unwrap();
        assert!(report.train_loss < report.initial_train_loss);
        assert!(sigmoid(net.forward(&[2.0]).unwrap()[0]) > 0.9);
        assert!(sigmoid(net.forward(&[-1.0]).unwrap()[0]) < 0.1);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::glorot(&mut rng, 1, &[], 1);
        assert!(fit_bce(net, &[], &[], &[], &[], &TrainConfig::default(), &mut rng).is_err());
    }
}

/// Lowers the learning rate when a monitored loss stops improving.
///
/// The rate is cut once more than `patience` consecutive non-improving
/// observations have been seen, after which the counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, min_lr: f64) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "plateau factor must be in (0, 1)");
        Self {
            patience,
            factor,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records `monitored` and returns the learning rate to use next.
    pub fn update(&mut self, monitored: f64, lr: f64) -> f64 {
        if monitored < self.best {
            self.best = monitored;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(3, 0.1, 1e-6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_sequence_keeps_lr() {
        let mut s = PlateauScheduler::new(2, 0.1, 1e-6);
        let mut lr = 0.001;
        for loss in [1.0, 0.9, 0.8, 0.7, 0.6] {
            lr = s.update(loss, lr);
        }
        assert_eq!(lr, 0.001);
    }

    #[test]
    fn reduces_after_third_stale_call() {
        let mut s = PlateauScheduler::new(2, 0.1, 1e-6);
        let mut lr = s.update(1.0, 0.001);
        lr = s.update(1.0, lr);
        assert_eq!(lr, 0.001);
        lr = s.update(1.2, lr);
        assert_eq!(lr, 0.001);
        lr = s.update(1.1, lr);
        assert!((lr - 0.0001).abs() < 1e-18);
    }

    #[test]
    fn never_below_min_lr() {
        let mut s = PlateauScheduler::new(0, 0.1, 1e-5);
        let mut lr = s.update(1.0, 1e-3);
        for _ in 0..10 {
            lr = s.update(2.0, lr);
            assert!(lr >= 1e-5);
        }
        assert_eq!(lr, 1e-5);
    }
}

use serde::{Deserialize, Serialize};

/// Multiplies the learning rate by `factor` once the monitored loss has gone
/// `patience` epochs without improving on its minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, best: None, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feeds one epoch loss. Returns the multiplier applied this epoch
    /// (`factor` on a reduction, otherwise `1.0`).
    pub fn step(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(b) if loss >= b || loss.is_nan() => self.bad_epochs += 1,
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            self.lr *= self.factor;
            return self.factor;
        }
        1.0
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn flat_trace_of_51_epochs_reduces_once() {
        let mut s = PlateauScheduler::new(1e-3, 0.8, 50);
        let reductions = (0..51).filter(|_| s.step(0.5) != 1.0).count();
        assert_eq!(reductions, 1);
        assert!((s.lr() - 8e-4).abs() < 1e-18);

        let mut s = PlateauScheduler::new(1e-3, 0.8, 50);
        assert_eq!((0..50).filter(|_| s.step(0.5) != 1.0).count(), 0);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 3);
        for loss in [1.0, 1.0, 1.0, 0.9, 1.0, 1.0] {
            assert_eq!(s.step(loss), 1.0);
        }
        assert_eq!(s.step(1.0), 0.5);
        assert_eq!(s.best(), Some(0.9));
    }

    proptest! {
        #[test]
        fn lr_never_increases(losses in prop::collection::vec(0.0f64..10.0, 1..300)) {
            let mut s = PlateauScheduler::new(1e-3, 0.8, 5);
            let mut prev = s.lr();
            for l in losses {
                s.step(l);
                prop_assert!(s.lr() <= prev);
                prev = s.lr();
            }
        }
    }
}

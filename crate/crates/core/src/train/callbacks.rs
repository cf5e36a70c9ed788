//! Learning-rate reduction and early stopping on the validation loss.
//!
//! Both callbacks keep their own best value and counter.

/// A loss counts as an improvement only if it beats the best by more than this.
pub const MIN_DELTA: f64 = 1e-4;
pub const LR_FLOOR: f64 = 1e-7;

fn improves(loss: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) => loss < b - MIN_DELTA,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    best: Option<f64>,
    wait: usize,
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: None,
            wait: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use from the next epoch on.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if improves(loss, self.best) {
            self.best = Some(loss);
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait < self.patience {
            return lr;
        }
        self.wait = 0;
        if lr <= LR_FLOOR {
            return lr;
        }
        (lr * self.factor).max(LR_FLOOR)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            wait: 0,
        }
    }

    /// Records one epoch's validation loss; true once `patience` epochs in a
    /// row have not improved on the best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if improves(loss, self.best) {
            self.best = Some(loss);
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        self.wait >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_losses_reduce_after_sixth_epoch() {
        let mut cb = ReduceOnPlateau::new(0.1, 5);
        let mut lr = 1e-4;
        let mut seq = Vec::new();
        for _ in 0..6 {
            lr = cb.observe(1.0, lr);
            seq.push(lr);
        }
        assert_eq!(&seq[..5], &[1e-4; 5]);
        assert!((seq[5] - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut cb = ReduceOnPlateau::new(0.1, 5);
        let mut lr = 1e-4;
        for i in 0..30 {
            lr = cb.observe(10.0 - i as f64 * 0.1, lr);
        }
        assert_eq!(lr, 1e-4);
    }

    #[test]
    fn floor_holds() {
        let mut cb = ReduceOnPlateau::new(0.1, 1);
        let mut lr = 1e-7;
        for _ in 0..5 {
            lr = cb.observe(1.0, lr);
        }
        assert_eq!(lr, 1e-7);
    }

    #[test]
    fn tiny_gain_is_not_improvement() {
        let mut cb = ReduceOnPlateau::new(0.5, 2);
        let lr = cb.observe(1.0, 1.0);
        let lr = cb.observe(1.0 - 0.5e-4, lr);
        let lr = cb.observe(1.0 - 0.9e-4, lr);
        assert_eq!(lr, 0.5);
    }

    #[test]
    fn ten_flat_epochs_stop() {
        let mut es = EarlyStopping::new(10);
        assert!(!es.observe(1.0));
        let flags: Vec<bool> = (0..10).map(|_| es.observe(1.0)).collect();
        assert!(flags[..9].iter().all(|f| !f));
        assert!(flags[9]);
    }

    #[test]
    fn late_improvement_resets() {
        let mut es = EarlyStopping::new(10);
        es.observe(1.0);
        for _ in 0..8 {
            assert!(!es.observe(1.0));
        }
        assert!(!es.observe(0.5));
        assert!(!es.observe(0.5));
    }

    #[test]
    fn short_history_never_stops() {
        let mut es = EarlyStopping::new(10);
        for _ in 0..9 {
            assert!(!es.observe(1.0));
        }
    }
}

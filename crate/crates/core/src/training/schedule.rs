//! Learning-rate decay and early stopping driven by validation accuracy.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Continue,
    /// Patience ran out for the first time; the rate was just decayed.
    Decayed,
    /// Patience ran out again after the decay.
    Stop,
}

/// Counts epochs without a strict improvement. The first time the count
/// reaches `patience` the rate is multiplied by `decay` and the count
/// resets; the second time, training stops.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    lr: f64,
    patience: usize,
    decay: f64,
    best: Option<f64>,
    stale: usize,
    decayed: bool,
}

impl Schedule {
    pub fn new(lr: f64, patience: usize, decay: f64) -> Self {
        Schedule {
            lr,
            patience,
            decay,
            best: None,
            stale: 0,
            decayed: false,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn decayed(&self) -> bool {
        self.decayed
    }

    /// Records one epoch's validation accuracy. Returns whether it improved
    /// and what to do next.
    pub fn observe(&mut self, val_acc: f64) -> (bool, Action) {
        let improved = self.best.is_none_or(|b| val_acc > b);
        if improved {
            self.best = Some(val_acc);
            self.stale = 0;
            return (true, Action::Continue);
        }
        self.stale += 1;
        if self.stale < self.patience {
            return (false, Action::Continue);
        }
        self.stale = 0;
        if self.decayed {
            (false, Action::Stop)
        } else {
            self.decayed = true;
            self.lr *= self.decay;
            (false, Action::Decayed)
        }
    }
}

//! AdamW with decoupled weight decay, a reduce-on-plateau learning-rate
//! scheduler, and a trailing-window early-stopping monitor.

use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub updated: usize,
    /// Entries left untouched because their gradient was not finite.
    pub skipped_non_finite: usize,
}

impl AdamW {
    /// One update of every unfrozen entry from its accumulated gradient.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> StepReport {
        let mut report = StepReport::default();
        for (_, e) in store.entries_mut() {
            if e.frozen {
                continue;
            }
            if e.grad.iter().any(|g| !g.is_finite()) {
                report.skipped_non_finite += 1;
                continue;
            }
            e.step += 1;
            let t = e.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let decay = 1.0 - lr * self.weight_decay;
            let values = e.value.data_mut();
            for i in 0..values.len() {
                let g = e.grad[i];
                values[i] *= decay;
                let m = self.beta1 * e.first_moment[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * e.second_moment[i] + (1.0 - self.beta2) * g * g;
                e.first_moment[i] = m;
                e.second_moment[i] = v;
                values[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            }
            report.updated += 1;
        }
        report
    }
}

/// `true` when `candidate` beats `best` by more than `rel` of `|best|`.
pub fn improves(candidate: f64, best: f64, rel: f64) -> bool {
    if !best.is_finite() {
        return candidate.is_finite();
    }
    candidate < best - rel * best.abs()
}

/// Reduce-on-plateau learning-rate control, stepped once per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    initial: f64,
    best: f64,
    since_improvement: usize,
    pub patience: usize,
    pub factor: f64,
    pub floor: f64,
    pub threshold: f64,
}

impl PlateauScheduler {
    pub fn new(initial: f64, floor: f64) -> Self {
        Self {
            lr: initial,
            initial,
            best: f64::INFINITY,
            since_improvement: 0,
            patience: 10,
            factor: 0.5,
            floor: floor.min(initial),
            threshold: 1e-4,
        }
    }

    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = patience.max(1);
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Feed one epoch metric; returns the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        if improves(metric, self.best, self.threshold) {
            self.best = metric;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.since_improvement = 0;
            }
        }
        self.lr
    }
}

/// Stops when the last `window` epochs brought no relative improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    best: f64,
    since_improvement: usize,
    pub window: usize,
    pub threshold: f64,
}

impl EarlyStopping {
    pub fn new(window: usize, threshold: f64) -> Self {
        Self {
            best: f64::INFINITY,
            since_improvement: 0,
            window,
            threshold,
        }
    }

    /// Returns `true` when training should halt.
    pub fn observe(&mut self, metric: f64) -> bool {
        if improves(metric, self.best, self.threshold) {
            self.best = metric;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.since_improvement >= self.window
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

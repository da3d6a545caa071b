use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds parameter initialisation and batch order.
    pub seed: u64,
    /// Emit a checkpoint every this many epochs; 0 disables.
    pub checkpoint_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `theta -= lr * wd * theta`.
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 100,
            batch_size: 128,
            seed: 0,
            checkpoint_interval: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Every violated invariant as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(("learning_rate", "learning_rate must be positive".into()));
        }
        if self.epochs < 1 {
            out.push(("epochs", "epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            out.push(("batch_size", "batch_size must be at least 1".into()));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                out.push((field, format!("{field} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            out.push(("eps", "eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            out.push(("weight_decay", "weight_decay must be non-negative".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                out.push(("grad_clip", "grad_clip must be positive".into()));
            }
        }
        out
    }

    pub fn validate(&self) -> crate::Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::Validation(v.into_iter().map(|(f, m)| format!("{f}: {m}")).collect()))
        }
    }
}

/// Cosine annealing from `lr0` at step 0 towards 0 at step `total`.
pub fn cosine_lr(lr0: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    lr0 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

use serde::{Deserialize, Serialize};

/// Squashing function applied to the metric network's output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    /// Sigmoid above zero, `gamma * exp(gamma * x)` at or below zero.
    LeakySigmoid,
    Sigmoid,
    /// Raw metric-network output.
    None,
}

/// Contrastive objective over the fused similarity matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// KL divergence to multi-positive targets, both directions.
    Kld,
    /// One-hot diagonal targets, both directions.
    InfoNce,
    /// One-hot diagonal targets, visual-to-text direction only.
    SoftmaxCe,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Kld => "KLD",
            LossKind::InfoNce => "InfoNCE",
            LossKind::SoftmaxCe => "SoftmaxCE",
        }
    }
}

pub const MIN_TAU: f64 = 0.01;
pub const MAX_TAU: f64 = 1.0;

/// Slope of the leaky ReLU between metric-network layers.
pub const METRIC_LEAK: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Shared embedding width `h`.
    pub embed_dim: usize,
    /// Hidden width of the deep visual projector.
    pub visual_hidden: usize,
    /// Hidden widths of the metric network; its input is `2h`, output 1.
    pub metric_hidden: Vec<usize>,
    pub tau: f64,
    pub learnable_tau: bool,
    pub gamma: f64,
    pub score_fn: ScoreFn,
    /// Semantic description enhancement (cross-attention over label and
    /// context embeddings).
    pub use_sde: bool,
    /// Cosine branch.
    pub use_da: bool,
    /// Metric-network branch.
    pub use_aa: bool,
    /// Two-layer visual projector; a single linear layer when false.
    pub deep_visual: bool,
    pub loss: LossKind,
    /// Multiplier on the initialisation bound of the visual and text
    /// projectors. The metric network always uses the standard bound.
    pub projector_init_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_dim: 256,
            text_dim: 768,
            embed_dim: 768,
            visual_hidden: 512,
            metric_hidden: vec![768, 384],
            tau: 0.1,
            learnable_tau: false,
            gamma: 0.01,
            score_fn: ScoreFn::LeakySigmoid,
            use_sde: true,
            use_da: true,
            use_aa: true,
            deep_visual: true,
            loss: LossKind::Kld,
            projector_init_gain: 1.0,
        }
    }
}

impl ModelConfig {
    /// Small model used by the synthetic benchmark: 32-d visual, 64-d text,
    /// `h = 64`, with hidden widths scaled down in the same proportions.
    ///
    /// Projector weights start small: only the span of the seen class
    /// embeddings receives gradient, so whatever the initialisation puts
    /// outside it stays as noise on every unseen class.
    pub fn synthetic() -> Self {
        Self {
            visual_dim: 32,
            text_dim: 64,
            embed_dim: 64,
            visual_hidden: 128,
            metric_hidden: vec![64, 32],
            projector_init_gain: 0.1,
            ..Self::default()
        }
    }

    /// Toy dimensions for gradient checks.
    pub fn toy() -> Self {
        Self {
            visual_dim: 6,
            text_dim: 5,
            embed_dim: 8,
            visual_hidden: 10,
            metric_hidden: vec![12, 6],
            ..Self::default()
        }
    }

    /// Every violated invariant as `(field, message)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (field, v) in [
            ("visual_dim", self.visual_dim),
            ("text_dim", self.text_dim),
            ("embed_dim", self.embed_dim),
            ("visual_hidden", self.visual_hidden),
        ] {
            if v == 0 {
                out.push((field, format!("{field} must be at least 1")));
            }
        }
        if self.metric_hidden.contains(&0) {
            out.push(("metric_hidden", "metric_hidden widths must be at least 1".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            out.push(("tau", "tau must be positive".into()));
        } else if self.learnable_tau && !(MIN_TAU..=MAX_TAU).contains(&self.tau) {
            out.push(("tau", format!("learnable tau must start in [{MIN_TAU}, {MAX_TAU}]")));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            out.push(("gamma", "gamma must be positive".into()));
        }
        if !(self.projector_init_gain > 0.0) || !self.projector_init_gain.is_finite() {
            out.push(("projector_init_gain", "projector_init_gain must be positive".into()));
        }
        if !self.use_da && !self.use_aa {
            out.push(("use_da", "at least one of use_da and use_aa must be true".into()));
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

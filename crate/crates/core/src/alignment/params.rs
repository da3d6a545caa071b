use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Affine layer `y = x W + b` with `W` stored `in x out` and `b` as `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let bound = gain / (fan_in as f64).sqrt();
        let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound));
        let weight = draw(fan_in, fan_out);
        let bias = draw(1, fan_out);
        Self { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Matrix::zeros(fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Every learnable tensor of the model.
///
/// `visual` is the skeleton projector (one or two layers, ReLU between),
/// `text` the linear text projector shared by label and context embeddings,
/// `metric` the deep metric network over concatenated `(visual, text)`
/// embeddings, and `log_tau` the log temperature when it is learnable.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub visual: Vec<Linear>,
    pub text: Linear,
    pub metric: Vec<Linear>,
    pub log_tau: Option<Matrix>,
}

fn layer_widths(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2).map(|w| (w[0], w[1])).collect()
}

/// `(fan_in, fan_out)` of the visual layers, the text layer and the metric
/// layers.
type Layout = (Vec<(usize, usize)>, (usize, usize), Vec<(usize, usize)>);

impl ModelParams {
    /// Layer shapes implied by `config`, in parameter order.
    fn layout(config: &ModelConfig) -> Layout {
        let h = config.embed_dim;
        let visual_hidden: &[usize] =
            if config.deep_visual { std::slice::from_ref(&config.visual_hidden) } else { &[] };
        (
            layer_widths(config.visual_dim, visual_hidden, h),
            (config.text_dim, h),
            layer_widths(2 * h, &config.metric_hidden, 1),
        )
    }

    /// Uniform `(-g/sqrt(fan_in), g/sqrt(fan_in))` initialisation for weights
    /// and biases, drawn in parameter order from `seed`. `g` is
    /// `projector_init_gain` for the projectors and 1 for the metric network.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (vis, txt, met) = Self::layout(config);
        let visual = vis.iter().map(|&(i, o)| Linear::init(&mut rng, i, o, config.projector_init_gain)).collect();
        let text = Linear::init(&mut rng, txt.0, txt.1, config.projector_init_gain);
        let metric = met.iter().map(|&(i, o)| Linear::init(&mut rng, i, o, 1.0)).collect();
        let log_tau = config.learnable_tau.then(|| Matrix::scalar(config.tau.ln()));
        Self { visual, text, metric, log_tau }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let (vis, txt, met) = Self::layout(config);
        Self {
            visual: vis.iter().map(|&(i, o)| Linear::zeros(i, o)).collect(),
            text: Linear::zeros(txt.0, txt.1),
            metric: met.iter().map(|&(i, o)| Linear::zeros(i, o)).collect(),
            log_tau: config.learnable_tau.then(|| Matrix::scalar(0.0)),
        }
    }

    /// Temperature in effect: `exp(log_tau)` when learnable, else the
    /// configured constant.
    pub fn tau(&self, config: &ModelConfig) -> f64 {
        match &self.log_tau {
            Some(t) => t[(0, 0)].exp(),
            None => config.tau,
        }
    }

    /// Tensors in checkpoint order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.visual.iter().enumerate() {
            out.push((format!("visual.{i}.weight"), &l.weight));
            out.push((format!("visual.{i}.bias"), &l.bias));
        }
        out.push(("text.weight".into(), &self.text.weight));
        out.push(("text.bias".into(), &self.text.bias));
        for (i, l) in self.metric.iter().enumerate() {
            out.push((format!("metric.{i}.weight"), &l.weight));
            out.push((format!("metric.{i}.bias"), &l.bias));
        }
        if let Some(t) = &self.log_tau {
            out.push(("log_tau".into(), t));
        }
        out
    }

    /// Mutable tensors in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in &mut self.visual {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.text.weight);
        out.push(&mut self.text.bias);
        for l in &mut self.metric {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(t) = &mut self.log_tau {
            out.push(t);
        }
        out
    }

    /// Rebuilds parameters for `config` from tensors in checkpoint order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        let mut p = Self::zeros(config);
        let slots = p.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Validation(vec![format!(
                "expected {} parameter tensors, found {}",
                slots.len(),
                tensors.len()
            )]));
        }
        let mut problems = Vec::new();
        for (k, (slot, t)) in slots.into_iter().zip(tensors).enumerate() {
            if slot.shape() != t.shape() {
                problems.push(format!("tensor {k}: expected {:?}, found {:?}", slot.shape(), t.shape()));
            } else {
                *slot = t;
            }
        }
        if problems.is_empty() {
            Ok(p)
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// SHA-256 over every parameter value, in checkpoint order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.named_tensors() {
            h.update(name.as_bytes());
            for x in m.as_slice() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

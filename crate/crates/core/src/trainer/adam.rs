use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::alignment::{ModelConfig, ModelParams, MAX_TAU, MIN_TAU};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Optimizer and loop state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: u64,
    /// First moments, one per parameter tensor in checkpoint order.
    pub m: Vec<Matrix>,
    /// Second moments, same layout as `m`.
    pub v: Vec<Matrix>,
    pub lr: f64,
    pub best_loss: f64,
    pub sampler: SamplerPosition,
}

/// Where the batch sampler is; batch order is a pure function of this.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerPosition {
    pub seed: u64,
    pub epoch: u64,
    pub batch: usize,
}

impl TrainState {
    pub fn new(params: &ModelParams, lr: f64, sampler_seed: u64) -> Self {
        let zeros: Vec<Matrix> =
            params.named_tensors().iter().map(|(_, t)| Matrix::zeros(t.rows(), t.cols())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            lr,
            best_loss: f64::INFINITY,
            sampler: SamplerPosition { seed: sampler_seed, epoch: 0, batch: 0 },
        }
    }
}

/// One bias-corrected Adam update at learning rate `state.lr`.
///
/// All gradients are checked before anything is modified, so a failed step
/// leaves parameters and moments untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut TrainState,
    config: &TrainConfig,
    model: &ModelConfig,
) -> Result<()> {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let grad_tensors = grads.named_tensors();
    if grad_tensors.len() != names.len() || state.m.len() != names.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", names.len(), grad_tensors.len(), state.m.len()),
        ));
    }
    for (name, (p, (_, g))) in names.iter().zip(params.named_tensors().into_iter().map(|(_, p)| p).zip(&grad_tensors)) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape())));
        }
        if let Some(k) = g.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("gradient of {name}"),
                detail: format!("element {k} is {} at step {}", g.as_slice()[k], state.step + 1),
            });
        }
    }

    let clip_scale = match config.grad_clip {
        Some(max_norm) => {
            let norm = grad_tensors
                .iter()
                .flat_map(|(_, g)| g.as_slice())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm { max_norm / norm } else { 1.0 }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let lr = state.lr;
    for (k, theta) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[k].1.as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (i, th) in theta.as_mut_slice().iter_mut().enumerate() {
            let gi = g[i] * clip_scale;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            if config.weight_decay > 0.0 {
                *th -= lr * config.weight_decay * *th;
            }
            *th -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    if model.learnable_tau {
        if let Some(lt) = params.log_tau.as_mut() {
            let x = &mut lt.as_mut_slice()[0];
            *x = x.clamp(MIN_TAU.ln(), MAX_TAU.ln());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::Linear;

    /// A parameter set holding a single scalar in the text bias slot.
    fn scalar_model(theta: f64) -> (ModelParams, ModelConfig) {
        let mc = ModelConfig { visual_dim: 1, text_dim: 1, embed_dim: 1, visual_hidden: 1, metric_hidden: vec![], ..ModelConfig::default() };
        let mut p = ModelParams::zeros(&mc);
        p.text = Linear { weight: Matrix::zeros(1, 1), bias: Matrix::scalar(theta) };
        (p, mc)
    }

    fn grad_of(p: &ModelParams, g: f64) -> ModelParams {
        let mut out = p.clone();
        for t in out.tensors_mut() {
            t.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
        }
        out.text.bias = Matrix::scalar(g);
        out
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, mc) = scalar_model(1.0);
        let cfg = TrainConfig::default();
        let mut s = TrainState::new(&p, 0.1, 0);
        let g = grad_of(&p, 1.0);
        adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap();
        assert!((p.text.bias[(0, 0)] - 0.9).abs() < 1e-7);
    }

    fn slot(p: &ModelParams, name: &str) -> usize {
        p.named_tensors().iter().position(|(n, _)| n == name).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, mc) = scalar_model(0.3);
        let cfg = TrainConfig::default();
        let mut fresh = TrainState::new(&p, 0.1, 0);
        let before = p.clone();
        let g = grad_of(&p, 0.0);
        adam_step(&mut p, &g, &mut fresh, &cfg, &mc).unwrap();
        assert_eq!(p, before);

        let k = slot(&p, "text.bias");
        let mut s = TrainState::new(&p, 0.1, 0);
        let g = grad_of(&p, 1.0);
        adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap();
        let (m1, v1) = (s.m[k][(0, 0)], s.v[k][(0, 0)]);
        let g = grad_of(&p, 0.0);
        adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap();
        assert!((s.m[k][(0, 0)] - 0.9 * m1).abs() < 1e-15);
        assert!((s.v[k][(0, 0)] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut p, mc) = scalar_model(1.0);
        let cfg = TrainConfig::default();
        let mut s = TrainState::new(&p, 0.1, 0);
        for _ in 0..200 {
            let theta = p.text.bias[(0, 0)];
            let g = grad_of(&p, 2.0 * theta);
            adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap();
        }
        assert!(p.text.bias[(0, 0)].abs() < 0.05, "{}", p.text.bias[(0, 0)]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut p, mc) = scalar_model(1.0);
        let before = p.clone();
        let cfg = TrainConfig::default();
        let mut s = TrainState::new(&p, 0.1, 0);
        let g = grad_of(&p, f64::NAN);
        let err = adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap_err();
        assert!(err.to_string().contains("text.bias"), "{err}");
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn learnable_tau_is_clamped() {
        let mc = ModelConfig { learnable_tau: true, ..ModelConfig::toy() };
        let mut p = ModelParams::init(&mc, 0);
        let mut g = ModelParams::zeros(&mc);
        g.log_tau = Some(Matrix::scalar(-1.0));
        let cfg = TrainConfig::default();
        let mut s = TrainState::new(&p, 10.0, 0);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap();
        }
        assert!((p.tau(&mc) - MAX_TAU).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let (mut p, mc) = scalar_model(1.0);
        let cfg = TrainConfig { grad_clip: Some(1e-3), ..Default::default() };
        let mut s = TrainState::new(&p, 0.1, 0);
        let g = grad_of(&p, 50.0);
        adam_step(&mut p, &g, &mut s, &cfg, &mc).unwrap();
        let k = slot(&p, "text.bias");
        assert!((s.m[k][(0, 0)] - 1e-4).abs() < 1e-12);
    }
}

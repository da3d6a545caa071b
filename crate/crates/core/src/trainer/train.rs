use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{adam_step, TrainState};
use super::config::{cosine_lr, TrainConfig};
use crate::alignment::{total_loss, Batch, ModelConfig, ModelParams};
use crate::dataio::{BatchSampler, ClassBank, SeenBank};
use crate::error::{Error, Result};

/// Separates the batch-order stream from the initialisation stream.
const SAMPLER_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// 1-based optimizer step.
    pub step: u64,
    pub epoch: u64,
    /// Learning rate used for this step.
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
    /// SHA-256 over every batch's row indices, in order.
    pub batch_digest: String,
    pub state: TrainState,
}

impl TrainOutcome {
    /// Mean loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.history {
            let e = r.epoch as usize;
            if out.len() <= e {
                out.resize(e + 1, (0.0, 0));
            }
            out[e].0 += r.loss;
            out[e].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    /// `step,lr,loss` rows with round-trippable numbers.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for r in &self.history {
            s.push_str(&format!("{},{:e},{:e}\n", r.step, r.lr, r.loss));
        }
        s
    }
}

pub fn sampler_seed(seed: u64) -> u64 {
    seed ^ SAMPLER_SALT
}

fn check_inputs(config: &TrainConfig, model: &ModelConfig, seen: &SeenBank, classes: &ClassBank) -> Result<()> {
    let mut problems: Vec<String> = Vec::new();
    // zero epochs is allowed here and yields the initialisation
    problems.extend(
        config.violations().into_iter().filter(|(f, _)| *f != "epochs").map(|(f, m)| format!("train.{f}: {m}")),
    );
    problems.extend(model.violations().into_iter().map(|(f, m)| format!("model.{f}: {m}")));
    if seen.visual_dim() != model.visual_dim {
        problems.push(format!(
            "model.visual_dim: features have {} columns, config says {}",
            seen.visual_dim(),
            model.visual_dim
        ));
    }
    if classes.text_dim() != model.text_dim {
        problems.push(format!(
            "model.text_dim: embeddings have {} columns, config says {}",
            classes.text_dim(),
            model.text_dim
        ));
    }
    if seen.is_empty() {
        problems.push("training bank is empty".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

/// Trains from a fresh initialisation.
pub fn train(config: &TrainConfig, model: &ModelConfig, seen: &SeenBank, classes: &ClassBank) -> Result<TrainOutcome> {
    train_with(config, model, seen, classes, |_, _| Ok(()))
}

/// [`train`], calling `on_checkpoint(epoch, params)` after every
/// `checkpoint_interval` completed epochs.
pub fn train_with(
    config: &TrainConfig,
    model: &ModelConfig,
    seen: &SeenBank,
    classes: &ClassBank,
    mut on_checkpoint: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    check_inputs(config, model, seen, classes)?;
    let mut params = ModelParams::init(model, config.seed);
    let sampler = BatchSampler::new(seen.len(), config.batch_size, sampler_seed(config.seed));
    let total = (config.epochs * sampler.batches_per_epoch()) as u64;
    let mut state = TrainState::new(&params, config.learning_rate, sampler_seed(config.seed));
    let mut history = Vec::with_capacity(total as usize);
    let mut digest = Sha256::new();

    for epoch in 0..config.epochs {
        let batches = sampler.epoch_batches(epoch as u64);
        for (b, rows) in batches.iter().enumerate() {
            for r in rows {
                digest.update((*r as u64).to_le_bytes());
            }
            let (visual, labels) = seen.rows(rows);
            let batch = Batch { visual, labels };
            let lr = cosine_lr(config.learning_rate, state.step, total);
            let (loss, cache) = total_loss(model, &params, &batch, classes).map_err(|e| match e {
                Error::NonFinite { name, detail } => Error::NonFinite {
                    name,
                    detail: format!("{detail} at step {} (epoch {epoch}, batch {b})", state.step + 1),
                },
                other => other,
            })?;
            let grads = cache.gradients();
            state.lr = lr;
            adam_step(&mut params, &grads, &mut state, config, model)?;
            state.best_loss = state.best_loss.min(loss);
            state.sampler.epoch = epoch as u64;
            state.sampler.batch = b + 1;
            history.push(LossRecord { step: state.step, epoch: epoch as u64, lr, loss });
        }
        if log::log_enabled!(log::Level::Debug) {
            let n = batches.len().max(1);
            let mean = history[history.len() - batches.len()..].iter().map(|r| r.loss).sum::<f64>() / n as f64;
            log::debug!("epoch {} mean loss {mean:.6}", epoch + 1);
        }
        if config.checkpoint_interval > 0 && (epoch + 1) % config.checkpoint_interval == 0 {
            on_checkpoint(epoch + 1, &params)?;
        }
    }

    let batch_digest = digest.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(TrainOutcome { params, history, batch_digest, state })
}

//! Finite-difference verification of the training gradients.
//!
//! Analytic gradients come from the taped forward pass. Numeric ones are
//! central differences of the independent loop-based loss evaluated in
//! double-double arithmetic, so entries down to the exclusion floor are
//! resolved well beyond the tolerance. Elements whose `+/-step` probe
//! crosses a ReLU, leaky ReLU or LeakySigmoid switch are not differentiable
//! there and are counted separately instead of compared.

use std::fmt;

use qd::Quad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::reference::{reference_gradient, reference_loss, Real};
use crate::alignment::{total_loss, total_loss_with_fault, Batch, ModelConfig, ModelParams};
use crate::dataio::ClassBank;
use crate::error::{Error, Result};
use crate::numkernel::tape::GradFault;
use crate::numkernel::Matrix;

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Elements with `|analytic| + |numeric|` below this are skipped.
pub const GRADCHECK_FLOOR: f64 = 1e-8;
pub const GRADCHECK_BATCH: usize = 4;
/// Largest tolerated gap between the taped and reference loss values.
pub const FORWARD_TOLERANCE: f64 = 1e-10;

const SEEN_CLASSES: u32 = 3;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub compared: usize,
    pub below_floor: usize,
    pub at_kink: usize,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub loss: f64,
    /// `|taped loss - reference loss|`.
    pub forward_gap: f64,
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.forward_gap < FORWARD_TOLERANCE && self.rows.iter().all(GradcheckRow::passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    /// Names of parameter tensors over tolerance.
    pub fn failing(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}  loss {:.9e}  forward gap {:.3e}", self.seed, self.loss, self.forward_gap)?;
        writeln!(f, "{:<18} {:>12} {:>9} {:>7} {:>6}  status", "parameter", "max rel err", "compared", "floor", "kink")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>12.3e} {:>9} {:>7} {:>6}  {}",
                r.name,
                r.max_rel_err,
                r.compared,
                r.below_floor,
                r.at_kink,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Random problem for `seed`: parameters, a class bank with three seen and
/// two unseen classes, and a batch of four samples with a repeated label.
pub fn gradcheck_problem(config: &ModelConfig, seed: u64) -> Result<(ModelParams, ClassBank, Batch)> {
    if config.embed_dim > 16 {
        return Err(Error::InvalidArgument(format!(
            "gradient checks need toy dimensions (embed_dim <= 16, got {})",
            config.embed_dim
        )));
    }
    config.validate()?;
    let params = ModelParams::init(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let n = SEEN_CLASSES as usize + 2;
    let label_emb = draw(n, config.text_dim);
    let context_emb = draw(n, config.text_dim);
    let visual = draw(GRADCHECK_BATCH, config.visual_dim);
    let ids: Vec<u32> = (0..n as u32).collect();
    let classes = ClassBank::new(
        ids.clone(),
        ids.iter().map(|i| format!("class_{i}")).collect(),
        label_emb,
        context_emb,
        ids[..SEEN_CLASSES as usize].to_vec(),
        ids[SEEN_CLASSES as usize..].to_vec(),
    )?;
    let mut labels: Vec<u32> = (0..GRADCHECK_BATCH).map(|_| rng.random_range(0..SEEN_CLASSES)).collect();
    labels[GRADCHECK_BATCH - 1] = labels[0];
    Ok((params, classes, Batch { visual, labels }))
}

pub fn gradcheck(config: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    run(config, seed, None)
}

/// [`gradcheck`] with a deliberately broken backward rule, as a negative
/// control.
#[doc(hidden)]
pub fn gradcheck_with_fault(fault: GradFault, config: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    run(config, seed, Some(fault))
}

fn run(config: &ModelConfig, seed: u64, fault: Option<GradFault>) -> Result<GradcheckReport> {
    let (params, classes, batch) = gradcheck_problem(config, seed)?;
    let (loss, cache) = match fault {
        Some(f) => total_loss_with_fault(f, config, &params, &batch, &classes)?,
        None => total_loss(config, &params, &batch, &classes)?,
    };
    let analytic = cache.gradients();
    let seen = classes.seen_set();
    let reference = reference_loss::<Quad>(config, &params, None, &batch.visual, &batch.labels, &seen)?;
    let forward_gap = (loss - reference.loss.to_f64()).abs();

    let mut rows = Vec::new();
    for (t, (name, g)) in analytic.named_tensors().into_iter().enumerate() {
        let numeric = reference_gradient(config, &params, &batch.visual, &batch.labels, &seen, t, GRADCHECK_STEP)?;
        let mut row = GradcheckRow { name, max_rel_err: 0.0, compared: 0, below_floor: 0, at_kink: 0 };
        for (&a, n) in g.as_slice().iter().zip(numeric) {
            let Some(n) = n else {
                row.at_kink += 1;
                continue;
            };
            if a.abs() + n.abs() < GRADCHECK_FLOOR {
                row.below_floor += 1;
                continue;
            }
            row.compared += 1;
            row.max_rel_err = row.max_rel_err.max((a - n).abs() / a.abs().max(n.abs()));
        }
        rows.push(row);
    }
    Ok(GradcheckReport { seed, loss, forward_gap, rows })
}

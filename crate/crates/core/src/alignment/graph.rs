//! The differentiable training forward pass.
//!
//! For a batch of `B` seen-class samples the graph computes
//!
//! - `v_e = F_v(norm(v))` and, for each sample's own class,
//!   `t_e = F_t(norm(t))`, `t_cont_e = F_t(norm(t_cont))`;
//! - `t_aug`, the visual-query attention mix of `t_e` and `t_cont_e`;
//! - the `B x B` cosine branch `p1` and metric branch `p2`, softmaxed over
//!   rows with temperature `tau` in both directions;
//! - their combination `p` and the summed two-direction KL loss.
//!
//! The metric network's first layer is split into a visual and a text block
//! so that the `B^2` concatenated pairs never need to be materialised: the
//! pre-activation of pair `(i, j)` is `v_e_i W_v + t_aug_j W_t + b`.

use super::config::{ModelConfig, ScoreFn, METRIC_LEAK};
use super::ops::{class_rows, targets_for};
use super::params::{Linear, ModelParams};
use crate::dataio::{ClassBank, ClassId};
use crate::error::{Error, Result};
use crate::numkernel::kernels::l2_normalize_rows;
use crate::numkernel::tape::GradFault;
use crate::numkernel::{Grads, Matrix, Tape, Var};

/// A mini-batch of raw visual features and their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub visual: Matrix,
    pub labels: Vec<ClassId>,
}

struct LinearVars {
    weight: Var,
    bias: Var,
}

struct ParamVars {
    visual: Vec<LinearVars>,
    text: LinearVars,
    metric: Vec<LinearVars>,
    log_tau: Option<Var>,
}

impl ParamVars {
    fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let mut bind_layer = |l: &Linear| LinearVars {
            weight: tape.leaf(l.weight.clone()),
            bias: tape.leaf(l.bias.clone()),
        };
        let visual = params.visual.iter().map(&mut bind_layer).collect();
        let text = bind_layer(&params.text);
        let metric = params.metric.iter().map(&mut bind_layer).collect();
        let log_tau = params.log_tau.as_ref().map(|t| tape.leaf(t.clone()));
        Self { visual, text, metric, log_tau }
    }

    fn gradients(&self, grads: &Grads) -> ModelParams {
        let layer = |l: &LinearVars| Linear { weight: grads.wrt(l.weight), bias: grads.wrt(l.bias) };
        ModelParams {
            visual: self.visual.iter().map(layer).collect(),
            text: layer(&self.text),
            metric: self.metric.iter().map(layer).collect(),
            log_tau: self.log_tau.map(|v| grads.wrt(v)),
        }
    }
}

/// Everything recorded by one forward pass, kept for the backward sweep and
/// for inspection.
pub struct ForwardCache {
    tape: Tape,
    vars: ParamVars,
    loss: Var,
    v_e: Var,
    t_e: Var,
    t_cont_e: Var,
    t_aug: Var,
    p1: Option<(Var, Var)>,
    p2: Option<(Var, Var)>,
    p: (Var, Var),
    targets: (Matrix, Option<Matrix>),
}

impl ForwardCache {
    pub fn loss(&self) -> f64 {
        self.tape.scalar(self.loss)
    }

    pub fn v_e(&self) -> &Matrix {
        self.tape.value(self.v_e)
    }

    /// Projected label embedding of each sample's class, `B x h`.
    pub fn t_e(&self) -> &Matrix {
        self.tape.value(self.t_e)
    }

    pub fn t_cont_e(&self) -> &Matrix {
        self.tape.value(self.t_cont_e)
    }

    pub fn t_aug(&self) -> &Matrix {
        self.tape.value(self.t_aug)
    }

    /// Cosine-branch `(v2t, t2v)` matrices, when that branch is enabled.
    pub fn p1(&self) -> Option<(&Matrix, &Matrix)> {
        self.p1.map(|(a, b)| (self.tape.value(a), self.tape.value(b)))
    }

    /// Metric-branch `(v2t, t2v)` matrices, when that branch is enabled.
    pub fn p2(&self) -> Option<(&Matrix, &Matrix)> {
        self.p2.map(|(a, b)| (self.tape.value(a), self.tape.value(b)))
    }

    /// The matrices the loss is computed on.
    pub fn p(&self) -> (&Matrix, &Matrix) {
        (self.tape.value(self.p.0), self.tape.value(self.p.1))
    }

    pub fn targets(&self) -> (&Matrix, Option<&Matrix>) {
        (&self.targets.0, self.targets.1.as_ref())
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    /// Gradient of the loss with respect to every parameter tensor, laid out
    /// like [`ModelParams`].
    pub fn gradients(&self) -> ModelParams {
        self.vars.gradients(&self.tape.backward(self.loss))
    }
}

fn affine(tape: &mut Tape, l: &LinearVars, x: Var) -> Result<Var> {
    let y = tape.matmul(x, l.weight)?;
    tape.add_bias(y, l.bias)
}

/// `(v2t, t2v)` temperature softmaxes of a `B x B` logit matrix.
fn both_directions(tape: &mut Tape, logits: Var, tau: &Tau) -> Result<(Var, Var)> {
    let scaled = tau.apply(tape, logits)?;
    let v2t = tape.softmax_rows(scaled);
    let tr = tape.transpose(scaled);
    let t2v = tape.softmax_rows(tr);
    Ok((v2t, t2v))
}

enum Tau {
    Fixed(f64),
    Learned(Var),
}

impl Tau {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Tau::Fixed(t) => Ok(tape.scale(x, 1.0 / t)),
            Tau::Learned(t) => tape.div_scalar(x, *t),
        }
    }
}

/// Joint loss for a batch of seen-class samples.
///
/// Fails with a contract error if any label is not in the seen split.
pub fn total_loss(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &Batch,
    classes: &ClassBank,
) -> Result<(f64, ForwardCache)> {
    forward_on(Tape::new(), config, params, batch, classes)
}

/// [`total_loss`] on a tape with a deliberately broken backward rule.
#[doc(hidden)]
pub fn total_loss_with_fault(
    fault: GradFault,
    config: &ModelConfig,
    params: &ModelParams,
    batch: &Batch,
    classes: &ClassBank,
) -> Result<(f64, ForwardCache)> {
    forward_on(Tape::with_fault(fault), config, params, batch, classes)
}

fn forward_on(
    mut tape: Tape,
    config: &ModelConfig,
    params: &ModelParams,
    batch: &Batch,
    classes: &ClassBank,
) -> Result<(f64, ForwardCache)> {
    if let Some(bad) = batch.labels.iter().find(|&&l| !classes.is_seen(l)) {
        return Err(Error::Contract(format!(
            "batch contains class {bad}, which is not in the seen split"
        )));
    }
    if batch.labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.visual.rows() != batch.labels.len() {
        return Err(Error::shape(
            "total_loss",
            format!("{} visual rows for {} labels", batch.visual.rows(), batch.labels.len()),
        ));
    }
    let seen = classes.seen_set();
    let rows = class_rows(&batch.labels, &seen)?;
    let h = config.embed_dim;
    let b = batch.labels.len();

    let vars = ParamVars::bind(&mut tape, params);

    // projections
    let v_in = tape.leaf(l2_normalize_rows(&batch.visual));
    let mut v_e = v_in;
    for (i, layer) in vars.visual.iter().enumerate() {
        v_e = affine(&mut tape, layer, v_e)?;
        if i + 1 < vars.visual.len() {
            v_e = tape.relu(v_e);
        }
    }
    let t_in = tape.leaf(l2_normalize_rows(&seen.labels));
    let c_in = tape.leaf(l2_normalize_rows(&seen.contexts));
    let t_cls = affine(&mut tape, &vars.text, t_in)?;
    let c_cls = affine(&mut tape, &vars.text, c_in)?;
    let t_e = tape.gather_rows(t_cls, &rows)?;
    let t_cont_e = tape.gather_rows(c_cls, &rows)?;

    // semantic description enhancement
    let t_aug = if config.use_sde {
        let d_label = tape.row_dot(v_e, t_e)?;
        let d_ctx = tape.row_dot(v_e, t_cont_e)?;
        let logits = tape.concat_cols(d_label, d_ctx)?;
        let logits = tape.scale(logits, 1.0 / (h as f64).sqrt());
        let w = tape.softmax_rows(logits);
        tape.mix_pair(w, t_e, t_cont_e)?
    } else {
        t_e
    };

    let tau = match vars.log_tau {
        Some(lt) => Tau::Learned(tape.exp(lt)),
        None => Tau::Fixed(config.tau),
    };

    let p1 = if config.use_da {
        let vn = tape.normalize_rows(v_e);
        let tn = tape.normalize_rows(t_aug);
        let sim = tape.matmul_nt(vn, tn)?;
        Some(both_directions(&mut tape, sim, &tau)?)
    } else {
        None
    };

    let p2 = if config.use_aa {
        let first = &vars.metric[0];
        let w_vis = tape.row_block(first.weight, 0, h)?;
        let w_txt = tape.row_block(first.weight, h, h)?;
        let a = tape.matmul(v_e, w_vis)?;
        let t = tape.matmul(t_aug, w_txt)?;
        let t = tape.add_bias(t, first.bias)?;
        let mut x = tape.pair_sum(a, t)?;
        for layer in &vars.metric[1..] {
            x = tape.leaky_relu(x, METRIC_LEAK);
            x = affine(&mut tape, layer, x)?;
        }
        let g = match config.score_fn {
            ScoreFn::LeakySigmoid => tape.leaky_sigmoid(x, config.gamma),
            ScoreFn::Sigmoid => tape.sigmoid(x),
            ScoreFn::None => x,
        };
        let g = tape.reshape(g, b, b)?;
        Some(both_directions(&mut tape, g, &tau)?)
    } else {
        None
    };

    let p = match (p1, p2) {
        (Some((a1, b1)), Some((a2, b2))) => {
            let s1 = tape.add(a1, a2)?;
            let s2 = tape.add(b1, b2)?;
            (tape.scale(s1, 0.5), tape.scale(s2, 0.5))
        }
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => {
            return Err(Error::InvalidArgument("no alignment branch enabled".into()));
        }
    };

    let targets = targets_for(config.loss, &batch.labels);
    let mut loss = tape.kl_rows(&targets.0, p.0)?;
    if let Some(y_t2v) = &targets.1 {
        let l2 = tape.kl_rows(y_t2v, p.1)?;
        loss = tape.add(loss, l2)?;
    }
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite { name: "loss".into(), detail: format!("{}", tape.scalar(loss)) });
    }

    let value = tape.scalar(loss);
    Ok((
        value,
        ForwardCache { tape, vars, loss, v_e, t_e, t_cont_e, t_aug, p1, p2, p, targets },
    ))
}

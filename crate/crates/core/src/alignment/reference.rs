//! Scalar-generic re-derivation of the training loss.
//!
//! This is a second, deliberately naive implementation of the batch loss:
//! plain loops, explicit `(visual, text)` concatenation for every metric
//! pair, no tape. It runs over any [`Real`], which lets the gradient check
//! evaluate finite differences in double-double arithmetic where f64
//! cancellation would otherwise swamp small gradient entries.
//!
//! Alongside the loss it records the branch taken at every non-smooth point
//! (ReLU, leaky ReLU, the leaky sigmoid split and the probability floor), so
//! a caller can tell whether a perturbation crossed a kink.

use std::ops::{Add, Div, Mul, Neg, Sub};

use qd::Quad;

use super::config::{ModelConfig, ScoreFn, METRIC_LEAK};
use super::ops::{class_rows, targets_for};
use super::params::ModelParams;
use crate::dataio::{ClassId, ClassSet};
use crate::error::Result;
use crate::numkernel::kernels::{NORM_EPS, PRED_FLOOR};
use crate::numkernel::Matrix;

pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

impl Real for Quad {
    fn of(x: f64) -> Self {
        Quad::from_f64(x)
    }
    fn to_f64(self) -> f64 {
        self.0 + self.1
    }
    fn exp(self) -> Self {
        Quad::exp(self)
    }
    fn ln(self) -> Self {
        Quad::ln(self)
    }
    fn sqrt(self) -> Self {
        Quad::sqrt(self)
    }
}

/// Dense row-major matrix of `R`.
#[derive(Clone)]
struct Mat<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Mat<R> {
    fn of(m: &Matrix) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: m.as_slice().iter().map(|&x| R::of(x)).collect() }
    }

    fn at(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols + j]
    }

    fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Perturbation of one parameter element, applied in `R` so that `x + d` is
/// not rounded back to f64.
#[derive(Clone, Copy)]
pub struct Nudge<R> {
    pub tensor: usize,
    pub element: usize,
    pub delta: R,
}

pub struct ReferenceOutput<R> {
    pub loss: R,
    /// Branch taken at every non-smooth point, in evaluation order.
    pub pattern: Vec<bool>,
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::of(0.0), |s, (&x, &y)| s + x * y)
}

fn normalized<R: Real>(row: &[R]) -> Vec<R> {
    let n = dot(row, row).sqrt();
    if n > R::of(NORM_EPS) {
        row.iter().map(|&x| x / n).collect()
    } else {
        row.to_vec()
    }
}

fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let mut m = logits[0];
    for &x in logits {
        if x > m {
            m = x;
        }
    }
    let e: Vec<R> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z = e.iter().fold(R::of(0.0), |s, &x| s + x);
    e.into_iter().map(|x| x / z).collect()
}

/// `x W + b` for a single row.
fn affine<R: Real>(x: &[R], w: &Mat<R>, b: &Mat<R>) -> Vec<R> {
    (0..w.cols)
        .map(|j| (0..w.rows).fold(b.data[j], |s, i| s + x[i] * w.at(i, j)))
        .collect()
}

struct Tensors<R> {
    visual: Vec<(Mat<R>, Mat<R>)>,
    text: (Mat<R>, Mat<R>),
    metric: Vec<(Mat<R>, Mat<R>)>,
    log_tau: Option<R>,
}

fn unpack<R: Real>(params: &ModelParams, nudge: Option<Nudge<R>>) -> Tensors<R> {
    let mut flat: Vec<Mat<R>> = params.named_tensors().iter().map(|(_, m)| Mat::of(m)).collect();
    if let Some(n) = nudge {
        let slot = &mut flat[n.tensor].data[n.element];
        *slot = *slot + n.delta;
    }
    let mut it = flat.into_iter();
    let mut pair = || (it.next().unwrap(), it.next().unwrap());
    let visual = params.visual.iter().map(|_| pair()).collect();
    let text = pair();
    let metric = params.metric.iter().map(|_| pair()).collect();
    let log_tau = params.log_tau.as_ref().map(|_| it.next().unwrap().data[0]);
    Tensors { visual, text, metric, log_tau }
}

fn kl<R: Real>(target: &Matrix, pred: &[Vec<R>], pattern: &mut Vec<bool>) -> R {
    let floor = R::of(PRED_FLOOR);
    let mut total = R::of(0.0);
    for (i, row) in pred.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            let t = target[(i, j)];
            if t > 0.0 {
                pattern.push(p > floor);
                let p = if p > floor { p } else { floor };
                let t = R::of(t);
                total = total + t * (t.ln() - p.ln());
            }
        }
    }
    total / R::of(pred.len() as f64)
}

/// `(v2t, t2v)` row softmaxes of `logits / tau`.
fn both_directions<R: Real>(logits: &[Vec<R>], tau: R) -> (Vec<Vec<R>>, Vec<Vec<R>>) {
    let b = logits.len();
    let v2t = logits.iter().map(|r| softmax(&r.iter().map(|&x| x / tau).collect::<Vec<_>>())).collect();
    let t2v = (0..b)
        .map(|j| softmax(&(0..b).map(|i| logits[i][j] / tau).collect::<Vec<_>>()))
        .collect();
    (v2t, t2v)
}

/// Batch loss with one parameter element optionally nudged.
pub fn reference_loss<R: Real>(
    config: &ModelConfig,
    params: &ModelParams,
    nudge: Option<Nudge<R>>,
    visual: &Matrix,
    labels: &[ClassId],
    seen: &ClassSet,
) -> Result<ReferenceOutput<R>> {
    let rows = class_rows(labels, seen)?;
    let p = unpack(params, nudge);
    let b = labels.len();
    let h = config.embed_dim;
    let mut pattern = Vec::new();

    let visual = Mat::<R>::of(visual);
    let v_e: Vec<Vec<R>> = (0..b)
        .map(|i| {
            let mut x = normalized(visual.row(i));
            for (k, (w, bias)) in p.visual.iter().enumerate() {
                x = affine(&x, w, bias);
                if k + 1 < p.visual.len() {
                    for v in &mut x {
                        pattern.push(*v > R::of(0.0));
                        if !(*v > R::of(0.0)) {
                            *v = R::of(0.0);
                        }
                    }
                }
            }
            x
        })
        .collect();

    let labels_r = Mat::<R>::of(&seen.labels);
    let contexts_r = Mat::<R>::of(&seen.contexts);
    let project = |m: &Mat<R>, r: usize| affine(&normalized(m.row(r)), &p.text.0, &p.text.1);
    let t_e: Vec<Vec<R>> = rows.iter().map(|&r| project(&labels_r, r)).collect();
    let c_e: Vec<Vec<R>> = rows.iter().map(|&r| project(&contexts_r, r)).collect();

    let t_aug: Vec<Vec<R>> = if config.use_sde {
        let scale = R::of(h as f64).sqrt();
        (0..b)
            .map(|i| {
                let w = softmax(&[dot(&v_e[i], &t_e[i]) / scale, dot(&v_e[i], &c_e[i]) / scale]);
                t_e[i].iter().zip(&c_e[i]).map(|(&t, &c)| w[0] * t + w[1] * c).collect()
            })
            .collect()
    } else {
        t_e
    };

    let tau = match p.log_tau {
        Some(lt) => lt.exp(),
        None => R::of(config.tau),
    };

    let p1 = config.use_da.then(|| {
        let vn: Vec<Vec<R>> = v_e.iter().map(|r| normalized(r)).collect();
        let tn: Vec<Vec<R>> = t_aug.iter().map(|r| normalized(r)).collect();
        let sim: Vec<Vec<R>> = vn.iter().map(|v| tn.iter().map(|t| dot(v, t)).collect()).collect();
        both_directions(&sim, tau)
    });

    let p2 = if config.use_aa {
        let mut g = vec![vec![R::of(0.0); b]; b];
        for (i, gi) in g.iter_mut().enumerate() {
            for (j, gij) in gi.iter_mut().enumerate() {
                let mut x: Vec<R> = v_e[i].iter().chain(&t_aug[j]).copied().collect();
                for (k, (w, bias)) in p.metric.iter().enumerate() {
                    if k > 0 {
                        for v in &mut x {
                            let pos = *v > R::of(0.0);
                            pattern.push(pos);
                            if !pos {
                                *v = *v * R::of(METRIC_LEAK);
                            }
                        }
                    }
                    x = affine(&x, w, bias);
                }
                let s = x[0];
                let one = R::of(1.0);
                *gij = match config.score_fn {
                    ScoreFn::LeakySigmoid => {
                        let pos = s > R::of(0.0);
                        pattern.push(pos);
                        if pos {
                            one / (one + (-s).exp())
                        } else {
                            let gamma = R::of(config.gamma);
                            gamma * (gamma * s).exp()
                        }
                    }
                    ScoreFn::Sigmoid => one / (one + (-s).exp()),
                    ScoreFn::None => s,
                };
            }
        }
        Some(both_directions(&g, tau))
    } else {
        None
    };

    let half = R::of(0.5);
    let mix = |a: &[Vec<R>], c: &[Vec<R>]| -> Vec<Vec<R>> {
        a.iter().zip(c).map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| (u + v) * half).collect()).collect()
    };
    let (pv2t, pt2v) = match (p1, p2) {
        (Some(a), Some(c)) => (mix(&a.0, &c.0), mix(&a.1, &c.1)),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => {
            return Err(crate::Error::InvalidArgument("no alignment branch enabled".into()));
        }
    };

    let (y_v2t, y_t2v) = targets_for(config.loss, labels);
    let mut loss = kl(&y_v2t, &pv2t, &mut pattern);
    if let Some(y) = y_t2v {
        loss = loss + kl(&y, &pt2v, &mut pattern);
    }
    Ok(ReferenceOutput { loss, pattern })
}

/// Central differences of the double-double loss for every element of
/// parameter tensor `tensor`. Entries whose `+step` or `-step` evaluation
/// takes a different branch at some non-smooth point than the unperturbed
/// one are `None`.
pub fn reference_gradient(
    config: &ModelConfig,
    params: &ModelParams,
    visual: &Matrix,
    labels: &[ClassId],
    seen: &ClassSet,
    tensor: usize,
    step: f64,
) -> Result<Vec<Option<f64>>> {
    let base = reference_loss::<Quad>(config, params, None, visual, labels, seen)?.pattern;
    let len = params.named_tensors()[tensor].1.len();
    let eval = |element: usize, delta: f64| {
        reference_loss(config, params, Some(Nudge { tensor, element, delta: Quad::from_f64(delta) }), visual, labels, seen)
    };
    (0..len)
        .map(|element| {
            let up = eval(element, step)?;
            let down = eval(element, -step)?;
            if up.pattern != base || down.pattern != base {
                return Ok(None);
            }
            Ok(Some(((up.loss - down.loss) / Quad::from_f64(2.0 * step)).to_f64()))
        })
        .collect()
}

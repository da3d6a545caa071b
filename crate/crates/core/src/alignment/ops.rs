//! Forward computations without a tape. Used for inference, exports and as
//! the second route that the taped training graph is checked against.

use rayon::prelude::*;

use super::config::{LossKind, ModelConfig, ScoreFn, METRIC_LEAK};
use super::params::{Linear, ModelParams};
use crate::dataio::{ClassId, ClassSet};
use crate::error::{Error, Result};
use crate::numkernel::kernels::{self, softmax_in_place};
use crate::numkernel::{add_bias, concat_cols, l2_normalize_rows, leaky_relu, matmul, relu, Matrix};

fn affine(layer: &Linear, x: &Matrix) -> Result<Matrix> {
    add_bias(&matmul(x, &layer.weight)?, &layer.bias)
}

/// Visual projector on rows that are already L2-normalised.
pub fn project_visual(params: &ModelParams, v: &Matrix) -> Result<Matrix> {
    let mut x = v.clone();
    let last = params.visual.len() - 1;
    for (i, layer) in params.visual.iter().enumerate() {
        x = affine(layer, &x)?;
        if i < last {
            x = relu(&x);
        }
    }
    Ok(x)
}

/// Linear text projector on rows that are already L2-normalised.
pub fn project_text(params: &ModelParams, t: &Matrix) -> Result<Matrix> {
    affine(&params.text, t)
}

/// Normalises raw visual features and projects them.
pub fn embed_visual(params: &ModelParams, v: &Matrix) -> Result<Matrix> {
    project_visual(params, &l2_normalize_rows(v))
}

pub fn embed_text(params: &ModelParams, t: &Matrix) -> Result<Matrix> {
    project_text(params, &l2_normalize_rows(t))
}

/// Attention weights of the visual query over `(label, context)`.
pub fn sde_weights(query: &[f64], label: &[f64], context: &[f64]) -> [f64; 2] {
    let scale = (query.len() as f64).sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut w = [dot(query, label) / scale, dot(query, context) / scale];
    softmax_in_place(&mut w, 1.0);
    w
}

/// Cross-attention with the visual embedding as query and the stacked label
/// and context embeddings as keys and values: a convex combination of the
/// two text embeddings.
pub fn sde_augment(query: &[f64], label: &[f64], context: &[f64]) -> Vec<f64> {
    let [a, b] = sde_weights(query, label, context);
    label.iter().zip(context).map(|(l, c)| a * l + b * c).collect()
}

/// `(v2t, t2v)` temperature softmaxes of the cosine similarity matrix.
pub fn direct_similarity(v_e: &Matrix, t_aug: &Matrix, tau: f64) -> Result<(Matrix, Matrix)> {
    let sim = kernels::cosine_similarity_matrix(v_e, t_aug)?;
    Ok((kernels::row_softmax(&sim, tau)?, kernels::row_softmax(&sim.transpose(), tau)?))
}

pub fn apply_score_fn(config: &ModelConfig, x: f64) -> f64 {
    match config.score_fn {
        ScoreFn::LeakySigmoid => kernels::leaky_sigmoid(x, config.gamma),
        ScoreFn::Sigmoid => kernels::sigmoid(x),
        ScoreFn::None => x,
    }
}

/// Raw metric-network outputs for each row of `pairs` (`n x 2h`).
pub fn metric_logits(params: &ModelParams, pairs: &Matrix) -> Result<Vec<f64>> {
    let mut x = pairs.clone();
    let last = params.metric.len() - 1;
    for (i, layer) in params.metric.iter().enumerate() {
        x = affine(layer, &x)?;
        if i < last {
            x = leaky_relu(&x, METRIC_LEAK);
        }
    }
    Ok(x.into_vec())
}

/// Metric score `G` for one `(visual, text)` embedding pair.
pub fn dmn_score(params: &ModelParams, config: &ModelConfig, v_e: &[f64], t: &[f64]) -> Result<f64> {
    let a = Matrix::from_vec(1, v_e.len(), v_e.to_vec())?;
    let b = Matrix::from_vec(1, t.len(), t.to_vec())?;
    let out = metric_logits(params, &concat_cols(&a, &b)?)?;
    Ok(apply_score_fn(config, out[0]))
}

/// `G(v_i, t_j)` for every row pair, `B x C`.
pub fn metric_score_matrix(
    params: &ModelParams,
    config: &ModelConfig,
    v_e: &Matrix,
    t: &Matrix,
) -> Result<Matrix> {
    if v_e.cols() != t.cols() {
        return Err(Error::shape("metric_score_matrix", format!("{:?} vs {:?}", v_e.shape(), t.shape())));
    }
    let h = v_e.cols();
    let mut pairs = Matrix::zeros(v_e.rows() * t.rows(), 2 * h);
    for i in 0..v_e.rows() {
        for j in 0..t.rows() {
            let row = pairs.row_mut(i * t.rows() + j);
            row[..h].copy_from_slice(v_e.row(i));
            row[h..].copy_from_slice(t.row(j));
        }
    }
    let logits = metric_logits(params, &pairs)?;
    Ok(Matrix::from_raw(v_e.rows(), t.rows(), logits).map(|x| apply_score_fn(config, x)))
}

/// `(v2t, t2v)` temperature softmaxes of the metric scores.
pub fn augmented_similarity(
    params: &ModelParams,
    config: &ModelConfig,
    v_e: &Matrix,
    t_aug: &Matrix,
    tau: f64,
) -> Result<(Matrix, Matrix)> {
    let g = metric_score_matrix(params, config, v_e, t_aug)?;
    Ok((kernels::row_softmax(&g, tau)?, kernels::row_softmax(&g.transpose(), tau)?))
}

/// Elementwise mean of two similarity matrices.
pub fn fuse(p1: &Matrix, p2: &Matrix) -> Result<Matrix> {
    p1.check_same_shape(p2, "fuse")?;
    let mut p = p1.clone();
    p.axpy(1.0, p2);
    Ok(p.map(|x| 0.5 * x))
}

/// Multi-positive targets: row `i` is uniform over every `j` sharing
/// sample `i`'s label. Returns `(v2t, t2v)`.
pub fn build_targets(labels: &[ClassId]) -> (Matrix, Matrix) {
    let b = labels.len();
    let raw = Matrix::from_fn(b, b, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 });
    let normalize = |m: Matrix| {
        let sums = m.row_sums();
        Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] / sums[i])
    };
    let v2t = normalize(raw);
    let t2v = normalize(v2t.transpose());
    (v2t, t2v)
}

/// Targets for `loss`; `None` for a direction the loss does not use.
pub fn targets_for(loss: LossKind, labels: &[ClassId]) -> (Matrix, Option<Matrix>) {
    match loss {
        LossKind::Kld => {
            let (a, b) = build_targets(labels);
            (a, Some(b))
        }
        LossKind::InfoNce => {
            let eye = Matrix::identity(labels.len());
            (eye.clone(), Some(eye))
        }
        LossKind::SoftmaxCe => (Matrix::identity(labels.len()), None),
    }
}

/// Picks the fused, cosine-only or metric-only score per the branch flags.
pub fn combine(config: &ModelConfig, p1: &Matrix, p2: &Matrix) -> Result<Matrix> {
    match (config.use_da, config.use_aa) {
        (true, true) => fuse(p1, p2),
        (true, false) => Ok(p1.clone()),
        (false, true) => Ok(p2.clone()),
        (false, false) => Err(Error::InvalidArgument("no alignment branch enabled".into())),
    }
}

/// Every intermediate of a batch forward pass, with both branches computed
/// regardless of the configuration.
#[derive(Clone, Debug)]
pub struct BatchScores {
    pub v_e: Matrix,
    pub t_e: Matrix,
    pub t_cont_e: Matrix,
    pub t_aug: Matrix,
    pub p1: (Matrix, Matrix),
    pub p2: (Matrix, Matrix),
    pub fused: (Matrix, Matrix),
    pub targets: (Matrix, Matrix),
}

/// Batch forward over `B` samples whose text side is each sample's own class.
pub fn batch_scores(
    params: &ModelParams,
    config: &ModelConfig,
    visual: &Matrix,
    labels: &[ClassId],
    classes: &ClassSet,
) -> Result<BatchScores> {
    let rows = class_rows(labels, classes)?;
    let v_e = embed_visual(params, visual)?;
    let t_e = embed_text(params, &classes.labels)?.select_rows(&rows);
    let t_cont_e = embed_text(params, &classes.contexts)?.select_rows(&rows);
    let t_aug = if config.use_sde {
        let data = (0..v_e.rows())
            .flat_map(|i| sde_augment(v_e.row(i), t_e.row(i), t_cont_e.row(i)))
            .collect();
        Matrix::from_raw(v_e.rows(), v_e.cols(), data)
    } else {
        t_e.clone()
    };
    let tau = params.tau(config);
    let p1 = direct_similarity(&v_e, &t_aug, tau)?;
    let p2 = augmented_similarity(params, config, &v_e, &t_aug, tau)?;
    let fused = (fuse(&p1.0, &p2.0)?, fuse(&p1.1, &p2.1)?);
    Ok(BatchScores { v_e, t_e, t_cont_e, t_aug, p1, p2, fused, targets: build_targets(labels) })
}

pub(crate) fn class_rows(labels: &[ClassId], classes: &ClassSet) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            classes
                .index_of(l)
                .ok_or_else(|| Error::Contract(format!("class {l} is not among the candidate classes")))
        })
        .collect()
}

/// Classification of one sample against a candidate class set.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: ClassId,
    /// Per-class scores in `ClassSet::ids` order; sums to 1.
    pub scores: Vec<f64>,
}

/// Scores each sample against every class in `candidates` and picks the
/// argmax, breaking ties towards the lowest class id.
pub fn classify(
    params: &ModelParams,
    config: &ModelConfig,
    visual: &Matrix,
    candidates: &ClassSet,
) -> Result<Vec<Prediction>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate classes to classify against".into()));
    }
    let v_e = embed_visual(params, visual)?;
    let t_e = embed_text(params, &candidates.labels)?;
    let t_cont_e = embed_text(params, &candidates.contexts)?;
    let tau = params.tau(config);

    (0..v_e.rows())
        .into_par_iter()
        .map(|n| {
            let query = Matrix::from_raw(1, v_e.cols(), v_e.row(n).to_vec());
            let t_aug = if config.use_sde {
                let data = (0..t_e.rows())
                    .flat_map(|c| sde_augment(query.row(0), t_e.row(c), t_cont_e.row(c)))
                    .collect();
                Matrix::from_raw(t_e.rows(), t_e.cols(), data)
            } else {
                t_e.clone()
            };
            let p1 = if config.use_da {
                kernels::row_softmax(&kernels::cosine_similarity_matrix(&query, &t_aug)?, tau)?
            } else {
                Matrix::zeros(1, t_e.rows())
            };
            let p2 = if config.use_aa {
                kernels::row_softmax(&metric_score_matrix(params, config, &query, &t_aug)?, tau)?
            } else {
                Matrix::zeros(1, t_e.rows())
            };
            let scores = combine(config, &p1, &p2)?.into_vec();
            let best = argmax_first(&scores);
            Ok(Prediction { class: candidates.ids[best], scores })
        })
        .collect()
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

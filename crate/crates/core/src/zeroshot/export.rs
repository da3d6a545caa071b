use std::path::Path;

use crate::alignment::{batch_scores, Batch, ModelConfig, ModelParams};
use crate::alignment::ops::embed_visual;
use crate::dataio::format::write_atomic;
use crate::dataio::{ClassBank, ClassId, FeatureBank};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Visual-to-text similarity matrices of one batch.
#[derive(Clone, Debug)]
pub struct SimilarityExport {
    pub p1: Matrix,
    pub p2: Matrix,
    /// Always the average of both branches, whatever the config enables.
    pub p: Matrix,
    pub y: Matrix,
}

pub fn matrix_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Scores a batch drawn from any split against its own samples' classes.
pub fn export_similarity_matrix(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
    classes: &ClassBank,
) -> Result<SimilarityExport> {
    let all = classes.subset(classes.ids())?;
    let s = batch_scores(params, config, &batch.visual, &batch.labels, &all)?;
    Ok(SimilarityExport { p1: s.p1.0, p2: s.p2.0, p: s.fused.0, y: s.targets.0 })
}

impl SimilarityExport {
    /// Writes `p1.csv`, `p2.csv`, `p.csv` and `y.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, m) in [("p1", &self.p1), ("p2", &self.p2), ("p", &self.p), ("y", &self.y)] {
            write_atomic(dir.join(format!("{name}.csv")), matrix_csv(m).as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingExport {
    pub labels: Vec<ClassId>,
    pub v_e: Matrix,
    /// Unit principal directions as rows, `2 x h`.
    pub components: Matrix,
    /// Centered embeddings projected on the components, `n x 2`.
    pub coordinates: Matrix,
    /// Fraction of total variance along each component.
    pub explained: [f64; 2],
}

impl EmbeddingExport {
    /// `label,pc1,pc2,e0,...` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,pc1,pc2");
        for j in 0..self.v_e.cols() {
            s.push_str(&format!(",e{j}"));
        }
        s.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            s.push_str(&format!("{label},{},{}", self.coordinates[(i, 0)], self.coordinates[(i, 1)]));
            for x in self.v_e.row(i) {
                s.push_str(&format!(",{x}"));
            }
            s.push('\n');
        }
        s
    }
}

const POWER_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-13;

fn matvec(c: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    c.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

fn orthogonalize(x: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let d: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
        x.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
    }
}

/// Leading eigenvector of symmetric PSD `c` orthogonal to `found`, by power
/// iteration. Falls back to any orthogonal unit vector when `c` vanishes on
/// that complement.
fn leading_direction(c: &[Vec<f64>], found: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let d = c.len();
    let mut x: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt()).collect();
    orthogonalize(&mut x, found);
    if normalize(&mut x) == 0.0 {
        x = vec![0.0; d];
        x[0] = 1.0;
        orthogonalize(&mut x, found);
        normalize(&mut x);
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let mut y = matvec(c, &x);
        orthogonalize(&mut y, found);
        let n = normalize(&mut y);
        if n < 1e-300 {
            return (fallback_direction(d, found), 0.0);
        }
        let delta: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        lambda = n;
        if delta < POWER_TOL {
            break;
        }
    }
    (x, lambda)
}

fn fallback_direction(d: usize, found: &[Vec<f64>]) -> Vec<f64> {
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        orthogonalize(&mut e, found);
        if normalize(&mut e) > 1e-6 {
            return e;
        }
    }
    vec![0.0; d]
}

/// Projects `bank` and computes the top two principal components of the
/// embeddings.
pub fn export_embeddings(params: &ModelParams, _config: &ModelConfig, bank: &FeatureBank) -> Result<EmbeddingExport> {
    if bank.is_empty() {
        return Err(Error::InvalidArgument("cannot export embeddings of an empty bank".into()));
    }
    let v_e = embed_visual(params, bank.visual())?;
    let (coordinates, components, explained) = principal_components(&v_e)?;
    Ok(EmbeddingExport { labels: bank.labels().to_vec(), v_e, components, coordinates, explained })
}

/// Top-2 PCA of the rows of `x`: `(coordinates n x 2, components 2 x d,
/// explained variance fractions)`.
pub fn principal_components(x: &Matrix) -> Result<(Matrix, Matrix, [f64; 2])> {
    let (n, d) = x.shape();
    if n == 0 || d < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs rows and at least two columns, got {n}x{d}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
    let centered = Matrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..d).map(|b| (0..n).map(|i| centered[(i, a)] * centered[(i, b)]).sum::<f64>() / n as f64).collect())
        .collect();
    let trace: f64 = (0..d).map(|a| cov[a][a]).sum();

    let (u1, l1) = leading_direction(&cov, &[]);
    let (u2, l2) = leading_direction(&cov, std::slice::from_ref(&u1));
    let components = Matrix::from_rows(&[u1.clone(), u2.clone()])?;
    let coordinates = Matrix::from_fn(n, 2, |i, k| {
        let u = if k == 0 { &u1 } else { &u2 };
        centered.row(i).iter().zip(u).map(|(a, b)| a * b).sum()
    });
    let frac = |l: f64| if trace > 0.0 { l / trace } else { 0.0 };
    Ok((coordinates, components, [frac(l1), frac(l2)]))
}

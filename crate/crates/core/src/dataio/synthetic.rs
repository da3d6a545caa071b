//! Desk-scale synthetic zero-shot benchmarks.
//!
//! Each class gets a random unit prototype in text space. Context embeddings
//! are noisy copies of the prototype, and visual samples are a fixed random
//! linear image of the prototype plus isotropic noise, so unseen classes are
//! reachable from their text embeddings through the same map the seen
//! classes follow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bank::{ClassBank, Dataset, FeatureBank};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Maximum pairwise cosine allowed between two class prototypes.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.5;
const MAX_TRIES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub seen: usize,
    pub unseen: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
    pub samples_per_class: usize,
    pub sigma_v: f64,
    pub sigma_c: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The standard benchmark: 10 classes split 8/2, 32-d visual and 64-d
    /// text features, 50 samples per class.
    fn default() -> Self {
        Self {
            classes: 10,
            seen: 8,
            unseen: 2,
            visual_dim: 32,
            text_dim: 64,
            samples_per_class: 50,
            sigma_v: 0.05,
            sigma_c: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.seen + self.unseen != self.classes {
            problems.push(format!(
                "seen ({}) + unseen ({}) must equal classes ({})",
                self.seen, self.unseen, self.classes
            ));
        }
        if self.classes == 0 {
            problems.push("classes must be at least 1".into());
        }
        if self.visual_dim == 0 || self.text_dim == 0 {
            problems.push("dimensions must be at least 1".into());
        }
        if self.samples_per_class == 0 {
            problems.push("samples_per_class must be at least 1".into());
        }
        for (name, v) in [("sigma_v", self.sigma_v), ("sigma_c", self.sigma_c)] {
            if !(v >= 0.0) || !v.is_finite() {
                problems.push(format!("{name} must be a finite non-negative number"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// The generated dataset together with the hidden text-to-visual map.
#[derive(Clone, Debug)]
pub struct SyntheticBenchmark {
    pub dataset: Dataset,
    /// `visual_dim x text_dim`; a visual sample is `projection * prototype`
    /// plus noise.
    pub projection: Matrix,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn to_f32_grid(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_synthetic_traced(spec).map(|b| b.dataset)
}

/// Like [`generate_synthetic`] but also returns the projection.
///
/// All values are rounded to binary32 so that a saved and reloaded benchmark
/// is identical to the in-memory one.
pub fn generate_synthetic_traced(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, dt, dv) = (spec.classes, spec.text_dim, spec.visual_dim);

    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(c);
    for class in 0..c {
        let mut accepted = None;
        for _ in 0..MAX_TRIES {
            let cand = normalized(gaussian(&mut rng, dt));
            let ok = prototypes.iter().all(|p| {
                p.iter().zip(&cand).map(|(a, b)| a * b).sum::<f64>() < MAX_PROTOTYPE_COSINE
            });
            if ok {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(p) => prototypes.push(p),
            None => {
                return Err(Error::Capacity(format!(
                    "could not place class {class} of {c} with pairwise cosine < \
                     {MAX_PROTOTYPE_COSINE} in {dt} dimensions after {MAX_TRIES} tries"
                )))
            }
        }
    }

    let mut contexts = Vec::with_capacity(c * dt);
    for p in &prototypes {
        let noise = gaussian(&mut rng, dt);
        let ctx: Vec<f64> = p.iter().zip(&noise).map(|(a, n)| a + spec.sigma_c * n).collect();
        contexts.extend(normalized(ctx));
    }

    let scale = 1.0 / (dv as f64).sqrt();
    let mut proj = gaussian(&mut rng, dv * dt);
    proj.iter_mut().for_each(|x| *x *= scale);

    let mut visual = Vec::with_capacity(c * spec.samples_per_class * dv);
    let mut labels = Vec::with_capacity(c * spec.samples_per_class);
    for (class, p) in prototypes.iter().enumerate() {
        let mean: Vec<f64> = (0..dv)
            .map(|i| proj[i * dt..(i + 1) * dt].iter().zip(p).map(|(a, b)| a * b).sum())
            .collect();
        for _ in 0..spec.samples_per_class {
            let noise = gaussian(&mut rng, dv);
            visual.extend(mean.iter().zip(&noise).map(|(m, n)| m + spec.sigma_v * n));
            labels.push(class as u32);
        }
    }

    let mut label_data = prototypes.concat();
    to_f32_grid(&mut label_data);
    to_f32_grid(&mut contexts);
    to_f32_grid(&mut visual);

    let ids: Vec<u32> = (0..c as u32).collect();
    let classes = ClassBank::new(
        ids.clone(),
        ids.iter().map(|i| format!("class_{i:03}")).collect(),
        Matrix::from_vec(c, dt, label_data)?,
        Matrix::from_vec(c, dt, contexts)?,
        ids[..spec.seen].to_vec(),
        ids[spec.seen..].to_vec(),
    )?;
    let features = FeatureBank::new(Matrix::from_vec(labels.len(), dv, visual)?, labels)?;
    Ok(SyntheticBenchmark {
        dataset: Dataset::new(features, classes)?,
        projection: Matrix::from_vec(dv, dt, proj)?,
    })
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{classify, ModelConfig, ModelParams};
use crate::dataio::{ClassBank, ClassId, UnseenBank};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: ClassId,
    pub name: String,
    pub samples: usize,
    pub correct: usize,
    /// `None` when the class has no samples.
    pub accuracy: Option<f64>,
}

/// Top-1 zero-shot accuracy over the unseen classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub samples: usize,
    /// Candidate classes, in confusion-matrix order.
    pub classes: Vec<ClassId>,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// SHA-256 of the model config as JSON.
    pub config_fingerprint: String,
    pub params_digest: String,
    pub seed: Option<u64>,
}

pub fn config_fingerprint(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("model config serialises");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

impl EvalReport {
    /// Tallies `(true, predicted)` pairs over `classes`.
    pub fn from_predictions(
        truth: &[ClassId],
        predicted: &[ClassId],
        classes: &[ClassId],
        names: &[String],
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::InvalidArgument("nothing to evaluate".into()));
        }
        let index = |id: ClassId| {
            classes
                .iter()
                .position(|&c| c == id)
                .ok_or_else(|| Error::Contract(format!("class {id} is not an evaluation class")))
        };
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[index(t)?][index(p)?] += 1;
        }
        let per_class: Vec<ClassAccuracy> = classes
            .iter()
            .enumerate()
            .map(|(i, &class)| {
                let samples: usize = confusion[i].iter().sum();
                let correct = confusion[i][i];
                ClassAccuracy {
                    class,
                    name: names.get(i).cloned().unwrap_or_default(),
                    samples,
                    correct,
                    accuracy: (samples > 0).then(|| correct as f64 / samples as f64),
                }
            })
            .collect();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        Ok(Self {
            accuracy: correct as f64 / truth.len() as f64,
            samples: truth.len(),
            classes: classes.to_vec(),
            per_class,
            confusion,
            config_fingerprint: String::new(),
            params_digest: String::new(),
            seed: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Per-class table: `class,name,samples,correct,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,name,samples,correct,accuracy\n");
        for c in &self.per_class {
            let acc = c.accuracy.map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", c.class, csv_field(&c.name), c.samples, c.correct, acc));
        }
        s
    }

    /// Confusion counts with true classes as rows.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.classes {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            s.push_str(&c.to_string());
            for n in row {
                s.push_str(&format!(",{n}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Classifies every unseen-class sample against the unseen classes.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    unseen: &UnseenBank,
    classes: &ClassBank,
) -> Result<EvalReport> {
    if let Some(bad) = unseen.labels().iter().find(|&&l| !classes.is_unseen(l)) {
        return Err(Error::Contract(format!("evaluation sample labelled {bad}, which is not an unseen class")));
    }
    let candidates = classes.unseen_set();
    let predictions = classify(params, config, unseen.visual(), &candidates)?;
    let predicted: Vec<ClassId> = predictions.iter().map(|p| p.class).collect();
    let names: Vec<String> =
        candidates.ids.iter().map(|&id| classes.name(id).unwrap_or_default().to_string()).collect();
    let mut report = EvalReport::from_predictions(unseen.labels(), &predicted, &candidates.ids, &names)?;
    report.config_fingerprint = config_fingerprint(config);
    report.params_digest = params.digest();
    Ok(report)
}

use serde::{Deserialize, Serialize};

use super::report::{csv_field, evaluate, EvalReport};
use crate::alignment::{LossKind, ModelConfig, ScoreFn};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::trainer::{train, TrainConfig};

/// One row of the module lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleVariant {
    pub name: String,
    pub use_sde: bool,
    pub use_da: bool,
    pub use_aa: bool,
    pub deep_visual: bool,
}

impl ModuleVariant {
    fn new(name: &str, use_sde: bool, use_da: bool, use_aa: bool, deep_visual: bool) -> Self {
        Self { name: name.into(), use_sde, use_da, use_aa, deep_visual }
    }

    /// The five module rows. Without DA the visual side is a single linear
    /// map; "DA" means the deep visual projector plus the cosine branch.
    pub fn lattice() -> Vec<Self> {
        vec![
            Self::new("(1)", false, true, false, false),
            Self::new("(2) SDE", true, true, false, false),
            Self::new("(3) SDE+DA", true, true, false, true),
            Self::new("(4) SDE+AA", true, false, true, false),
            Self::new("(5) SDE+DA+AA", true, true, true, true),
        ]
    }

    /// Whether the row counts as having the DA module.
    pub fn has_da(&self) -> bool {
        self.use_da && self.deep_visual
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            use_sde: self.use_sde,
            use_da: self.use_da,
            use_aa: self.use_aa,
            deep_visual: self.deep_visual,
            ..base.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedScore {
    None,
    Sigmoid,
}

/// A score-function setting: `"none"`, `"sigmoid"` or a LeakySigmoid gamma.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Leaky(f64),
    Named(NamedScore),
}

impl GammaSetting {
    pub fn sweep() -> Vec<Self> {
        let mut v = vec![GammaSetting::Named(NamedScore::None), GammaSetting::Named(NamedScore::Sigmoid)];
        v.extend([0.005, 0.01, 0.1, 0.5].map(GammaSetting::Leaky));
        v
    }

    pub fn label(&self) -> String {
        match self {
            GammaSetting::Named(NamedScore::None) => "None".into(),
            GammaSetting::Named(NamedScore::Sigmoid) => "Sigmoid".into(),
            GammaSetting::Leaky(g) => g.to_string(),
        }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        match *self {
            GammaSetting::Named(NamedScore::None) => ModelConfig { score_fn: ScoreFn::None, ..base.clone() },
            GammaSetting::Named(NamedScore::Sigmoid) => ModelConfig { score_fn: ScoreFn::Sigmoid, ..base.clone() },
            GammaSetting::Leaky(gamma) => ModelConfig { score_fn: ScoreFn::LeakySigmoid, gamma, ..base.clone() },
        }
    }
}

/// Which variants to train and evaluate. The gamma and loss sweeps vary the
/// base model, which is normally the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationPlan {
    pub model: ModelConfig,
    pub modules: Vec<ModuleVariant>,
    pub gammas: Vec<GammaSetting>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self::standard(ModelConfig::default(), vec![0, 1, 2])
    }
}

impl AblationPlan {
    /// Module lattice, gamma sweep and loss comparison over `seeds`.
    pub fn standard(model: ModelConfig, seeds: Vec<u64>) -> Self {
        Self {
            model,
            modules: ModuleVariant::lattice(),
            gammas: GammaSetting::sweep(),
            losses: vec![LossKind::InfoNce, LossKind::SoftmaxCe, LossKind::Kld],
            seeds,
        }
    }

    /// Every variant's resolved config, grouped by section.
    pub fn configs(&self) -> [Vec<(String, ModelConfig)>; 3] {
        [
            self.modules.iter().map(|m| (m.name.clone(), m.apply(&self.model))).collect(),
            self.gammas.iter().map(|g| (g.label(), g.apply(&self.model))).collect(),
            self.losses.iter().map(|l| (l.name().to_string(), ModelConfig { loss: *l, ..self.model.clone() })).collect(),
        ]
    }

    /// Every violated invariant, with a JSON-style path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seeds.is_empty() {
            out.push("seeds: at least one seed is required".to_string());
        }
        if self.modules.is_empty() && self.gammas.is_empty() && self.losses.is_empty() {
            out.push("plan has no variants".to_string());
        }
        for (section, configs) in ["modules", "gammas", "losses"].iter().zip(self.configs()) {
            for (i, (_, c)) in configs.iter().enumerate() {
                out.extend(c.violations().into_iter().map(|(f, m)| format!("{section}[{i}].{f}: {m}")));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
    pub batch_digest: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config: ModelConfig,
    pub runs: Vec<AblationRun>,
}

impl AblationRow {
    pub fn mean_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.accuracy).sum::<f64>() / self.runs.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    pub seeds: Vec<u64>,
    pub modules: Vec<AblationRow>,
    pub gammas: Vec<AblationRow>,
    pub losses: Vec<AblationRow>,
}

fn seed_columns(first: &[&str], seeds: &[u64]) -> String {
    let mut cols: Vec<String> = first.iter().map(|s| s.to_string()).collect();
    cols.extend(seeds.iter().map(|s| format!("seed_{s}")));
    cols.push("average".into());
    cols.join(",") + "\n"
}

fn accuracies(row: &AblationRow) -> String {
    let mut s: Vec<String> = row.runs.iter().map(|r| r.accuracy.to_string()).collect();
    s.push(row.mean_accuracy().to_string());
    s.join(",")
}

impl AblationResults {
    /// `variant,SDE,DA,AA,seed_*,average`, with 1/0 module flags.
    pub fn modules_csv(&self) -> String {
        let mut s = seed_columns(&["variant", "SDE", "DA", "AA"], &self.seeds);
        for row in &self.modules {
            let c = &row.config;
            let flag = |b: bool| if b { "1" } else { "0" };
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&row.label),
                flag(c.use_sde),
                flag(c.use_da && c.deep_visual),
                flag(c.use_aa),
                accuracies(row)
            ));
        }
        s
    }

    /// `gamma,seed_*,average`.
    pub fn gammas_csv(&self) -> String {
        self.simple_csv("gamma", &self.gammas)
    }

    /// `loss,seed_*,average`.
    pub fn losses_csv(&self) -> String {
        self.simple_csv("loss", &self.losses)
    }

    fn simple_csv(&self, key: &str, rows: &[AblationRow]) -> String {
        let mut s = seed_columns(&[key], &self.seeds);
        for row in rows {
            s.push_str(&format!("{},{}\n", csv_field(&row.label), accuracies(row)));
        }
        s
    }
}

/// Trains and evaluates every variant for every seed. All variants see the
/// same seeds, and batch order depends only on the seed, so rows are paired.
pub fn run_ablation(plan: &AblationPlan, data: &Dataset, train_config: &TrainConfig) -> Result<AblationResults> {
    plan.validate()?;
    let seen = data.seen();
    let unseen = data.unseen();
    let run_row = |label: String, config: ModelConfig| -> Result<AblationRow> {
        let runs = plan
            .seeds
            .iter()
            .map(|&seed| {
                let cfg = TrainConfig { seed, ..train_config.clone() };
                let outcome = train(&cfg, &config, &seen, &data.classes)?;
                let mut report = evaluate(&outcome.params, &config, &unseen, &data.classes)?;
                report.seed = Some(seed);
                log::info!("{label} seed {seed}: accuracy {:.4}", report.accuracy);
                Ok(AblationRun {
                    seed,
                    accuracy: report.accuracy,
                    final_loss: outcome.history.last().map_or(f64::NAN, |r| r.loss),
                    batch_digest: outcome.batch_digest,
                    report,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AblationRow { label, config, runs })
    };
    let [modules, gammas, losses] = plan.configs();
    let section = |rows: Vec<(String, ModelConfig)>| -> Result<Vec<AblationRow>> {
        rows.into_iter().map(|(l, c)| run_row(l, c)).collect()
    };
    Ok(AblationResults {
        seeds: plan.seeds.clone(),
        modules: section(modules)?,
        gammas: section(gammas)?,
        losses: section(losses)?,
    })
}

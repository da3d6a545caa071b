//! Zero-shot evaluation, ablation runs and figure exports.

mod ablation;
mod export;
mod report;

pub use ablation::{
    run_ablation, AblationPlan, AblationResults, AblationRow, AblationRun, GammaSetting, ModuleVariant, NamedScore,
};
pub use export::{
    export_embeddings, export_similarity_matrix, matrix_csv, principal_components, EmbeddingExport,
    SimilarityExport,
};
pub use report::{config_fingerprint, evaluate, ClassAccuracy, EvalReport};

#[cfg(test)]
mod tests;

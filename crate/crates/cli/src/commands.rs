use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use dvta::alignment::Batch;
use dvta::dataio::manifest::{read_manifest, resolve_manifest_path};
use dvta::dataio::{generate_synthetic, load_manifest, save_dataset, BatchSampler, FeatureBank};
use dvta::dataio::format::write_atomic;
use dvta::trainer::{gradcheck, load_checkpoint, save_checkpoint, train_with};
use dvta::zeroshot::{evaluate, export_embeddings, export_similarity_matrix, run_ablation};
use dvta::{AblationPlan, Dataset, ModelConfig, ModelParams, SyntheticSpec};
use serde::de::DeserializeOwned;

use crate::config::{validate_config, RunConfig};
use crate::manifest::RunManifest;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Dual visual-text alignment for zero-shot recognition over pre-extracted
/// features.
#[derive(Debug, Parser)]
#[command(name = "dvta", version, arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads for evaluation fan-out.
    #[arg(long, global = true, env = "DVTA_THREADS", default_value_t = 1)]
    pub threads: usize,

    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Seen,
    Unseen,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark directory.
    GenSynthetic {
        /// Synthetic benchmark spec (JSON); defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for the manifest and feature files.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed; overrides the seed in the settings file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the seen classes of a dataset.
    Train {
        /// Run config (JSON with "model" and "train" sections).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the checkpoint, loss history and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Training seed; overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Zero-shot evaluation on the unseen classes.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path (JSON); per-class and confusion CSVs go beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every variant of an ablation plan.
    Ablate {
        /// Ablation plan (JSON); defaults apply to missing fields.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Module table (CSV); gamma and loss tables go beside it.
        #[arg(long)]
        out: PathBuf,
        /// Run config whose "train" section sets the optimiser. The plan's
        /// own model config is the base for every variant.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check analytic gradients against finite differences at toy sizes.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check, starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Run config whose "model" section replaces the toy model.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check the cosine branch alone.
        #[arg(long)]
        da_only: bool,
    },
    /// Write p1, p2, fused p and target y for one batch as CSV matrices.
    ExportSim {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "unseen")]
        split: Split,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// Seed for drawing the batch.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write visual embeddings with their top two principal components.
    ExportEmb {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Gradcheck { .. } => "gradcheck",
            Command::ExportSim { .. } => "export-sim",
            Command::ExportEmb { .. } => "export-emb",
        }
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    // The global pool can only be built once per process.
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        log::debug!("thread pool already initialised; keeping it");
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_logging(cli.verbose, cli.quiet);
    init_threads(cli.threads)?;
    let mut manifest = RunManifest::new(cli.command.name(), cli.threads);
    match cli.command {
        Command::GenSynthetic { spec, out, seed } => gen_synthetic(&mut manifest, spec.as_deref(), &out, seed),
        Command::Train { config, data, out, seed } => train_cmd(&mut manifest, config.as_deref(), &data, &out, seed),
        Command::Eval { ckpt, data, out } => eval_cmd(&mut manifest, &ckpt, &data, &out),
        Command::Ablate { plan, data, out, config } => ablate_cmd(&mut manifest, &plan, &data, &out, config.as_deref()),
        Command::Gradcheck { seed, seeds, config, da_only } => gradcheck_cmd(seed, seeds, config.as_deref(), da_only),
        Command::ExportSim { ckpt, data, out, split, batch_size, seed } => {
            export_sim_cmd(&mut manifest, &ckpt, &data, &out, split, batch_size, seed)
        }
        Command::ExportEmb { ckpt, data, out, split } => export_emb_cmd(&mut manifest, &ckpt, &data, &out, split),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(dvta::Error::Io { path: path.to_path_buf(), source: e })
}

/// Reads a JSON file with defaults, reporting type errors by JSON path.
fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        CliError::Config { path: path.to_path_buf(), errors: vec![format!("{at}: {}", e.into_inner())] }
    })
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// Loads a dataset and records its manifest and feature files as inputs.
fn load_data(manifest: &mut RunManifest, data: &Path) -> Result<Dataset> {
    require_exists(data, "data directory")?;
    let path = resolve_manifest_path(data);
    require_exists(&path, "dataset manifest")?;
    let files = read_manifest(&path)?.files;
    manifest.input(&path).map_err(|e| io_err(&path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for f in files.all() {
        let p = base.join(f);
        require_exists(&p, "feature file")?;
        manifest.input(&p).map_err(|e| io_err(&p, e))?;
    }
    Ok(load_manifest(&path)?)
}

fn load_model(manifest: &mut RunManifest, ckpt: &Path) -> Result<(ModelConfig, ModelParams)> {
    require_exists(ckpt, "checkpoint")?;
    manifest.input(ckpt).map_err(|e| io_err(ckpt, e))?;
    Ok(load_checkpoint(ckpt)?)
}

fn check_dims(model: &ModelConfig, data: &Dataset) -> Result<()> {
    let mut errors = Vec::new();
    if model.visual_dim != data.features.visual_dim() {
        errors.push(format!(
            "model.visual_dim is {} but the data has {}-d visual features",
            model.visual_dim,
            data.features.visual_dim()
        ));
    }
    if model.text_dim != data.classes.text_dim() {
        errors.push(format!(
            "model.text_dim is {} but the data has {}-d text embeddings",
            model.text_dim,
            data.classes.text_dim()
        ));
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Usage(errors.join("; ")))
    }
}

fn write_output(manifest: &mut RunManifest, path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)?;
    manifest.output(path).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// `dir/name` for directories; `file.stem.ext` beside files.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn gen_synthetic(manifest: &mut RunManifest, spec_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSpec = match spec_path {
        Some(p) => {
            manifest.input(p).map_err(|e| io_err(p, e))?;
            read_json(p, "synthetic spec")?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    manifest.set_config(&spec);
    manifest.phase("generate");
    let data = generate_synthetic(&spec)?;
    manifest.phase("write");
    let written = save_dataset(out, &data)?;
    manifest.output(&out.join("manifest.json")).map_err(|e| io_err(out, e))?;
    for f in written.files.all() {
        let p = out.join(f);
        manifest.output(&p).map_err(|e| io_err(&p, e))?;
    }
    log::info!(
        "wrote {} samples over {} classes ({} seen, {} unseen) to {}",
        data.features.len(),
        data.classes.len(),
        spec.seen,
        spec.unseen,
        out.display()
    );
    manifest.write(&out.join("run_manifest.json"))?;
    Ok(())
}

fn train_cmd(manifest: &mut RunManifest, config: Option<&Path>, data: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut run = match config {
        Some(p) => {
            let c = validate_config(p)?;
            manifest.input(p).map_err(|e| io_err(p, e))?;
            c
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        run.train.seed = s;
    }
    manifest.set_config(&run);
    manifest.phase("load");
    let dataset = load_data(manifest, data)?;
    check_dims(&run.model, &dataset)?;
    create_dir(out)?;

    manifest.phase("train");
    let seen = dataset.seen();
    log::info!(
        "training on {} seen samples, {} epochs of batch {}",
        seen.len(),
        run.train.epochs,
        run.train.batch_size
    );
    let mut snapshots = Vec::new();
    let outcome = train_with(&run.train, &run.model, &seen, &dataset.classes, |epoch, params| {
        let p = out.join(format!("checkpoint_epoch_{epoch:04}.ckpt"));
        save_checkpoint(&p, &run.model, params)?;
        snapshots.push(p);
        Ok(())
    })?;
    for p in &snapshots {
        manifest.output(p).map_err(|e| io_err(p, e))?;
    }
    let means = outcome.epoch_means();
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        log::info!("epoch mean loss {first:.6} -> {last:.6}");
    }

    manifest.phase("write");
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &run.model, &outcome.params)?;
    manifest.output(&ckpt).map_err(|e| io_err(&ckpt, e))?;
    write_output(manifest, &out.join("loss.csv"), outcome.history_csv().as_bytes())?;
    manifest.write(&out.join("run_manifest.json"))?;
    Ok(())
}

fn eval_cmd(manifest: &mut RunManifest, ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let (model, params) = load_model(manifest, ckpt)?;
    manifest.set_config(&model);
    manifest.phase("load");
    let dataset = load_data(manifest, data)?;
    check_dims(&model, &dataset)?;
    manifest.phase("evaluate");
    let report = evaluate(&params, &model, &dataset.unseen(), &dataset.classes)?;
    log::info!("unseen top-1 accuracy {} over {} samples", report.accuracy, report.samples);
    manifest.phase("write");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_output(manifest, out, report.to_json().as_bytes())?;
    write_output(manifest, &sibling(out, ".csv"), report.to_csv().as_bytes())?;
    write_output(manifest, &sibling(out, "_confusion.csv"), report.confusion_csv().as_bytes())?;
    manifest.write(&sibling(out, ".manifest.json"))?;
    Ok(())
}

fn ablate_cmd(manifest: &mut RunManifest, plan_path: &Path, data: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    require_exists(plan_path, "ablation plan")?;
    let plan: AblationPlan = read_json(plan_path, "ablation plan")?;
    manifest.input(plan_path).map_err(|e| io_err(plan_path, e))?;
    let violations = plan.violations();
    if !violations.is_empty() {
        return Err(CliError::Config { path: plan_path.to_path_buf(), errors: violations });
    }
    let train = match config {
        Some(p) => {
            let c = validate_config(p)?;
            manifest.input(p).map_err(|e| io_err(p, e))?;
            c.train
        }
        None => dvta::TrainConfig::default(),
    };
    manifest.set_config(&serde_json::json!({ "plan": plan, "train": train }));
    manifest.phase("load");
    let dataset = load_data(manifest, data)?;
    check_dims(&plan.model, &dataset)?;

    manifest.phase("ablate");
    let results = run_ablation(&plan, &dataset, &train)?;
    manifest.phase("write");
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_output(manifest, out, results.modules_csv().as_bytes())?;
    write_output(manifest, &sibling(out, "_gamma.csv"), results.gammas_csv().as_bytes())?;
    write_output(manifest, &sibling(out, "_loss.csv"), results.losses_csv().as_bytes())?;
    let json = serde_json::to_string_pretty(&results).expect("results serialise");
    write_output(manifest, &sibling(out, ".json"), json.as_bytes())?;
    manifest.write(&sibling(out, ".manifest.json"))?;
    Ok(())
}

fn gradcheck_cmd(seed: u64, seeds: u64, config: Option<&Path>, da_only: bool) -> Result<()> {
    let mut model = match config {
        Some(p) => validate_config(p)?.model,
        None => ModelConfig::toy(),
    };
    if da_only {
        model.use_aa = false;
        model.use_da = true;
    }
    let mut failed = Vec::new();
    for s in seed..seed + seeds.max(1) {
        let report = gradcheck(&model, s)?;
        println!("{report}");
        if !report.passed() {
            failed.push(s);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("gradient check failed for seeds {failed:?}")))
    }
}

fn split_bank(dataset: &Dataset, split: Split) -> FeatureBank {
    match split {
        Split::Seen => (*dataset.seen()).clone(),
        Split::Unseen => (*dataset.unseen()).clone(),
        Split::All => dataset.features.clone(),
    }
}

fn export_sim_cmd(
    manifest: &mut RunManifest,
    ckpt: &Path,
    data: &Path,
    out: &Path,
    split: Split,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    if batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let (model, params) = load_model(manifest, ckpt)?;
    manifest.set_config(&serde_json::json!({ "model": model, "split": format!("{split:?}"), "batch_size": batch_size, "seed": seed }));
    let dataset = load_data(manifest, data)?;
    check_dims(&model, &dataset)?;
    let bank = split_bank(&dataset, split);
    if bank.is_empty() {
        return Err(CliError::Usage(format!("the {split:?} split has no samples")));
    }
    let idx = BatchSampler::new(bank.len(), batch_size, seed).next_batch();
    let (visual, labels) = bank.rows(&idx);
    let export = export_similarity_matrix(&params, &model, &Batch { visual, labels }, &dataset.classes)?;
    create_dir(out)?;
    for (name, m) in [("p1", &export.p1), ("p2", &export.p2), ("p", &export.p), ("y", &export.y)] {
        write_output(manifest, &out.join(format!("{name}.csv")), dvta::zeroshot::matrix_csv(m).as_bytes())?;
    }
    let rows: String = idx.iter().map(|i| format!("{i}\n")).collect();
    write_output(manifest, &out.join("rows.csv"), format!("row\n{rows}").as_bytes())?;
    manifest.write(&out.join("run_manifest.json"))?;
    Ok(())
}

fn export_emb_cmd(manifest: &mut RunManifest, ckpt: &Path, data: &Path, out: &Path, split: Split) -> Result<()> {
    let (model, params) = load_model(manifest, ckpt)?;
    manifest.set_config(&serde_json::json!({ "model": model, "split": format!("{split:?}") }));
    let dataset = load_data(manifest, data)?;
    check_dims(&model, &dataset)?;
    let bank = split_bank(&dataset, split);
    let export = export_embeddings(&params, &model, &bank)?;
    log::info!(
        "first two components explain {:.4} and {:.4} of the variance",
        export.explained[0],
        export.explained[1]
    );
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_output(manifest, out, export.to_csv().as_bytes())?;
    let pca = serde_json::json!({
        "explained": export.explained,
        "components": [export.components.row(0), export.components.row(1)],
    });
    write_output(manifest, &sibling(out, "_pca.json"), serde_json::to_string_pretty(&pca).unwrap().as_bytes())?;
    manifest.write(&sibling(out, ".manifest.json"))?;
    Ok(())
}

use super::*;
use crate::alignment::{build_targets, Batch, LossKind, ModelConfig, ModelParams};
use crate::dataio::{generate_synthetic, SyntheticSpec};
use crate::trainer::TrainConfig;

fn five_unseen(seed: u64) -> crate::dataio::Dataset {
    generate_synthetic(&SyntheticSpec {
        classes: 10,
        seen: 5,
        unseen: 5,
        samples_per_class: 40,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

#[test]
fn untrained_model_is_near_chance() {
    let mut total = 0.0;
    for seed in 0..10 {
        let data = five_unseen(100 + seed);
        let params = ModelParams::init(&ModelConfig::synthetic(), seed);
        let r = evaluate(&params, &ModelConfig::synthetic(), &data.unseen(), &data.classes).unwrap();
        assert_eq!(r.classes.len(), 5);
        total += r.accuracy;
    }
    let mean = total / 10.0;
    assert!((0.1..=0.35).contains(&mean), "mean accuracy {mean}");
}

#[test]
fn evaluate_is_pure_and_repeatable() {
    let data = five_unseen(1);
    let config = ModelConfig::synthetic();
    let params = ModelParams::init(&config, 4);
    let before = params.digest();
    let a = evaluate(&params, &config, &data.unseen(), &data.classes).unwrap();
    let b = evaluate(&params, &config, &data.unseen(), &data.classes).unwrap();
    assert_eq!(params.digest(), before);
    assert_eq!(a, b);
    assert_eq!(a.params_digest, before);
    assert_eq!(a.config_fingerprint, config_fingerprint(&config));
}

#[test]
fn seen_samples_are_rejected() {
    let data = five_unseen(2);
    let config = ModelConfig::synthetic();
    let params = ModelParams::init(&config, 0);
    let c = &data.classes;
    let swapped = crate::dataio::ClassBank::new(
        c.ids().to_vec(),
        c.names().to_vec(),
        c.label_embeddings().clone(),
        c.context_embeddings().clone(),
        c.unseen_ids().to_vec(),
        c.seen_ids().to_vec(),
    )
    .unwrap();
    let err = evaluate(&params, &config, &data.unseen(), &swapped).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)), "{err}");
}

#[test]
fn similarity_export_properties() {
    let data = five_unseen(3);
    let config = ModelConfig::synthetic();
    let params = ModelParams::init(&config, 1);
    let idx: Vec<usize> = (0..12).map(|i| i * 17 % data.features.len()).collect();
    let (visual, labels) = data.features.rows(&idx);
    let e = export_similarity_matrix(&params, &config, &Batch { visual, labels: labels.clone() }, &data.classes)
        .unwrap();
    assert_eq!(e.y, build_targets(&labels).0);
    for i in 0..12 {
        for j in 0..12 {
            assert!((e.p[(i, j)] - 0.5 * (e.p1[(i, j)] + e.p2[(i, j)])).abs() < 1e-12);
        }
    }
    for m in [&e.p1, &e.p2, &e.p] {
        assert!(m.row_sums().iter().all(|s| (s - 1.0).abs() < 1e-9));
    }
    let dir = tempfile::tempdir().unwrap();
    e.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
    let first: Vec<f64> = text.lines().next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first, e.p.row(0));
}

#[test]
fn embedding_export_shape() {
    let data = five_unseen(4);
    let config = ModelConfig::synthetic();
    let params = ModelParams::init(&config, 2);
    let e = export_embeddings(&params, &config, &data.features).unwrap();
    assert_eq!(e.v_e.shape(), (data.features.len(), config.embed_dim));
    assert_eq!(e.coordinates.shape(), (data.features.len(), 2));
    let csv = e.to_csv();
    assert!(csv.starts_with("label,pc1,pc2,e0,"));
    assert_eq!(csv.lines().count(), data.features.len() + 1);
}

#[test]
fn single_variant_plan_is_one_train_and_eval() {
    let data = generate_synthetic(&SyntheticSpec { samples_per_class: 8, ..SyntheticSpec::default() }).unwrap();
    let model = ModelConfig::synthetic();
    let train_config = TrainConfig { epochs: 2, batch_size: 16, learning_rate: 1e-3, seed: 5, ..TrainConfig::default() };
    let plan = AblationPlan {
        model: model.clone(),
        modules: vec![],
        gammas: vec![],
        losses: vec![LossKind::Kld],
        seeds: vec![5],
    };
    let results = run_ablation(&plan, &data, &train_config).unwrap();
    assert_eq!(results.losses.len(), 1);
    let outcome = crate::trainer::train(&train_config, &model, &data.seen(), &data.classes).unwrap();
    let report = evaluate(&outcome.params, &model, &data.unseen(), &data.classes).unwrap();
    assert_eq!(results.losses[0].runs[0].accuracy, report.accuracy);
    assert_eq!(results.losses[0].runs[0].batch_digest, outcome.batch_digest);
}

#[test]
fn ablation_variants_share_batch_order() {
    let data = generate_synthetic(&SyntheticSpec { samples_per_class: 8, ..SyntheticSpec::default() }).unwrap();
    let train_config = TrainConfig { epochs: 1, batch_size: 16, learning_rate: 1e-3, ..TrainConfig::default() };
    let plan = AblationPlan {
        modules: ModuleVariant::lattice(),
        gammas: vec![],
        losses: vec![],
        seeds: vec![0, 1],
        ..AblationPlan::standard(ModelConfig::synthetic(), vec![])
    };
    let r = run_ablation(&plan, &data, &train_config).unwrap();
    for s in 0..2 {
        let digests: Vec<&str> = r.modules.iter().map(|row| row.runs[s].batch_digest.as_str()).collect();
        assert!(digests.windows(2).all(|w| w[0] == w[1]));
    }
    assert_ne!(r.modules[0].runs[0].batch_digest, r.modules[0].runs[1].batch_digest);
    let csv = r.modules_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,SDE,DA,AA,seed_0,seed_1,average");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("(5) SDE+DA+AA,1,1,1,"));
    assert!(lines[1].starts_with("(1),0,0,0,"));
}

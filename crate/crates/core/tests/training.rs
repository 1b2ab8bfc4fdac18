//! Training loop, optimizer partition, and checkpoint contracts.

use zdcgan_core::data::{compute_stats, synth_dataset, Dataset, SynthProfile};
use zdcgan_core::losses::LossWeights;
use zdcgan_core::nets::{init_params, ArchitectureConfig, ModelParams};
use zdcgan_core::optim::OptimizerConfig;
use zdcgan_core::training::{
    initial_params, load_checkpoint, load_checkpoint_for, save_checkpoint, train,
    train_with_checkpoints, CheckpointMeta, TrainConfig, Trainer,
};
use zdcgan_core::Error;

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    cfg.architecture.base_channels = 2;
    cfg.architecture.conditioning_embed_dim = 2;
    cfg
}

fn dataset(groups: usize, per_group: usize) -> Dataset {
    synth_dataset(11, groups, per_group, &SynthProfile::default()).unwrap()
}

#[test]
fn zero_epochs_return_initial_params() {
    let ds = dataset(3, 3);
    let cfg = TrainConfig {
        epochs: 0,
        ..small_config()
    };
    let (params, log) = train(&ds, &cfg).unwrap();
    assert_eq!(params, initial_params(&ds, &cfg).unwrap());
    assert!(log.steps.is_empty());
}

#[test]
fn one_step_is_bit_deterministic() {
    let ds = dataset(3, 4);
    let stats = compute_stats(&ds).unwrap();
    let cfg = small_config();
    let run = || {
        let mut t = Trainer::new(initial_params(&ds, &cfg).unwrap(), &cfg).unwrap();
        let log = t.step(&ds, &stats, &[0, 5, 6, 11], 0, 0).unwrap();
        (t.into_params(), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn training_twice_gives_identical_logs() {
    let ds = dataset(4, 4);
    let cfg = TrainConfig {
        epochs: 2,
        ..small_config()
    };
    let (pa, la) = train(&ds, &cfg).unwrap();
    let (pb, lb) = train(&ds, &cfg).unwrap();
    assert_eq!(la.steps, lb.steps);
    assert_eq!(pa, pb);
    // 16 samples in batches of 4, two epochs
    assert_eq!(la.steps.len(), 8);
    assert_eq!(la.epoch_seconds.len(), 2);
}

#[test]
fn logged_breakdowns_satisfy_total_identity() {
    let ds = dataset(4, 4);
    let cfg = TrainConfig {
        weights: LossWeights {
            lambda_div: 0.3,
            lambda_in: 0.02,
            lambda_aux: 0.001,
        },
        ..small_config()
    };
    let (_, log) = train(&ds, &cfg).unwrap();
    for s in &log.steps {
        let g = s.generator;
        let w = g.weights;
        let total = g.adv + w.lambda_div * g.div + w.lambda_in * g.intensity + w.lambda_aux * g.aux;
        assert!((total - g.total).abs() <= 1e-12 * total.abs().max(1.0));
        assert!(g.div > 0.0 && g.intensity > 0.0 && g.aux > 0.0);
    }
}

#[test]
fn zero_strength_terms_are_not_evaluated() {
    let ds = dataset(3, 4);
    let cfg = TrainConfig {
        weights: LossWeights::NONE,
        ..small_config()
    };
    let (_, log) = train(&ds, &cfg).unwrap();
    for s in &log.steps {
        assert_eq!((s.generator.div, s.generator.intensity, s.generator.aux), (0.0, 0.0, 0.0));
        assert_eq!(s.generator.total, s.generator.adv);
    }
}

#[test]
fn updates_respect_the_parameter_partition() {
    let ds = dataset(3, 4);
    let stats = compute_stats(&ds).unwrap();
    let cfg = small_config();
    let batch = [0, 4, 8, 9];
    let mut t = Trainer::new(initial_params(&ds, &cfg).unwrap(), &cfg).unwrap();

    let before = t.params().clone();
    t.discriminator_update(&ds, &batch).unwrap();
    let after = t.params().clone();
    assert_ne!(before.discriminator, after.discriminator);
    assert_eq!(
        (&before.generator, &before.regressor, &before.conditioning),
        (&after.generator, &after.regressor, &after.conditioning)
    );

    t.regressor_update(&ds, &batch).unwrap();
    let after2 = t.params().clone();
    assert_ne!(after.regressor, after2.regressor);
    assert_eq!(
        (&after.generator, &after.discriminator, &after.conditioning),
        (&after2.generator, &after2.discriminator, &after2.conditioning)
    );

    t.generator_update(&ds, &stats, &batch).unwrap();
    let after3 = t.params().clone();
    assert_ne!(after2.generator, after3.generator);
    assert_eq!(
        (&after2.regressor, &after2.discriminator, &after2.conditioning),
        (&after3.regressor, &after3.discriminator, &after3.conditioning)
    );
}

#[test]
fn two_group_run_stays_finite_for_200_steps() {
    let ds = dataset(2, 4);
    // 8 samples in batches of 4: two steps per epoch
    let cfg = TrainConfig {
        epochs: 100,
        weights: LossWeights::REFERENCE,
        ..small_config()
    };
    let (params, log) = train(&ds, &cfg).unwrap();
    assert_eq!(log.steps.len(), 200);
    assert!(log.steps.iter().all(|s| s.generator.total.is_finite()
        && s.discriminator.is_finite()
        && s.regressor.is_finite()));
    assert!(params.is_finite());
}

#[test]
fn divergence_is_reported_with_the_batch() {
    let ds = dataset(3, 4);
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::Sgd,
        learning_rate_g: 1e30,
        learning_rate_d: 1e30,
        learning_rate_r: 1e30,
        epochs: 20,
        ..small_config()
    };
    match train(&ds, &cfg) {
        Err(Error::Diverged { sample_indices, .. }) => {
            assert!(!sample_indices.is_empty());
            assert!(sample_indices.iter().all(|&i| i < ds.len()));
        }
        other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l.steps.len())),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = dataset(3, 3);
    let cfg = TrainConfig {
        batch_size: 1,
        ..small_config()
    };
    assert!(matches!(train(&ds, &cfg), Err(Error::InvalidArgument(_))));
    let cfg = TrainConfig {
        learning_rate_g: 0.0,
        ..small_config()
    };
    assert!(matches!(train(&ds, &cfg), Err(Error::InvalidArgument(_))));
    let one_group = dataset(1, 4);
    assert!(matches!(train(&one_group, &small_config()), Err(Error::Precondition(_))));
    let cfg = TrainConfig {
        architecture: ArchitectureConfig::toy(),
        ..small_config()
    };
    assert!(matches!(train(&ds, &cfg), Err(Error::Shape(_))));
}

#[test]
fn checkpoint_round_trip_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(3, 3);
    let cfg = small_config();
    let (params, log) = train(&ds, &cfg).unwrap();
    let meta = CheckpointMeta::new(&params, &cfg, log.steps.len(), cfg.epochs);
    save_checkpoint(&params, &meta, dir.path()).unwrap();
    let (loaded, lmeta) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded, params);
    assert_eq!(lmeta, meta);
    assert_eq!(lmeta.weights, LossWeights::REFERENCE);
    let text = std::fs::read_to_string(dir.path().join("meta.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["weights"]["lambda_div"], 0.1);
    assert_eq!(json["weights"]["lambda_in"], 1e-10);
    assert_eq!(json["weights"]["lambda_aux"], 0.001);
}

#[test]
fn checkpoint_shape_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let params: ModelParams<f32> = init_params(&cfg.architecture, 1).unwrap();
    save_checkpoint(&params, &CheckpointMeta::new(&params, &cfg, 0, 0), dir.path()).unwrap();

    let other = ArchitectureConfig {
        base_channels: 3,
        ..cfg.architecture.clone()
    };
    assert!(matches!(load_checkpoint_for(dir.path(), &other), Err(Error::Shape(_))));
    assert!(load_checkpoint_for(dir.path(), &cfg.architecture).is_ok());

    // architecture edited in meta.json no longer matches the tensor manifest
    let meta_path = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&meta_path).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["architecture"]["base_channels"] = 3.into();
    std::fs::write(&meta_path, json.to_string()).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Shape(_))));
    std::fs::write(&meta_path, text).unwrap();

    let bin = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&bin, bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::SizeMismatch { .. })));
}

#[test]
fn periodic_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(3, 3);
    let cfg = TrainConfig {
        epochs: 4,
        checkpoint_every: 2,
        ..small_config()
    };
    let (params, _) = train_with_checkpoints(&ds, &cfg, Some(dir.path())).unwrap();
    assert!(dir.path().join("epoch_0002/params.bin").exists());
    let (last, meta) = load_checkpoint(&dir.path().join("epoch_0004")).unwrap();
    assert_eq!(last, params);
    assert_eq!(meta.epoch, 4);
    assert!(!dir.path().join("epoch_0001").exists());
}

mod common;

use common::*;
use loat::train::{train_phase1, train_phase2, ModelBundle, OptimizerChoice};

#[test]
fn single_scene_overfit() {
    let (before, after) = common::single_scene_overfit();
    assert!(after < 0.1 * before, "loss {before} -> {after}");
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg_scene = toy_config(0);
    let data = observed_dataset(&cfg_scene, 0..3);
    let table = toy_embeddings();
    let mut cfg = small_cfg();
    cfg.phase1.learning_rate = 0.0;
    cfg.phase2.learning_rate = 0.0;
    cfg.phase1.epochs = 2;
    cfg.phase2.epochs = 2;
    for opt in [OptimizerChoice::Adam, OptimizerChoice::Sgd] {
        cfg.phase1.optimizer = opt;
        cfg.phase2.optimizer = opt;
        let mut b = ModelBundle::init(&cfg, table.dim(), 4, 32).unwrap();
        let start = b.to_checkpoint().content_hash();
        train_phase1(&data, &table, &mut b, &cfg).unwrap();
        let ModelBundle { experiential, predictor, fusion } = &mut b;
        train_phase2(&data, &table, &toy_relevance(&[0]), experiential, predictor, fusion, &cfg).unwrap();
        assert_eq!(b.to_checkpoint().content_hash(), start, "{opt:?}");
    }
}

#[test]
fn phase2_touches_only_fusion() {
    let (frozen, b) = phase2_snapshots();
    assert_eq!(b.experiential, frozen.experiential);
    assert_eq!(b.predictor, frozen.predictor);
    assert_eq!(b.frozen_hash(), frozen.frozen_hash());
    assert_ne!(b.fusion, frozen.fusion);
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let cfg_scene = toy_config(0);
    let data = observed_dataset(&cfg_scene, 0..3);
    let table = toy_embeddings();
    let mut cfg = small_cfg();
    cfg.phase1.epochs = 2;
    cfg.phase2.epochs = 1;
    let run = || {
        let mut b = ModelBundle::init(&cfg, table.dim(), 4, 32).unwrap();
        train_phase1(&data, &table, &mut b, &cfg).unwrap();
        let ModelBundle { experiential, predictor, fusion } = &mut b;
        train_phase2(&data, &table, &toy_relevance(&[0]), experiential, predictor, fusion, &cfg).unwrap();
        b
    };
    let (a, b) = (run(), run());
    assert_eq!(a.to_checkpoint().content_hash(), b.to_checkpoint().content_hash());
    let ck = a.to_checkpoint();
    let back = ModelBundle::from_checkpoint(&ck, 32).unwrap();
    assert_eq!(back, a);
    let text = ck.to_json();
    let parsed = loat::nn::Checkpoint::parse(&text, std::path::Path::new("mem")).unwrap();
    assert_eq!(parsed.content_hash(), ck.content_hash());
}

#[test]
fn adversarial_dataset_raises_gamma() {
    let g = adversarial_gamma();
    assert!(g > 0.5, "gamma {g}");
}

#[test]
fn familiar_dataset_lowers_gamma() {
    let g = familiar_gamma();
    assert!(g < 0.5, "gamma {g}");
}

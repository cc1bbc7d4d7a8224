//! Small controlled worlds shared by the training tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use loat::affinity::GeneralizedTable;
use loat::embeddings::EmbeddingTable;
use loat::sim::agent::TEMPORAL_DIM;
use loat::sim::{generate_scene, household, RoomType, SceneConfig};
use loat::train::{
    make_dataset, mean_gamma, mean_phase1_loss, train_phase1, train_phase2, Dataset, ModelBundle, Sample, TrainConfig,
};

pub const TOY_ANCHORS: usize = 4;

pub fn anchor(i: usize) -> String {
    format!("A{}", i % TOY_ANCHORS)
}

pub fn target(i: usize) -> String {
    format!("T{i}")
}

/// Two rooms on a 32-grid, one of each anchor; target `Ti` sits next to anchor `A(i+shift)`.
pub fn toy_config(shift: usize) -> SceneConfig {
    let placement: BTreeMap<String, Vec<(String, f64)>> =
        (0..TOY_ANCHORS).map(|i| (target(i), vec![(anchor(i + shift), 1.0)])).collect();
    SceneConfig {
        grid_size: 32,
        rooms: 2,
        min_room_size: 10,
        door_width: 2,
        room_types: vec![
            RoomType {
                name: "left".into(),
                anchors: vec![anchor(0), anchor(1)],
            },
            RoomType {
                name: "right".into(),
                anchors: vec![anchor(2), anchor(3)],
            },
        ],
        vocabulary: (0..TOY_ANCHORS).map(anchor).collect(),
        targets: (0..TOY_ANCHORS).map(target).collect(),
        placement,
        r_place: 2,
        r_view: 5,
        target_view: None,
        false_negative_rate: 0.0,
    }
}

/// One-hot embeddings: targets on the first axes, anchors on the next ones.
pub fn toy_embeddings() -> EmbeddingTable {
    let dim = 2 * TOY_ANCHORS;
    let mut t = EmbeddingTable::new(dim, "one-hot").unwrap();
    for i in 0..TOY_ANCHORS {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        t.insert(&target(i), v).unwrap();
        let mut v = vec![0.0; dim];
        v[TOY_ANCHORS + i] = 1.0;
        t.insert(&anchor(i), v).unwrap();
    }
    t
}

/// `Ti` related to anchors `A(i+o)` for each offset `o`.
pub fn toy_relevance(offsets: &[usize]) -> GeneralizedTable {
    let mut g = GeneralizedTable::new("toy");
    for i in 0..TOY_ANCHORS {
        g = g.with_target(&target(i), offsets.iter().map(|o| anchor(i + o)));
    }
    g
}

/// Fully observed snapshots: every anchor visible, one sample per (scene, target).
pub fn observed_dataset(cfg: &SceneConfig, seeds: std::ops::Range<u64>) -> Dataset {
    let n = cfg.grid_size;
    let mut samples = Vec::new();
    for seed in seeds {
        let scene = generate_scene(cfg, seed).unwrap();
        let mut map_cells = Vec::new();
        for (c, name) in cfg.vocabulary.iter().enumerate() {
            for &cell in scene.cells_of(name) {
                map_cells.push((c as u16, scene.index(cell) as u32));
            }
        }
        let mut temporal = vec![0.0; TEMPORAL_DIM];
        temporal[1] = 1.0;
        for t in &cfg.targets {
            samples.push(Sample {
                scene_seed: seed,
                target: t.clone(),
                label: scene.index(scene.cells_of(t)[0]),
                map_cells: map_cells.clone(),
                observed: vec![true; n * n],
                obstacles: scene.occupancy.clone(),
                temporal: temporal.clone(),
            });
        }
    }
    Dataset {
        grid_size: n,
        vocabulary: cfg.vocabulary.clone(),
        samples,
    }
}

pub fn small_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.predictor_hidden = 4;
    cfg.d_k = 8;
    cfg
}

/// Phase-1 loss before and after fitting three targets of one 32-grid scene.
pub fn single_scene_overfit() -> (f64, f64) {
    let mut scene_cfg = household::train_config();
    scene_cfg.grid_size = 32;
    scene_cfg.rooms = 2;
    let targets: Vec<String> = ["Cup", "Pillow", "Book"].iter().map(|s| s.to_string()).collect();
    let data = make_dataset(&scene_cfg, &[4], Some(&targets), 40, 150, 0).unwrap();
    let table = household::embedding_table();
    let mut cfg = small_cfg();
    cfg.batch_size = data.len();
    cfg.phase1.learning_rate = 1e-2;
    cfg.phase1.epochs = 300;
    let mut b = ModelBundle::init(&cfg, table.dim(), scene_cfg.vocabulary.len(), 32).unwrap();
    let before = mean_phase1_loss(&data, &table, &b, 0.0).unwrap();
    train_phase1(&data, &table, &mut b, &cfg).unwrap();
    let after = mean_phase1_loss(&data, &table, &b, 0.0).unwrap();
    (before, after)
}

/// Phase 1 then phase 2 on a toy world; returns the bundle before and after phase 2.
pub fn phase2_snapshots() -> (ModelBundle, ModelBundle) {
    let data = observed_dataset(&toy_config(0), 0..4);
    let table = toy_embeddings();
    let mut cfg = small_cfg();
    cfg.phase1.epochs = 1;
    cfg.phase2.epochs = 2;
    cfg.phase2.learning_rate = 1e-2;
    let mut b = ModelBundle::init(&cfg, table.dim(), TOY_ANCHORS, 32).unwrap();
    train_phase1(&data, &table, &mut b, &cfg).unwrap();
    let frozen = b.clone();
    let ModelBundle { experiential, predictor, fusion } = &mut b;
    train_phase2(&data, &table, &toy_relevance(&[0, 1]), experiential, predictor, fusion, &cfg).unwrap();
    (frozen, b)
}

/// Phase 1 on the familiar placements, then phase 2 on `phase2_shift` placements.
pub fn learned_gamma(phase2_shift: usize, offsets: &[usize]) -> f64 {
    let table = toy_embeddings();
    let mut cfg = small_cfg();
    cfg.phase1.learning_rate = 1e-2;
    cfg.phase1.epochs = 12;
    cfg.phase2.learning_rate = 1e-2;
    cfg.phase2.epochs = 6;
    let familiar = observed_dataset(&toy_config(0), 0..40);
    let mut b = ModelBundle::init(&cfg, table.dim(), TOY_ANCHORS, 32).unwrap();
    train_phase1(&familiar, &table, &mut b, &cfg).unwrap();
    let data = observed_dataset(&toy_config(phase2_shift), 100..140);
    let ModelBundle { experiential, predictor, fusion } = &mut b;
    train_phase2(&data, &table, &toy_relevance(offsets), experiential, predictor, fusion, &cfg).unwrap();
    mean_gamma(&data, &b.fusion).unwrap()
}

/// Placements moved to the next anchor; relevance names exactly that anchor.
pub fn adversarial_gamma() -> f64 {
    learned_gamma(1, &[1])
}

/// Unchanged placements; relevance is diluted over three anchors.
pub fn familiar_gamma() -> f64 {
    learned_gamma(0, &[0, 1, 2])
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loat::nn::Checkpoint;
use loat::train::{ModelBundle, TrainConfig};

fn loat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loat"))
        .args(args)
        .env_remove("LOAT_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_train_config(dir: &Path) -> PathBuf {
    let mut cfg = TrainConfig::default();
    cfg.train_scenes = 1;
    cfg.val_scenes = 0;
    cfg.predictor_hidden = 2;
    cfg.max_prefix = 30;
    cfg.phase1.epochs = 1;
    cfg.phase2.epochs = 1;
    let path = dir.join("train.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn bad_scene_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = loat::sim::household::train_config();
    cfg.grid_size = 8;
    let path = dir.path().join("bad.json");
    fs::write(&path, cfg.to_json()).unwrap();
    let out = loat(&["gen-scenes", "--config", s(&path), "--seeds", "0..2", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid_size"));

    fs::write(&path, r#"{"grid_size": 64, "rooms": 2, "bogus": 1}"#).unwrap();
    let out = loat(&["gen-scenes", "--config", s(&path), "--seeds", "0..2", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = loat(&["gen-scenes", "--seeds", "3..1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsatisfiable_scene_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = loat::sim::household::train_config();
    cfg.rooms = 17;
    cfg.min_room_size = 13;
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_json()).unwrap();
    let out = loat(&["gen-scenes", "--config", s(&path), "--seeds", "0..1", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_scenes_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&loat(&["gen-scenes", "--preset", "shifted", "--seeds", "5..8", "--out", s(d)]));
    }
    for seed in 5..8 {
        let name = format!("scene_{seed:06}.bin");
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)));
    }
    let m = loat::manifest::RunManifest::load(&a.join("manifest.json")).unwrap();
    assert_eq!(m.args[0], "gen-scenes");
    assert_eq!(m.outputs.len(), 3);
    let scene = loat::sim::Scene::read_snapshot(&mut read(&a.join("scene_000006.bin")).as_slice(), 16).unwrap();
    let cfg = loat::sim::household::Split::Shifted.config();
    assert_eq!(scene.occupancy, loat::sim::generate_scene(&cfg, 6).unwrap().occupancy);
}

#[test]
fn scores_single_object_and_fallback_warning() {
    let out = loat(&["scores", "--target", "Cup", "--vocab", "Sink", "--gamma", "0.3"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("A_E   [1.000000]"), "{text}");
    assert!(text.contains("A_G   [1.000000]"), "{text}");
    assert!(text.contains("A_F   [1.000000]"), "{text}");
    // Sink is relevant to Cup in the bundled table
    assert!(text.contains("A_MUL [1.000000]"), "{text}");
    let out = loat(&["scores", "--target", "Cup", "--vocab", "Bed"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("A_MUL [0.000000]"));

    let out = loat(&["scores", "--target", "Zeppelin", "--vocab", "Sink,Bed,Sofa"]);
    ok(&out);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Zeppelin") && err.contains("fallback"), "{err}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("A_G   [0.333333, 0.333333, 0.333333]"), "{text}");

    assert_eq!(loat(&["scores", "--target", "Cup", "--vocab", "Sink", "--gamma", "2"]).status.code(), Some(2));
    assert_eq!(loat(&["scores", "--target", "Cup", "--vocab", "Sink,Sink"]).status.code(), Some(2));
}

#[test]
fn data_dir_tables_are_used_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let tables = dir.path().join("tables");
    ok(&loat(&["tables", "--out", s(&tables)]));
    // restrict Cup's relevance to Bed only
    let rel = tables.join("relevance.json");
    let mut v: serde_json::Value = serde_json::from_slice(&read(&rel)).unwrap();
    let entries = v.as_object_mut().unwrap().values_mut().find(|x| x.is_object()).unwrap();
    entries["Cup"] = serde_json::json!(["Bed"]);
    fs::write(&rel, serde_json::to_string(&v).unwrap()).unwrap();

    let out_dir = dir.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_loat"))
        .args(["scores", "--target", "Cup", "--vocab", "Sink,Bed", "--out", s(&out_dir)])
        .env("LOAT_DATA_DIR", &tables)
        .output()
        .unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("A_G   [0.000000, 1.000000]"));
    let m = loat::manifest::RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(m.inputs.len(), 2);
    assert!(out_dir.join("scores.json").exists());
}

#[test]
fn phase_split_matches_full_run_and_phase2_needs_phase1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_train_config(dir.path());
    let (split, full) = (dir.path().join("split"), dir.path().join("full"));
    let out = loat(&["train", "--phase", "2", "--config", s(&cfg), "--out", s(&split)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase-1"));

    ok(&loat(&["train", "--phase", "1", "--config", s(&cfg), "--out", s(&split)]));
    assert!(split.join("phase1.json").exists() && !split.join("model.json").exists());
    ok(&loat(&["train", "--phase", "2", "--config", s(&cfg), "--out", s(&split)]));
    ok(&loat(&["train", "--phase", "all", "--config", s(&cfg), "--out", s(&full)]));
    let hash = |p: PathBuf| Checkpoint::load(p).unwrap().content_hash();
    assert_eq!(hash(split.join("model.json")), hash(full.join("model.json")));
    assert_eq!(hash(split.join("phase1.json")), hash(full.join("phase1.json")));
    assert_eq!(read(&split.join("loss_phase2.csv")), read(&full.join("loss_phase2.csv")));
    assert!(String::from_utf8_lossy(&read(&full.join("loss_phase1.csv"))).starts_with("step,phase,loss\n"));
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = tiny_train_config(dir.path());
    let out = dir.path().join("run");
    ok(&loat(&["train", "--config", s(&cfg_path), "--lr", "0", "--out", s(&out)]));
    let cfg: TrainConfig = serde_json::from_slice(&read(&cfg_path)).unwrap();
    let scene = loat::sim::household::train_config();
    let init = ModelBundle::init(&cfg, loat::sim::household::EMBEDDING_DIM, scene.vocabulary.len(), scene.grid_size).unwrap();
    let trained = Checkpoint::load(out.join("model.json")).unwrap();
    assert_eq!(trained.content_hash(), init.to_checkpoint().content_hash());
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let cfg = tiny_train_config(dir);
    let out = dir.join("model");
    ok(&loat(&["train", "--config", s(&cfg), "--out", s(&out)]));
    out.join("model.json")
}

#[test]
fn eval_outputs_are_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(dir.path());
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let o = loat(&[
            "eval", "--checkpoint", s(&ck), "--episodes", "6", "--step-budget", "40", "--jobs", jobs, "--out", s(&out),
        ]);
        ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("SR"));
        out
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "3"));
    for f in ["metrics.csv", "episodes.jsonl", "summary.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
        assert_eq!(read(&a.join(f)), read(&c.join(f)), "{f} with --jobs 3");
    }
    let lines = String::from_utf8(read(&a.join("episodes.jsonl"))).unwrap();
    assert_eq!(lines.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for k in ["scene_seed", "target", "mode", "success", "goal_found", "path_len", "shortest_len", "steps"] {
        assert!(first.get(k).is_some(), "missing {k}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&read(&a.join("summary.json"))).unwrap();
    assert_eq!(summary["checkpoint_sha256"], loat::manifest::file_sha256(&ck).unwrap());
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);

    // replaying the manifest reproduces the outputs
    fs::remove_file(a.join("metrics.csv")).unwrap();
    ok(&loat(&["replay", "--manifest", s(&a.join("manifest.json"))]));
    assert_eq!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")));
    // a changed input is refused
    let mut bytes = read(&ck);
    bytes.push(b'\n');
    fs::write(&ck, bytes).unwrap();
    assert_eq!(loat(&["replay", "--manifest", s(&a.join("manifest.json"))]).status.code(), Some(2));
}

#[test]
fn eval_ablation_ood_and_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint(dir.path());
    let out = dir.path().join("e");
    ok(&loat(&[
        "eval", "--checkpoint", s(&ck), "--episodes", "2", "--step-budget", "20", "--ablation", "--ood", "--maps", "2",
        "--targets", "Umbrella,Comb", "--heatmap", "2", "--out", s(&out),
    ]));
    let csv = String::from_utf8(read(&out.join("ablation.csv"))).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for split in ["seen", "shifted"] {
        for cfg in ["gamma=0", "gamma=0.5", "gamma=1", "dynamic", "loat_mul", "uniform"] {
            assert!(rows.iter().any(|r| r.starts_with(&format!("{split},{cfg},"))), "{split} {cfg}");
        }
    }
    let ood = String::from_utf8(read(&out.join("ood.csv"))).unwrap();
    // two modes x two maps x two targets
    assert_eq!(ood.lines().count(), 1 + 8);
    for i in 0..2 {
        let pgm = read(&out.join(format!("heatmap_{i:03}.pgm")));
        assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(pgm.len(), 13 + 64 * 64);
        let c = loat::maps::read_container(&mut read(&out.join(format!("heatmap_{i:03}.bin"))).as_slice()).unwrap();
        assert_eq!((c.height, c.width), (64, 64));
    }
    let sal = String::from_utf8(read(&out.join("saliency.csv"))).unwrap();
    assert_eq!(sal.lines().count(), 1 + 2 * 16);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(loat(&["eval", "--checkpoint", "/nonexistent/model.json", "--out", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(loat(&["train", "--phase", "3", "--out", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(loat(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    fs::write(&ck, "{not json").unwrap();
    let out = loat(&["eval", "--checkpoint", s(&ck), "--mode", "loat_avg", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = loat(&["eval", "--checkpoint", s(&ck), "--mode", "sideways", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(loat(&["--help"]).status.success());
}

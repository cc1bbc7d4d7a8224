//! Command-line front end. Every subcommand records a run manifest before it
//! writes anything else, and `replay` re-runs a recorded invocation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::affinity::{ExperientialParams, experiential_scores, fuse, gate, generalized_scores, AffinityQuery, GeneralizedTable};
use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};
use crate::eval::{self, probe, BenchmarkConfig};
use crate::manifest::{file_sha256, sha256_hex, RunManifest};
use crate::maps::write_container;
use crate::nn::Checkpoint;
use crate::policy::graph::graph_benchmark;
use crate::policy::{EpisodeConfig, Mode, Modules};
use crate::sim::household::{self, Split};
use crate::sim::{generate_scene, SceneConfig};
use crate::train::{self, ModelBundle, TrainConfig};

pub const DATA_DIR_ENV: &str = "LOAT_DATA_DIR";
pub const PHASE1_FILE: &str = "phase1.json";
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Parser)]
#[command(name = "loat", version, about = "Object-affinity map activation for object-goal navigation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scene snapshots over a seed range
    GenScenes(GenScenesArgs),
    /// Two-phase training; writes checkpoints and loss curves
    Train(TrainArgs),
    /// Benchmark episodes, ablations, OOD prediction and saliency heatmaps
    Eval(EvalArgs),
    /// Print experiential, generalized, fused and gated scores for one target
    Scores(ScoresArgs),
    /// Re-run the invocation recorded in a manifest
    Replay(ReplayArgs),
    /// Export the bundled embedding and relevance tables
    Tables(TablesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Train,
    Seen,
    Shifted,
}

impl Preset {
    fn split(self) -> Split {
        match self {
            Preset::Train => Split::Train,
            Preset::Seen => Split::Seen,
            Preset::Shifted => Split::Shifted,
        }
    }
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Embedding table JSON (default: $LOAT_DATA_DIR/embeddings.json, else bundled)
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Relevance table JSON (default: $LOAT_DATA_DIR/relevance.json, else bundled)
    #[arg(long)]
    pub relevance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    /// Scene config JSON; overrides --preset
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    pub preset: Preset,
    /// Half-open seed range `a..b`
    #[arg(long, value_parser = parse_range)]
    pub seeds: Range<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub phase: Phase,
    /// Training config JSON (defaults when absent)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene config JSON (default: training preset)
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
    /// Learning rate for the phase(s) being run
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs for the phase(s) being run
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_scenes: Option<usize>,
    /// Phase-1 checkpoint for `--phase 2` (default: <out>/phase1.json)
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub tables: TableArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// loat_avg, loat_avg_gamma_<g>, loat_mul, experiential_only, generalized_only, uniform
    #[arg(long, default_value = "loat_avg")]
    pub mode: String,
    #[arg(long, value_enum, default_value = "shifted")]
    pub split: Preset,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = EpisodeConfig::default().step_budget)]
    pub step_budget: usize,
    /// Run all six configurations on the seen and shifted splits
    #[arg(long)]
    pub ablation: bool,
    /// Nearest-anchor prediction for unseen targets on fully observed maps
    #[arg(long)]
    pub ood: bool,
    /// Comma-separated OOD targets (default: all held-out targets)
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    /// Number of generated maps for --ood
    #[arg(long, default_value_t = 50)]
    pub maps: usize,
    /// Export saliency heatmaps for the first N benchmark tasks
    #[arg(long)]
    pub heatmap: Option<usize>,
    /// Topological-graph benchmark
    #[arg(long)]
    pub graph: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub tables: TableArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoresArgs {
    #[arg(long)]
    pub target: String,
    /// Comma-separated map objects
    #[arg(long, value_delimiter = ',', required = true)]
    pub vocab: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Trained checkpoint; a seeded initialization is used otherwise
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tables: TableArgs,
    /// Directory for the manifest and scores.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected `a..b`, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if b <= a {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(a..b)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LoatError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| LoatError::io(path, e))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn config_hash(v: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(v).expect("value serializes").as_bytes())
}

/// Tables plus the files they came from (for the manifest).
struct Tables {
    embeddings: EmbeddingTable,
    relevance: GeneralizedTable,
    sources: Vec<PathBuf>,
}

fn resolve_table(flag: &Option<PathBuf>, file: &str) -> Option<PathBuf> {
    if let Some(p) = flag {
        return Some(p.clone());
    }
    let dir = std::env::var_os(DATA_DIR_ENV)?;
    let p = Path::new(&dir).join(file);
    p.exists().then_some(p)
}

fn load_tables(args: &TableArgs) -> Result<Tables> {
    let mut sources = Vec::new();
    let embeddings = match resolve_table(&args.embeddings, "embeddings.json") {
        Some(p) => {
            sources.push(p.clone());
            EmbeddingTable::load(&p)?
        }
        None => household::embedding_table(),
    };
    let relevance = match resolve_table(&args.relevance, "relevance.json") {
        Some(p) => {
            sources.push(p.clone());
            GeneralizedTable::load(&p)?
        }
        None => household::relevance_table(),
    };
    Ok(Tables {
        embeddings,
        relevance,
        sources,
    })
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(LoatError::InvalidArgument("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| LoatError::InvalidArgument(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Parses `args` (without the program name) and runs the command.
pub fn run_args(args: &[String]) -> Result<()> {
    let argv = std::iter::once("loat".to_string()).chain(args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| LoatError::InvalidArgument(e.to_string()))?;
    run(cli, args.to_vec())
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    match cli.command {
        Command::GenScenes(a) => gen_scenes(a, args),
        Command::Train(a) => {
            let jobs = a.jobs;
            with_jobs(jobs, move || train_cmd(a, args))
        }
        Command::Eval(a) => {
            let jobs = a.jobs;
            with_jobs(jobs, move || eval_cmd(a, args))
        }
        Command::Scores(a) => scores_cmd(a, args),
        Command::Replay(a) => replay(a),
        Command::Tables(a) => tables_cmd(a, args),
    }
}

fn scene_config(path: &Option<PathBuf>, preset: Preset) -> Result<SceneConfig> {
    match path {
        Some(p) => SceneConfig::load(p),
        None => Ok(preset.split().config()),
    }
}

fn gen_scenes(a: GenScenesArgs, args: Vec<String>) -> Result<()> {
    let cfg = scene_config(&a.config, a.preset)?;
    cfg.validate()?;
    let mut m = RunManifest::new(args, to_value(&cfg)).seed("first_seed", a.seeds.start);
    m.seeds.insert("end_seed".into(), a.seeds.end);
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    let paths: Vec<PathBuf> = a.seeds.clone().map(|s| a.out.join(format!("scene_{s:06}.bin"))).collect();
    paths.iter().for_each(|p| m.output(p));
    m.write(&a.out)?;
    for (seed, path) in a.seeds.clone().zip(&paths) {
        let scene = generate_scene(&cfg, seed)?;
        let mut bytes = Vec::new();
        scene.write_snapshot(&mut bytes)?;
        write_file(path, bytes)?;
    }
    println!("wrote {} scenes to {}", paths.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    phase: String,
    config_hash: String,
    train_samples: usize,
    validation_loss: Option<f64>,
    mean_gamma: Option<f64>,
    checkpoint_sha256: String,
}

fn train_cmd(a: TrainArgs, args: Vec<String>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p).map_err(|e| LoatError::io(p, e))?)?,
        None => TrainConfig::default(),
    };
    let scene_cfg = scene_config(&a.scene_config, Preset::Train)?;
    let (run1, run2) = match a.phase {
        Phase::One => (true, false),
        Phase::Two => (false, true),
        Phase::All => (true, true),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.train_scenes {
        cfg.train_scenes = n;
    }
    for (run, phase) in [(run1, &mut cfg.phase1), (run2, &mut cfg.phase2)] {
        if run {
            if let Some(lr) = a.lr {
                phase.learning_rate = lr;
            }
            if let Some(e) = a.epochs {
                phase.epochs = e;
            }
        }
    }
    cfg.validate()?;
    scene_cfg.validate()?;
    let tables = load_tables(&a.tables)?;
    let missing = scene_cfg.missing_embeddings(&tables.embeddings);
    if !missing.is_empty() {
        eprintln!("warning: no embedding for {}; using hash fallback", missing.join(", "));
    }
    let from = a.from.clone().unwrap_or_else(|| a.out.join(PHASE1_FILE));
    if run2 && !run1 && !from.exists() {
        return Err(LoatError::InvalidArgument(format!(
            "phase 2 needs a phase-1 checkpoint; {} does not exist (run `train --phase 1` first)",
            from.display()
        )));
    }

    let config = serde_json::json!({ "train": cfg, "scene": scene_cfg });
    let mut m = RunManifest::new(args, config.clone()).seed("seed", cfg.seed);
    for p in tables.sources.iter().chain(a.config.iter()).chain(a.scene_config.iter()) {
        m.input(p)?;
    }
    if run2 && !run1 {
        m.input(&from)?;
    }
    let p1_path = a.out.join(PHASE1_FILE);
    let model_path = a.out.join(MODEL_FILE);
    let summary_path = a.out.join("train_summary.json");
    if run1 {
        m.output(&p1_path);
        m.output(&a.out.join("loss_phase1.csv"));
    }
    if run2 {
        m.output(&model_path);
        m.output(&a.out.join("loss_phase2.csv"));
    }
    m.output(&summary_path);
    m.write(&a.out)?;

    let data = train::training_dataset(&scene_cfg, &cfg)?;
    let val = train::validation_dataset(&scene_cfg, &cfg)?;
    let mut bundle = if run1 {
        ModelBundle::init(&cfg, tables.embeddings.dim(), scene_cfg.vocabulary.len(), scene_cfg.grid_size)?
    } else {
        ModelBundle::from_checkpoint(&Checkpoint::load(&from)?, scene_cfg.grid_size)?
    };
    let mut summary = TrainSummary {
        phase: format!("{:?}", a.phase).to_lowercase(),
        config_hash: config_hash(&config),
        train_samples: data.len(),
        validation_loss: None,
        mean_gamma: None,
        checkpoint_sha256: String::new(),
    };
    if run1 {
        let losses = train::train_phase1(&data, &tables.embeddings, &mut bundle, &cfg)?;
        write_file(&a.out.join("loss_phase1.csv"), train::loss_csv(&losses))?;
        let ck = bundle.to_checkpoint();
        ck.save(&p1_path)?;
        summary.checkpoint_sha256 = file_sha256(&p1_path)?;
        if let Some(v) = &val {
            summary.validation_loss = Some(train::mean_phase1_loss(v, &tables.embeddings, &bundle, cfg.label_sigma)?);
        }
        println!(
            "phase 1: {} steps, final batch loss {:.4}",
            losses.len(),
            losses.last().map_or(f64::NAN, |l| l.loss)
        );
    }
    if run2 {
        let before = bundle.frozen_hash();
        let ModelBundle {
            experiential,
            predictor,
            fusion,
        } = &mut bundle;
        let losses =
            train::train_phase2(&data, &tables.embeddings, &tables.relevance, experiential, predictor, fusion, &cfg)?;
        if bundle.frozen_hash() != before {
            return Err(LoatError::InvalidArgument("phase 2 modified frozen parameters".into()));
        }
        write_file(&a.out.join("loss_phase2.csv"), train::loss_csv(&losses))?;
        bundle.to_checkpoint().save(&model_path)?;
        summary.checkpoint_sha256 = file_sha256(&model_path)?;
        let g = train::mean_gamma(&data, &bundle.fusion)?;
        summary.mean_gamma = Some(g);
        println!(
            "phase 2: {} steps, final batch loss {:.4}, mean gamma {:.4}",
            losses.len(),
            losses.last().map_or(f64::NAN, |l| l.loss),
            g
        );
    }
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&summary_path, text)
}

fn load_bundle(path: &Path, grid_size: usize) -> Result<ModelBundle> {
    if !path.exists() {
        return Err(LoatError::InvalidArgument(format!("checkpoint {} does not exist", path.display())));
    }
    ModelBundle::from_checkpoint(&Checkpoint::load(path)?, grid_size)
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    config_hash: String,
    checkpoint_sha256: String,
    metrics: Option<&'a eval::Metrics>,
    ablation: Option<&'a [eval::AblationRow]>,
    ood_hit_rate: BTreeMap<String, f64>,
    graph: Vec<(String, f64, f64)>,
}

fn eval_cmd(a: EvalArgs, args: Vec<String>) -> Result<()> {
    let mode: Mode = a.mode.parse()?;
    let tables = load_tables(&a.tables)?;
    let split = a.split.split();
    let scene_cfg = split.config();
    let bundle = load_bundle(&a.checkpoint, scene_cfg.grid_size)?;
    let mut bench = BenchmarkConfig::for_split(split, &scene_cfg, a.episodes, a.seed);
    bench.episode.step_budget = a.step_budget;
    if a.episodes == 0 {
        return Err(LoatError::InvalidArgument("--episodes must be positive".into()));
    }
    let ood_targets = if a.targets.is_empty() {
        household::held_out_targets()
    } else {
        a.targets.clone()
    };

    let config = serde_json::json!({
        "mode": mode.to_string(),
        "split": split.name(),
        "bench": bench,
        "ablation": a.ablation,
        "ood": a.ood.then(|| serde_json::json!({"targets": ood_targets, "maps": a.maps})),
        "heatmap": a.heatmap,
        "graph": a.graph,
    });
    let mut m = RunManifest::new(args, config.clone()).seed("seed", a.seed);
    m.input(&a.checkpoint)?;
    for p in &tables.sources {
        m.input(p)?;
    }
    let out = |f: &str| a.out.join(f);
    let mut outputs = vec![out("summary.json")];
    if a.ablation {
        outputs.extend([out("ablation.csv"), out("episodes.jsonl")]);
    } else {
        outputs.extend([out("metrics.csv"), out("episodes.jsonl")]);
    }
    if a.ood {
        outputs.push(out("ood.csv"));
    }
    if let Some(n) = a.heatmap {
        outputs.push(out("saliency.csv"));
        for i in 0..n {
            outputs.extend([out(&format!("heatmap_{i:03}.pgm")), out(&format!("heatmap_{i:03}.bin"))]);
        }
    }
    outputs.iter().for_each(|p| m.output(p));
    m.write(&a.out)?;

    let modules = Modules {
        embeddings: &tables.embeddings,
        experiential: &bundle.experiential,
        gtable: &tables.relevance,
        fusion: Some(&bundle.fusion),
        predictor: &bundle.predictor,
    };
    let mut metrics = None;
    let mut ablation = None;
    if a.ablation {
        let splits: Vec<_> = [Split::Seen, Split::Shifted]
            .into_iter()
            .map(|s| {
                let c = s.config();
                let mut b = BenchmarkConfig::for_split(s, &c, a.episodes, a.seed);
                b.episode.step_budget = a.step_budget;
                (s, c, b)
            })
            .collect();
        let (rows, episodes) = eval::ablation_suite(&splits, modules)?;
        write_file(&out("ablation.csv"), eval::ablation_csv(&rows))?;
        write_file(&out("episodes.jsonl"), eval::bench::episodes_jsonl(&episodes))?;
        print!("{}", eval::ablation_table(&rows));
        ablation = Some(rows);
    } else {
        let (tasks, scenes) = eval::plan_tasks(&scene_cfg, &bench)?;
        let episodes = eval::run_tasks(&tasks, &scenes, modules, mode, &bench.episode)?;
        let mm = eval::compute_metrics(&episodes)?;
        let csv = format!(
            "mode,split,sr,spl,gfr,episodes\n{},{},{:.6},{:.6},{:.6},{}\n",
            mode,
            split.name(),
            mm.sr,
            mm.spl,
            mm.gfr,
            mm.n_episodes
        );
        write_file(&out("metrics.csv"), &csv)?;
        write_file(&out("episodes.jsonl"), eval::bench::episodes_jsonl(&episodes))?;
        println!(
            "{mode} on {}: SR {:.1}  SPL {:.3}  GFR {:.1}  ({} episodes)",
            split.name(),
            100.0 * mm.sr,
            mm.spl,
            100.0 * mm.gfr,
            mm.n_episodes
        );
        metrics = Some(mm);
    }

    let mut ood_hit_rate = BTreeMap::new();
    if a.ood {
        let ood_cfg = Split::Shifted.config();
        let maps: Vec<_> = (0..a.maps as u64)
            .map(|k| probe::scene_semantic_map(&generate_scene(&ood_cfg, OOD_SEED_BASE + k)?))
            .collect::<Result<_>>()?;
        let mut csv = String::from("mode,map,target,argmax_row,argmax_col,nearest_object,distance,hit\n");
        for md in [mode, Mode::ExperientialOnly] {
            let recs = probe::ood_predict(&maps, &ood_targets, modules, md)?;
            for r in &recs {
                writeln!(
                    csv,
                    "{md},{},{},{},{},{},{:.6},{}",
                    r.map_index,
                    r.target,
                    r.argmax.0,
                    r.argmax.1,
                    r.nearest_object.as_deref().unwrap_or(""),
                    r.distance,
                    r.hit
                )
                .expect("string write");
            }
            let rate = probe::hit_rate(&recs);
            println!("ood {md}: hit rate {:.3} over {} predictions", rate, recs.len());
            ood_hit_rate.insert(md.to_string(), rate);
        }
        write_file(&out("ood.csv"), csv)?;
    }

    if let Some(n) = a.heatmap {
        let (tasks, scenes) = eval::plan_tasks(&scene_cfg, &bench)?;
        let mut csv = String::from("task,target,channel,saliency,relevant\n");
        for (i, t) in tasks.iter().take(n).enumerate() {
            let map = probe::scene_semantic_map(&scenes[&t.scene_seed])?;
            let (scores, _) = probe::static_scores(&map, &t.target, modules, mode)?;
            let heat = probe::attention_heatmap(modules.predictor, &map, &scores, &vec![1.0; map.height() * map.width()])?;
            if heat.degenerate {
                eprintln!("warning: task {i} has an all-equal gradient; heatmap is flat");
            }
            write_file(&out(&format!("heatmap_{i:03}.pgm")), probe::to_pgm(&heat))?;
            let mut bytes = Vec::new();
            let grid: Vec<f32> = heat.grid.iter().map(|&v| v as f32).collect();
            write_container(&mut bytes, &["heat".to_string()], heat.height, heat.width, &grid)?;
            write_file(&out(&format!("heatmap_{i:03}.bin")), bytes)?;
            for (c, name) in map.channels().iter().enumerate() {
                writeln!(
                    csv,
                    "{i},{},{name},{:.9e},{}",
                    t.target,
                    heat.saliency[c],
                    tables.relevance.is_relevant(name, &t.target)
                )
                .expect("string write");
            }
        }
        write_file(&out("saliency.csv"), csv)?;
    }

    let mut graph = Vec::new();
    if a.graph {
        let targets: Vec<&str> = household::SEEN_TARGETS.iter().map(|t| t.0).collect();
        for row in graph_benchmark(&household::ROOM_TYPES, &targets, &tables.relevance, 200, a.seed)? {
            println!("graph {}: success {:.3}, mean hops {:.2}", row.label, row.success_rate, row.mean_hops);
            graph.push((row.label, row.success_rate, row.mean_hops));
        }
    }

    let summary = EvalSummary {
        config_hash: config_hash(&config),
        checkpoint_sha256: file_sha256(&a.checkpoint)?,
        metrics: metrics.as_ref(),
        ablation: ablation.as_deref(),
        ood_hit_rate,
        graph,
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&out("summary.json"), text)
}

/// First scene seed of the OOD probe maps.
pub const OOD_SEED_BASE: u64 = 3_000_000;

fn fmt_scores(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn scores_cmd(a: ScoresArgs, args: Vec<String>) -> Result<()> {
    if !(0.0..=1.0).contains(&a.gamma) {
        return Err(LoatError::InvalidArgument(format!("--gamma {} outside [0, 1]", a.gamma)));
    }
    let tables = load_tables(&a.tables)?;
    if !tables.embeddings.contains(&a.target) {
        eprintln!("warning: `{}` has no embedding; using the hash fallback", a.target);
    }
    for o in &a.vocab {
        if !tables.embeddings.contains(o) {
            eprintln!("warning: `{o}` has no embedding; using the hash fallback");
        }
    }
    let experiential = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ExperientialParams::new(ck.get("experiential.w_q")?.clone(), ck.get("experiential.w_k")?.clone())?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            ExperientialParams::random(tables.embeddings.dim(), TrainConfig::default().d_k, &mut rng)
        }
    };
    let query = AffinityQuery::new(a.target.clone(), a.vocab.clone())?;
    let a_e = experiential_scores(&experiential, &tables.embeddings, &query)?;
    let a_g = generalized_scores(&tables.relevance, &query);
    let a_f = fuse(a.gamma, &a_g, &a_e)?;
    let a_mul = gate(&tables.relevance, &query, &a_e);

    #[derive(Serialize)]
    struct Out<'a> {
        target: &'a str,
        vocab: &'a [String],
        gamma: f64,
        a_e: &'a [f64],
        a_g: &'a [f64],
        a_f: &'a [f64],
        a_mul: &'a [f64],
    }
    let out = Out {
        target: &a.target,
        vocab: &a.vocab,
        gamma: a.gamma,
        a_e: a_e.values(),
        a_g: a_g.values(),
        a_f: a_f.values(),
        a_mul: a_mul.values(),
    };
    if let Some(dir) = &a.out {
        let mut m = RunManifest::new(args, to_value(&out)).seed("seed", a.seed);
        for p in tables.sources.iter().chain(a.checkpoint.iter()) {
            m.input(p)?;
        }
        m.output(&dir.join("scores.json"));
        m.write(dir)?;
        let mut text = serde_json::to_string_pretty(&out).expect("scores serialize");
        text.push('\n');
        write_file(&dir.join("scores.json"), text)?;
    }
    println!("objects: {}", a.vocab.join(", "));
    println!("A_E   {}", fmt_scores(a_e.values()));
    println!("A_G   {}", fmt_scores(a_g.values()));
    println!("A_F   {} (gamma {})", fmt_scores(a_f.values()), a.gamma);
    println!("A_MUL {}", fmt_scores(a_mul.values()));
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    if m.tool != env!("CARGO_PKG_NAME") {
        return Err(LoatError::malformed(&a.manifest, format!("manifest written by `{}`", m.tool)));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest version {} differs from {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    let changed = m.changed_inputs();
    if !changed.is_empty() {
        return Err(LoatError::InvalidArgument(format!("inputs changed since the run: {}", changed.join(", "))));
    }
    if m.args.first().is_some_and(|c| c == "replay") {
        return Err(LoatError::InvalidArgument("refusing to replay a replay".into()));
    }
    run_args(&m.args)
}

fn tables_cmd(a: TablesArgs, args: Vec<String>) -> Result<()> {
    let emb = household::embedding_table();
    let rel = household::relevance_table();
    let mut m = RunManifest::new(args, serde_json::json!({"embeddings": emb.model(), "relevance": "bundled"}));
    let (pe, pr) = (a.out.join("embeddings.json"), a.out.join("relevance.json"));
    m.output(&pe);
    m.output(&pr);
    m.write(&a.out)?;
    emb.save(&pe)?;
    rel.save(&pr)?;
    println!("wrote {} and {}", pe.display(), pr.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0..10").unwrap(), 0..10);
        assert!(parse_range("5..5").is_err());
        assert!(parse_range("x..3").is_err());
        assert!(parse_range("7").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{compute_metrics, Metrics};
use crate::error::{LoatError, Result};
use crate::policy::episode::shortest_to_target;
use crate::policy::{run_episode, Episode, EpisodeConfig, Gamma, Mode, Modules};
use crate::sim::household::Split;
use crate::sim::{generate_scene, Cell, Scene, SceneConfig};
use crate::train::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub episodes: usize,
    pub episodes_per_scene: usize,
    /// Scene seeds are `scene_seed_base + k`.
    pub scene_seed_base: u64,
    pub seed: u64,
    pub min_start_distance: usize,
    pub targets: Vec<String>,
    pub episode: EpisodeConfig,
}

impl BenchmarkConfig {
    pub fn for_split(split: Split, scene_cfg: &SceneConfig, episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            episodes_per_scene: 4,
            scene_seed_base: split.seed_base(),
            seed,
            min_start_distance: 12,
            targets: scene_cfg.targets.clone(),
            episode: EpisodeConfig {
                perception: scene_cfg.perception(),
                ..EpisodeConfig::default()
            },
        }
    }
}

/// One paired episode slot: identical for every configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTask {
    pub index: usize,
    pub scene_seed: u64,
    pub target: String,
    pub start: Cell,
    pub agent_seed: u64,
}

/// Deterministic (scene, target, start) slots, plus the generated scenes.
pub fn plan_tasks(scene_cfg: &SceneConfig, bench: &BenchmarkConfig) -> Result<(Vec<EpisodeTask>, BTreeMap<u64, Scene>)> {
    if bench.targets.is_empty() {
        return Err(LoatError::config("targets", "benchmark needs at least one target"));
    }
    if let Some(t) = bench.targets.iter().find(|t| !scene_cfg.targets.contains(t)) {
        return Err(LoatError::config("targets", format!("`{t}` is not placed by the scene config")));
    }
    let per = bench.episodes_per_scene.max(1);
    let n_scenes = bench.episodes.div_ceil(per);
    let seeds: Vec<u64> = (0..n_scenes as u64).map(|k| bench.scene_seed_base + k).collect();
    let scenes: Vec<Result<Scene>> = seeds.par_iter().map(|&s| generate_scene(scene_cfg, s)).collect();
    let mut by_seed = BTreeMap::new();
    for (s, sc) in seeds.iter().zip(scenes) {
        by_seed.insert(*s, sc?);
    }
    let mut tasks = Vec::with_capacity(bench.episodes);
    for index in 0..bench.episodes {
        let scene_seed = seeds[index / per];
        let scene = &by_seed[&scene_seed];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[bench.seed, scene_seed, index as u64]));
        let target = bench.targets.choose(&mut rng).expect("nonempty").clone();
        let free = scene.free_cells();
        let far: Vec<Cell> = free
            .iter()
            .copied()
            .filter(|&c| {
                shortest_to_target(scene, &target, c, bench.episode.r_succ).is_some_and(|d| d >= bench.min_start_distance)
            })
            .collect();
        let pool = if far.is_empty() { &free } else { &far };
        let start = *pool.choose(&mut rng).expect("scene has free cells");
        tasks.push(EpisodeTask {
            index,
            scene_seed,
            target,
            start,
            agent_seed: mix_seed(&[bench.seed, index as u64, 0xa9e7]),
        });
    }
    Ok((tasks, by_seed))
}

/// Runs every task under `mode`; results are in task order regardless of thread count.
pub fn run_tasks(
    tasks: &[EpisodeTask],
    scenes: &BTreeMap<u64, Scene>,
    modules: Modules<'_>,
    mode: Mode,
    cfg: &EpisodeConfig,
) -> Result<Vec<Episode>> {
    let out: Vec<Result<Episode>> = tasks
        .par_iter()
        .map(|t| run_episode(&scenes[&t.scene_seed], &t.target, t.start, modules, mode, cfg, t.agent_seed))
        .collect();
    out.into_iter().collect()
}

pub const ABLATION_ROWS: [(&str, Mode); 6] = [
    ("gamma=0", Mode::LoatAvg(Gamma::Fixed(0.0))),
    ("gamma=0.5", Mode::LoatAvg(Gamma::Fixed(0.5))),
    ("gamma=1", Mode::LoatAvg(Gamma::Fixed(1.0))),
    ("dynamic", Mode::LoatAvg(Gamma::Dynamic)),
    ("loat_mul", Mode::LoatMul),
    ("uniform", Mode::Uniform),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub split: String,
    pub config: String,
    pub metrics: Metrics,
    pub mean_gamma: Option<f64>,
}

/// Every ablation configuration on the same paired tasks of each split.
pub fn ablation_suite(
    splits: &[(Split, SceneConfig, BenchmarkConfig)],
    modules: Modules<'_>,
) -> Result<(Vec<AblationRow>, Vec<Episode>)> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (split, scene_cfg, bench) in splits {
        let (tasks, scenes) = plan_tasks(scene_cfg, bench)?;
        for (label, mode) in ABLATION_ROWS {
            let eps = run_tasks(&tasks, &scenes, modules, mode, &bench.episode)?;
            let gammas: Vec<f64> = eps.iter().flat_map(|e| e.gammas.iter().copied()).collect();
            rows.push(AblationRow {
                split: split.name().to_string(),
                config: label.to_string(),
                metrics: compute_metrics(&eps)?,
                mean_gamma: (!gammas.is_empty()).then(|| gammas.iter().sum::<f64>() / gammas.len() as f64),
            });
            all.extend(eps);
        }
    }
    Ok((rows, all))
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("split,config,sr,spl,gfr,episodes,mean_gamma\n");
    for r in rows {
        let g = r.mean_gamma.map(|g| format!("{g:.6}")).unwrap_or_default();
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{},{}",
            r.split, r.config, r.metrics.sr, r.metrics.spl, r.metrics.gfr, r.metrics.n_episodes, g
        )
        .expect("string write");
    }
    s
}

/// Aligned plain-text table for terminals.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<8} {:<10} {:>6} {:>6} {:>6} {:>6}\n", "split", "config", "SR", "SPL", "GFR", "gamma");
    for r in rows {
        let g = r.mean_gamma.map(|g| format!("{g:.3}")).unwrap_or_else(|| "-".into());
        writeln!(
            s,
            "{:<8} {:<10} {:>6.1} {:>6.3} {:>6.1} {:>6}",
            r.split,
            r.config,
            100.0 * r.metrics.sr,
            r.metrics.spl,
            100.0 * r.metrics.gfr,
            g
        )
        .expect("string write");
    }
    s
}

/// One JSON object per line with the episode log fields.
pub fn episodes_jsonl(episodes: &[Episode]) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        scene_seed: u64,
        target: &'a str,
        mode: &'a str,
        success: bool,
        goal_found: bool,
        path_len: usize,
        shortest_len: Option<usize>,
        steps: usize,
    }
    let mut s = String::new();
    for e in episodes {
        let line = Line {
            scene_seed: e.scene_seed,
            target: &e.target,
            mode: &e.mode,
            success: e.success,
            goal_found: e.goal_found,
            path_len: e.path_len(),
            shortest_len: e.shortest_len,
            steps: e.steps,
        };
        s.push_str(&serde_json::to_string(&line).expect("episode line serializes"));
        s.push('\n');
    }
    s
}

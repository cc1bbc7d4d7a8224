use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::fusion::{guidance_ratio, FusionNet};
use super::predictor::{predict_target, TargetPredictor};
use crate::affinity::{
    experiential_scores, fuse, gate, generalized_scores, AffinityQuery, AffinityScores, ExperientialParams,
    GeneralizedTable,
};
use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};
use crate::sim::agent::{Action, AgentState, Perception};
use crate::sim::path::{bfs, descend, UNREACHABLE};
use crate::sim::{Cell, Scene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Dynamic,
    Fixed(f64),
}

/// How the per-object scores that activate the map are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    LoatAvg(Gamma),
    LoatMul,
    ExperientialOnly,
    GeneralizedOnly,
    Uniform,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::LoatAvg(Gamma::Dynamic) => write!(f, "loat_avg"),
            Mode::LoatAvg(Gamma::Fixed(g)) => write!(f, "loat_avg_gamma_{g}"),
            Mode::LoatMul => write!(f, "loat_mul"),
            Mode::ExperientialOnly => write!(f, "experiential_only"),
            Mode::GeneralizedOnly => write!(f, "generalized_only"),
            Mode::Uniform => write!(f, "uniform"),
        }
    }
}

impl FromStr for Mode {
    type Err = LoatError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(g) = s.strip_prefix("loat_avg_gamma_") {
            let g: f64 = g
                .parse()
                .map_err(|_| LoatError::InvalidArgument(format!("bad gamma in mode `{s}`")))?;
            if !(0.0..=1.0).contains(&g) {
                return Err(LoatError::InvalidArgument(format!("gamma {g} outside [0, 1]")));
            }
            return Ok(Mode::LoatAvg(Gamma::Fixed(g)));
        }
        Ok(match s {
            "loat_avg" => Mode::LoatAvg(Gamma::Dynamic),
            "loat_mul" => Mode::LoatMul,
            "experiential_only" => Mode::ExperientialOnly,
            "generalized_only" => Mode::GeneralizedOnly,
            "uniform" => Mode::Uniform,
            _ => {
                return Err(LoatError::InvalidArgument(format!(
                    "unknown mode `{s}` (loat_avg, loat_avg_gamma_<g>, loat_mul, experiential_only, generalized_only, uniform)"
                )))
            }
        })
    }
}

/// Read-only parameter bundle shared by episode workers.
#[derive(Clone, Copy)]
pub struct Modules<'a> {
    pub embeddings: &'a EmbeddingTable,
    pub experiential: &'a ExperientialParams,
    pub gtable: &'a GeneralizedTable,
    pub fusion: Option<&'a FusionNet>,
    pub predictor: &'a TargetPredictor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeConfig {
    pub step_budget: usize,
    pub r_succ: usize,
    pub k_replan: usize,
    pub perception: Perception,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            step_budget: 200,
            r_succ: 1,
            k_replan: 5,
            perception: Perception::uniform(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub scene_seed: u64,
    pub target: String,
    pub mode: String,
    pub start: Cell,
    pub trajectory: Vec<Cell>,
    pub success: bool,
    pub goal_found: bool,
    /// BFS distance from the start to the success region; `None` when unreachable.
    pub shortest_len: Option<usize>,
    pub steps: usize,
    /// Guidance ratio used at each replan.
    pub gammas: Vec<f64>,
}

impl Episode {
    /// Number of cell changes along the trajectory.
    pub fn path_len(&self) -> usize {
        self.trajectory.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

fn chebyshev(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Free cells within Chebyshev `r` of any of `centers`, judged by `free`.
fn region(size: usize, centers: &[Cell], r: usize, free: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    for &(cr, cc) in centers {
        for row in cr.saturating_sub(r)..=(cr + r).min(size - 1) {
            for col in cc.saturating_sub(r)..=(cc + r).min(size - 1) {
                let i = row * size + col;
                if free(i) && !out.contains(&i) {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// Scores for one decision step; `gamma` is only consulted by the dynamic mode.
fn step_scores(
    mode: Mode,
    a_e: &AffinityScores,
    a_g: &AffinityScores,
    a_mul: &AffinityScores,
    gamma: Option<f64>,
) -> Result<AffinityScores> {
    Ok(match mode {
        Mode::LoatAvg(Gamma::Fixed(g)) => fuse(g, a_g, a_e)?,
        Mode::LoatAvg(Gamma::Dynamic) => fuse(gamma.expect("dynamic gamma computed"), a_g, a_e)?,
        Mode::LoatMul => a_mul.clone(),
        Mode::ExperientialOnly => a_e.clone(),
        Mode::GeneralizedOnly => a_g.clone(),
        Mode::Uniform => AffinityScores::uniform(a_e.len()),
    })
}

/// Shortest distance from `start` to the success region of `target` on the true map.
pub fn shortest_to_target(scene: &Scene, target: &str, start: Cell, r_succ: usize) -> Option<usize> {
    let goal = region(scene.size, scene.cells_of(target), r_succ, |i| !scene.occupancy[i]);
    let d = bfs(scene.size, |i| !scene.occupancy[i], &goal)[scene.index(start)];
    (d != UNREACHABLE).then_some(d as usize)
}

/// Navigates towards `target` with prediction-guided waypoints until stop or budget.
pub fn run_episode(
    scene: &Scene,
    target: &str,
    start: Cell,
    modules: Modules<'_>,
    mode: Mode,
    cfg: &EpisodeConfig,
    agent_seed: u64,
) -> Result<Episode> {
    if scene.cells_of(target).is_empty() {
        return Err(LoatError::InvalidArgument(format!("target `{target}` is not placed in scene {}", scene.seed)));
    }
    if matches!(mode, Mode::LoatAvg(Gamma::Dynamic)) && modules.fusion.is_none() {
        return Err(LoatError::InvalidArgument("dynamic mode needs a fusion network".into()));
    }
    let mut episode = Episode {
        scene_seed: scene.seed,
        target: target.to_string(),
        mode: mode.to_string(),
        start,
        trajectory: vec![start],
        success: false,
        goal_found: false,
        shortest_len: shortest_to_target(scene, target, start, cfg.r_succ),
        steps: 0,
        gammas: Vec::new(),
    };
    if !scene.is_free(start) {
        return Err(LoatError::InvalidArgument(format!("start cell {start:?} is blocked or out of bounds")));
    }
    if cfg.step_budget == 0 {
        return Ok(episode);
    }

    let query = AffinityQuery::new(target, scene.vocabulary().to_vec())?;
    let a_e = experiential_scores(modules.experiential, modules.embeddings, &query)?;
    let a_g = generalized_scores(modules.gtable, &query);
    let a_mul = gate(modules.gtable, &query, &a_e);

    let n = scene.size;
    let mut agent = AgentState::spawn(scene, start, cfg.perception, agent_seed)?;
    let mut waypoint: Option<usize> = None;
    let mut since_plan = 0usize;

    while agent.steps_taken < cfg.step_budget {
        let found = agent.detected(scene, target);
        if !found.is_empty() {
            episode.goal_found = true;
            if found.iter().any(|&c| chebyshev(c, agent.position) <= cfg.r_succ) {
                agent.step(scene, Action::Stop);
                episode.success = true;
                break;
            }
            let known_free = |i: usize| !agent.known_obstacles[i];
            let goal = region(n, &found, cfg.r_succ, known_free);
            let dist = bfs(n, known_free, &goal);
            let Some(next) = descend(n, &dist, scene.index(agent.position)) else {
                break;
            };
            let action = Action::between(agent.position, scene.cell(next)).expect("descend yields a neighbour");
            agent.step(scene, action);
            continue;
        }

        let stale = match waypoint {
            None => true,
            Some(w) => since_plan >= cfg.k_replan || agent.searched[w],
        };
        if stale {
            let gamma = match mode {
                Mode::LoatAvg(Gamma::Dynamic) => {
                    let net = modules.fusion.expect("checked above");
                    let g = guidance_ratio(net, &agent.fusion_context(cfg.step_budget))?;
                    Some(g)
                }
                Mode::LoatAvg(Gamma::Fixed(g)) => Some(g),
                _ => None,
            };
            if let Some(g) = gamma {
                episode.gammas.push(g);
            }
            let scores = step_scores(mode, &a_e, &a_g, &a_mul, gamma)?;
            let activated = agent.semantic_map.activate(&scores)?;
            let probs = predict_target(&activated, &agent.observed_mask(), modules.predictor)?;
            let reach = bfs(n, |i| !agent.known_obstacles[i], &[scene.index(agent.position)]);
            waypoint = select_waypoint(&probs, &reach, &agent.searched);
            since_plan = 0;
        }
        let Some(w) = waypoint else {
            // nothing left to explore
            agent.step(scene, Action::Stop);
            break;
        };
        let dist = bfs(n, |i| !agent.known_obstacles[i], &[w]);
        let Some(next) = descend(n, &dist, scene.index(agent.position)) else {
            agent.step(scene, Action::Stop);
            break;
        };
        let action = Action::between(agent.position, scene.cell(next)).expect("descend yields a neighbour");
        agent.step(scene, action);
        since_plan += 1;
    }
    if !agent.detected(scene, target).is_empty() {
        episode.goal_found = true;
    }
    episode.trajectory = agent.trajectory;
    episode.steps = agent.steps_taken;
    Ok(episode)
}

/// Most probable reachable cell not yet searched; ties go to the nearer, then lower-index cell.
pub fn select_waypoint(probs: &[f64], reach: &[u32], searched: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64, u32)> = None;
    for i in 0..probs.len() {
        if searched[i] || reach[i] == UNREACHABLE {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, p, d)) => probs[i] > p || (probs[i] == p && reach[i] < d),
        };
        if better {
            best = Some((i, probs[i], reach[i]));
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in [
            Mode::LoatAvg(Gamma::Dynamic),
            Mode::LoatAvg(Gamma::Fixed(0.5)),
            Mode::LoatMul,
            Mode::ExperientialOnly,
            Mode::GeneralizedOnly,
            Mode::Uniform,
        ] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("greedy".parse::<Mode>().is_err());
        assert!("loat_avg_gamma_2".parse::<Mode>().is_err());
    }

    #[test]
    fn waypoint_prefers_probability_then_distance() {
        let probs = [0.1, 0.4, 0.4, 0.1];
        let reach = [0, 3, 2, 1];
        assert_eq!(select_waypoint(&probs, &reach, &[false; 4]), Some(2));
        assert_eq!(select_waypoint(&probs, &reach, &[false, true, true, false]), Some(0));
        assert_eq!(select_waypoint(&probs, &[UNREACHABLE; 4], &[false; 4]), None);
    }
}

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Cell, Scene};
use crate::error::{LoatError, Result};
use crate::maps::MetricMap;
use crate::nn::Tensor;

/// Number of most recent moves summarised by the displacement histogram.
pub const HISTORY_WINDOW: usize = 10;
pub const DIRECTION_BINS: usize = 8;
pub const TEMPORAL_DIM: usize = 2 + DIRECTION_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stop,
}

impl Action {
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stop => (0, 0),
        }
    }

    /// The move that takes `from` to the 4-neighbour `to`.
    pub fn between(from: Cell, to: Cell) -> Option<Action> {
        let dr = to.0 as isize - from.0 as isize;
        let dc = to.1 as isize - from.1 as isize;
        Action::MOVES.into_iter().find(|a| a.delta() == (dr, dc))
    }
}

/// Bin of a displacement: 0 = right, counter-clockwise in 45 degree steps (2 = up).
pub fn direction_bin(dr: isize, dc: isize) -> Option<usize> {
    if dr == 0 && dc == 0 {
        return None;
    }
    let angle = (-(dr as f64)).atan2(dc as f64);
    let bin = (angle / std::f64::consts::FRAC_PI_4).round() as isize;
    Some(bin.rem_euclid(DIRECTION_BINS as isize) as usize)
}

/// What the agent can see from its cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    /// Chebyshev radius for layout and anchor objects.
    pub r_view: usize,
    /// Chebyshev radius within which targets are detected (small objects).
    pub target_view: usize,
    pub false_negative_rate: f64,
}

impl Perception {
    /// Same radius for everything, no missed detections.
    pub fn uniform(r_view: usize) -> Self {
        Self {
            r_view,
            target_view: r_view,
            false_negative_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionContext {
    pub temporal: Vec<f64>,
    /// `[2, R, R]`: observed mask, known obstacles.
    pub environmental: Tensor,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub position: Cell,
    pub steps_taken: usize,
    pub observed: Vec<bool>,
    /// Cells close enough for a target there to have been detected.
    pub searched: Vec<bool>,
    pub known_obstacles: Vec<bool>,
    /// Vocabulary channels only.
    pub semantic_map: MetricMap,
    /// Every detected object cell (targets included), by flat index.
    pub detections: BTreeMap<usize, u16>,
    pub trajectory: Vec<Cell>,
    size: usize,
    perception: Perception,
    rng: ChaCha8Rng,
}

/// True when no blocked cell lies strictly between `a` and `b` on the Bresenham line.
pub fn line_of_sight(scene: &Scene, a: Cell, b: Cell) -> bool {
    let (mut x, mut y) = (a.1 as isize, a.0 as isize);
    let (x1, y1) = (b.1 as isize, b.0 as isize);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (x, y) == (x1, y1) {
            return true;
        }
        if (x, y) != (a.1 as isize, a.0 as isize) && scene.occupancy[y as usize * scene.size + x as usize] {
            return false;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

impl AgentState {
    /// Places an agent at `start` and observes the initial view.
    pub fn spawn(scene: &Scene, start: Cell, perception: Perception, seed: u64) -> Result<Self> {
        if !scene.is_free(start) {
            return Err(LoatError::InvalidArgument(format!("start cell {start:?} is blocked or out of bounds")));
        }
        let n = scene.size;
        let mut agent = AgentState {
            position: start,
            steps_taken: 0,
            observed: vec![false; n * n],
            searched: vec![false; n * n],
            known_obstacles: vec![false; n * n],
            semantic_map: MetricMap::zeros(scene.vocabulary().to_vec(), n, n)?,
            detections: BTreeMap::new(),
            trajectory: vec![start],
            size: n,
            perception,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        agent.observe(scene);
        Ok(agent)
    }

    pub fn observe(&mut self, scene: &Scene) {
        let (pr, pc) = self.position;
        let Perception {
            r_view,
            target_view,
            false_negative_rate,
        } = self.perception;
        let r = r_view.max(target_view);
        for row in pr.saturating_sub(r)..=(pr + r).min(self.size - 1) {
            for col in pc.saturating_sub(r)..=(pc + r).min(self.size - 1) {
                if !line_of_sight(scene, self.position, (row, col)) {
                    continue;
                }
                let d = row.abs_diff(pr).max(col.abs_diff(pc));
                let i = row * self.size + col;
                if d <= r_view {
                    self.observed[i] = true;
                    if scene.occupancy[i] {
                        self.known_obstacles[i] = true;
                    }
                }
                let near = d <= target_view;
                if near {
                    self.searched[i] = true;
                }
                let Some(k) = scene.object_grid[i] else { continue };
                let is_anchor = (k as usize) < scene.vocabulary_len;
                if self.detections.contains_key(&i) || !(if is_anchor { d <= r_view } else { near }) {
                    continue;
                }
                if false_negative_rate > 0.0 && self.rng.gen::<f64>() < false_negative_rate {
                    continue;
                }
                self.detections.insert(i, k);
                if is_anchor {
                    self.semantic_map.set(k as usize, row, col, 1.0);
                }
            }
        }
    }

    pub fn step(&mut self, scene: &Scene, action: Action) {
        self.steps_taken += 1;
        if action != Action::Stop {
            let (dr, dc) = action.delta();
            let r = self.position.0 as isize + dr;
            let c = self.position.1 as isize + dc;
            if r >= 0 && c >= 0 && scene.is_free((r as usize, c as usize)) {
                self.position = (r as usize, c as usize);
            }
            self.trajectory.push(self.position);
        }
        self.observe(scene);
    }

    /// Cells of `category` detected so far.
    pub fn detected(&self, scene: &Scene, category: &str) -> Vec<Cell> {
        self.detections
            .iter()
            .filter(|(_, &k)| scene.categories[k as usize] == category)
            .map(|(&i, _)| (i / self.size, i % self.size))
            .collect()
    }

    pub fn observed_fraction(&self) -> f64 {
        self.observed.iter().filter(|&&o| o).count() as f64 / self.observed.len() as f64
    }

    pub fn observed_mask(&self) -> Vec<f64> {
        self.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()
    }

    pub fn path_length(&self) -> usize {
        self.trajectory.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn fusion_context(&self, step_budget: usize) -> FusionContext {
        let mut temporal = vec![0.0; TEMPORAL_DIM];
        temporal[0] = self.steps_taken as f64 / step_budget.max(1) as f64;
        temporal[1] = self.observed_fraction();
        let start = self.trajectory.len().saturating_sub(HISTORY_WINDOW + 1);
        let mut moves = 0usize;
        for w in self.trajectory[start..].windows(2) {
            let dr = w[1].0 as isize - w[0].0 as isize;
            let dc = w[1].1 as isize - w[0].1 as isize;
            if let Some(b) = direction_bin(dr, dc) {
                temporal[2 + b] += 1.0;
                moves += 1;
            }
        }
        if moves > 0 {
            for v in &mut temporal[2..] {
                *v /= moves as f64;
            }
        }
        let n = self.size * self.size;
        let mut env = self.observed_mask();
        env.extend(self.known_obstacles.iter().map(|&o| if o { 1.0 } else { 0.0 }));
        debug_assert_eq!(env.len(), 2 * n);
        FusionContext {
            temporal,
            environmental: Tensor::new(vec![2, self.size, self.size], env).expect("shape matches"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::household;
    use crate::sim::scene::generate_scene;

    #[test]
    fn direction_bins() {
        assert_eq!(direction_bin(0, 1), Some(0));
        assert_eq!(direction_bin(-1, 0), Some(2));
        assert_eq!(direction_bin(0, -1), Some(4));
        assert_eq!(direction_bin(1, 0), Some(6));
        assert_eq!(direction_bin(-1, 1), Some(1));
        assert_eq!(direction_bin(0, 0), None);
    }

    #[test]
    fn blocked_move_counts_a_step() {
        let scene = generate_scene(&household::train_config(), 2).unwrap();
        let mut agent = AgentState::spawn(&scene, (1, 1), Perception::uniform(5), 0).unwrap();
        agent.step(&scene, Action::Up);
        assert_eq!(agent.position, (1, 1));
        assert_eq!(agent.steps_taken, 1);
        agent.step(&scene, Action::Stop);
        assert_eq!(agent.steps_taken, 2);
        assert_eq!(agent.trajectory, vec![(1, 1), (1, 1)]);
    }

    #[test]
    fn initial_context_only_has_view_fraction() {
        let scene = generate_scene(&household::train_config(), 3).unwrap();
        let start = scene.free_cells()[100];
        let agent = AgentState::spawn(&scene, start, Perception::uniform(5), 0).unwrap();
        let ctx = agent.fusion_context(100);
        assert_eq!(ctx.temporal[0], 0.0);
        assert!(ctx.temporal[1] > 0.0);
        assert!(ctx.temporal[2..].iter().all(|&v| v == 0.0));
        assert_eq!(agent.searched, agent.observed);
    }

    #[test]
    fn short_target_view_searches_less() {
        let cfg = household::train_config();
        let scene = generate_scene(&cfg, 3).unwrap();
        let start = scene.free_cells()[100];
        let p = Perception {
            r_view: 5,
            target_view: 2,
            false_negative_rate: 0.0,
        };
        let agent = AgentState::spawn(&scene, start, p, 0).unwrap();
        let wide = AgentState::spawn(&scene, start, Perception::uniform(5), 0).unwrap();
        assert_eq!(agent.observed, wide.observed);
        assert_eq!(agent.semantic_map, wide.semantic_map);
        assert!(agent.searched.iter().zip(&agent.observed).all(|(s, o)| !s || *o));
        assert!(agent.searched.iter().filter(|&&s| s).count() < agent.observed.iter().filter(|&&o| o).count());
        for (&i, &k) in &agent.detections {
            if k as usize >= scene.vocabulary_len {
                assert!(agent.searched[i]);
            }
        }
    }
}

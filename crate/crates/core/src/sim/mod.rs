//! Procedural household gridworlds, partial observation and stepping.

pub mod agent;
pub mod config;
pub mod household;
pub mod path;
pub mod scene;

pub use agent::{Action, AgentState, FusionContext, Perception};
pub use config::{Placement, RoomType, SceneConfig};
pub use scene::{generate_scene, Cell, Scene};

use crate::error::{LoatError, Result};

/// BFS length between two free cells, `None` when unreachable.
pub fn shortest_path(scene: &Scene, from: Cell, to: Cell) -> Result<Option<usize>> {
    for c in [from, to] {
        if !scene.is_free(c) {
            return Err(LoatError::InvalidArgument(format!("cell {c:?} is blocked or out of bounds")));
        }
    }
    let d = scene.distances_from(&[to])[scene.index(from)];
    Ok((d != path::UNREACHABLE).then_some(d as usize))
}

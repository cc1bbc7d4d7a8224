use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::Perception;
use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomType {
    pub name: String,
    pub anchors: Vec<String>,
}

/// `(anchor category, placement probability)`; the residual mass places the target uniformly.
pub type Placement = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub grid_size: usize,
    pub rooms: usize,
    pub min_room_size: usize,
    pub door_width: usize,
    pub room_types: Vec<RoomType>,
    /// Map channel vocabulary (large anchor objects), in channel order.
    pub vocabulary: Vec<String>,
    /// Small objects placed once per scene.
    pub targets: Vec<String>,
    pub placement: BTreeMap<String, Placement>,
    pub r_place: usize,
    pub r_view: usize,
    /// Detection radius for targets; `r_view` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_view: Option<usize>,
    #[serde(default)]
    pub false_negative_rate: f64,
}

fn unique(field: &str, items: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for i in items {
        if i.is_empty() {
            return Err(LoatError::config(field, "empty category name"));
        }
        if !seen.insert(i) {
            return Err(LoatError::config(field, format!("duplicate entry `{i}`")));
        }
    }
    Ok(())
}

impl SceneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LoatError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses and validates; serde errors mentioning a field are reported against it.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SceneConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("<root>")
                .to_string();
            LoatError::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 32 {
            return Err(LoatError::config("grid_size", "must be >= 32"));
        }
        if self.grid_size > 4096 {
            return Err(LoatError::config("grid_size", "must be <= 4096"));
        }
        if self.rooms < 2 {
            return Err(LoatError::config("rooms", "must be >= 2"));
        }
        if self.min_room_size < 4 {
            return Err(LoatError::config("min_room_size", "must be >= 4"));
        }
        if self.door_width == 0 || self.door_width > self.min_room_size - 2 {
            return Err(LoatError::config("door_width", "must be in 1..=min_room_size-2"));
        }
        if self.r_view == 0 {
            return Err(LoatError::config("r_view", "must be >= 1"));
        }
        if self.target_view.is_some_and(|t| t > self.r_view) {
            return Err(LoatError::config("target_view", "must not exceed r_view"));
        }
        if !(0.0..1.0).contains(&self.false_negative_rate) {
            return Err(LoatError::config("false_negative_rate", "must lie in [0, 1)"));
        }
        unique("vocabulary", &self.vocabulary)?;
        if self.vocabulary.is_empty() {
            return Err(LoatError::config("vocabulary", "must be nonempty"));
        }
        unique("targets", &self.targets)?;
        let vocab: BTreeSet<&String> = self.vocabulary.iter().collect();
        if let Some(t) = self.targets.iter().find(|t| vocab.contains(t)) {
            return Err(LoatError::config("targets", format!("`{t}` is also a map channel")));
        }
        if self.room_types.is_empty() {
            return Err(LoatError::config("room_types", "must be nonempty"));
        }
        for rt in &self.room_types {
            if let Some(a) = rt.anchors.iter().find(|a| !vocab.contains(a)) {
                return Err(LoatError::config(
                    "room_types",
                    format!("anchor `{a}` of `{}` is not in the vocabulary", rt.name),
                ));
            }
        }
        for (target, placements) in &self.placement {
            if !self.targets.contains(target) {
                return Err(LoatError::config("placement", format!("`{target}` is not a target")));
            }
            let mut total = 0.0;
            for (anchor, p) in placements {
                if !vocab.contains(anchor) {
                    return Err(LoatError::config("placement", format!("anchor `{anchor}` not in vocabulary")));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(LoatError::config("placement", format!("probability {p} for `{target}`")));
                }
                total += p;
            }
            if total > 1.0 + 1e-9 {
                return Err(LoatError::config("placement", format!("probabilities for `{target}` sum to {total}")));
            }
        }
        let interior = (self.grid_size - 2) * (self.grid_size - 2);
        if self.rooms * self.min_room_size * self.min_room_size > interior {
            return Err(LoatError::config("rooms", "rooms of min_room_size do not fit the grid"));
        }
        Ok(())
    }

    pub fn perception(&self) -> Perception {
        Perception {
            r_view: self.r_view,
            target_view: self.target_view.unwrap_or(self.r_view),
            false_negative_rate: self.false_negative_rate,
        }
    }

    /// Categories not covered by `table` (they would use the hash fallback).
    pub fn missing_embeddings(&self, table: &EmbeddingTable) -> Vec<String> {
        self.vocabulary
            .iter()
            .chain(&self.targets)
            .filter(|c| !table.contains(c))
            .cloned()
            .collect()
    }
}

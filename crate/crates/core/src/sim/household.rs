//! Built-in household preset: 16 anchor categories, four room types, 18
//! training targets and 10 held-out targets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Placement, RoomType, SceneConfig};
use crate::affinity::GeneralizedTable;
use crate::embeddings::EmbeddingTable;
use crate::error::{LoatError, Result};

pub const EMBEDDING_DIM: usize = 384;
pub const EMBEDDING_SEED: u64 = 0;

pub const RELEVANCE_JSON: &str = include_str!("../../data/household_relevance.json");

pub const ANCHORS: [&str; 16] = [
    "Sink", "Fridge", "Stove", "CounterTop", "Cabinet", "DiningTable", "Sofa", "CoffeeTable",
    "TVStand", "Shelf", "Bed", "Dresser", "Desk", "Toilet", "Bathtub", "GarbageCan",
];

pub const ROOM_TYPES: [(&str, &[&str]); 4] = [
    ("Kitchen", &["Sink", "Fridge", "Stove", "CounterTop", "Cabinet", "DiningTable", "GarbageCan"]),
    ("LivingRoom", &["Sofa", "CoffeeTable", "TVStand", "Shelf"]),
    ("Bedroom", &["Bed", "Dresser", "Desk", "Shelf"]),
    ("Bathroom", &["Toilet", "Bathtub", "Sink", "GarbageCan", "Cabinet"]),
];

/// Training-time placement: (target, primary anchor, p, secondary anchor, p).
pub const SEEN_TARGETS: [(&str, &str, f64, &str, f64); 18] = [
    ("Cup", "CounterTop", 0.7, "Sink", 0.2),
    ("Apple", "Fridge", 0.7, "DiningTable", 0.2),
    ("Bowl", "Cabinet", 0.7, "CounterTop", 0.2),
    ("Knife", "CounterTop", 0.7, "Stove", 0.2),
    ("Pan", "Stove", 0.8, "Sink", 0.1),
    ("Egg", "Fridge", 0.8, "CounterTop", 0.1),
    ("RemoteControl", "CoffeeTable", 0.7, "Sofa", 0.2),
    ("Book", "Shelf", 0.7, "Desk", 0.2),
    ("Vase", "Shelf", 0.6, "DiningTable", 0.3),
    ("Newspaper", "Sofa", 0.7, "CoffeeTable", 0.2),
    ("Pillow", "Bed", 0.8, "Sofa", 0.1),
    ("AlarmClock", "Dresser", 0.7, "Desk", 0.2),
    ("Laptop", "Desk", 0.7, "Bed", 0.2),
    ("CellPhone", "Bed", 0.6, "Desk", 0.3),
    ("SoapBar", "Bathtub", 0.6, "Sink", 0.3),
    ("Towel", "Bathtub", 0.7, "Toilet", 0.2),
    ("ToiletPaper", "Toilet", 0.8, "Cabinet", 0.1),
    ("Candle", "Toilet", 0.5, "Bathtub", 0.4),
];

pub const HELD_OUT_TARGETS: [&str; 10] = [
    "Umbrella", "HairDrier", "Scissors", "Toothbrush", "Comb", "Peach", "CanOpener", "Whisk",
    "Magazine", "Eyeglasses",
];

/// Mass spread over the relevance set of a held-out target.
pub const HELD_OUT_MASS: f64 = 0.9;
pub const DEFAULT_SHIFT_FRACTION: f64 = 0.5;
pub const DEFAULT_SHIFT_SEED: u64 = 7;

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn relevance_table() -> GeneralizedTable {
    GeneralizedTable::parse(RELEVANCE_JSON, Path::new("<bundled household_relevance.json>"))
        .expect("bundled relevance table parses")
}

/// Hash embeddings of anchors and seen targets; held-out targets are left to the fallback.
pub fn embedding_table() -> EmbeddingTable {
    let names: Vec<&str> = ANCHORS
        .iter()
        .copied()
        .chain(SEEN_TARGETS.iter().map(|t| t.0))
        .collect();
    EmbeddingTable::from_hash(&names, EMBEDDING_DIM, EMBEDDING_SEED).expect("hash table builds")
}

pub fn seen_targets() -> Vec<String> {
    SEEN_TARGETS.iter().map(|t| t.0.to_string()).collect()
}

pub fn held_out_targets() -> Vec<String> {
    strings(&HELD_OUT_TARGETS)
}

fn train_placement() -> BTreeMap<String, Placement> {
    SEEN_TARGETS
        .iter()
        .map(|&(t, a1, p1, a2, p2)| (t.to_string(), vec![(a1.to_string(), p1), (a2.to_string(), p2)]))
        .collect()
}

/// Scene config with the training placement table and the seen targets only.
pub fn train_config() -> SceneConfig {
    SceneConfig {
        grid_size: 64,
        rooms: 6,
        min_room_size: 12,
        door_width: 2,
        room_types: ROOM_TYPES
            .iter()
            .map(|(name, anchors)| RoomType {
                name: name.to_string(),
                anchors: strings(anchors),
            })
            .collect(),
        vocabulary: strings(&ANCHORS),
        targets: seen_targets(),
        placement: train_placement(),
        r_place: 3,
        r_view: 5,
        target_view: Some(2),
        false_negative_rate: 0.0,
    }
}

/// Moves the primary anchor of a seeded `fraction` of targets to another
/// relevant anchor, keeping the probabilities.
pub fn shift_placement(
    placement: &BTreeMap<String, Placement>,
    gtable: &GeneralizedTable,
    fraction: f64,
    seed: u64,
) -> Result<BTreeMap<String, Placement>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(LoatError::config("shift_fraction", "must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<&String> = placement.keys().collect();
    names.shuffle(&mut rng);
    let n_shift = (fraction * names.len() as f64).round() as usize;
    let mut out = placement.clone();
    for name in names.into_iter().take(n_shift) {
        let entry = out.get_mut(name).expect("key exists");
        let Some((primary, _)) = entry.first().cloned() else {
            continue;
        };
        let candidates: Vec<&String> = gtable
            .related(name)
            .map(|set| set.iter().filter(|a| **a != primary).collect())
            .unwrap_or_default();
        let Some(&new_anchor) = candidates.choose(&mut rng) else {
            continue;
        };
        let new_anchor = new_anchor.clone();
        for (anchor, _) in entry.iter_mut().skip(1) {
            if *anchor == new_anchor {
                *anchor = primary.clone();
            }
        }
        entry[0].0 = new_anchor;
    }
    Ok(out)
}

/// Evaluation config on shifted co-occurrences, with held-out targets added.
pub fn shifted_config(fraction: f64, seed: u64) -> Result<SceneConfig> {
    let gtable = relevance_table();
    let mut cfg = train_config();
    cfg.placement = shift_placement(&cfg.placement, &gtable, fraction, seed)?;
    for t in HELD_OUT_TARGETS {
        let related = gtable
            .related(t)
            .ok_or_else(|| LoatError::UnknownCategory(t.to_string()))?;
        let p = HELD_OUT_MASS / related.len() as f64;
        cfg.placement
            .insert(t.to_string(), related.iter().map(|a| (a.clone(), p)).collect());
        cfg.targets.push(t.to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Seen,
    Shifted,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Seen => "seen",
            Split::Shifted => "shifted",
        }
    }

    /// Scene seeds of different splits never overlap.
    pub fn seed_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Seen => 1_000_000,
            Split::Shifted => 2_000_000,
        }
    }

    pub fn config(self) -> SceneConfig {
        match self {
            Split::Train | Split::Seen => train_config(),
            Split::Shifted => shifted_config(DEFAULT_SHIFT_FRACTION, DEFAULT_SHIFT_SEED)
                .expect("built-in shifted config is valid"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_is_consistent() {
        let cfg = train_config();
        cfg.validate().unwrap();
        let g = relevance_table();
        for (t, a1, _, a2, _) in SEEN_TARGETS {
            let rel = g.related(t).unwrap();
            assert!(rel.contains(a1) && rel.contains(a2), "{t}");
        }
        for t in HELD_OUT_TARGETS {
            assert!(g.related(t).is_some());
            assert!(!embedding_table().contains(t));
        }
        assert!(cfg.missing_embeddings(&embedding_table()).is_empty());
    }

    #[test]
    fn shift_moves_requested_fraction() {
        let cfg = shifted_config(0.5, 3).unwrap();
        let base = train_config().placement;
        let moved = base
            .iter()
            .filter(|(t, p)| cfg.placement[*t][0].0 != p[0].0)
            .count();
        assert_eq!(moved, 9);
        for (t, p) in &cfg.placement {
            let total: f64 = p.iter().map(|x| x.1).sum();
            assert!(total <= 1.0 + 1e-12, "{t}");
        }
        assert_eq!(cfg.targets.len(), 28);
        assert_eq!(shift_placement(&base, &relevance_table(), 0.0, 1).unwrap(), base);
    }
}

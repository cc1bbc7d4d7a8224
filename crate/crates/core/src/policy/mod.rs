//! Downstream navigation consuming activated maps.

pub mod episode;
pub mod fusion;
pub mod graph;
pub mod predictor;

pub use episode::{run_episode, Episode, EpisodeConfig, Gamma, Mode, Modules};
pub use fusion::{guidance_ratio, FusionNet};
pub use predictor::{predict_target, predictor_input, TargetPredictor};

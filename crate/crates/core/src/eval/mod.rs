pub mod bench;
pub mod metrics;
pub mod probe;

pub use bench::{ablation_csv, ablation_suite, ablation_table, plan_tasks, run_tasks, AblationRow, BenchmarkConfig, EpisodeTask, ABLATION_ROWS};
pub use metrics::{compute_metrics, spl_term, Metrics, Rates};
pub use probe::{attention_heatmap, hit_rate, ood_predict, ood_threshold, scene_semantic_map, Heatmap, OodRecord};

//! Accuracy metrics, episode-averaged evaluation, report tables and attention export.

mod attention;
mod metrics;
mod report;

pub use attention::{export_attention, AttentionRecord};
pub use metrics::{
    accuracy, episode_accuracies, eval_episodes, evaluate_fewshot, evaluate_transfer, mean_std, Condition, EvalConfig,
    EvalReport, Z95, Z99,
};
pub use report::{parse_jsonl, render_jsonl, render_table, COLUMNS};

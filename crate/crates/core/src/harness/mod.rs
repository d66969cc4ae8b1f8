//! Prompt-ensemble evaluation: per-prompt ROUGE, ensemble statistics,
//! baseline-versus-calibrated reports and ablations.

pub mod ablation;
pub mod eval;
pub mod prompts;
pub mod report;
pub mod stats;

pub use ablation::{soft_length_ablation, token_comparison, Experiment};
pub use eval::{corpus_digest, evaluate_ensemble, evaluate_prompt, EvaluationRun, Pipeline, SummaryModel};
pub use prompts::PromptEnsemble;
pub use report::{compare_runs, emit_report, parse_csv, ReportFormat, VarianceReport, VarianceRow};
pub use stats::{ensemble_stats, mean_deduction, std_deduction, EnsembleStats};

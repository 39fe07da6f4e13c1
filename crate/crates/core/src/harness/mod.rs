//! Evaluation sweeps, ablations, result files, charts and the gradient-check suite.

mod eval;
mod gradcheck;
mod plot;
mod results;

pub use eval::{
    ablation, ablation_bundles, default_framework, eval_episode_seed, evaluate, evaluate_bundle, framework_name,
    result_row, run_episode, run_episode_observed, run_episodes, AblationSpec, EpisodeSummary, EvalSpec, DEFAULT_P_GRID,
};
pub use gradcheck::{gradcheck_suite, CheckReport, ATTACK_TOL, NET_TOL};
pub use plot::plot;
pub use results::{fmt_sig, read_results, read_results_from, round_sig, write_results, write_results_to, ResultRow, HEADER};

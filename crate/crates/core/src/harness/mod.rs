//! Offline fitting, online protocols, Monte-Carlo evaluation and sweeps.

mod config;
mod protocol;
mod run;
mod stats;

pub use config::{EstimatorKind, ExperimentSpec, Mode, PilotScheme, Scheme, SweepKind};
pub use protocol::{
    bit_identical, block_draw, constellation_users, eval_user_stats, evaluate_multi_user,
    evaluate_single_user, run_multi_user_protocol, run_single_user_protocol, sample_error, BlockErrors,
    ConstellationErrors, EvalContext, EvalPool, EvalUser, SchemeErrors,
};
pub use run::{
    evaluate_scheme, fit_model, init_threads, read_results_csv, run_experiment, split_components,
    training_set, write_results_csv, ResultRow,
};
pub use stats::{bootstrap_ci, evaluate_nmse, mean, paired_confidence, to_db};

//! Rollouts, replay, learning, experiments and plots.

pub mod config;
pub mod experiment;
pub mod learner;
pub mod actor;
pub mod model;
pub mod plot;
pub mod replay;
pub mod rollout;

pub use config::{Ablations, EpsilonSchedule, Lambdas, NetworkConfig, RunConfig};
pub use actor::{ActorStep, AgentActor, Team};
pub use model::{AimModel, LossVars, ModelSpec, Unrolled};
pub use learner::{Learner, TrainStats};
pub use replay::ReplayBuffer;
pub use rollout::{rollout_episode, FilterTrace, RolloutOptions};
pub use experiment::{
    evaluate, load_run, read_metrics, run_experiment, run_seed_battery, EvalReport, ExperimentOptions, ExperimentOutcome,
    MetricsRow, RunSummary, EVAL_SEED_BASE, METRICS_HEADER,
};
pub use plot::{collect_series, plot_runs, render_svg, series_from_runs, Series};

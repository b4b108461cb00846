//! Experiment orchestration: configs, multi-seed runs with baselines,
//! coupled regret, CSV output, data-quality evaluation and timing.

mod config;
mod eval;
mod output;
mod run;

pub use config::{
    build_task, AgentEntry, AgentKind, DriftConfig, ExperimentConfig, ScheduleEntry, TaskConfig,
};
pub use eval::{
    data_quality_eval, default_suite, default_task, default_world_config, learner_behavior,
    timing_probe, DataQualityRow, SuitePair, TimingRow, DEFAULT_NOISE_SIGMA, TIMING_WARMUP,
};
pub use output::{
    read_run_ids, read_run_states, step_header, write_episodes, write_experiment, write_steps,
    write_summary, EPISODES_FILE, STEPS_FILE, SUMMARY_FILE, WORLD_FILE,
};
pub use run::{
    run_behavior, run_experiment, run_id, run_single, summarize, EpisodeRecord, ExperimentResult,
    RunLog, RunOptions, SummaryRow,
};

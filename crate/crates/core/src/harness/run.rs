//! Single runs and multi-seed experiments.

use std::sync::Arc;

use rayon::prelude::*;

use crate::agent::{self, Behavior, Env, StepRecord, Streams};
use crate::error::{Error, Result};
use crate::harness::config::{AgentEntry, ExperimentConfig};
use crate::linest::EstimatorSnapshot;
use crate::rng;
use crate::sfworld::{make_random_world, FeatureWorld, RewardTask, SfOracle};

/// Per-run switches.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub n_episodes: usize,
    /// Keep per-step records (needed for step CSVs and data-quality evaluation).
    pub record_steps: bool,
    pub timing: bool,
}

impl RunOptions {
    pub fn episodes(n_episodes: usize) -> Self {
        RunOptions {
            n_episodes,
            record_steps: false,
            timing: false,
        }
    }

    pub fn with_steps(mut self) -> Self {
        self.record_steps = true;
        self
    }
}

/// One row of the episode log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Noiseless discounted return collected by the agent.
    pub g_hat: f64,
    /// Same episode replayed under the privileged policy (common random numbers).
    pub g_star: f64,
    /// Closed-form `E_{s₀∼μ₀}[ψ(s₀, z_r)ᵀ z_r]` at the episode's last step.
    pub g_star_expected: f64,
    pub regret: f64,
    pub regret_cum: f64,
    pub labels: usize,
    pub labels_cum: usize,
    /// `‖ẑ − z_r‖` at episode end (learners only).
    pub zhat_err: Option<f64>,
    /// Exact expected return of the greedy policy for the current `ẑ`.
    pub greedy_return: Option<f64>,
}

/// Everything one (agent, seed) cell produced.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub run_id: String,
    pub agent: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub final_estimator: Option<EstimatorSnapshot>,
}

impl RunLog {
    pub fn cumulative_regret(&self, n: usize) -> f64 {
        self.episodes[..n].iter().map(|e| e.regret).sum()
    }

    /// First episode (1-based) whose greedy policy reaches `fraction` of the
    /// closed-form oracle return, i.e. `J* − J ≤ (1 − fraction)·|J*|`.
    pub fn episodes_to_fraction(&self, fraction: f64) -> Option<usize> {
        self.episodes.iter().position(|e| reaches(e, fraction)).map(|k| k + 1)
    }
}

pub(crate) fn reaches(e: &EpisodeRecord, fraction: f64) -> bool {
    match e.greedy_return {
        Some(j) => e.g_star_expected - j <= (1.0 - fraction) * e.g_star_expected.abs(),
        None => false,
    }
}

pub fn run_id(agent: &str, seed: u64) -> String {
    format!("{agent}-s{seed}")
}

/// Runs one agent for `n_episodes` under seed `seed`.
///
/// Streams are keyed by the seed only, so different agents under the same
/// seed see the same initial states and transition uniforms.
pub fn run_single(
    world: &Arc<FeatureWorld>,
    task: &RewardTask,
    entry: &AgentEntry,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunLog> {
    let mut oracle = SfOracle::new(world.clone());
    let mut behavior = entry.behavior(world.dim(), task.s_bound())?;
    if entry.warm_start > 0 {
        if let Some(l) = behavior.learner_mut() {
            let mut warm = rng::stream(seed, &[rng::TAG_WARM]);
            let data = agent::sample_labeled_states(world, task, entry.warm_start, &mut warm);
            l.warm_start(&data, world)?;
        }
    }
    run_behavior(world, task, &mut oracle, &mut behavior, &entry.name, seed, opts)
}

/// Same as [`run_single`] for an already-built behavior and oracle.
pub fn run_behavior(
    world: &Arc<FeatureWorld>,
    task: &RewardTask,
    oracle: &mut SfOracle,
    behavior: &mut Behavior,
    name: &str,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunLog> {
    let h = world.horizon() as u64;
    let mut streams = Streams {
        agent: rng::stream(seed, &[rng::TAG_AGENT]),
        noise: rng::stream(seed, &[rng::TAG_NOISE]),
        env: rng::stream(seed, &[rng::TAG_ENV, 0]),
    };
    let mut steps = Vec::new();
    let mut episodes = Vec::with_capacity(opts.n_episodes);
    let (mut regret_cum, mut labels_cum) = (0.0, 0);
    for k in 0..opts.n_episodes {
        let start = k as u64 * h;
        streams.env = rng::stream(seed, &[rng::TAG_ENV, k as u64]);
        let log = {
            let mut env = Env {
                world,
                task,
                oracle: &mut *oracle,
            };
            agent::run_episode(behavior, &mut env, k, start, &mut streams, opts.timing)?
        };
        let mut replay = rng::stream(seed, &[rng::TAG_ENV, k as u64]);
        let g_star = agent::replay_oracle_return(world, task, oracle, start, &mut replay)?;

        let z_end = task.drift_value(start + h - 1);
        let g_star_expected = oracle.expected_return(&z_end, &z_end)?;
        let (zhat_err, greedy_return) = match behavior {
            Behavior::Learner(l) => {
                let zhat = l.estimator().zhat().clone();
                let q = agent::oracle_input(l.config(), &zhat);
                (
                    Some((&zhat - &z_end).norm()),
                    Some(oracle.expected_return(&q, &z_end)?),
                )
            }
            Behavior::Oracle => (None, Some(g_star_expected)),
            Behavior::Random { .. } => (None, None),
        };
        let regret = g_star - log.g_hat;
        regret_cum += regret;
        labels_cum += log.labels;
        episodes.push(EpisodeRecord {
            episode: k,
            g_hat: log.g_hat,
            g_star,
            g_star_expected,
            regret,
            regret_cum,
            labels: log.labels,
            labels_cum,
            zhat_err,
            greedy_return,
        });
        if opts.record_steps {
            steps.extend(log.steps);
        }
    }
    Ok(RunLog {
        run_id: run_id(name, seed),
        agent: name.to_string(),
        seed,
        steps,
        episodes,
        final_estimator: behavior.learner().map(|l| l.estimator().to_snapshot()),
    })
}

/// Per-agent, per-episode aggregate across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub agent: String,
    pub episode: usize,
    pub n_seeds: usize,
    pub g_hat: [f64; 3],
    pub g_star: [f64; 3],
    pub regret_cum: [f64; 3],
    pub labels_cum: [f64; 3],
}

/// `[mean, min, max]`.
fn mmm(values: impl Iterator<Item = f64> + Clone) -> [f64; 3] {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.fold(f64::NEG_INFINITY, f64::max);
    [mean, min, max]
}

pub fn summarize(runs: &[RunLog], agents: &[String], n_episodes: usize) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for name in agents {
        let mine: Vec<&RunLog> = runs.iter().filter(|r| &r.agent == name).collect();
        if mine.is_empty() {
            continue;
        }
        for k in 0..n_episodes {
            let eps = mine.iter().map(|r| &r.episodes[k]);
            rows.push(SummaryRow {
                agent: name.clone(),
                episode: k,
                n_seeds: mine.len(),
                g_hat: mmm(eps.clone().map(|e| e.g_hat)),
                g_star: mmm(eps.clone().map(|e| e.g_star)),
                regret_cum: mmm(eps.clone().map(|e| e.regret_cum)),
                labels_cum: mmm(eps.map(|e| e.labels_cum as f64)),
            });
        }
    }
    rows
}

/// Output of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub world: Arc<FeatureWorld>,
    pub task: RewardTask,
    /// Ordered by agent (config order), then seed (config order).
    pub runs: Vec<RunLog>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every (agent, seed) cell on a pool of `jobs` threads (0 = all cores).
/// Results are independent of `jobs`.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let world = Arc::new(make_random_world(&config.world)?);
    let task = config.build_task()?;
    let cells: Vec<(&AgentEntry, u64)> = config
        .agents
        .iter()
        .flat_map(|a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let opts = RunOptions {
        n_episodes: config.n_episodes,
        record_steps: true,
        timing: config.timing,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let runs: Vec<RunLog> = pool.install(|| {
        cells
            .par_iter()
            .map(|(a, s)| run_single(&world, &task, a, *s, &opts))
            .collect::<Result<_>>()
    })?;
    let names: Vec<String> = config.agents.iter().map(|a| a.name.clone()).collect();
    let summary = summarize(&runs, &names, config.n_episodes);
    Ok(ExperimentResult {
        world,
        task,
        runs,
        summary,
    })
}

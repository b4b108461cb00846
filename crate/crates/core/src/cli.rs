//! The `optibfm` command line.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 invalid configuration
//! or input (the message names the offending field or file).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Variant};
use crate::error::{Error, Result};
use crate::harness::{self, AgentEntry, AgentKind, ExperimentConfig};
use crate::linest::ConfidenceSpec;
use crate::propcheck::{self, CheckReport};
use crate::sfworld::{make_random_world, SfOracle};

#[derive(Debug, Parser)]
#[command(name = "optibfm", version, about = "Optimistic online task inference on synthetic successor-feature worlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write step, episode and summary CSVs plus the world snapshot.
    Run(RunArgs),
    /// Run the randomized inequality checks and the Monte-Carlo checks.
    Verify(VerifyArgs),
    /// Grid search over agent hyperparameters.
    Sweep(RunArgs),
    /// Refit the task on the first n transitions of a logged run and score it.
    EvalData(EvalDataArgs),
    /// Per-step latency of each configured agent.
    Timing(TimingArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds (overrides the config's `seeds`).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Worker threads; 0 uses every core. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Record per-step wall time in the step log.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Only run checks whose name contains this substring.
    #[arg(long)]
    pub filter: Option<String>,
    /// Shrink the tested confidence radius by half in the coverage check; the
    /// suite must then fail.
    #[arg(long)]
    pub negative_control: bool,
    /// Machine-readable report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Randomized instances per dimension for the inequality checks.
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 400)]
    pub coverage_runs: usize,
    #[arg(long, default_value_t = 5000)]
    pub coverage_steps: usize,
    /// World seeds of the regret-scaling suite (two tasks each).
    #[arg(long, default_value_t = 10)]
    pub regret_worlds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalDataArgs {
    /// Step log written by `run`.
    #[arg(long)]
    pub runlog: PathBuf,
    /// Config the log was produced with (defines world and task).
    #[arg(long)]
    pub config: PathBuf,
    /// Run to evaluate; defaults to the first run in the log.
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<usize>,
    /// Output CSV; defaults to `data_quality.csv` next to the log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Timed calls per agent after warm-up.
    #[arg(long, default_value_t = 1000)]
    pub calls: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure { code: 2, message }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Runs a parsed command and returns what it prints on success.
pub fn execute(cmd: &Command) -> std::result::Result<String, Failure> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::EvalData(a) => cmd_eval_data(a),
        Command::Timing(a) => cmd_timing(a),
    }
}

fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, Failure> {
    if !path.exists() {
        return Err(usage(format!("config file {} does not exist", path.display())));
    }
    Ok(ExperimentConfig::load(path)?)
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &RunArgs) -> std::result::Result<(), Failure> {
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
    }
    if a.timing {
        cfg.timing = true;
    }
    cfg.validate()?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> std::result::Result<String, Failure> {
    let mut cfg = load_config(&a.config)?;
    apply_overrides(&mut cfg, a)?;
    let result = harness::run_experiment(&cfg, a.jobs)?;
    let paths = harness::write_experiment(&result, &cfg, &cfg.output)?;
    let mut out = String::new();
    for row in result.summary.iter().filter(|r| r.episode + 1 == cfg.n_episodes) {
        let _ = writeln!(
            out,
            "{:<16} episode {:>4}  G_hat mean {:>10.4}  regret_cum mean {:>10.4}  labels {:>8.1}",
            row.agent, row.episode, row.g_hat[0], row.regret_cum[0], row.labels_cum[0]
        );
    }
    for p in paths {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(out)
}

/// Names of all checks run by `verify`, in order.
pub const CHECK_NAMES: [&str; 7] = [
    "empirical_sf_bound",
    "loewner_vw",
    "elliptical_potential",
    "det_bound",
    "ucb_closed_form",
    "coverage",
    "regret_scaling",
];

/// The `verify` suite as a library call.
pub fn verify_reports(a: &VerifyArgs) -> Result<Vec<CheckReport>> {
    let selected: Vec<&str> = CHECK_NAMES
        .iter()
        .copied()
        .filter(|n| a.filter.as_deref().is_none_or(|f| n.contains(f)))
        .collect();
    let mut reports = Vec::new();
    for name in selected {
        let report = match name {
            "empirical_sf_bound" => propcheck::suite_empirical_sf_bound(a.instances, a.seed),
            "loewner_vw" => propcheck::suite_loewner_vw(a.instances, a.seed),
            "elliptical_potential" => propcheck::suite_elliptical_potential(a.instances, a.seed),
            "det_bound" => propcheck::suite_det_bound(a.instances, a.seed),
            "ucb_closed_form" => propcheck::suite_ucb_closed_form(a.instances, 100, a.seed),
            "coverage" => {
                let cfg = harness::default_world_config(a.seed);
                let world = Arc::new(make_random_world(&cfg)?);
                let task = harness::default_task(a.seed, 0, cfg.dim)?;
                let agent = propcheck::coverage_agent(0.1, task.z_true().norm(), task.noise_sigma());
                let scale = if a.negative_control { 0.5 } else { 1.0 };
                propcheck::check_coverage(&world, &task, &agent, 0.1, a.coverage_runs, a.coverage_steps, a.seed, scale)?.0
            }
            "regret_scaling" => {
                let pairs = harness::default_suite(a.regret_worlds, 2)?;
                let agent = propcheck::coverage_agent(0.1, 1.0, harness::DEFAULT_NOISE_SIGMA);
                propcheck::check_regret_scaling(&pairs, &agent, 50, 200)?.0
            }
            _ => unreachable!("unknown check"),
        };
        reports.push(report);
    }
    Ok(reports)
}

pub fn format_report_line(r: &CheckReport) -> String {
    format!(
        "{:<22} instances {:>6}  worst {:>+12.4e}  tol {:>10.3e}  {}",
        r.name,
        r.instances,
        r.worst_violation,
        r.tolerance,
        if r.passed { "PASS" } else { "FAIL" }
    )
}

fn cmd_verify(a: &VerifyArgs) -> std::result::Result<String, Failure> {
    let reports = verify_reports(a)?;
    if reports.is_empty() {
        return Err(usage(format!(
            "filter {:?} matches no check (available: {})",
            a.filter.as_deref().unwrap_or(""),
            CHECK_NAMES.join(", ")
        )));
    }
    let mut out = String::new();
    for r in &reports {
        let _ = writeln!(out, "{}", format_report_line(r));
    }
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    }
    if reports.iter().all(|r| r.passed) {
        Ok(out)
    } else {
        print!("{out}");
        Err(Failure {
            code: 1,
            message: "one or more checks failed".into(),
        })
    }
}

/// Hyperparameter axes of a sweep. Absent axes keep the agent's own value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Fixed confidence radius (UCB agents).
    #[serde(default)]
    pub beta: Vec<f64>,
    /// Data scaling (TS agents).
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub rho: Vec<f64>,
}

/// One grid point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepPoint {
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.beta.is_empty() && self.sigma.is_empty() && self.lambda.is_empty() && self.rho.is_empty()
    }

    /// Cross product of the nonempty axes.
    pub fn points(&self) -> Vec<SweepPoint> {
        fn axis(v: &[f64]) -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for &beta in &axis(&self.beta) {
            for &sigma in &axis(&self.sigma) {
                for &lambda in &axis(&self.lambda) {
                    for &rho in &axis(&self.rho) {
                        out.push(SweepPoint {
                            beta,
                            sigma,
                            lambda,
                            rho,
                        });
                    }
                }
            }
        }
        out
    }
}

impl SweepPoint {
    /// Applies the point to every learning agent of `cfg`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        for a in cfg.agents.iter_mut().filter(|a| a.kind == AgentKind::Optibfm) {
            let c = a.config.get_or_insert_with(AgentConfig::default);
            match c.variant {
                Variant::Ucb => {
                    if let Some(beta) = self.beta {
                        c.confidence = ConfidenceSpec::Fixed { beta };
                    }
                }
                Variant::Ts => {
                    if let Some(s) = self.sigma {
                        c.ts_sigma = s;
                    }
                }
            }
            if let Some(l) = self.lambda {
                c.lambda = l;
            }
            if let Some(r) = self.rho {
                c.rho = r;
            }
        }
    }

    fn fields(&self) -> [String; 4] {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [f(self.beta), f(self.sigma), f(self.lambda), f(self.rho)]
    }
}

/// Splits a sweep file into its base experiment and its grid.
pub fn parse_sweep(text: &str) -> Result<(ExperimentConfig, SweepGrid)> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let grid = match table.remove("sweep") {
        Some(v) => v
            .try_into::<SweepGrid>()
            .map_err(|e| Error::Config(format!("sweep: {e}")))?,
        None => SweepGrid::default(),
    };
    if grid.is_empty() {
        return Err(Error::Config("sweep: grid is empty (set at least one of beta, sigma, lambda, rho)".into()));
    }
    let base: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    base.validate()?;
    Ok((base, grid))
}

/// One (agent, grid point) entry of the sweep ranking.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub agent: String,
    /// 1-based rank among this agent's grid points.
    pub rank: usize,
    pub point_index: usize,
    pub point: SweepPoint,
    /// Mean over seeds of the summed episode returns.
    pub cumulative_return: f64,
}

/// Runs every grid point under every seed, one output directory per
/// (point, seed) cell, and ranks the points separately for each learning
/// agent. Rows come grouped by agent in config order, best first.
pub fn run_sweep(base: &ExperimentConfig, grid: &SweepGrid, out: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    let learners: Vec<String> = base
        .agents
        .iter()
        .filter(|a| a.kind == AgentKind::Optibfm)
        .map(|a| a.name.clone())
        .collect();
    if learners.is_empty() {
        return Err(Error::Config("agents: a sweep needs at least one optibfm agent".into()));
    }
    let points = grid.points();
    // totals[point][learner]
    let mut totals = vec![vec![0.0; learners.len()]; points.len()];
    for (i, point) in points.iter().enumerate() {
        let mut cell_cfg = base.clone();
        point.apply(&mut cell_cfg);
        cell_cfg.validate()?;
        for &seed in &base.seeds {
            let mut one = cell_cfg.clone();
            one.seeds = vec![seed];
            let result = harness::run_experiment(&one, jobs)?;
            harness::write_experiment(&result, &one, &out.join(format!("cell{i:03}_seed{seed}")))?;
            for run in &result.runs {
                if let Some(j) = learners.iter().position(|n| *n == run.agent) {
                    totals[i][j] += run.episodes.iter().map(|e| e.g_hat).sum::<f64>();
                }
            }
        }
    }
    let n_seeds = base.seeds.len() as f64;
    let mut rows = Vec::new();
    for (j, agent) in learners.iter().enumerate() {
        let mut order: Vec<usize> = (0..points.len()).collect();
        // Stable: ties keep grid order.
        order.sort_by(|&x, &y| totals[y][j].total_cmp(&totals[x][j]));
        for (rank, &i) in order.iter().enumerate() {
            rows.push(SweepRow {
                agent: agent.clone(),
                rank: rank + 1,
                point_index: i,
                point: points[i].clone(),
                cumulative_return: totals[i][j] / n_seeds,
            });
        }
    }
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
    w.write_record(["agent", "rank", "cell", "beta", "sigma", "lambda", "rho", "cumulative_return"])
        .map_err(|e| Error::format(&path, e))?;
    for r in &rows {
        let [b, s, l, rho] = r.point.fields();
        w.write_record([
            r.agent.clone(),
            r.rank.to_string(),
            format!("cell{:03}", r.point_index),
            b,
            s,
            l,
            rho,
            r.cumulative_return.to_string(),
        ])
        .map_err(|e| Error::format(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

fn cmd_sweep(a: &RunArgs) -> std::result::Result<String, Failure> {
    if !a.config.exists() {
        return Err(usage(format!("config file {} does not exist", a.config.display())));
    }
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let (mut base, grid) = parse_sweep(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", a.config.display())),
        other => other,
    })?;
    apply_overrides(&mut base, a)?;
    let out_dir = base.output.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let rows = run_sweep(&base, &grid, &out_dir, a.jobs)?;
    let mut out = String::new();
    for r in &rows {
        let [b, s, l, rho] = r.point.fields();
        let _ = writeln!(
            out,
            "{:<12} {:>3}  cell{:03}  beta={b:<8} sigma={s:<8} lambda={l:<8} rho={rho:<8} cumulative_return={:.6}",
            r.agent, r.rank, r.point_index, r.cumulative_return
        );
    }
    for r in rows.iter().filter(|r| r.rank == 1) {
        let _ = writeln!(out, "selected for {}: cell{:03}", r.agent, r.point_index);
    }
    Ok(out)
}

fn cmd_eval_data(a: &EvalDataArgs) -> std::result::Result<String, Failure> {
    if !a.runlog.exists() {
        return Err(usage(format!("run log {} does not exist", a.runlog.display())));
    }
    let cfg = load_config(&a.config)?;
    let run_id = match &a.run_id {
        Some(id) => id.clone(),
        None => harness::read_run_ids(&a.runlog)?
            .into_iter()
            .next()
            .ok_or_else(|| usage(format!("{} contains no runs", a.runlog.display())))?,
    };
    let states = harness::read_run_states(&a.runlog, &run_id)?;
    if states.is_empty() {
        return Err(usage(format!("run {run_id:?} not found in {}", a.runlog.display())));
    }
    let world = Arc::new(make_random_world(&cfg.world)?);
    let task = cfg.build_task()?;
    let mut oracle = SfOracle::new(world.clone());
    let rows = match harness::data_quality_eval(&states, &world, &task, &mut oracle, &a.budgets, a.seed) {
        Err(Error::InsufficientData { needed, available }) => {
            return Err(usage(format!(
                "budget {needed} exceeds the {available} transitions available in run {run_id:?}"
            )))
        }
        other => other?,
    };
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| a.runlog.with_file_name("data_quality.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
    w.write_record(["run_id", "budget", "return", "oracle_return", "relative"])
        .map_err(|e| Error::format(&path, e))?;
    let mut out = String::new();
    for r in &rows {
        w.write_record([
            run_id.clone(),
            r.budget.to_string(),
            r.expected_return.to_string(),
            r.oracle_return.to_string(),
            r.relative.to_string(),
        ])
        .map_err(|e| Error::format(&path, e))?;
        let _ = writeln!(out, "n={:<8} return={:.6} relative={:.6}", r.budget, r.expected_return, r.relative);
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(out)
}

fn cmd_timing(a: &TimingArgs) -> std::result::Result<String, Failure> {
    let cfg = load_config(&a.config)?;
    let world = Arc::new(make_random_world(&cfg.world)?);
    let task = cfg.build_task()?;
    let agents: Vec<AgentEntry> = cfg.agents.clone();
    let rows = harness::timing_probe(&world, &task, &agents, a.calls, cfg.seeds[0])?;
    let mut out = String::new();
    for r in &rows {
        let _ = writeln!(out, "{:<16} calls {:>6}  mean {:>12.1} ns/step", r.agent, r.calls, r.mean_ns);
    }
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
        w.write_record(["agent", "calls", "mean_ns"]).map_err(|e| Error::format(path, e))?;
        for r in &rows {
            w.write_record([r.agent.clone(), r.calls.to_string(), r.mean_ns.to_string()])
                .map_err(|e| Error::format(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

//! Experiment configuration (TOML) and its translation into runtime objects.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, Behavior, Learner};
use crate::error::{Error, Result};
use crate::rng;
use crate::sfworld::{Drift, RewardTask, WorldConfig};

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Explicit true task vector. When absent, a uniform direction of norm
    /// `norm` is drawn from `seed` (default: the world seed).
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub norm: f64,
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub s_bound: f64,
    #[serde(default)]
    pub drift: DriftConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    #[default]
    Constant,
    /// Entries `(step, z)`; the initial task holds before the first entry.
    PiecewiseConstant { schedule: Vec<ScheduleEntry> },
    /// From the initial task to `end` over `[burn_in, burn_in + ramp]`.
    LinearRamp {
        end: Vec<f64>,
        burn_in: u64,
        ramp: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub step: u64,
    pub z: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Optibfm,
    Random,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub name: String,
    pub kind: AgentKind,
    /// Labeled states absorbed before the first episode.
    #[serde(default)]
    pub warm_start: usize,
    #[serde(default)]
    pub config: Option<AgentConfig>,
}

impl AgentEntry {
    pub fn optibfm(name: &str, config: AgentConfig) -> Self {
        AgentEntry {
            name: name.into(),
            kind: AgentKind::Optibfm,
            warm_start: 0,
            config: Some(config),
        }
    }

    pub fn random(name: &str) -> Self {
        AgentEntry {
            name: name.into(),
            kind: AgentKind::Random,
            warm_start: 0,
            config: None,
        }
    }

    pub fn oracle(name: &str) -> Self {
        AgentEntry {
            name: name.into(),
            kind: AgentKind::Oracle,
            warm_start: 0,
            config: None,
        }
    }

    pub fn with_warm_start(mut self, n: usize) -> Self {
        self.warm_start = n;
        self
    }

    /// Fresh behavior for one run.
    pub fn behavior(&self, dim: usize, s_bound: f64) -> Result<Behavior> {
        Ok(match self.kind {
            AgentKind::Optibfm => {
                let cfg = self.config.clone().unwrap_or_default();
                Behavior::Learner(Learner::new(cfg, dim)?)
            }
            AgentKind::Random => Behavior::Random { s_bound },
            AgentKind::Oracle => Behavior::Oracle,
        })
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub timing: bool,
    pub world: WorldConfig,
    pub task: TaskConfig,
    pub agents: Vec<AgentEntry>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, e: Error| {
            Error::Config(format!(
                "{field}: {}",
                match e {
                    Error::InvalidParameter(m) => m,
                    other => other.to_string(),
                }
            ))
        };
        if self.n_episodes == 0 {
            return Err(Error::Config("n_episodes: must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seeds: duplicate seed {s}")));
            }
        }
        self.world.validate().map_err(|e| cfg_err("world", e))?;
        self.build_task().map_err(|e| cfg_err("task", e))?;
        if self.agents.is_empty() {
            return Err(Error::Config("agents: at least one agent is required".into()));
        }
        let mut names = HashSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            if a.name.is_empty() || a.name.contains(',') {
                return Err(Error::Config(format!("agents[{i}].name: must be nonempty and comma-free")));
            }
            if !names.insert(&a.name) {
                return Err(Error::Config(format!("agents[{i}].name: duplicate name {:?}", a.name)));
            }
            match (a.kind, &a.config) {
                (AgentKind::Optibfm, Some(c)) => {
                    c.validate().map_err(|e| cfg_err(&format!("agents[{i}].config"), e))?
                }
                (AgentKind::Optibfm, None) => {}
                (_, Some(_)) => {
                    return Err(Error::Config(format!(
                        "agents[{i}].config: only optibfm agents take a config"
                    )))
                }
                (_, None) => {}
            }
        }
        Ok(())
    }

    pub fn build_task(&self) -> Result<RewardTask> {
        build_task(&self.task, &self.world)
    }

    /// SHA-256 of the canonical serialization, output path excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn vector(values: &[f64], dim: usize, what: &str) -> Result<DVector<f64>> {
    if values.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "{what} has {} entries, world dim is {dim}",
            values.len()
        )));
    }
    Ok(DVector::from_column_slice(values))
}

pub fn build_task(task: &TaskConfig, world: &WorldConfig) -> Result<RewardTask> {
    let d = world.dim;
    let z = match &task.z {
        Some(z) => vector(z, d, "z")?,
        None => {
            let seed = task.seed.unwrap_or(world.seed);
            let mut r = rng::stream(seed, &[rng::TAG_TASK]);
            rng::unit_sphere(&mut r, d) * task.norm
        }
    };
    let drift = match &task.drift {
        DriftConfig::Constant => Drift::Constant,
        DriftConfig::PiecewiseConstant { schedule } => Drift::PiecewiseConstant(
            schedule
                .iter()
                .map(|e| Ok((e.step, vector(&e.z, d, "drift.schedule.z")?)))
                .collect::<Result<_>>()?,
        ),
        DriftConfig::LinearRamp { end, burn_in, ramp } => Drift::LinearRamp {
            start: z.clone(),
            end: vector(end, d, "drift.end")?,
            burn_in: *burn_in,
            ramp: *ramp,
        },
    };
    RewardTask::new(z, task.noise_sigma, task.s_bound, drift)
}

//! Decision rules and the interaction loop.
//!
//! One step: choose a task vector (optimistic or posterior draw), act with
//! the oracle's policy for it, move the environment, and, if the information
//! gate lets the label through, absorb `(φ(s), r)` into the estimator.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linest::{ConfidenceSpec, Estimator};
use crate::rng::{self, Stream};
use crate::sfworld::{FeatureWorld, RewardTask, SfOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ucb,
    Ts,
}

fn default_candidates() -> usize {
    128
}
fn default_radius_mult() -> f64 {
    2.0
}
fn default_confidence() -> ConfidenceSpec {
    ConfidenceSpec::Fixed { beta: 0.1 }
}
fn default_ts_sigma() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub variant: Variant,
    /// Random-shooting budget for the optimistic variant.
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    /// Candidates are drawn from the ellipsoid of radius `radius_mult · β`.
    #[serde(default = "default_radius_mult")]
    pub radius_mult: f64,
    #[serde(default = "default_confidence")]
    pub confidence: ConfidenceSpec,
    /// Data scaling `σ` of the Thompson variant.
    #[serde(default = "default_ts_sigma")]
    pub ts_sigma: f64,
    /// Label-gate threshold on the D-gap; 0 labels every step.
    #[serde(default)]
    pub kappa: f64,
    /// Only re-select `z` at the first step of each episode.
    #[serde(default)]
    pub episodic: bool,
    #[serde(default)]
    pub normalize_z: bool,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub rho: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            variant: Variant::Ucb,
            candidates: default_candidates(),
            radius_mult: default_radius_mult(),
            confidence: default_confidence(),
            ts_sigma: default_ts_sigma(),
            kappa: 0.0,
            episodic: false,
            normalize_z: false,
            lambda: 1.0,
            rho: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn ucb(beta: f64) -> Self {
        AgentConfig {
            confidence: ConfidenceSpec::Fixed { beta },
            ..Default::default()
        }
    }

    pub fn ts(sigma: f64) -> Self {
        AgentConfig {
            variant: Variant::Ts,
            ts_sigma: sigma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::InvalidParameter("candidates must be >= 1".into()));
        }
        if !(self.radius_mult > 0.0 && self.radius_mult.is_finite()) {
            return Err(Error::InvalidParameter("radius_mult must be positive".into()));
        }
        if !(self.ts_sigma > 0.0 && self.ts_sigma.is_finite()) {
            return Err(Error::InvalidParameter("ts_sigma must be positive".into()));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidParameter("kappa must be >= 0".into()));
        }
        self.confidence.validate()
    }
}

/// Optimistic selection by random shooting inside the ellipsoid of radius
/// `radius_mult · β` around `ẑ`; `ẑ` itself is always the first candidate.
///
/// Score: `ψ(s, z)ᵀ ẑ + β · ‖ψ(s, z)‖_{V⁻¹}`. Ties keep the earlier candidate.
pub fn select_ucb<R: Rng + ?Sized>(
    cfg: &AgentConfig,
    est: &Estimator,
    oracle: &mut SfOracle,
    state: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let beta = est.beta(&cfg.confidence);
    let zhat = est.zhat();
    let mut score = |z: &DVector<f64>| -> Result<f64> {
        let (psi, _) = oracle.query(state, &oracle_input(cfg, z))?;
        Ok(psi.dot(zhat) + beta * est.inv_norm(&psi))
    };
    let mut best = zhat.clone();
    let mut best_score = score(&best)?;
    for z in est.sample_ellipsoid(cfg.radius_mult * beta, cfg.candidates, rng) {
        let s = score(&z)?;
        if s > best_score {
            best_score = s;
            best = z;
        }
    }
    Ok(best)
}

/// One posterior draw `z ∼ N(ẑ, V⁻¹)`.
pub fn select_ts<R: Rng + ?Sized>(est: &Estimator, rng: &mut R) -> DVector<f64> {
    est.sample_posterior(rng)
}

/// The latent handed to the oracle (optionally L2-normalized).
pub fn oracle_input(cfg: &AgentConfig, z: &DVector<f64>) -> DVector<f64> {
    let n = z.norm();
    if cfg.normalize_z && n > 0.0 {
        z / n
    } else {
        z.clone()
    }
}

/// Uniform draw on the sphere of radius `s_bound`.
pub fn random_embedding<R: Rng + ?Sized>(rng: &mut R, dim: usize, s_bound: f64) -> DVector<f64> {
    rng::unit_sphere(rng, dim) * s_bound
}

/// What picks `z` at each step.
#[derive(Clone, Debug)]
pub enum Behavior {
    Learner(Learner),
    /// Fresh uniform embedding of norm `s_bound` every step.
    Random { s_bound: f64 },
    /// Privileged access to the true (possibly drifting) task vector.
    Oracle,
}

impl Behavior {
    pub fn learner(&self) -> Option<&Learner> {
        match self {
            Behavior::Learner(l) => Some(l),
            _ => None,
        }
    }

    pub fn learner_mut(&mut self) -> Option<&mut Learner> {
        match self {
            Behavior::Learner(l) => Some(l),
            _ => None,
        }
    }
}

/// Estimator plus decision rule.
#[derive(Clone, Debug)]
pub struct Learner {
    cfg: AgentConfig,
    est: Estimator,
    episode_z: Option<DVector<f64>>,
    gated: bool,
}

impl Learner {
    /// The Thompson variant's estimator is fed `(φ/σ, r/σ)`.
    pub fn new(cfg: AgentConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let est = Estimator::new(dim, cfg.lambda, cfg.rho)?;
        Ok(Learner {
            cfg,
            est,
            episode_z: None,
            gated: true,
        })
    }

    /// Same learner with the label gate removed entirely.
    pub fn without_gate(mut self) -> Self {
        self.gated = false;
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn estimator(&self) -> &Estimator {
        &self.est
    }

    pub fn estimator_mut(&mut self) -> &mut Estimator {
        &mut self.est
    }

    fn scale(&self) -> f64 {
        match self.cfg.variant {
            Variant::Ucb => 1.0,
            Variant::Ts => 1.0 / self.cfg.ts_sigma,
        }
    }

    /// Feature as seen by this learner's estimator.
    pub fn learner_feature(&self, phi: &DVector<f64>) -> DVector<f64> {
        phi * self.scale()
    }

    pub fn observe(&mut self, phi: &DVector<f64>, r: f64) -> Result<()> {
        let s = self.scale();
        self.est.update(&(phi * s), r * s)
    }

    pub fn warm_start(&mut self, dataset: &[(usize, f64)], world: &FeatureWorld) -> Result<()> {
        for &(state, r) in dataset {
            self.observe(&world.phi(state), r)?;
        }
        Ok(())
    }

    pub fn select<R: Rng + ?Sized>(
        &self,
        oracle: &mut SfOracle,
        state: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        match self.cfg.variant {
            Variant::Ucb => select_ucb(&self.cfg, &self.est, oracle, state, rng),
            Variant::Ts => Ok(select_ts(&self.est, rng)),
        }
    }

    /// Current confidence radius.
    pub fn beta(&self) -> f64 {
        self.est.beta(&self.cfg.confidence)
    }
}

/// Everything logged about one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    /// Global step index.
    pub step: u64,
    /// Step within the episode.
    pub t: usize,
    pub state: usize,
    pub action: usize,
    /// Chosen latent (before any normalization).
    pub z: DVector<f64>,
    pub labeled: bool,
    /// Observed (noisy) reward, present iff labeled.
    pub reward: Option<f64>,
    /// Noiseless reward `φ(s)ᵀ z_r(t)`, used for returns and regret.
    pub true_reward: f64,
    pub d_gap: Option<f64>,
    /// `‖z_r(t) − ẑ‖_V` before this step's update.
    pub mahalanobis_true: Option<f64>,
    pub beta: Option<f64>,
    /// `‖ẑ − z_r(t)‖₂` after this step's update.
    pub zhat_err: Option<f64>,
    pub elapsed_ns: Option<u64>,
}

/// Borrowed environment pieces a step needs.
pub struct Env<'a> {
    pub world: &'a FeatureWorld,
    pub task: &'a RewardTask,
    pub oracle: &'a mut SfOracle,
}

/// Random streams of one run. `env` is replaced every episode.
pub struct Streams {
    pub agent: Stream,
    pub noise: Stream,
    pub env: Stream,
}

/// One interaction step. Returns the record and the next state.
///
/// The label noise is drawn every step whether or not the label is used, so
/// the gate never shifts later draws.
pub fn step(
    behavior: &mut Behavior,
    env: &mut Env<'_>,
    state: usize,
    global_step: u64,
    episode: usize,
    t: usize,
    streams: &mut Streams,
    timing: bool,
) -> Result<(StepRecord, usize)> {
    let started = timing.then(Instant::now);
    let world = env.world;
    let z_true = env.task.drift_value(global_step);

    let (z, z_query) = match behavior {
        Behavior::Learner(l) => {
            let z = match (&l.episode_z, l.cfg.episodic && t > 0) {
                (Some(z), true) => z.clone(),
                _ => l.select(env.oracle, state, &mut streams.agent)?,
            };
            l.episode_z = Some(z.clone());
            let q = oracle_input(&l.cfg, &z);
            (z, q)
        }
        Behavior::Random { s_bound } => {
            let z = random_embedding(&mut streams.agent, world.dim(), *s_bound);
            (z.clone(), z)
        }
        Behavior::Oracle => (z_true.clone(), z_true.clone()),
    };

    let (_, action) = env.oracle.query(state, &z_query)?;
    let next = world.sample_next(state, action, &mut streams.env);
    let true_reward = env.task.mean_reward(world, state, global_step);
    let noisy = env.task.reward_sample(world, state, global_step, &mut streams.noise);

    let mut record = StepRecord {
        episode,
        step: global_step,
        t,
        state,
        action,
        z,
        labeled: false,
        reward: None,
        true_reward,
        d_gap: None,
        mahalanobis_true: None,
        beta: None,
        zhat_err: None,
        elapsed_ns: None,
    };

    if let Behavior::Learner(l) = behavior {
        let phi = world.phi(state);
        let gap = l.est.d_gap(&l.learner_feature(&phi));
        record.d_gap = Some(gap);
        record.mahalanobis_true = Some(l.est.mahalanobis(&z_true));
        record.beta = Some(l.beta());
        if !l.gated || gap >= l.cfg.kappa {
            l.observe(&phi, noisy)?;
            record.labeled = true;
            record.reward = Some(noisy);
        }
        record.zhat_err = Some((l.est.zhat() - &z_true).norm());
    }
    record.elapsed_ns = started.map(|s| s.elapsed().as_nanos() as u64);
    Ok((record, next))
}

/// One episode's trace.
#[derive(Clone, Debug)]
pub struct EpisodeLog {
    pub episode: usize,
    pub initial_state: usize,
    /// `Σ_{t<H} γᵗ r(s_t)` with noiseless rewards.
    pub g_hat: f64,
    pub labels: usize,
    pub steps: Vec<StepRecord>,
}

/// Runs `H` steps from `s₀ ∼ μ₀` drawn from `streams.env`.
pub fn run_episode(
    behavior: &mut Behavior,
    env: &mut Env<'_>,
    episode: usize,
    start_step: u64,
    streams: &mut Streams,
    timing: bool,
) -> Result<EpisodeLog> {
    let world = env.world;
    let s0 = world.sample_initial(&mut streams.env);
    let mut state = s0;
    let mut g_hat = 0.0;
    let mut discount = 1.0;
    let mut labels = 0;
    let mut steps = Vec::with_capacity(world.horizon());
    for t in 0..world.horizon() {
        let (rec, next) = step(
            behavior,
            env,
            state,
            start_step + t as u64,
            episode,
            t,
            streams,
            timing,
        )?;
        g_hat += discount * rec.true_reward;
        discount *= world.gamma();
        labels += rec.labeled as usize;
        steps.push(rec);
        state = next;
    }
    Ok(EpisodeLog {
        episode,
        initial_state: s0,
        g_hat,
        labels,
        steps,
    })
}

/// Noiseless return of the privileged policy replayed on a given episode
/// stream (common random numbers with the agent's episode).
pub fn replay_oracle_return(
    world: &FeatureWorld,
    task: &RewardTask,
    oracle: &mut SfOracle,
    start_step: u64,
    env_stream: &mut Stream,
) -> Result<f64> {
    let mut state = world.sample_initial(env_stream);
    let mut g = 0.0;
    let mut discount = 1.0;
    for t in 0..world.horizon() {
        let step = start_step + t as u64;
        let z = task.drift_value(step);
        let (_, action) = oracle.query(state, &z)?;
        g += discount * task.mean_reward(world, state, step);
        discount *= world.gamma();
        state = world.sample_next(state, action, env_stream);
    }
    Ok(g)
}

/// Absorb a labeled dataset, in order.
pub fn warm_start(est: &mut Estimator, dataset: &[(usize, f64)], world: &FeatureWorld) -> Result<()> {
    for &(state, r) in dataset {
        est.update(&world.phi(state), r)?;
    }
    Ok(())
}

/// `n` i.i.d. labeled states, uniform over the state space.
pub fn sample_labeled_states<R: Rng + ?Sized>(
    world: &FeatureWorld,
    task: &RewardTask,
    n: usize,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..world.n_states());
            (s, task.reward_sample(world, s, 0, rng))
        })
        .collect()
}

/// Batch task inference: solve `(E[φφᵀ] + ridge·I) z = E[φ r]`.
///
/// `ridge = None` uses `1e-10 · tr(E[φφᵀ]) / d` as a rank-deficiency guard.
pub fn infer_offline(
    dataset: &[(usize, f64)],
    world: &FeatureWorld,
    ridge: Option<f64>,
) -> Result<DVector<f64>> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let d = world.dim();
    let n = dataset.len() as f64;
    let mut m = nalgebra::DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for &(s, r) in dataset {
        let phi = world.phi(s);
        m.ger(1.0 / n, &phi, &phi, 1.0);
        b.axpy(r / n, &phi, 1.0);
    }
    let ridge = match ridge {
        Some(r) if r >= 0.0 => r,
        Some(r) => return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {r}"))),
        None => {
            let tr = m.trace() / d as f64;
            1e-10 * if tr > 0.0 { tr } else { 1.0 }
        }
    };
    for i in 0..d {
        m[(i, i)] += ridge;
    }
    solve_spd(m, b)
}

/// Dense Cholesky solve with a relative pivot floor.
fn solve_spd(mut a: nalgebra::DMatrix<f64>, mut b: DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = 1e-13 * scale.max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= a[(j, k)] * a[(j, k)];
        }
        if !(pivot > floor) {
            return Err(Error::Singular { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        a[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = v / ljj;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[(i, k)] * b[k];
        }
        b[i] = v / a[(i, i)];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= a[(k, i)] * b[k];
        }
        b[i] = v / a[(i, i)];
    }
    Ok(b)
}

/// Labels a `κ`-gated learner would request along a fixed sequence of
/// features. The gate only reads `V`, so rewards are irrelevant here.
pub fn gated_label_count(features: &[DVector<f64>], kappa: f64, lambda: f64, rho: f64) -> Result<usize> {
    let Some(first) = features.first() else {
        return Ok(0);
    };
    let mut est = Estimator::new(first.len(), lambda, rho)?;
    let mut labels = 0;
    for phi in features {
        if est.d_gap(phi) >= kappa {
            est.update(phi, 0.0)?;
            labels += 1;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfworld::{make_random_world, WorldConfig};
    use std::sync::Arc;

    fn world(seed: u64, d: usize) -> Arc<FeatureWorld> {
        Arc::new(
            make_random_world(&WorldConfig {
                n_states: 12,
                n_actions: 3,
                dim: d,
                gamma: 0.9,
                horizon: Some(15),
                branching: 3,
                feat_bound: 1.0,
                seed,
            })
            .unwrap(),
        )
    }

    fn streams(seed: u64) -> Streams {
        Streams {
            agent: rng::stream(seed, &[rng::TAG_AGENT]),
            noise: rng::stream(seed, &[rng::TAG_NOISE]),
            env: rng::stream(seed, &[rng::TAG_ENV, 0]),
        }
    }

    #[test]
    fn degenerate_shooting_returns_estimate() {
        let w = world(1, 4);
        let mut oracle = SfOracle::new(w.clone());
        let mut est = Estimator::new(4, 1.0, 1.0).unwrap();
        est.update(&w.phi(2), 0.4).unwrap();
        let cfg = AgentConfig {
            candidates: 1,
            ..AgentConfig::ucb(0.0)
        };
        let mut rng = rng::stream(0, &[]);
        assert_eq!(&select_ucb(&cfg, &est, &mut oracle, 3, &mut rng).unwrap(), est.zhat());
    }

    #[test]
    fn zero_beta_is_pure_exploitation() {
        let w = world(2, 4);
        let mut oracle = SfOracle::new(w.clone());
        let mut est = Estimator::new(4, 1.0, 1.0).unwrap();
        for s in 0..6 {
            est.update(&w.phi(s), s as f64 * 0.1).unwrap();
        }
        let cfg = AgentConfig::ucb(0.0);
        let mut rng = rng::stream(1, &[]);
        let z = select_ucb(&cfg, &est, &mut oracle, 0, &mut rng).unwrap();
        // Radius is zero, so every candidate is the estimate.
        assert_eq!(&z, est.zhat());
        let (psi, _) = oracle.query(0, &z).unwrap();
        let (psi_hat, _) = oracle.query(0, est.zhat()).unwrap();
        assert_eq!(psi.dot(est.zhat()), psi_hat.dot(est.zhat()));
    }

    #[test]
    fn returned_score_dominates_estimate_score() {
        let w = world(3, 5);
        let mut oracle = SfOracle::new(w.clone());
        let mut rng = rng::stream(3, &[]);
        let mut est = Estimator::new(5, 1.0, 1.0).unwrap();
        let cfg = AgentConfig::ucb(0.5);
        for i in 0..30 {
            let s = i % 12;
            est.update(&w.phi(s), rng.random_range(-1.0..1.0)).unwrap();
            let beta = est.beta(&cfg.confidence);
            let score = |o: &mut SfOracle, z: &DVector<f64>| {
                let (psi, _) = o.query(s, z).unwrap();
                psi.dot(est.zhat()) + beta * est.inv_norm(&psi)
            };
            let z = select_ucb(&cfg, &est, &mut oracle, s, &mut rng).unwrap();
            assert!(score(&mut oracle, &z) >= score(&mut oracle, &est.zhat().clone()));
        }
    }

    #[test]
    fn ts_prior_draw_and_replay() {
        let est = Estimator::new(3, 1.0, 1.0).unwrap();
        let mut a = rng::stream(9, &[]);
        let mut b = rng::stream(9, &[]);
        assert_eq!(select_ts(&est, &mut a), select_ts(&est, &mut b));
    }

    #[test]
    fn normalize_only_changes_oracle_input() {
        let cfg = AgentConfig {
            normalize_z: true,
            ..AgentConfig::ts(0.1)
        };
        let z = DVector::from_vec(vec![3.0, 4.0]);
        assert!((oracle_input(&cfg, &z).norm() - 1.0).abs() < 1e-15);
        assert_eq!(oracle_input(&cfg, &DVector::zeros(2)), DVector::zeros(2));
        assert_eq!(oracle_input(&AgentConfig::default(), &z), z);
    }

    fn run_steps(behavior: &mut Behavior, w: &Arc<FeatureWorld>, task: &RewardTask, n: usize, seed: u64) -> Vec<StepRecord> {
        let mut oracle = SfOracle::new(w.clone());
        let mut env = Env {
            world: w,
            task,
            oracle: &mut oracle,
        };
        let mut st = streams(seed);
        let mut state = 0;
        let mut out = Vec::new();
        for i in 0..n {
            let (rec, next) = step(behavior, &mut env, state, i as u64, 0, i, &mut st, false).unwrap();
            out.push(rec);
            state = next;
        }
        out
    }

    #[test]
    fn kappa_zero_equals_gate_free() {
        let w = world(4, 4);
        let task = RewardTask::constant(DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3]), 0.1, 1.0).unwrap();
        let gated = Learner::new(AgentConfig::ucb(0.1), 4).unwrap();
        let free = gated.clone().without_gate();
        let mut a = Behavior::Learner(gated);
        let mut b = Behavior::Learner(free);
        let ra = run_steps(&mut a, &w, &task, 60, 5);
        let rb = run_steps(&mut b, &w, &task, 60, 5);
        assert_eq!(ra, rb);
        assert!(ra.iter().all(|r| r.labeled));
    }

    #[test]
    fn infinite_kappa_never_labels() {
        let w = world(5, 4);
        let task = RewardTask::constant(DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3]), 0.1, 1.0).unwrap();
        let cfg = AgentConfig {
            kappa: f64::INFINITY,
            ..AgentConfig::ucb(0.1)
        };
        let mut b = Behavior::Learner(Learner::new(cfg, 4).unwrap());
        let recs = run_steps(&mut b, &w, &task, 40, 6);
        assert!(recs.iter().all(|r| !r.labeled && r.reward.is_none()));
        assert_eq!(b.learner().unwrap().estimator().zhat(), &DVector::zeros(4));
    }

    #[test]
    fn repeated_state_gap_strictly_decreases() {
        let features = nalgebra::DMatrix::from_row_slice(1, 3, &[0.6, 0.0, 0.8]);
        let w = Arc::new(
            FeatureWorld::from_parts(1, 2, 0.9, 10, vec![1.0, 1.0], vec![1.0], features, 1.0).unwrap(),
        );
        let task = RewardTask::constant(DVector::from_vec(vec![0.1, 0.2, 0.3]), 0.1, 1.0).unwrap();
        let mut b = Behavior::Learner(Learner::new(AgentConfig::ucb(0.1), 3).unwrap());
        let recs = run_steps(&mut b, &w, &task, 30, 7);
        for pair in recs.windows(2) {
            assert!(pair[1].d_gap.unwrap() < pair[0].d_gap.unwrap());
        }
    }

    #[test]
    fn episodic_z_is_constant_within_episode() {
        let w = world(6, 4);
        let task = RewardTask::constant(DVector::from_vec(vec![0.5, -0.2, 0.1, 0.3]), 0.1, 1.0).unwrap();
        let mut oracle = SfOracle::new(w.clone());
        for episodic in [true, false] {
            let cfg = AgentConfig {
                episodic,
                ..AgentConfig::ucb(0.5)
            };
            let mut b = Behavior::Learner(Learner::new(cfg, 4).unwrap());
            let mut env = Env {
                world: &w,
                task: &task,
                oracle: &mut oracle,
            };
            let mut st = streams(8);
            let mut start = 0;
            let mut changed = false;
            for k in 0..3 {
                st.env = rng::stream(8, &[rng::TAG_ENV, k as u64]);
                let log = run_episode(&mut b, &mut env, k, start, &mut st, false).unwrap();
                start += w.horizon() as u64;
                let z0 = &log.steps[0].z;
                let constant = log.steps.iter().all(|r| &r.z == z0);
                if episodic {
                    assert!(constant);
                } else {
                    changed |= !constant;
                }
            }
            if !episodic {
                assert!(changed);
            }
        }
    }

    #[test]
    fn one_step_episode_return_is_first_reward() {
        let w = Arc::new(world(7, 3).with_horizon(1));
        let task = RewardTask::constant(DVector::from_vec(vec![0.2, 0.4, -0.1]), 0.5, 1.0).unwrap();
        let mut oracle = SfOracle::new(w.clone());
        let mut env = Env {
            world: &w,
            task: &task,
            oracle: &mut oracle,
        };
        let mut b = Behavior::Learner(Learner::new(AgentConfig::ucb(0.1), 3).unwrap());
        let mut st = streams(9);
        let log = run_episode(&mut b, &mut env, 0, 0, &mut st, false).unwrap();
        assert_eq!(log.g_hat, w.phi(log.initial_state).dot(task.z_true()));
    }

    #[test]
    fn oracle_replay_couples_with_oracle_behavior() {
        let w = world(8, 4);
        let task = RewardTask::constant(DVector::from_vec(vec![0.1, 0.6, -0.2, 0.3]), 0.2, 1.0).unwrap();
        let mut oracle = SfOracle::new(w.clone());
        for k in 0..5u64 {
            let mut env = Env {
                world: &w,
                task: &task,
                oracle: &mut oracle,
            };
            let mut st = streams(10);
            st.env = rng::stream(10, &[rng::TAG_ENV, k]);
            let log = run_episode(&mut Behavior::Oracle, &mut env, k as usize, 0, &mut st, false).unwrap();
            let mut replay = rng::stream(10, &[rng::TAG_ENV, k]);
            let g = replay_oracle_return(&w, &task, &mut oracle, 0, &mut replay).unwrap();
            assert_eq!(g, log.g_hat);
        }
    }

    #[test]
    fn warm_start_empty_and_ordered() {
        let w = world(9, 3);
        let mut est = Estimator::new(3, 1.0, 1.0).unwrap();
        warm_start(&mut est, &[], &w).unwrap();
        assert_eq!(est.count(), 0);
        let data = vec![(0, 0.5), (3, -0.2), (7, 0.1)];
        warm_start(&mut est, &data, &w).unwrap();
        let mut manual = Estimator::new(3, 1.0, 1.0).unwrap();
        for &(s, r) in &data {
            manual.update(&w.phi(s), r).unwrap();
        }
        assert_eq!(est.zhat(), manual.zhat());
    }

    #[test]
    fn warm_start_ridge_bias_is_order_lambda() {
        let w = world(10, 4);
        let z = DVector::from_vec(vec![0.4, -0.3, 0.5, 0.2]);
        let data: Vec<(usize, f64)> = (0..12).map(|s| (s, w.phi(s).dot(&z))).collect();
        for lambda in [1e-2, 1e-4, 1e-6] {
            let mut est = Estimator::new(4, lambda, 1.0).unwrap();
            warm_start(&mut est, &data, &w).unwrap();
            // Ridge bias: λ (G + λI)⁻¹ z with G the data Gram matrix.
            let mut g = nalgebra::DMatrix::zeros(4, 4);
            for &(s, _) in &data {
                g += w.phi(s) * w.phi(s).transpose();
            }
            let min_eig = g.clone().symmetric_eigen().eigenvalues.min();
            let err = (est.zhat() - &z).norm();
            assert!(err <= lambda * z.norm() / min_eig * 1.0001 + 1e-12);
        }
    }

    #[test]
    fn offline_inference_recovers_exact_task() {
        let w = world(11, 5);
        let z = DVector::from_vec(vec![0.1, -0.5, 0.3, 0.2, 0.4]);
        let data: Vec<(usize, f64)> = (0..12).map(|s| (s, w.phi(s).dot(&z))).collect();
        let zhat = infer_offline(&data, &w, Some(0.0)).unwrap();
        assert!((zhat - &z).norm() <= 1e-8);
    }

    #[test]
    fn offline_inference_singular_guard() {
        let w = world(12, 4);
        let data = vec![(3, 0.5); 10];
        assert!(matches!(infer_offline(&data, &w, Some(0.0)), Err(Error::Singular { .. })));
        let z = infer_offline(&data, &w, None).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(matches!(infer_offline(&[], &w, None), Err(Error::InsufficientData { .. })));
    }
}

//! Randomized verification of the inequalities behind the regret analysis,
//! plus the Monte-Carlo coverage and regret-scaling checks.
//!
//! Each check compares against dense linear algebra computed from scratch
//! (explicit matrices, determinants, inverses, eigenvalues), never against
//! the incremental factor kept by [`Estimator`](crate::Estimator).
//!
//! Sign convention: `worst_violation` is positive when a claim fails and a
//! check passes iff `worst_violation ≤ tolerance`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentConfig, Behavior, Env, Learner, Streams};
use crate::error::Result;
use crate::harness::{run_single, AgentEntry, RunOptions, SuitePair};
use crate::linest::ConfidenceSpec;
use crate::rng;
use crate::sfworld::{FeatureWorld, RewardTask, SfOracle};

/// Loewner-order checks tolerate this much negative eigenvalue.
pub const EIGEN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    pub fn new(name: &str, instances: usize, worst_violation: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            instances,
            worst_violation,
            tolerance,
            // NaN never passes.
            passed: worst_violation <= tolerance,
        }
    }

    /// Merge reports of one check over several instance families
    /// (all sharing one tolerance).
    pub fn merge(name: &str, parts: &[CheckReport]) -> Self {
        let instances = parts.iter().map(|p| p.instances).sum();
        let worst = parts.iter().map(|p| p.worst_violation).fold(f64::NEG_INFINITY, max_nan);
        let tol = parts.first().map(|p| p.tolerance).unwrap_or(0.0);
        CheckReport::new(name, instances, worst, tol)
    }
}

fn max_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

fn dense_precision(lambda: f64, features: &[DVector<f64>]) -> DMatrix<f64> {
    let d = features.first().map(|f| f.len()).unwrap_or(0);
    let mut v = DMatrix::identity(d, d) * lambda;
    for f in features {
        v += f * f.transpose();
    }
    v
}

fn log_det_dense(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().ln()
}

/// `Σ_{t<H} γ^{2t}`.
pub fn c_h(gamma: f64, horizon: usize) -> f64 {
    (1.0 - gamma.powi(2 * horizon as i32)) / (1.0 - gamma * gamma)
}

fn discounted_sum(gamma: f64, seq: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(seq[0].len());
    let mut g = 1.0;
    for phi in seq {
        acc.axpy(g, phi, 1.0);
        g *= gamma;
    }
    acc
}

/// `ψ̃ψ̃ᵀ ⪯ c_H Σφ_tφ_tᵀ` with `ψ̃ = Σγᵗφ_t`, for each length-`H` sequence.
pub fn check_empirical_sf_bound(gamma: f64, sequences: &[Vec<DVector<f64>>]) -> CheckReport {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    let mut worst = f64::NEG_INFINITY;
    for seq in sequences {
        let psi = discounted_sum(gamma, seq);
        let a: DMatrix<f64> = seq.iter().map(|f| f * f.transpose()).sum();
        let m = a * c_h(gamma, seq.len()) - &psi * psi.transpose();
        worst = max_nan(worst, -min_eigenvalue(&m));
    }
    CheckReport::new("empirical_sf_bound", sequences.len(), worst, EIGEN_TOL)
}

/// `V_n ⪰ W_n / c_H` and `‖x‖_{V⁻¹} ≤ √c_H ‖x‖_{W⁻¹}`, where `V` sums per-step
/// outer products and `W` per-episode empirical successor features.
pub fn check_loewner_vw<R: Rng + ?Sized>(
    episodes: &[Vec<DVector<f64>>],
    gamma: f64,
    lambda: f64,
    dim: usize,
    rng: &mut R,
) -> f64 {
    let mut v = DMatrix::identity(dim, dim) * lambda;
    let mut w = DMatrix::identity(dim, dim) * lambda;
    let mut ch: f64 = 1.0;
    for ep in episodes {
        for f in ep {
            v += f * f.transpose();
        }
        let psi = discounted_sum(gamma, ep);
        w += &psi * psi.transpose();
        ch = c_h(gamma, ep.len());
    }
    let mut worst = -min_eigenvalue(&(&v - &w / ch));
    let v_inv = v.try_inverse().expect("V is positive definite");
    let w_inv = w.try_inverse().expect("W is positive definite");
    for _ in 0..100 {
        let x = rng::standard_normal(rng, dim);
        let lhs = x.dot(&(&v_inv * &x)).sqrt();
        let rhs = (ch * x.dot(&(&w_inv * &x))).sqrt();
        worst = max_nan(worst, (lhs - rhs) / rhs.max(f64::MIN_POSITIVE));
    }
    worst
}

/// Elliptical potential: `Σ min{1, ‖φ_t‖²_{V_{t−1}⁻¹}} ≤ 2 log(det V_n / det V₀)`,
/// plus the telescoping identity `Σ log(1 + ‖φ_t‖²) = log det ratio` to 1e-8.
/// Returns the signed violation.
pub fn check_elliptical_potential(features: &[DVector<f64>], v0: &DMatrix<f64>) -> f64 {
    let mut v = v0.clone();
    let (mut lhs, mut tele) = (0.0, 0.0);
    for phi in features {
        let chol = v.clone().cholesky().expect("V is positive definite");
        let q = phi.dot(&chol.solve(phi));
        lhs += q.min(1.0);
        tele += q.ln_1p();
        v += phi * phi.transpose();
    }
    let ratio = log_det_dense(&v) - log_det_dense(v0);
    let ineq = (lhs - 2.0 * ratio) / (1.0 + ratio.abs());
    // The identity has its own 1e-8 budget; only the excess counts.
    let tele_excess = (tele - ratio).abs() - 1e-8 * (1.0 + ratio.abs());
    max_nan(ineq, tele_excess)
}

/// `log(det V_n / λ^d) ≤ d log((dλ + nL²) / (dλ))` for `‖φ‖ ≤ L`.
pub fn check_det_bound(features: &[DVector<f64>], lambda: f64, l_bound: f64, dim: usize) -> f64 {
    let n = features.len() as f64;
    let d = dim as f64;
    let lhs = if features.is_empty() {
        0.0
    } else {
        log_det_dense(&dense_precision(lambda, features)) - d * lambda.ln()
    };
    let rhs = d * ((d * lambda + n * l_bound * l_bound) / (d * lambda)).ln();
    (lhs - rhs) / (1.0 + rhs.abs())
}

/// `max_{‖w − ẑ‖_V ≤ β} wᵀψ = ẑᵀψ + β‖ψ‖_{V⁻¹}`, attained at
/// `ẑ + β V⁻¹ψ / ‖ψ‖_{V⁻¹}`. Checks the maximizer is on the boundary and
/// attains the value (to 1e-10, relative), and that `samples` points drawn
/// inside the ellipsoid (half of them on its boundary) never exceed it.
pub fn check_ucb_closed_form<R: Rng + ?Sized>(
    v: &DMatrix<f64>,
    zhat: &DVector<f64>,
    psi: &DVector<f64>,
    beta: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let d = zhat.len();
    let v_inv = v.clone().try_inverse().expect("V is positive definite");
    let norm = psi.dot(&(&v_inv * psi)).sqrt();
    let closed = zhat.dot(psi) + beta * norm;
    let scale = 1.0 + closed.abs() + zhat.norm() * psi.norm();
    let mut worst = f64::NEG_INFINITY;
    if norm > 0.0 {
        let u = &v_inv * psi * (beta / norm);
        let w = zhat + &u;
        let mahal = u.dot(&(v * &u)).sqrt();
        worst = max_nan(worst, (mahal - beta).abs() / (1.0 + beta) - 1e-10);
        worst = max_nan(worst, (w.dot(psi) - closed).abs() / scale - 1e-10);
    }
    // w = ẑ + β L⁻ᵀ ξ with V = L Lᵀ maps the unit ball onto the ellipsoid.
    let l = v.clone().cholesky().expect("V is positive definite").l();
    let lt_inv = l.transpose().try_inverse().expect("triangular factor is invertible");
    for i in 0..samples {
        let xi = if i % 2 == 0 {
            rng::unit_sphere(rng, d)
        } else {
            rng::unit_ball(rng, d)
        };
        let w = zhat + &lt_inv * xi * beta;
        worst = max_nan(worst, (w.dot(psi) - closed) / scale);
    }
    worst
}

fn random_features<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, l_bound: f64) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| {
            let dir = rng::unit_sphere(rng, d);
            let r: f64 = rng.random_range(0.0..=1.0);
            dir * (l_bound * r)
        })
        .collect()
}

/// Instance dimensions used by the randomized suites.
pub const SUITE_DIMS: [usize; 3] = [2, 6, 16];

/// Randomized instances of [`check_empirical_sf_bound`] per dimension.
pub fn suite_empirical_sf_bound(instances: usize, seed: u64) -> CheckReport {
    let parts: Vec<CheckReport> = SUITE_DIMS
        .iter()
        .map(|&d| {
            let mut rng = rng::stream(seed, &[0x5F, d as u64]);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..instances {
                let gamma = rng.random_range(0.0..0.999);
                let h = rng.random_range(1..=60);
                let l_bound = rng.random_range(0.1..3.0);
                let seq = random_features(&mut rng, h, d, l_bound);
                worst = max_nan(worst, check_empirical_sf_bound(gamma, &[seq]).worst_violation);
            }
            CheckReport::new("empirical_sf_bound", instances, worst, EIGEN_TOL)
        })
        .collect();
    CheckReport::merge("empirical_sf_bound", &parts)
}

pub fn suite_loewner_vw(instances: usize, seed: u64) -> CheckReport {
    let parts: Vec<CheckReport> = SUITE_DIMS
        .iter()
        .map(|&d| {
            let mut rng = rng::stream(seed, &[0x10E, d as u64]);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..instances {
                let gamma = rng.random_range(0.0..0.999);
                let h = rng.random_range(1..=40);
                let k = rng.random_range(0..=12);
                let lambda = 10f64.powf(rng.random_range(-3.0..1.0));
                let eps: Vec<Vec<DVector<f64>>> = (0..k).map(|_| random_features(&mut rng, h, d, 1.0)).collect();
                worst = max_nan(worst, check_loewner_vw(&eps, gamma, lambda, d, &mut rng));
            }
            CheckReport::new("loewner_vw", instances, worst, EIGEN_TOL)
        })
        .collect();
    CheckReport::merge("loewner_vw", &parts)
}

pub fn suite_elliptical_potential(instances: usize, seed: u64) -> CheckReport {
    let parts: Vec<CheckReport> = SUITE_DIMS
        .iter()
        .map(|&d| {
            let mut rng = rng::stream(seed, &[0xE11, d as u64]);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..instances {
                let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
                let l_bound = rng.random_range(0.1..3.0);
                let seq = random_features(&mut rng, 200, d, l_bound);
                let v0 = DMatrix::identity(d, d) * lambda;
                worst = max_nan(worst, check_elliptical_potential(&seq, &v0));
            }
            CheckReport::new("elliptical_potential", instances, worst, EIGEN_TOL)
        })
        .collect();
    CheckReport::merge("elliptical_potential", &parts)
}

pub fn suite_det_bound(instances: usize, seed: u64) -> CheckReport {
    let parts: Vec<CheckReport> = SUITE_DIMS
        .iter()
        .map(|&d| {
            let mut rng = rng::stream(seed, &[0xDE7, d as u64]);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..instances {
                let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
                let l_bound = rng.random_range(0.1..3.0);
                let n = rng.random_range(0..=300);
                let seq = random_features(&mut rng, n, d, l_bound);
                worst = max_nan(worst, check_det_bound(&seq, lambda, l_bound, d));
            }
            CheckReport::new("det_bound", instances, worst, EIGEN_TOL)
        })
        .collect();
    CheckReport::merge("det_bound", &parts)
}

/// `samples_per_instance` interior/boundary points are tested per instance.
pub fn suite_ucb_closed_form(instances: usize, samples_per_instance: usize, seed: u64) -> CheckReport {
    let parts: Vec<CheckReport> = SUITE_DIMS
        .iter()
        .map(|&d| {
            let mut rng = rng::stream(seed, &[0x0CB, d as u64]);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..instances {
                let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
                let n = rng.random_range(0..=50);
                let feats = random_features(&mut rng, n, d, 2.0);
                let v = if feats.is_empty() {
                    DMatrix::identity(d, d) * lambda
                } else {
                    dense_precision(lambda, &feats)
                };
                let mut b = DVector::zeros(d);
                for f in &feats {
                    b.axpy(rng.random_range(-2.0..2.0), f, 1.0);
                }
                let zhat = v.clone().cholesky().expect("V is positive definite").solve(&b);
                let psi = rng::standard_normal(&mut rng, d) * rng.random_range(0.0..5.0);
                let beta = rng.random_range(0.0..3.0);
                worst = max_nan(
                    worst,
                    check_ucb_closed_form(&v, &zhat, &psi, beta, samples_per_instance, &mut rng),
                );
            }
            CheckReport::new("ucb_closed_form", instances, worst, EIGEN_TOL)
        })
        .collect();
    CheckReport::merge("ucb_closed_form", &parts)
}

/// Coverage Monte-Carlo outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub runs: usize,
    pub steps: usize,
    pub violating_runs: usize,
    pub fraction: f64,
    pub threshold: f64,
}

/// Pass threshold `δ + 2√(δ(1−δ)/n) + 0.02`.
pub fn coverage_threshold(delta: f64, n_runs: usize) -> f64 {
    delta + 2.0 * (delta * (1.0 - delta) / n_runs as f64).sqrt() + 0.02
}

/// Fraction of independent runs in which `‖z_r − ẑ‖_V > beta_scale · β`
/// at any step. The agent acts with the unscaled `β`; `beta_scale < 1`
/// shrinks only the set being tested (negative control).
pub fn check_coverage(
    world: &Arc<FeatureWorld>,
    task: &RewardTask,
    cfg: &AgentConfig,
    delta: f64,
    n_runs: usize,
    steps: usize,
    seed: u64,
    beta_scale: f64,
) -> Result<(CheckReport, CoverageResult)> {
    let h = world.horizon();
    let mut violating = 0;
    for run in 0..n_runs {
        let run_seed = rng::derive_seed(seed, &[0xC0F, run as u64]);
        let mut oracle = SfOracle::new(world.clone());
        let mut behavior = Behavior::Learner(Learner::new(cfg.clone(), world.dim())?);
        let mut streams = Streams {
            agent: rng::stream(run_seed, &[rng::TAG_AGENT]),
            noise: rng::stream(run_seed, &[rng::TAG_NOISE]),
            env: rng::stream(run_seed, &[rng::TAG_ENV, 0]),
        };
        let mut env = Env {
            world,
            task,
            oracle: &mut oracle,
        };
        let mut state = 0;
        for i in 0..steps {
            let (k, t) = (i / h, i % h);
            if t == 0 {
                streams.env = rng::stream(run_seed, &[rng::TAG_ENV, k as u64]);
                state = world.sample_initial(&mut streams.env);
            }
            let (rec, next) = agent::step(&mut behavior, &mut env, state, i as u64, k, t, &mut streams, false)?;
            if rec.mahalanobis_true.unwrap() > beta_scale * rec.beta.unwrap() {
                violating += 1;
                break;
            }
            state = next;
        }
    }
    let fraction = violating as f64 / n_runs as f64;
    let threshold = coverage_threshold(delta, n_runs);
    let name = if beta_scale == 1.0 { "coverage" } else { "coverage_scaled_beta" };
    Ok((
        CheckReport::new(name, n_runs, fraction, threshold),
        CoverageResult {
            runs: n_runs,
            steps,
            violating_runs: violating,
            fraction,
            threshold,
        },
    ))
}

/// Mean cumulative regrets behind the scaling check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretScaling {
    pub short: usize,
    pub long: usize,
    pub agent_short: f64,
    pub agent_long: f64,
    pub agent_ratio: f64,
    pub random_short: f64,
    pub random_long: f64,
    pub random_ratio: f64,
}

pub const REGRET_AGENT_MAX_RATIO: f64 = 2.6;
pub const REGRET_RANDOM_MIN_RATIO: f64 = 3.4;

/// Runs the agent and the Random baseline on every pair (pair `i` under
/// seed `i`) for `long` episodes and compares mean `R_long / R_short`, with
/// `R_short` read from the same runs.
///
/// Pass iff the agent's ratio ≤ 2.6 and the baseline's ≥ 3.4; the reported
/// violation is the larger shortfall of the two.
pub fn check_regret_scaling(
    pairs: &[SuitePair],
    cfg: &AgentConfig,
    short: usize,
    long: usize,
) -> Result<(CheckReport, RegretScaling)> {
    let agent = AgentEntry::optibfm("optibfm", cfg.clone());
    let random = AgentEntry::random("random");
    let (mut a_s, mut a_l, mut r_s, mut r_l) = (0.0, 0.0, 0.0, 0.0);
    let opts = RunOptions::episodes(long);
    for (i, p) in pairs.iter().enumerate() {
        let a = run_single(&p.world, &p.task, &agent, i as u64, &opts)?;
        let r = run_single(&p.world, &p.task, &random, i as u64, &opts)?;
        a_s += a.cumulative_regret(short);
        a_l += a.cumulative_regret(long);
        r_s += r.cumulative_regret(short);
        r_l += r.cumulative_regret(long);
    }
    let n = pairs.len() as f64;
    let res = RegretScaling {
        short,
        long,
        agent_short: a_s / n,
        agent_long: a_l / n,
        agent_ratio: a_l / a_s,
        random_short: r_s / n,
        random_long: r_l / n,
        random_ratio: r_l / r_s,
    };
    let violation = max_nan(
        res.agent_ratio - REGRET_AGENT_MAX_RATIO,
        REGRET_RANDOM_MIN_RATIO - res.random_ratio,
    );
    Ok((CheckReport::new("regret_scaling", pairs.len(), violation, 0.0), res))
}

/// Default theoretical-radius agent used by the coverage check.
pub fn coverage_agent(delta: f64, s_bound: f64, sigma: f64) -> AgentConfig {
    AgentConfig {
        episodic: true,
        confidence: ConfidenceSpec::Theoretical {
            delta,
            s_bound,
            sigma,
        },
        ..AgentConfig::default()
    }
}

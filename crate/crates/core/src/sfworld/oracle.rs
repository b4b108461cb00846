//! Exact successor features and greedy policies for a [`FeatureWorld`].
//!
//! A policy table is deterministic and stationary. Its successor features are
//! the finite-horizon sum `Σ_{t<H} γᵗ E[φ(s_t)]`, which makes the expected
//! return of one episode exactly `ψ(s₀)ᵀ z` for any linear reward `φᵀz`.

use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sfworld::FeatureWorld;

pub const DEFAULT_VI_TOL: f64 = 1e-10;
pub const DEFAULT_CACHE_CAPACITY: usize = 4096;
const VI_MAX_ITERS: usize = 200_000;
const PI_MAX_ITERS: usize = 1_000;

/// Deterministic action table, one entry per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Policy(Vec<u16>);

impl Policy {
    pub fn constant(n_states: usize, action: usize) -> Self {
        Policy(vec![action as u16; n_states])
    }

    pub fn from_actions(actions: &[usize]) -> Self {
        Policy(actions.iter().map(|&a| a as u16).collect())
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s] as usize
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.0.iter().map(|&a| a as usize).collect()
    }
}

/// Successor-feature tables of one policy.
#[derive(Clone, Debug)]
pub struct SuccessorFeatures {
    n_actions: usize,
    /// Row `s·|A| + a` holds `ψ(s, a)`.
    pub state_action: DMatrix<f64>,
    /// Row `s` holds `ψ(s) = ψ(s, π(s))`.
    pub state: DMatrix<f64>,
}

impl SuccessorFeatures {
    pub fn psi(&self, s: usize) -> DVector<f64> {
        self.state.row(s).transpose()
    }

    pub fn psi_sa(&self, s: usize, a: usize) -> DVector<f64> {
        self.state_action.row(s * self.n_actions + a).transpose()
    }
}

/// Smallest action whose value is within roundoff of the maximum.
fn greedy_action(q: &[f64]) -> usize {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * (1.0 + max.abs());
    q.iter().position(|&v| v >= max - tol).unwrap_or(0)
}

fn state_rewards(world: &FeatureWorld, z: &DVector<f64>) -> DVector<f64> {
    world.features() * z
}

fn backup(world: &FeatureWorld, rewards: &DVector<f64>, values: &DVector<f64>, s: usize, a: usize) -> f64 {
    let future: f64 = world.successors(s, a).iter().map(|&(t, p)| p * values[t]).sum();
    rewards[s] + world.gamma() * future
}

fn greedy_from_values(world: &FeatureWorld, rewards: &DVector<f64>, values: &DVector<f64>) -> Policy {
    let mut q = vec![0.0; world.n_actions()];
    let actions: Vec<usize> = (0..world.n_states())
        .map(|s| {
            for (a, slot) in q.iter_mut().enumerate() {
                *slot = backup(world, rewards, values, s, a);
            }
            greedy_action(&q)
        })
        .collect();
    Policy::from_actions(&actions)
}

/// Greedy policy for reward `φᵀz` by value iteration (ties → lowest action index).
pub fn optimal_policy(world: &FeatureWorld, z: &DVector<f64>, vi_tol: f64) -> Result<Policy> {
    if z.len() != world.dim() {
        return Err(Error::DimensionMismatch {
            expected: world.dim(),
            got: z.len(),
        });
    }
    let rewards = state_rewards(world, z);
    let ns = world.n_states();
    let mut values = DVector::zeros(ns);
    let mut next = DVector::zeros(ns);
    let mut change = f64::INFINITY;
    for _ in 0..VI_MAX_ITERS {
        for s in 0..ns {
            next[s] = (0..world.n_actions())
                .map(|a| backup(world, &rewards, &values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        change = (&next - &values).amax();
        std::mem::swap(&mut values, &mut next);
        if change < vi_tol {
            return Ok(greedy_from_values(world, &rewards, &values));
        }
    }
    Err(Error::NoConvergence {
        iterations: VI_MAX_ITERS,
        change,
    })
}

/// Finite-horizon successor features of `policy` over `world.horizon()` steps.
pub fn successor_features(world: &FeatureWorld, policy: &Policy) -> SuccessorFeatures {
    successor_features_with_horizon(world, policy, world.horizon())
}

/// Backward recursion `ψ⁽¹⁾(s,a) = φ(s)`,
/// `ψ⁽ʰ⁺¹⁾(s,a) = φ(s) + γ Σ_{s'} P(s'|s,a) ψ⁽ʰ⁾(s', π(s'))`.
pub fn successor_features_with_horizon(
    world: &FeatureWorld,
    policy: &Policy,
    horizon: usize,
) -> SuccessorFeatures {
    let (ns, na, d) = (world.n_states(), world.n_actions(), world.dim());
    let gamma = world.gamma();
    // Row-major copies; the recursion touches rows only.
    let phi: Vec<f64> = (0..ns)
        .flat_map(|s| world.features().row(s).iter().copied().collect::<Vec<_>>())
        .collect();
    // State-level recursion under π for H − 1 steps, then one action-level
    // backup: ψ⁽ᴴ⁾(s,a) = φ(s) + γ Σ P(s'|s,a) ψ⁽ᴴ⁻¹⁾(s').
    let backup_into = |row: &mut [f64], s: usize, a: usize, prev: &[f64]| {
        row.copy_from_slice(&phi[s * d..(s + 1) * d]);
        for &(t, p) in world.successors(s, a) {
            let w = gamma * p;
            for (x, y) in row.iter_mut().zip(&prev[t * d..(t + 1) * d]) {
                *x += w * y;
            }
        }
    };
    let mut prev = vec![0.0; ns * d];
    let mut next = vec![0.0; ns * d];
    for _ in 1..horizon.max(1) {
        for s in 0..ns {
            backup_into(&mut next[s * d..(s + 1) * d], s, policy.action(s), &prev);
        }
        std::mem::swap(&mut prev, &mut next);
    }
    let mut sa = vec![0.0; ns * na * d];
    for s in 0..ns {
        for a in 0..na {
            backup_into(&mut sa[(s * na + a) * d..(s * na + a + 1) * d], s, a, &prev);
        }
    }
    let mut state = vec![0.0; ns * d];
    for s in 0..ns {
        let a = policy.action(s);
        state[s * d..(s + 1) * d].copy_from_slice(&sa[(s * na + a) * d..(s * na + a + 1) * d]);
    }
    SuccessorFeatures {
        n_actions: na,
        state_action: DMatrix::from_row_slice(ns * na, d, &sa),
        state: DMatrix::from_row_slice(ns, d, &state),
    }
}

/// Infinite-horizon state successor features, `(I − γP_π)⁻¹ Φ`.
pub fn discounted_successor_features(world: &FeatureWorld, policy: &Policy) -> DMatrix<f64> {
    let ns = world.n_states();
    let mut m = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for &(t, p) in world.successors(s, policy.action(s)) {
            m[(s, t)] -= world.gamma() * p;
        }
    }
    // I − γP is strictly diagonally dominant for γ < 1.
    m.lu()
        .solve(world.features())
        .expect("I - gamma*P is nonsingular for gamma < 1")
}

/// A solved policy with both successor-feature tables.
#[derive(Debug)]
pub struct PolicyEntry {
    pub policy: Policy,
    /// Finite-horizon tables (returns, regret, selection scores).
    pub sf: SuccessorFeatures,
    /// Infinite-horizon state SFs (policy improvement).
    pub sf_discounted: DMatrix<f64>,
}

impl PolicyEntry {
    /// `E_{s₀∼μ₀}[ψ(s₀)]ᵀ w`.
    pub fn expected_return(&self, world: &FeatureWorld, w: &DVector<f64>) -> f64 {
        world
            .init_dist()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| p * self.sf.state.row(s).transpose().dot(w))
            .sum()
    }
}

/// How the oracle finds `π_z` on a cache miss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    ValueIteration,
    /// Exact policy iteration warm-started from the previous answer.
    PolicyIteration,
}

/// Memoizing map `z ↦ (π_z, ψ^{π_z})`; the exact "perfect" behavior model.
pub struct SfOracle {
    world: Arc<FeatureWorld>,
    vi_tol: f64,
    solver: Solver,
    by_z: LruCache<Vec<u64>, Arc<PolicyEntry>>,
    by_policy: LruCache<Policy, Arc<PolicyEntry>>,
    discounted: LruCache<Policy, Arc<DMatrix<f64>>>,
    last: Option<Policy>,
    solves: u64,
    evaluations: u64,
}

impl SfOracle {
    pub fn new(world: Arc<FeatureWorld>) -> Self {
        Self::with_options(world, DEFAULT_VI_TOL, DEFAULT_CACHE_CAPACITY, Solver::PolicyIteration)
    }

    pub fn with_options(world: Arc<FeatureWorld>, vi_tol: f64, capacity: usize, solver: Solver) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        SfOracle {
            world,
            vi_tol,
            solver,
            by_z: LruCache::new(cap),
            by_policy: LruCache::new(cap),
            discounted: LruCache::new(cap),
            last: None,
            solves: 0,
            evaluations: 0,
        }
    }

    pub fn world(&self) -> &Arc<FeatureWorld> {
        &self.world
    }

    pub fn vi_tol(&self) -> f64 {
        self.vi_tol
    }

    /// Number of cache misses that ran a policy solver.
    pub fn solves(&self) -> u64 {
        self.solves
    }

    /// Number of distinct policies whose successor features were computed.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn entry_for_policy(&mut self, policy: Policy) -> Arc<PolicyEntry> {
        if let Some(e) = self.by_policy.get(&policy) {
            return e.clone();
        }
        self.evaluations += 1;
        let sf_discounted = (*self.discounted_for(&policy)).clone();
        let e = Arc::new(PolicyEntry {
            sf: successor_features(&self.world, &policy),
            sf_discounted,
            policy: policy.clone(),
        });
        self.by_policy.put(policy, e.clone());
        e
    }

    fn discounted_for(&mut self, policy: &Policy) -> Arc<DMatrix<f64>> {
        if let Some(m) = self.discounted.get(policy) {
            return m.clone();
        }
        let m = Arc::new(discounted_successor_features(&self.world, policy));
        self.discounted.put(policy.clone(), m.clone());
        m
    }

    fn solve(&mut self, z: &DVector<f64>) -> Result<Arc<PolicyEntry>> {
        self.solves += 1;
        match self.solver {
            Solver::ValueIteration => {
                let pi = optimal_policy(&self.world, z, self.vi_tol)?;
                Ok(self.entry_for_policy(pi))
            }
            Solver::PolicyIteration => {
                let world = self.world.clone();
                let rewards = state_rewards(&world, z);
                let mut policy = match &self.last {
                    Some(p) => p.clone(),
                    None => Policy::constant(world.n_states(), 0),
                };
                for _ in 0..PI_MAX_ITERS {
                    let values = &*self.discounted_for(&policy) * z;
                    let improved = greedy_from_values(&world, &rewards, &values);
                    if improved == policy {
                        self.last = Some(policy.clone());
                        return Ok(self.entry_for_policy(policy));
                    }
                    policy = improved;
                }
                Err(Error::NoConvergence {
                    iterations: PI_MAX_ITERS,
                    change: f64::NAN,
                })
            }
        }
    }

    /// Solved policy for `z`, memoized by the exact bit pattern of `z`.
    pub fn entry(&mut self, z: &DVector<f64>) -> Result<Arc<PolicyEntry>> {
        if z.len() != self.world.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.world.dim(),
                got: z.len(),
            });
        }
        let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
        if let Some(e) = self.by_z.get(&key) {
            return Ok(e.clone());
        }
        let e = self.solve(z)?;
        self.by_z.put(key, e.clone());
        Ok(e)
    }

    /// `(ψ(state, z), π_z(state))`.
    pub fn query(&mut self, state: usize, z: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let e = self.entry(z)?;
        Ok((e.sf.psi(state), e.policy.action(state)))
    }

    /// Exact expected episode return of `π_z` under reward `φᵀw`, `s₀ ∼ μ₀`.
    pub fn expected_return(&mut self, z: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        let e = self.entry(z)?;
        Ok(e.expected_return(&self.world, w))
    }
}

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const SNAPSHOT_FORMAT: &str = "optibfm-world";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Parameters of a randomly generated feature world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    pub gamma: f64,
    /// Episode length; defaults to the smallest `H` with `γ^H ≤ 1e-4`.
    #[serde(default)]
    pub horizon: Option<usize>,
    pub branching: usize,
    pub feat_bound: f64,
    pub seed: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_states == 0 || self.n_actions == 0 || self.dim == 0 {
            return bad("n_states, n_actions and dim must be positive".into());
        }
        if self.branching == 0 || self.branching > self.n_states {
            return bad(format!(
                "branching must lie in [1, n_states={}], got {}",
                self.n_states, self.branching
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.horizon == Some(0) {
            return bad("horizon must be positive".into());
        }
        if !(self.feat_bound > 0.0 && self.feat_bound.is_finite()) {
            return bad(format!("feat_bound must be positive, got {}", self.feat_bound));
        }
        if self.n_actions > u16::MAX as usize {
            return bad("too many actions".into());
        }
        Ok(())
    }

    pub fn resolved_horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(self.gamma))
    }
}

/// Smallest `H ≥ 1` with `γ^H ≤ 1e-4`.
pub fn default_horizon(gamma: f64) -> usize {
    ((1e-4f64).ln() / gamma.ln()).ceil().max(1.0) as usize
}

/// Finite MDP with per-state features; immutable after construction.
#[derive(Clone, Debug)]
pub struct FeatureWorld {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    horizon: usize,
    feat_bound: f64,
    /// Dense `[s][a][s']`, flattened.
    transition: Vec<f64>,
    init_dist: Vec<f64>,
    /// `n_states × d`, one feature vector per row.
    features: DMatrix<f64>,
    /// Nonzero successors per `(s, a)`.
    successors: Vec<Vec<(usize, f64)>>,
    init_cdf: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what}: negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

impl FeatureWorld {
    /// Build a world from explicit tensors, validating every invariant.
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        horizon: usize,
        transition: Vec<f64>,
        init_dist: Vec<f64>,
        features: DMatrix<f64>,
        feat_bound: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::InvalidParameter("empty world".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions * n_states,
                got: transition.len(),
            });
        }
        if init_dist.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                got: init_dist.len(),
            });
        }
        if features.nrows() != n_states || features.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: n_states,
                got: features.nrows(),
            });
        }
        check_distribution(&init_dist, "initial distribution")?;
        let mut successors = Vec::with_capacity(n_states * n_actions);
        for sa in 0..n_states * n_actions {
            let row = &transition[sa * n_states..(sa + 1) * n_states];
            check_distribution(row, "transition row")?;
            successors.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, &p)| (s, p))
                    .collect(),
            );
        }
        for s in 0..n_states {
            let n = features.row(s).norm();
            if !n.is_finite() || n > feat_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "feature of state {s} has norm {n} > bound {feat_bound}"
                )));
            }
        }
        let mut acc = 0.0;
        let init_cdf = init_dist
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(FeatureWorld {
            n_states,
            n_actions,
            gamma,
            horizon,
            feat_bound,
            transition,
            init_dist,
            features,
            successors,
            init_cdf,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn feat_bound(&self) -> f64 {
        self.feat_bound
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn phi(&self, s: usize) -> DVector<f64> {
        self.features.row(s).transpose()
    }

    /// Dense distribution `P(· | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.n_actions + a) * self.n_states;
        &self.transition[o..o + self.n_states]
    }

    /// Nonzero entries of `P(· | s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + a]
    }

    /// Same world with a different episode length.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut w = self.clone();
        w.horizon = horizon.max(1);
        w
    }

    /// Inverse-CDF draw of `s₀ ∼ μ₀` from a single uniform.
    pub fn sample_initial_with(&self, u: f64) -> usize {
        self.init_cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| last_positive(&self.init_dist))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample_initial_with(rng.random())
    }

    /// Inverse-CDF draw of `s' ∼ P(·|s,a)` from a single uniform.
    pub fn sample_next_with(&self, s: usize, a: usize, u: f64) -> usize {
        let succ = self.successors(s, a);
        let mut acc = 0.0;
        for &(t, p) in succ {
            acc += p;
            if u < acc {
                return t;
            }
        }
        succ.last().map(|&(t, _)| t).unwrap_or(s)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        self.sample_next_with(s, a, rng.random())
    }

    pub fn to_snapshot(&self, config: Option<&WorldConfig>) -> WorldSnapshot {
        WorldSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            config: config.cloned(),
            n_states: self.n_states,
            n_actions: self.n_actions,
            dim: self.dim(),
            gamma: self.gamma,
            horizon: self.horizon,
            feat_bound: self.feat_bound,
            init_dist: self.init_dist.clone(),
            transition: self.transition.clone(),
            features: (0..self.n_states)
                .map(|s| self.features.row(s).iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_snapshot(snap: &WorldSnapshot) -> Result<Self> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::InvalidParameter(format!(
                "not a world snapshot (format {:?})",
                snap.format
            )));
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported world snapshot version {}",
                snap.version
            )));
        }
        if snap.features.len() != snap.n_states
            || snap.features.iter().any(|r| r.len() != snap.dim)
        {
            return Err(Error::InvalidParameter("feature table has wrong shape".into()));
        }
        let features = DMatrix::from_fn(snap.n_states, snap.dim, |i, j| snap.features[i][j]);
        FeatureWorld::from_parts(
            snap.n_states,
            snap.n_actions,
            snap.gamma,
            snap.horizon,
            snap.transition.clone(),
            snap.init_dist.clone(),
            features,
            snap.feat_bound,
        )
    }

    pub fn save(&self, path: &Path, config: Option<&WorldConfig>) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_snapshot(config))
            .map_err(|e| Error::format(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: WorldSnapshot = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        FeatureWorld::from_snapshot(&snap)
    }
}

fn last_positive(p: &[f64]) -> usize {
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Self-describing, versioned world file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub format: String,
    pub version: u32,
    pub config: Option<WorldConfig>,
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    pub gamma: f64,
    pub horizon: usize,
    pub feat_bound: f64,
    pub init_dist: Vec<f64>,
    pub transition: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

/// Random world: every `(s, a)` moves to `branching` distinct uniformly chosen
/// successors with flat-Dirichlet probabilities; `μ₀` is uniform; each feature
/// is a uniform direction scaled to a radius in `[L/4, L]`.
pub fn make_random_world(config: &WorldConfig) -> Result<FeatureWorld> {
    config.validate()?;
    let (ns, na, d) = (config.n_states, config.n_actions, config.dim);
    let mut rng = rng::stream(config.seed, &[0x0003_041D]);

    let mut transition = vec![0.0; ns * na * ns];
    for sa in 0..ns * na {
        let targets = index::sample(&mut rng, ns, config.branching);
        let weights: Vec<f64> = (0..config.branching)
            .map(|_| rng.sample::<f64, _>(Exp1) + 1e-12)
            .collect();
        let total: f64 = weights.iter().sum();
        let row = &mut transition[sa * ns..(sa + 1) * ns];
        for (t, w) in targets.iter().zip(weights) {
            row[t] = w / total;
        }
    }

    let init_dist = vec![1.0 / ns as f64; ns];

    let mut features = DMatrix::zeros(ns, d);
    for s in 0..ns {
        let dir = rng::unit_sphere(&mut rng, d);
        let radius = config.feat_bound * rng.random_range(0.25..=1.0);
        features.set_row(s, &(dir * radius).transpose());
    }

    FeatureWorld::from_parts(
        ns,
        na,
        config.gamma,
        config.resolved_horizon(),
        transition,
        init_dist,
        features,
        config.feat_bound,
    )
}

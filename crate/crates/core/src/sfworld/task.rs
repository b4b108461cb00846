use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sfworld::FeatureWorld;

/// Time dependence of the true task vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Drift {
    Constant,
    /// `(step, z)` pairs, sorted by step; entry `i` is active on `[step_i, step_{i+1})`.
    PiecewiseConstant(Vec<(u64, DVector<f64>)>),
    LinearRamp {
        start: DVector<f64>,
        end: DVector<f64>,
        burn_in: u64,
        ramp: u64,
    },
}

/// Linear reward `r = φ(s)ᵀ z(t) + η`, `η ∼ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTask {
    z_true: DVector<f64>,
    noise_sigma: f64,
    s_bound: f64,
    drift: Drift,
}

impl RewardTask {
    pub fn new(z_true: DVector<f64>, noise_sigma: f64, s_bound: f64, drift: Drift) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise_sigma must be >= 0, got {noise_sigma}"
            )));
        }
        if !(s_bound > 0.0 && s_bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("s_bound must be positive, got {s_bound}")));
        }
        let d = z_true.len();
        let check = |z: &DVector<f64>, what: &str| -> Result<()> {
            if z.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: z.len(),
                });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("task vector"));
            }
            if z.norm() > s_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "{what} has norm {} > s_bound {s_bound}",
                    z.norm()
                )));
            }
            Ok(())
        };
        check(&z_true, "z_true")?;
        match &drift {
            Drift::Constant => {}
            Drift::PiecewiseConstant(schedule) => {
                if schedule.is_empty() {
                    return Err(Error::InvalidParameter("empty drift schedule".into()));
                }
                if schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::InvalidParameter(
                        "drift schedule steps must be strictly increasing".into(),
                    ));
                }
                for (_, z) in schedule {
                    check(z, "schedule entry")?;
                }
            }
            // The ball is convex, so checking both endpoints bounds the whole ramp.
            Drift::LinearRamp { start, end, .. } => {
                check(start, "ramp start")?;
                check(end, "ramp end")?;
            }
        }
        Ok(RewardTask {
            z_true,
            noise_sigma,
            s_bound,
            drift,
        })
    }

    pub fn constant(z_true: DVector<f64>, noise_sigma: f64, s_bound: f64) -> Result<Self> {
        Self::new(z_true, noise_sigma, s_bound, Drift::Constant)
    }

    pub fn z_true(&self) -> &DVector<f64> {
        &self.z_true
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn s_bound(&self) -> f64 {
        self.s_bound
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn dim(&self) -> usize {
        self.z_true.len()
    }

    pub fn is_stationary(&self) -> bool {
        matches!(self.drift, Drift::Constant)
    }

    /// True task vector at global step `step`.
    pub fn drift_value(&self, step: u64) -> DVector<f64> {
        match &self.drift {
            Drift::Constant => self.z_true.clone(),
            Drift::PiecewiseConstant(schedule) => {
                match schedule.iter().rev().find(|(s, _)| *s <= step) {
                    Some((_, z)) => z.clone(),
                    None => self.z_true.clone(),
                }
            }
            Drift::LinearRamp {
                start,
                end,
                burn_in,
                ramp,
            } => {
                if step <= *burn_in {
                    start.clone()
                } else if *ramp == 0 || step >= burn_in + ramp {
                    end.clone()
                } else {
                    let f = (step - burn_in) as f64 / *ramp as f64;
                    start * (1.0 - f) + end * f
                }
            }
        }
    }

    /// Noiseless reward `φ(s)ᵀ z(step)`.
    pub fn mean_reward(&self, world: &FeatureWorld, state: usize, step: u64) -> f64 {
        world.features().row(state).transpose().dot(&self.drift_value(step))
    }

    /// Noisy reward observation. Always consumes exactly one normal draw.
    pub fn reward_sample<R: Rng + ?Sized>(
        &self,
        world: &FeatureWorld,
        state: usize,
        step: u64,
        rng: &mut R,
    ) -> f64 {
        let eta: f64 = rng.sample(StandardNormal);
        self.mean_reward(world, state, step) + self.noise_sigma * eta
    }

    pub fn to_spec(&self) -> TaskSnapshot {
        TaskSnapshot {
            z_true: self.z_true.iter().copied().collect(),
            noise_sigma: self.noise_sigma,
            s_bound: self.s_bound,
        }
    }
}

/// Serializable summary of a stationary task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSnapshot {
    pub z_true: Vec<f64>,
    pub noise_sigma: f64,
    pub s_bound: f64,
}

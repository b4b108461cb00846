//! Synthetic ground truth: finite MDPs with linear rewards and exact
//! successor features, so every modelling assumption holds by construction.

mod oracle;
mod task;
mod world;

pub use oracle::{
    discounted_successor_features, optimal_policy, successor_features,
    successor_features_with_horizon, Policy, PolicyEntry, SfOracle, Solver, SuccessorFeatures,
    DEFAULT_CACHE_CAPACITY, DEFAULT_VI_TOL,
};
pub use task::{Drift, RewardTask, TaskSnapshot};
pub use world::{
    default_horizon, make_random_world, FeatureWorld, WorldConfig, WorldSnapshot,
    SNAPSHOT_FORMAT, SNAPSHOT_VERSION,
};

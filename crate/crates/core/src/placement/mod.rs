//! Placement strategies.
//!
//! The activation-aware pipeline is [`allocate_counts`] followed by
//! [`assign_experts`] and per-GPU packing; [`place`] dispatches by
//! [`Strategy`] to it, to one of the baselines, or to the exhaustive oracle.

mod assign;
mod baselines;
mod counts;
mod oracle;
mod utility;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assign::{assign_experts, preference_list, Assignment};
pub use baselines::{place_balanced, place_eplb, place_redundant, place_uniform, replica_counts};
pub use counts::{allocate_counts, ExpertCounts};
pub use oracle::{brute_force_optimal, check_oracle_size, OracleSolution};
pub use utility::{
    layer_utility, local_utility, sets_utility, unconstrained_optimum, ServerUtility,
    UtilityReport,
};

use crate::domain::{packable_slots, ClusterSpec, ModelSpec, PackError, Placement};
use crate::stats::ActivationStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("insufficient capacity: layer {layer} is short {deficit} expert slot(s)")]
    Infeasible { layer: usize, deficit: usize },
    #[error("instance too large for the exhaustive oracle: {0}")]
    OracleTooLarge(String),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ours,
    Uniform,
    Redundance,
    #[serde(rename = "smartmoe")]
    SmartMoe,
    Eplb,
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Ours,
        Strategy::Uniform,
        Strategy::Redundance,
        Strategy::SmartMoe,
        Strategy::Eplb,
        Strategy::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ours => "ours",
            Strategy::Uniform => "uniform",
            Strategy::Redundance => "redundance",
            Strategy::SmartMoe => "smartmoe",
            Strategy::Eplb => "eplb",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown strategy {0:?} (expected ours, uniform, redundance, smartmoe, eplb or oracle)")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

/// Output of the activation-aware pipeline with its intermediate results.
#[derive(Debug, Clone)]
pub struct OursResult {
    pub counts: ExpertCounts,
    pub assignment: Assignment,
    pub placement: Placement,
}

pub fn place_ours(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    stats: &ActivationStats,
) -> Result<OursResult, PlacementError> {
    let counts = allocate_counts(cluster, model, stats)?;
    let assignment = assign_experts(&counts, stats, model)?;
    let placement = assignment.pack(cluster, model)?;
    Ok(OursResult {
        counts,
        assignment,
        placement,
    })
}

/// Exhaustive optimum with each server's budget set to its packable slots
/// (capped at the number of distinct experts).
pub fn place_oracle(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    stats: &ActivationStats,
) -> Result<(Placement, OracleSolution), PlacementError> {
    let budgets: Vec<usize> = (0..cluster.num_servers())
        .map(|n| packable_slots(cluster, n, model).min(model.total_experts()))
        .collect();
    let sol = brute_force_optimal(&budgets, stats, model)?;
    let placement = sol.assignment.pack(cluster, model)?;
    Ok((placement, sol))
}

/// Run one strategy. `seed` only affects the randomized baselines.
pub fn place(
    strategy: Strategy,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    stats: &ActivationStats,
    seed: u64,
) -> Result<Placement, PlacementError> {
    match strategy {
        Strategy::Ours => place_ours(cluster, model, stats).map(|r| r.placement),
        Strategy::Uniform => place_uniform(cluster, model, seed),
        Strategy::Redundance => place_redundant(cluster, model, seed),
        Strategy::SmartMoe => place_balanced(cluster, model, stats),
        Strategy::Eplb => place_eplb(cluster, model, stats),
        Strategy::Oracle => place_oracle(cluster, model, stats).map(|(p, _)| p),
    }
}

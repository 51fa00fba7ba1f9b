//! Cost arithmetic: the remote-invocation proxy, the per-layer latency
//! model, migration cost and the migrate/stay decision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClusterSpec, DomainError, ModelSpec, Placement};
use crate::stats::ActivationStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("time model has {got} server entries, cluster has {expected}")]
    ServerCount { got: usize, expected: usize },
    #[error("server {server}: {field} must be >= 0")]
    Negative { server: usize, field: &'static str },
    #[error(transparent)]
    Shape(#[from] DomainError),
}

/// Linear compute model of one server: `comp_base + comp_per_token * tokens`
/// seconds per token batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerTiming {
    pub comp_base: f64,
    pub comp_per_token: f64,
}

/// Compute timings per server plus the network links of the cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeModel {
    timings: Vec<ServerTiming>,
    load_multiplier: Vec<f64>,
    link_latency: Vec<Vec<f64>>,
    link_bandwidth: Vec<Vec<f64>>,
}

impl TimeModel {
    pub fn new(cluster: &ClusterSpec, timings: Vec<ServerTiming>) -> Result<Self, CostError> {
        if timings.len() != cluster.num_servers() {
            return Err(CostError::ServerCount {
                got: timings.len(),
                expected: cluster.num_servers(),
            });
        }
        for (n, t) in timings.iter().enumerate() {
            if !(t.comp_base >= 0.0) {
                return Err(CostError::Negative {
                    server: n,
                    field: "comp_base",
                });
            }
            if !(t.comp_per_token >= 0.0) {
                return Err(CostError::Negative {
                    server: n,
                    field: "comp_per_token",
                });
            }
        }
        Ok(Self {
            load_multiplier: vec![1.0; timings.len()],
            timings,
            link_latency: cluster.link_latency.clone(),
            link_bandwidth: cluster.link_bandwidth.clone(),
        })
    }

    pub fn num_servers(&self) -> usize {
        self.timings.len()
    }

    pub fn timing(&self, server: usize) -> ServerTiming {
        self.timings[server]
    }

    pub fn load_multiplier(&self, server: usize) -> f64 {
        self.load_multiplier[server]
    }

    /// Clamped to at least 1.
    pub fn set_load_multiplier(&mut self, server: usize, value: f64) {
        self.load_multiplier[server] = value.max(1.0);
    }

    /// `(alpha + beta * tokens) * load_multiplier`, with at least one token.
    pub fn comp_time(&self, server: usize, tokens: u64) -> f64 {
        let t = &self.timings[server];
        (t.comp_base + t.comp_per_token * tokens.max(1) as f64) * self.load_multiplier[server]
    }

    /// Round trip for a remote call: link latency plus activations out and
    /// results back over the link. Zero for a local call.
    pub fn comm_time(&self, from: usize, to: usize, tokens: u64, model: &ModelSpec) -> f64 {
        if from == to {
            return 0.0;
        }
        let payload = tokens as f64 * model.token_bytes();
        self.link_latency[from][to] + 2.0 * payload / self.link_bandwidth[from][to]
    }
}

/// One expert call issued while processing a batch at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExpertInvocation {
    pub origin: usize,
    pub target: usize,
    pub target_gpu: usize,
    pub layer: usize,
    pub expert: usize,
    pub tokens: u64,
}

impl ExpertInvocation {
    pub fn is_remote(&self) -> bool {
        self.origin != self.target
    }
}

/// Communication plus compute time of one invocation.
pub fn invocation_time(inv: &ExpertInvocation, time: &TimeModel, model: &ModelSpec) -> f64 {
    time.comm_time(inv.origin, inv.target, inv.tokens, model) + time.comp_time(inv.target, inv.tokens)
}

/// Layer time is set by its slowest invocation.
pub fn layer_latency(invocations: &[ExpertInvocation], time: &TimeModel, model: &ModelSpec) -> f64 {
    invocations
        .iter()
        .map(|inv| invocation_time(inv, time, model))
        .fold(0.0, f64::max)
}

/// 1 when no GPU of `server` holds the expert.
pub fn remote_indicator(placement: &Placement, server: usize, layer: usize, expert: usize) -> u8 {
    u8::from(!placement.server_holds(server, layer, expert))
}

/// `sum_n sum_l sum_e f_n^l(e) * remote(n, l, e)`.
pub fn proxy_cost(placement: &Placement, stats: &ActivationStats) -> f64 {
    (0..placement.num_servers())
        .map(|n| server_remote_mass(placement, stats, n))
        .sum()
}

/// One server's share of [`proxy_cost`].
pub fn server_remote_mass(placement: &Placement, stats: &ActivationStats, server: usize) -> f64 {
    (0..placement.num_layers())
        .map(|l| {
            let f = stats.frequency(server, l);
            f.iter()
                .enumerate()
                .filter(|&(e, _)| remote_indicator(placement, server, l, e) == 1)
                .map(|(_, p)| p)
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationCostMode {
    /// Every slot that changes, loads and evictions alike.
    #[default]
    Literal,
    /// Only slots that gain an expert.
    LoadsOnly,
}

/// `sum_{n,g,e} [z != z'] * m_e / speed_{n,g}` in seconds.
pub fn migration_cost(
    old: &Placement,
    new: &Placement,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    mode: MigrationCostMode,
) -> Result<f64, DomainError> {
    old.check_shape(cluster, model)?;
    new.check_shape(cluster, model)?;
    let mut seconds = 0.0;
    for (n, server) in cluster.servers.iter().enumerate() {
        for (g, gpu) in server.gpus.iter().enumerate() {
            let per_slot = model.expert_size as f64 / gpu.load_bandwidth;
            let mut changed = 0usize;
            for (l, &experts) in model.experts_per_layer.iter().enumerate() {
                for e in 0..experts {
                    let before = old.holds(n, g, l, e);
                    let after = new.holds(n, g, l, e);
                    let counts = match mode {
                        MigrationCostMode::Literal => before != after,
                        MigrationCostMode::LoadsOnly => !before && after,
                    };
                    changed += usize::from(counts);
                }
            }
            seconds += changed as f64 * per_slot;
        }
    }
    Ok(seconds)
}

/// Factors that turn remote frequency mass into expected seconds over the
/// next evaluation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSnapshot {
    /// Average extra seconds a remote invocation cost in the window.
    pub avg_remote_penalty: f64,
    /// Expected invocations per (server, layer) over the next interval.
    pub projected_volume: f64,
    pub window_start: f64,
    pub window_end: f64,
}

/// `C(P) = proxy_cost(P) * avg_remote_penalty * projected_volume`.
pub fn expected_cost(placement: &Placement, stats: &ActivationStats, snapshot: &CostSnapshot) -> f64 {
    proxy_cost(placement, stats) * snapshot.avg_remote_penalty * snapshot.projected_volume
}

/// Strict form of the adoption rule: migrate iff `C(P') + T_mig < C(P)`.
pub fn migration_rule(candidate_cost: f64, migration_seconds: f64, current_cost: f64) -> bool {
    candidate_cost + migration_seconds < current_cost
}

/// Everything that went into one migrate/stay decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationDecision {
    pub migrate: bool,
    pub current_cost: f64,
    pub candidate_cost: f64,
    pub migration_seconds: f64,
    pub current_proxy: f64,
    pub candidate_proxy: f64,
    pub snapshot: CostSnapshot,
}

pub fn should_migrate(
    old: &Placement,
    candidate: &Placement,
    stats: &ActivationStats,
    snapshot: &CostSnapshot,
    cluster: &ClusterSpec,
    model: &ModelSpec,
    mode: MigrationCostMode,
) -> Result<MigrationDecision, DomainError> {
    let migration_seconds = migration_cost(old, candidate, cluster, model, mode)?;
    let current_proxy = proxy_cost(old, stats);
    let candidate_proxy = proxy_cost(candidate, stats);
    let scale = snapshot.avg_remote_penalty * snapshot.projected_volume;
    let current_cost = current_proxy * scale;
    let candidate_cost = candidate_proxy * scale;
    Ok(MigrationDecision {
        migrate: migration_rule(candidate_cost, migration_seconds, current_cost),
        current_cost,
        candidate_cost,
        migration_seconds,
        current_proxy,
        candidate_proxy,
        snapshot: *snapshot,
    })
}

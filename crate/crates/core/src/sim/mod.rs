//! Deterministic event-driven simulation of distributed MoE serving.

mod engine;
mod event;
mod metrics;
mod workload;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{run, simulate, MigrationSettings, SimConfig};
pub use event::{EventKind, EventQueue, SimEvent};
pub use metrics::{
    InvocationSample, LatencyStats, Metrics, MigrationRecord, RatioPoint, RequestRecord, Summary,
};
pub use workload::{
    generate_workload, skew_distribution, stats_from_requests, ExpertSource, RequestTrace,
    ServerWorkload, TokenDist, WorkloadSpec,
};

use crate::cost::{CostError, ServerTiming, TimeModel};
use crate::domain::{ClusterSpec, DomainError, ModelSpec};
use crate::placement::PlacementError;
use crate::stats::{ActivationStats, StatsError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("layer {layer} expert {expert} is not placed anywhere (t = {time})")]
    Unplaced {
        layer: usize,
        expert: usize,
        time: f64,
    },
    #[error("initial placement violates coverage or memory constraints")]
    InvalidPlacement,
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("internal simulator error: {0}")]
    Internal(String),
}

/// Everything one simulation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub cluster: ClusterSpec,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    pub timings: Vec<ServerTiming>,
    #[serde(default)]
    pub sim: SimConfig,
    /// Seed of the profiling run that seeds the initial placement.
    #[serde(default)]
    pub profile_seed: u64,
}

impl Scenario {
    pub fn time_model(&self) -> Result<TimeModel, SimError> {
        Ok(TimeModel::new(&self.cluster, self.timings.clone())?)
    }

    /// The workload redrawn with a different arrival/selection stream but
    /// the same expert popularity, standing in for historical data.
    pub fn profile_workload(&self) -> WorkloadSpec {
        pin_distributions(&self.workload).reseeded(workload::mix_seed(self.profile_seed, &[7, self.workload.seed]))
    }

    pub fn profile_stats(&self) -> Result<ActivationStats, SimError> {
        let reqs = generate_workload(&self.profile_workload(), &self.model)?;
        stats_from_requests(&reqs, self.cluster.num_servers(), &self.model, self.sim.counting)
    }

    pub fn requests(&self) -> Result<Vec<RequestTrace>, SimError> {
        generate_workload(&self.workload, &self.model)
    }

    /// Generate, profile and simulate.
    pub fn run(&self) -> Result<Metrics, SimError> {
        let profile = self.profile_stats()?;
        let requests = self.requests()?;
        run(&self.cluster, &self.model, &profile, &requests, self.time_model()?, &self.sim)
    }
}

/// Fix every synthetic source's popularity to the workload's current seed so
/// reseeding only changes arrivals and draws.
fn pin_distributions(w: &WorkloadSpec) -> WorkloadSpec {
    let mut out = w.clone();
    for s in &mut out.servers {
        if let ExpertSource::SyntheticSkew {
            distribution_seed, ..
        } = &mut s.experts
        {
            distribution_seed.get_or_insert(w.seed);
        }
    }
    out
}

/// Result of a two-phase run where the activation pattern changes midway.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftOutcome {
    /// Arrival time of the first phase-two request.
    pub shift_time: f64,
    pub migrations: usize,
    pub phase_latency: [f64; 2],
    pub phase_local_ratio: [f64; 2],
    pub mean_latency: f64,
    #[serde(skip)]
    pub metrics: Metrics,
}

/// Build the concatenated request stream of two phases: phase two's
/// arrivals start where phase one's end.
pub fn shift_requests(
    phase_a: &WorkloadSpec,
    phase_b: &WorkloadSpec,
    model: &ModelSpec,
) -> Result<(Vec<RequestTrace>, f64), SimError> {
    let a = generate_workload(phase_a, model)?;
    let boundary = a.iter().map(|r| r.arrival).fold(0.0, f64::max);
    let mut b_spec = pin_distributions(phase_b);
    for s in &mut b_spec.servers {
        s.start_time += boundary;
    }
    let mut b = generate_workload(&b_spec, model)?;
    for r in &mut b {
        r.phase = 1;
    }
    let shift_time = b.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
    let mut all = a;
    all.extend(b);
    all.sort_by(|x, y| {
        x.arrival
            .total_cmp(&y.arrival)
            .then(x.phase.cmp(&y.phase))
            .then(x.origin.cmp(&y.origin))
    });
    for (i, r) in all.iter_mut().enumerate() {
        r.id = i;
    }
    Ok((all, shift_time))
}

/// Run `base` (whose workload is phase one) followed by `phase_b`. The
/// initial placement is profiled on phase one.
pub fn replay_shift(base: &Scenario, phase_b: &WorkloadSpec) -> Result<ShiftOutcome, SimError> {
    let (requests, shift_time) = shift_requests(&base.workload, phase_b, &base.model)?;
    let profile = base.profile_stats()?;
    let metrics = run(
        &base.cluster,
        &base.model,
        &profile,
        &requests,
        base.time_model()?,
        &base.sim,
    )?;
    Ok(ShiftOutcome {
        shift_time,
        migrations: metrics.adopted_migrations().count(),
        phase_latency: [metrics.phase_mean_latency(0), metrics.phase_mean_latency(1)],
        phase_local_ratio: [metrics.phase_local_ratio(0), metrics.phase_local_ratio(1)],
        mean_latency: metrics.mean_latency(),
        metrics,
    })
}

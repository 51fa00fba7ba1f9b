//! The event loop.
//!
//! Requests walk their layers strictly in order. At each layer the origin
//! dispatches one invocation per selected expert, locally when it holds the
//! expert and otherwise to the holder with the cheapest link; the layer
//! completes when its slowest invocation does. Stats ticks refresh the load
//! multipliers and migration checks re-run the placement on the statistics
//! gathered since the previous check.

use serde::{Deserialize, Serialize};

use super::event::{EventKind, EventQueue, SimEvent};
use super::metrics::{InvocationSample, Metrics, MigrationRecord, RequestRecord};
use super::workload::RequestTrace;
use super::SimError;
use crate::cost::{invocation_time, should_migrate, CostSnapshot, ExpertInvocation, MigrationCostMode, TimeModel};
use crate::domain::{validate_placement, ClusterSpec, ModelSpec, Placement};
use crate::placement::{place, Strategy};
use crate::stats::{ActivationStats, CountingMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MigrationSettings {
    pub enabled: bool,
    /// Seconds between checks.
    pub interval: f64,
    pub cost_mode: MigrationCostMode,
}

impl Default for MigrationSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 300.0,
            cost_mode: MigrationCostMode::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub strategy: Strategy,
    /// Seed for the randomized placement baselines.
    pub placement_seed: u64,
    pub migration: MigrationSettings,
    /// Seconds between load-multiplier refreshes.
    pub stats_tick: f64,
    /// Fixed non-expert time per layer per batch.
    pub non_moe_seconds: f64,
    pub counting: CountingMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ours,
            placement_seed: 0,
            migration: MigrationSettings::default(),
            stats_tick: 30.0,
            non_moe_seconds: 0.0,
            counting: CountingMode::Tokens,
        }
    }
}

/// `holders[layer][expert]`: `(server, first gpu)` of every copy.
struct Routes {
    holders: Vec<Vec<Vec<(usize, usize)>>>,
}

impl Routes {
    fn build(p: &Placement) -> Self {
        let holders = p
            .experts_per_layer()
            .iter()
            .enumerate()
            .map(|(l, &experts)| {
                (0..experts)
                    .map(|e| {
                        (0..p.num_servers())
                            .filter_map(|n| {
                                (0..p.num_gpus(n)).find(|&g| p.holds(n, g, l, e)).map(|g| (n, g))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { holders }
    }
}

#[derive(Debug, Clone, Default)]
struct RequestState {
    pending: usize,
    targets: Vec<usize>,
    remote: usize,
    invocations: usize,
}

/// Counters for the statistics window since the last migration check.
struct Window {
    stats: ActivationStats,
    remote_penalty: f64,
    remote_calls: usize,
    invocations: usize,
}

impl Window {
    fn reset(&mut self, time: f64) {
        self.stats.reset(time);
        self.remote_penalty = 0.0;
        self.remote_calls = 0;
        self.invocations = 0;
    }
}

struct Engine<'a> {
    cluster: &'a ClusterSpec,
    model: &'a ModelSpec,
    requests: &'a [RequestTrace],
    config: &'a SimConfig,
    time: TimeModel,
    placement: Placement,
    routes: Routes,
    pending_migration: Option<Placement>,
    window: Window,
    active: Vec<usize>,
    state: Vec<RequestState>,
    queue: EventQueue,
    metrics: Metrics,
    completed: usize,
}

/// Simulate `requests` starting from `initial`. Requests must be sorted by
/// id with `id == index`.
pub fn simulate(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    initial: Placement,
    requests: &[RequestTrace],
    time: TimeModel,
    config: &SimConfig,
) -> Result<Metrics, SimError> {
    if !validate_placement(&initial, cluster, model)?.is_ok() {
        return Err(SimError::InvalidPlacement);
    }
    if let Some((i, _)) = requests.iter().enumerate().find(|(i, r)| r.id != *i) {
        return Err(SimError::Workload(format!("request at index {i} has id {}", requests[i].id)));
    }
    if let Some(r) = requests.iter().find(|r| r.origin >= cluster.num_servers() || r.experts.len() != model.num_layers) {
        return Err(SimError::Workload(format!("request {} does not fit the cluster/model", r.id)));
    }
    if config.migration.enabled && !(config.migration.interval > 0.0) {
        return Err(SimError::Config("migration interval must be > 0".into()));
    }
    if !(config.stats_tick > 0.0) {
        return Err(SimError::Config("stats tick must be > 0".into()));
    }
    let servers = cluster.num_servers();
    let mut engine = Engine {
        cluster,
        model,
        requests,
        config,
        time,
        routes: Routes::build(&initial),
        placement: initial,
        pending_migration: None,
        window: Window {
            stats: ActivationStats::with_mode(servers, model, config.counting),
            remote_penalty: 0.0,
            remote_calls: 0,
            invocations: 0,
        },
        active: vec![0; servers],
        state: vec![RequestState::default(); requests.len()],
        queue: EventQueue::new(),
        metrics: Metrics {
            num_servers: servers,
            ..Default::default()
        },
        completed: 0,
    };
    engine.run()?;
    let mut metrics = engine.metrics;
    metrics.requests.sort_by_key(|r| r.id);
    Ok(metrics)
}

/// Place with `config.strategy` on `profile` statistics, then simulate.
pub fn run(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    profile: &ActivationStats,
    requests: &[RequestTrace],
    time: TimeModel,
    config: &SimConfig,
) -> Result<Metrics, SimError> {
    let initial = place(config.strategy, cluster, model, profile, config.placement_seed)?;
    simulate(cluster, model, initial, requests, time, config)
}

impl Engine<'_> {
    fn run(&mut self) -> Result<(), SimError> {
        if self.requests.is_empty() {
            return Ok(());
        }
        for r in self.requests {
            self.queue.push(SimEvent {
                time: r.arrival,
                kind: EventKind::Arrival,
                request: r.id,
            });
        }
        self.system(self.config.stats_tick, EventKind::StatsTick);
        if self.config.migration.enabled {
            self.system(self.config.migration.interval, EventKind::MigrationCheck);
        }
        while let Some(ev) = self.queue.pop() {
            let t = ev.time;
            match ev.kind {
                EventKind::Arrival => self.at(t, EventKind::LayerDispatch { layer: 0 }, ev.request),
                EventKind::LayerDispatch { layer } => self.dispatch(t, ev.request, layer)?,
                EventKind::ExpertComplete { slot, .. } => {
                    let st = &mut self.state[ev.request];
                    self.active[st.targets[slot]] -= 1;
                    st.pending -= 1;
                    if st.pending == 0 {
                        let layer = match ev.kind {
                            EventKind::ExpertComplete { layer, .. } => layer,
                            _ => unreachable!(),
                        };
                        self.at(t, EventKind::LayerComplete { layer }, ev.request);
                    }
                }
                EventKind::LayerComplete { layer } => {
                    if layer + 1 < self.model.num_layers {
                        self.at(t, EventKind::LayerDispatch { layer: layer + 1 }, ev.request);
                    } else {
                        self.at(t, EventKind::RequestComplete, ev.request);
                    }
                }
                EventKind::RequestComplete => self.complete(t, ev.request),
                EventKind::StatsTick => {
                    for n in 0..self.active.len() {
                        self.time.set_load_multiplier(n, self.active[n] as f64);
                    }
                    if self.completed < self.requests.len() {
                        self.system(t + self.config.stats_tick, EventKind::StatsTick);
                    }
                }
                EventKind::MigrationCheck => {
                    self.check_migration(t)?;
                    self.window.reset(t);
                    if self.completed < self.requests.len() {
                        self.system(t + self.config.migration.interval, EventKind::MigrationCheck);
                    }
                }
                EventKind::MigrationComplete => {
                    let next = self
                        .pending_migration
                        .take()
                        .ok_or_else(|| SimError::Internal("migration completed twice".into()))?;
                    self.routes = Routes::build(&next);
                    self.placement = next;
                }
            }
        }
        if self.completed != self.requests.len() {
            return Err(SimError::Internal(format!(
                "{} of {} requests completed",
                self.completed,
                self.requests.len()
            )));
        }
        Ok(())
    }

    fn at(&mut self, time: f64, kind: EventKind, request: usize) {
        self.queue.push(SimEvent { time, kind, request });
    }

    fn system(&mut self, time: f64, kind: EventKind) {
        self.at(time, kind, SimEvent::SYSTEM);
    }

    /// Serving server and GPU for one expert call.
    fn route(&self, origin: usize, layer: usize, expert: usize, tokens: u64, time: f64) -> Result<(usize, usize), SimError> {
        let holders = &self.routes.holders[layer][expert];
        if let Some(&local) = holders.iter().find(|(n, _)| *n == origin) {
            return Ok(local);
        }
        holders
            .iter()
            .copied()
            .min_by(|a, b| {
                let ca = self.time.comm_time(origin, a.0, tokens, self.model);
                let cb = self.time.comm_time(origin, b.0, tokens, self.model);
                ca.total_cmp(&cb).then(a.0.cmp(&b.0))
            })
            .ok_or(SimError::Unplaced { layer, expert, time })
    }

    fn dispatch(&mut self, t: f64, id: usize, layer: usize) -> Result<(), SimError> {
        let req = &self.requests[id];
        let start = t + self.config.non_moe_seconds;
        let weight = match self.config.counting {
            CountingMode::Tokens => req.tokens,
            CountingMode::Batches => 1,
        };
        let mut targets = Vec::with_capacity(req.experts[layer].len());
        for (slot, &expert) in req.experts[layer].iter().enumerate() {
            let (target, gpu) = self.route(req.origin, layer, expert, req.tokens, t)?;
            let inv = ExpertInvocation {
                origin: req.origin,
                target,
                target_gpu: gpu,
                layer,
                expert,
                tokens: req.tokens,
            };
            let duration = invocation_time(&inv, &self.time, self.model);
            self.queue.push(SimEvent {
                time: start + duration,
                kind: EventKind::ExpertComplete { layer, slot },
                request: id,
            });
            self.active[target] += 1;
            targets.push(target);
            let remote = inv.is_remote();
            if remote {
                self.metrics.remote_bytes += 2.0 * req.tokens as f64 * self.model.token_bytes();
                self.window.remote_penalty += self.time.comm_time(req.origin, target, req.tokens, self.model);
                self.window.remote_calls += 1;
            }
            self.window.invocations += 1;
            self.metrics.samples.push(InvocationSample {
                time: t,
                origin: req.origin,
                local: !remote,
                weight,
                phase: req.phase,
            });
        }
        let st = &mut self.state[id];
        st.remote += targets.iter().filter(|&&x| x != req.origin).count();
        st.invocations += targets.len();
        st.pending = targets.len();
        st.targets = targets;
        let event = crate::stats::ActivationEvent {
            virtual_time: t,
            server: req.origin,
            layer,
            experts: req.experts[layer].clone(),
            tokens: req.tokens,
        };
        self.window.stats.ingest(&event)?;
        Ok(())
    }

    fn complete(&mut self, t: f64, id: usize) {
        let req = &self.requests[id];
        let st = &self.state[id];
        self.metrics.requests.push(RequestRecord {
            id,
            server: req.origin,
            arrival: req.arrival,
            completion: t,
            latency: t - req.arrival,
            remote_invocations: st.remote,
            invocations: st.invocations,
            phase: req.phase,
        });
        self.completed += 1;
    }

    fn check_migration(&mut self, t: f64) -> Result<(), SimError> {
        if self.pending_migration.is_some() || self.window.stats.total_volume() == 0 {
            return Ok(());
        }
        let stats = &self.window.stats;
        let candidate = place(
            self.config.strategy,
            self.cluster,
            self.model,
            stats,
            self.config.placement_seed,
        )?;
        let penalty = if self.window.remote_calls > 0 {
            self.window.remote_penalty / self.window.remote_calls as f64
        } else {
            0.0
        };
        let elapsed = t - stats.window_start;
        let interval = self.config.migration.interval;
        let cells = (self.cluster.num_servers() * self.model.num_layers) as f64;
        let rate = if elapsed > 0.0 { interval / elapsed } else { 1.0 };
        let snapshot = CostSnapshot {
            avg_remote_penalty: penalty,
            projected_volume: self.window.invocations as f64 / cells * rate,
            window_start: stats.window_start,
            window_end: t,
        };
        let decision = should_migrate(
            &self.placement,
            &candidate,
            stats,
            &snapshot,
            self.cluster,
            self.model,
            self.config.migration.cost_mode,
        )?;
        let adopted = decision.migrate;
        let completes_at = adopted.then_some(t + decision.migration_seconds);
        self.metrics.migrations.push(MigrationRecord {
            time: t,
            adopted,
            completes_at,
            decision,
        });
        if let Some(done) = completes_at {
            self.pending_migration = Some(candidate);
            self.system(done, EventKind::MigrationComplete);
        }
        Ok(())
    }
}

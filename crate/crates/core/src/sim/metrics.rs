//! What a simulation run records and the summaries derived from it.

use serde::Serialize;

use crate::cost::MigrationDecision;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub id: usize,
    pub server: usize,
    pub arrival: f64,
    pub completion: f64,
    pub latency: f64,
    pub remote_invocations: usize,
    pub invocations: usize,
    pub phase: usize,
}

/// One expert invocation as seen by the local-ratio accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvocationSample {
    pub time: f64,
    pub origin: usize,
    pub local: bool,
    /// Weight under the run's counting mode.
    pub weight: u64,
    pub phase: usize,
}

/// A migration candidate evaluated at a check, adopted or not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationRecord {
    pub time: f64,
    pub adopted: bool,
    /// When the new placement goes live, for adopted candidates.
    pub completes_at: Option<f64>,
    #[serde(flatten)]
    pub decision: MigrationDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioPoint {
    pub start: f64,
    pub end: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub num_servers: usize,
    /// Sorted by request id.
    pub requests: Vec<RequestRecord>,
    pub samples: Vec<InvocationSample>,
    pub migrations: Vec<MigrationRecord>,
    /// Bytes sent across the network, both directions.
    pub remote_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl LatencyStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                count: 0,
                mean: 0.0,
                median: 0.0,
                p95: 0.0,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: percentile(&v, 0.5),
            p95: percentile(&v, 0.95),
        }
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub requests: usize,
    pub global: LatencyStats,
    pub servers: Vec<LatencyStats>,
    pub final_local_ratio: f64,
    pub migrations: usize,
    pub candidates_evaluated: usize,
    pub remote_bytes: f64,
}

impl Metrics {
    pub fn latencies(&self) -> Vec<f64> {
        self.requests.iter().map(|r| r.latency).collect()
    }

    pub fn mean_latency(&self) -> f64 {
        LatencyStats::of(&self.latencies()).mean
    }

    pub fn server_latency(&self, server: usize) -> LatencyStats {
        let v: Vec<f64> = self
            .requests
            .iter()
            .filter(|r| r.server == server)
            .map(|r| r.latency)
            .collect();
        LatencyStats::of(&v)
    }

    pub fn phase_mean_latency(&self, phase: usize) -> f64 {
        let v: Vec<f64> = self
            .requests
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.latency)
            .collect();
        LatencyStats::of(&v).mean
    }

    fn ratio_of<'a>(samples: impl Iterator<Item = &'a InvocationSample>) -> Option<f64> {
        let (local, total) = samples.fold((0u64, 0u64), |(l, t), s| {
            (l + if s.local { s.weight } else { 0 }, t + s.weight)
        });
        (total > 0).then(|| local as f64 / total as f64)
    }

    /// Share of invocation weight served locally over the whole run.
    pub fn local_ratio(&self) -> f64 {
        Self::ratio_of(self.samples.iter()).unwrap_or(1.0)
    }

    pub fn server_local_ratio(&self, server: usize) -> f64 {
        Self::ratio_of(self.samples.iter().filter(|s| s.origin == server)).unwrap_or(1.0)
    }

    pub fn phase_local_ratio(&self, phase: usize) -> f64 {
        Self::ratio_of(self.samples.iter().filter(|s| s.phase == phase)).unwrap_or(1.0)
    }

    /// Local ratio among invocations dispatched at or after `time`.
    pub fn local_ratio_after(&self, time: f64) -> f64 {
        Self::ratio_of(self.samples.iter().filter(|s| s.time >= time)).unwrap_or(1.0)
    }

    /// Local ratio per fixed window of virtual time. Windows without any
    /// invocation are omitted.
    pub fn local_compute_ratio(&self, window: f64) -> Vec<RatioPoint> {
        assert!(window > 0.0, "window must be positive");
        let mut out: Vec<RatioPoint> = Vec::new();
        let mut acc: Option<(usize, u64, u64)> = None;
        let flush = |acc: Option<(usize, u64, u64)>, out: &mut Vec<RatioPoint>| {
            if let Some((idx, local, total)) = acc {
                if total > 0 {
                    out.push(RatioPoint {
                        start: idx as f64 * window,
                        end: (idx + 1) as f64 * window,
                        ratio: local as f64 / total as f64,
                    });
                }
            }
        };
        let mut samples: Vec<&InvocationSample> = self.samples.iter().collect();
        samples.sort_by(|a, b| a.time.total_cmp(&b.time));
        for s in samples {
            let idx = (s.time / window).floor() as usize;
            match acc {
                Some((i, l, t)) if i == idx => {
                    acc = Some((i, l + if s.local { s.weight } else { 0 }, t + s.weight));
                }
                _ => {
                    flush(acc, &mut out);
                    acc = Some((idx, if s.local { s.weight } else { 0 }, s.weight));
                }
            }
        }
        flush(acc, &mut out);
        out
    }

    pub fn adopted_migrations(&self) -> impl Iterator<Item = &MigrationRecord> {
        self.migrations.iter().filter(|m| m.adopted)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            requests: self.requests.len(),
            global: LatencyStats::of(&self.latencies()),
            servers: (0..self.num_servers).map(|n| self.server_latency(n)).collect(),
            final_local_ratio: self.local_ratio(),
            migrations: self.adopted_migrations().count(),
            candidates_evaluated: self.migrations.len(),
            remote_bytes: self.remote_bytes,
        }
    }
}

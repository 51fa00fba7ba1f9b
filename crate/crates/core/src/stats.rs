//! Activation statistics: per-server, per-layer expert invocation counts,
//! the frequencies and entropies derived from them, and the typical-set
//! coverage bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ModelSpec;

/// Tolerance used when checking that a distribution sums to one.
const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("event server {server} out of range (have {servers}): {event:?}")]
    Server {
        server: usize,
        servers: usize,
        event: ActivationEvent,
    },
    #[error("event layer {layer} out of range (have {layers}): {event:?}")]
    Layer {
        layer: usize,
        layers: usize,
        event: ActivationEvent,
    },
    #[error("event expert {expert} out of range for layer {layer}: {event:?}")]
    Expert {
        layer: usize,
        expert: usize,
        event: ActivationEvent,
    },
    #[error("event token count must be >= 1: {event:?}")]
    Tokens { event: ActivationEvent },
    #[error("delta must be in (0, 1), got {0}")]
    Delta(f64),
    #[error("distribution must be non-negative and sum to 1 (sum = {0})")]
    Unnormalized(f64),
}

/// One gating decision: a batch of `tokens` tokens at `server` activated
/// `experts` in `layer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationEvent {
    #[serde(rename = "t")]
    pub virtual_time: f64,
    pub server: usize,
    pub layer: usize,
    pub experts: Vec<usize>,
    pub tokens: u64,
}

/// How a single event contributes to the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingMode {
    /// Add the batch's token count.
    #[default]
    Tokens,
    /// Add one per batch.
    Batches,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStats {
    counts: Vec<Vec<Vec<u64>>>,
    mode: CountingMode,
    pub window_start: f64,
    pub window_end: f64,
}

impl ActivationStats {
    pub fn new(num_servers: usize, model: &ModelSpec) -> Self {
        Self::with_mode(num_servers, model, CountingMode::Tokens)
    }

    pub fn with_mode(num_servers: usize, model: &ModelSpec, mode: CountingMode) -> Self {
        let counts = (0..num_servers)
            .map(|_| model.experts_per_layer.iter().map(|&e| vec![0; e]).collect())
            .collect();
        Self {
            counts,
            mode,
            window_start: 0.0,
            window_end: 0.0,
        }
    }

    /// Build directly from a count tensor `[server][layer][expert]`.
    pub fn from_counts(counts: Vec<Vec<Vec<u64>>>) -> Self {
        Self {
            counts,
            mode: CountingMode::Tokens,
            window_start: 0.0,
            window_end: 0.0,
        }
    }

    pub fn mode(&self) -> CountingMode {
        self.mode
    }

    pub fn num_servers(&self) -> usize {
        self.counts.len()
    }

    pub fn num_layers(&self) -> usize {
        self.counts.first().map_or(0, |s| s.len())
    }

    pub fn num_experts(&self, layer: usize) -> usize {
        self.counts[0][layer].len()
    }

    pub fn counts(&self, server: usize, layer: usize) -> &[u64] {
        &self.counts[server][layer]
    }

    pub fn count(&self, server: usize, layer: usize, expert: usize) -> u64 {
        self.counts[server][layer][expert]
    }

    /// Sum of one expert's counts over all servers.
    pub fn total_load(&self, layer: usize, expert: usize) -> u64 {
        self.counts.iter().map(|s| s[layer][expert]).sum()
    }

    /// Total counted volume across every server and layer.
    pub fn total_volume(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }

    pub fn ingest(&mut self, event: &ActivationEvent) -> Result<(), StatsError> {
        self.check(event)?;
        let inc = match self.mode {
            CountingMode::Tokens => event.tokens,
            CountingMode::Batches => 1,
        };
        let row = &mut self.counts[event.server][event.layer];
        for &e in &event.experts {
            row[e] += inc;
        }
        if event.virtual_time > self.window_end {
            self.window_end = event.virtual_time;
        }
        Ok(())
    }

    fn check(&self, event: &ActivationEvent) -> Result<(), StatsError> {
        if event.server >= self.num_servers() {
            return Err(StatsError::Server {
                server: event.server,
                servers: self.num_servers(),
                event: event.clone(),
            });
        }
        if event.layer >= self.num_layers() {
            return Err(StatsError::Layer {
                layer: event.layer,
                layers: self.num_layers(),
                event: event.clone(),
            });
        }
        let experts = self.num_experts(event.layer);
        if let Some(&bad) = event.experts.iter().find(|&&e| e >= experts) {
            return Err(StatsError::Expert {
                layer: event.layer,
                expert: bad,
                event: event.clone(),
            });
        }
        if event.tokens == 0 {
            return Err(StatsError::Tokens {
                event: event.clone(),
            });
        }
        Ok(())
    }

    /// Zero every counter and open a new window at `time`.
    pub fn reset(&mut self, time: f64) {
        for c in self.counts.iter_mut().flatten().flatten() {
            *c = 0;
        }
        self.window_start = time;
        self.window_end = time;
    }

    /// `p_e = f(e) / sum f`; uniform when the layer has no traffic.
    pub fn frequency(&self, server: usize, layer: usize) -> Vec<f64> {
        normalize(&self.counts[server][layer])
    }

    /// Shannon entropy of [`frequency`](Self::frequency), in bits.
    pub fn entropy(&self, server: usize, layer: usize) -> f64 {
        entropy_bits(&self.frequency(server, layer))
    }
}

/// Normalize counts to a probability vector, falling back to uniform when
/// every count is zero.
pub fn normalize(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let u = 1.0 / counts.len() as f64;
        return vec![u; counts.len()];
    }
    let total = total as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// `-sum p log2 p` with `0 log 0 = 0`.
pub fn entropy_bits(dist: &[f64]) -> f64 {
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    // -0.0 for point masses
    h.max(0.0)
}

/// Smallest number of experts covering `1 - delta` of the mass, alongside
/// the typical-set lower bound `2^(H - delta log2 E)`.
///
/// The bound is asymptotic, so `holds` can be false for small `E`; it is
/// reported, never enforced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageBound {
    pub k_delta: usize,
    pub bound: f64,
    pub entropy: f64,
    pub holds: bool,
}

pub fn coverage_lower_bound(dist: &[f64], delta: f64) -> Result<CoverageBound, StatsError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(StatsError::Delta(delta));
    }
    let sum: f64 = dist.iter().sum();
    if dist.is_empty() || dist.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > NORM_TOL {
        return Err(StatsError::Unnormalized(sum));
    }
    let mut sorted = dist.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let target = 1.0 - delta;
    let mut mass = 0.0;
    let mut k_delta = sorted.len();
    for (i, p) in sorted.iter().enumerate() {
        mass += p;
        if mass >= target - NORM_TOL {
            k_delta = i + 1;
            break;
        }
    }
    let entropy = entropy_bits(dist);
    let bound = (entropy - delta * (dist.len() as f64).log2()).exp2();
    Ok(CoverageBound {
        k_delta,
        bound,
        entropy,
        holds: k_delta as f64 >= bound,
    })
}

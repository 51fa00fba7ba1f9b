//! Seeded request generation: Poisson arrivals per server, token counts and
//! per-layer expert selections.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::domain::ModelSpec;
use crate::stats::{ActivationEvent, ActivationStats, CountingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenDist {
    Constant(u64),
    /// Drawn uniformly from the listed counts.
    Empirical(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertSource {
    /// Per-layer expert popularity drawn from a symmetric Dirichlet with the
    /// given concentration; smaller means more skewed. `rotation` shifts
    /// expert ids, so two sources differing only in rotation favor
    /// different experts. `distribution_seed` fixes the popularity vector
    /// independently of the arrival stream.
    SyntheticSkew {
        concentration: f64,
        #[serde(default)]
        rotation: usize,
        #[serde(default)]
        distribution_seed: Option<u64>,
    },
    /// Recorded per-request selections `[request][layer] -> experts`,
    /// replayed in order and cycled.
    Replay { patterns: Vec<Vec<Vec<usize>>> },
}

/// Traffic offered at one server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerWorkload {
    /// Mean Poisson inter-arrival time in seconds.
    pub mean_interarrival: f64,
    pub requests: usize,
    pub tokens: TokenDist,
    pub experts: ExpertSource,
    #[serde(default)]
    pub start_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub servers: Vec<ServerWorkload>,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self, model: &ModelSpec) -> Result<(), SimError> {
        for (n, w) in self.servers.iter().enumerate() {
            let bad = |msg: String| Err(SimError::Workload(format!("server {n}: {msg}")));
            if !(w.mean_interarrival > 0.0) {
                return bad(format!(
                    "mean_interarrival must be > 0, got {}",
                    w.mean_interarrival
                ));
            }
            if w.requests == 0 {
                return bad("requests must be >= 1".into());
            }
            match &w.tokens {
                TokenDist::Constant(0) => return bad("token count must be >= 1".into()),
                TokenDist::Empirical(v) if v.is_empty() || v.contains(&0) => {
                    return bad("empirical token counts must be non-empty and >= 1".into())
                }
                _ => {}
            }
            match &w.experts {
                ExpertSource::SyntheticSkew { concentration, .. } if !(*concentration > 0.0) => {
                    return bad("concentration must be > 0".into())
                }
                ExpertSource::Replay { patterns } => {
                    if patterns.is_empty() {
                        return bad("replay source has no patterns".into());
                    }
                    for (i, p) in patterns.iter().enumerate() {
                        if p.len() != model.num_layers {
                            return bad(format!("pattern {i} has {} layers", p.len()));
                        }
                        for (l, set) in p.iter().enumerate() {
                            if set.is_empty()
                                || set.iter().any(|&e| e >= model.experts_per_layer[l])
                            {
                                return bad(format!("pattern {i} layer {l} has invalid experts"));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Same workload with a different arrival/selection seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// One request: where and when it arrives and what it activates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub id: usize,
    pub origin: usize,
    pub arrival: f64,
    pub tokens: u64,
    /// Activated experts per layer.
    pub experts: Vec<Vec<usize>>,
    #[serde(default)]
    pub phase: usize,
}

impl RequestTrace {
    pub fn events(&self) -> impl Iterator<Item = ActivationEvent> + '_ {
        self.experts
            .iter()
            .enumerate()
            .map(|(layer, experts)| ActivationEvent {
                virtual_time: self.arrival,
                server: self.origin,
                layer,
                experts: experts.clone(),
                tokens: self.tokens,
            })
    }
}

/// Mix a base seed with stream identifiers (splitmix64 finalizer).
pub(crate) fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Popularity vector of a synthetic source for one (server, layer).
pub fn skew_distribution(
    concentration: f64,
    rotation: usize,
    seed: u64,
    server: usize,
    layer: usize,
    experts: usize,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[1, server as u64, layer as u64]));
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated > 0");
    let draws: Vec<f64> = (0..experts).map(|_| gamma.sample(&mut rng)).collect();
    let sum: f64 = draws.iter().sum();
    let mut p = vec![0.0; experts];
    for (e, d) in draws.iter().enumerate() {
        p[(e + rotation) % experts] = if sum > 0.0 { d / sum } else { 1.0 / experts as f64 };
    }
    p
}

/// Draw `k` distinct experts, each pick weighted by the remaining mass.
fn sample_without_replacement(weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(w.len()) {
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &wi) in w.iter().enumerate() {
                if wi <= 0.0 {
                    continue;
                }
                if x < wi {
                    chosen = Some(i);
                    break;
                }
                x -= wi;
            }
            // rounding can run past the end; take the last live entry
            chosen.unwrap_or_else(|| w.iter().rposition(|&wi| wi > 0.0).expect("total > 0"))
        } else {
            let open: Vec<usize> = (0..w.len()).filter(|i| !out.contains(i)).collect();
            open[rng.random_range(0..open.len())]
        };
        out.push(pick);
        w[pick] = 0.0;
    }
    out.sort_unstable();
    out
}

/// Generate the merged request stream of every server, sorted by arrival
/// (ties by origin), with ids assigned in that order.
pub fn generate_workload(spec: &WorkloadSpec, model: &ModelSpec) -> Result<Vec<RequestTrace>, SimError> {
    spec.validate(model)?;
    let mut out = Vec::new();
    for (n, w) in spec.servers.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[0, n as u64]));
        let exp = Exp::new(1.0 / w.mean_interarrival).expect("validated > 0");
        let dists: Option<Vec<Vec<f64>>> = match &w.experts {
            ExpertSource::SyntheticSkew {
                concentration,
                rotation,
                distribution_seed,
            } => Some(
                model
                    .experts_per_layer
                    .iter()
                    .enumerate()
                    .map(|(l, &e)| {
                        skew_distribution(
                            *concentration,
                            *rotation,
                            distribution_seed.unwrap_or(spec.seed),
                            n,
                            l,
                            e,
                        )
                    })
                    .collect(),
            ),
            ExpertSource::Replay { .. } => None,
        };
        let mut t = w.start_time;
        for i in 0..w.requests {
            t += exp.sample(&mut rng);
            let tokens = match &w.tokens {
                TokenDist::Constant(c) => *c,
                TokenDist::Empirical(v) => v[rng.random_range(0..v.len())],
            };
            let experts = match (&w.experts, &dists) {
                (ExpertSource::Replay { patterns }, _) => patterns[i % patterns.len()].clone(),
                (_, Some(d)) => d
                    .iter()
                    .map(|p| sample_without_replacement(p, model.top_k, &mut rng))
                    .collect(),
                _ => unreachable!("synthetic sources always have distributions"),
            };
            out.push(RequestTrace {
                id: 0,
                origin: n,
                arrival: t,
                tokens,
                experts,
                phase: 0,
            });
        }
    }
    out.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.origin.cmp(&b.origin)));
    for (i, r) in out.iter_mut().enumerate() {
        r.id = i;
    }
    Ok(out)
}

/// Counters built from a request stream.
pub fn stats_from_requests(
    requests: &[RequestTrace],
    num_servers: usize,
    model: &ModelSpec,
    mode: CountingMode,
) -> Result<ActivationStats, SimError> {
    let mut stats = ActivationStats::with_mode(num_servers, model, mode);
    for r in requests {
        for ev in r.events() {
            stats.ingest(&ev)?;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelSpec {
        ModelSpec::homogeneous(4, 8, 2, 1).unwrap()
    }

    fn spec(requests: usize, mean: f64) -> WorkloadSpec {
        WorkloadSpec {
            servers: vec![ServerWorkload {
                mean_interarrival: mean,
                requests,
                tokens: TokenDist::Constant(64),
                experts: ExpertSource::SyntheticSkew {
                    concentration: 0.3,
                    rotation: 0,
                    distribution_seed: None,
                },
                start_time: 0.0,
            }],
            seed: 42,
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let a = generate_workload(&spec(50, 10.0), &model()).unwrap();
        let b = generate_workload(&spec(50, 10.0), &model()).unwrap();
        assert_eq!(a, b);
        let c = generate_workload(&spec(50, 10.0).reseeded(43), &model()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn poisson_mean_interarrival() {
        let reqs = generate_workload(&spec(1000, 10.0), &model()).unwrap();
        let mean = reqs.last().unwrap().arrival / 1000.0;
        assert!((mean - 10.0).abs() < 0.5, "sample mean {mean}");
    }

    #[test]
    fn constant_tokens_and_topk_sets() {
        let reqs = generate_workload(&spec(100, 1.0), &model()).unwrap();
        for r in &reqs {
            assert_eq!(r.tokens, 64);
            assert_eq!(r.experts.len(), 4);
            for set in &r.experts {
                assert_eq!(set.len(), 2);
                assert!(set[0] < set[1] && set[1] < 8);
            }
        }
    }

    #[test]
    fn rotation_moves_popularity() {
        let a = skew_distribution(0.3, 0, 5, 0, 0, 8);
        let b = skew_distribution(0.3, 3, 5, 0, 0, 8);
        for e in 0..8 {
            assert_eq!(a[e], b[(e + 3) % 8]);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_handles_sparse_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picks = sample_without_replacement(&[0.0, 1.0, 0.0, 0.0], 3, &mut rng);
        assert_eq!(picks.len(), 3);
        assert!(picks.contains(&1));
    }

    #[test]
    fn replay_cycles_patterns() {
        let mut s = spec(3, 1.0);
        s.servers[0].experts = ExpertSource::Replay {
            patterns: vec![vec![vec![0, 1]; 4], vec![vec![2, 3]; 4]],
        };
        let reqs = generate_workload(&s, &model()).unwrap();
        assert_eq!(reqs[0].experts[0], vec![0, 1]);
        assert_eq!(reqs[1].experts[0], vec![2, 3]);
        assert_eq!(reqs[2].experts[0], vec![0, 1]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(0, 1.0);
        assert!(s.validate(&model()).is_err());
        s = spec(1, 0.0);
        assert!(s.validate(&model()).is_err());
        s = spec(1, 1.0);
        s.servers[0].tokens = TokenDist::Empirical(vec![]);
        assert!(s.validate(&model()).is_err());
    }
}

//! Random instance generators shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use moe_placement::domain::{ClusterSpec, GpuSpec, ModelSpec, ServerSpec};
use moe_placement::stats::ActivationStats;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub const EXPERT: u64 = 1 << 20;

pub struct Instance {
    pub cluster: ClusterSpec,
    pub model: ModelSpec,
    pub stats: ActivationStats,
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn model(experts: Vec<usize>, top_k: usize) -> ModelSpec {
    let m = ModelSpec {
        num_layers: experts.len(),
        experts_per_layer: experts,
        top_k,
        expert_size: EXPERT,
        hidden_width: 4096,
        bytes_per_element: 2,
    };
    m.validate().unwrap();
    m
}

/// Skewed counts per (server, layer); roughly one server in ten sees no
/// traffic at all.
pub fn random_stats(rng: &mut ChaCha8Rng, servers: usize, model: &ModelSpec) -> ActivationStats {
    let counts = (0..servers)
        .map(|_| {
            let idle = rng.random_bool(0.1);
            let alpha = [0.2, 0.5, 1.0, 3.0][rng.random_range(0..4)];
            let gamma = Gamma::<f64>::new(alpha, 1.0).unwrap();
            model
                .experts_per_layer
                .iter()
                .map(|&e| {
                    (0..e)
                        .map(|_| if idle { 0 } else { (gamma.sample(rng) * 100.0).round() as u64 })
                        .collect()
                })
                .collect()
        })
        .collect();
    ActivationStats::from_counts(counts)
}

/// Cluster whose per-GPU slot counts sum to at least `need`.
pub fn random_cluster(rng: &mut ChaCha8Rng, servers: usize, max_gpus: usize, need: usize, max_slots: usize) -> ClusterSpec {
    loop {
        let specs: Vec<ServerSpec> = (0..servers)
            .map(|_| ServerSpec {
                gpus: (0..rng.random_range(1..=max_gpus))
                    .map(|_| GpuSpec {
                        memory: rng.random_range(1..=max_slots) as u64 * EXPERT + rng.random_range(0..EXPERT),
                        load_bandwidth: rng.random_range(1e8..1e10),
                    })
                    .collect(),
            })
            .collect();
        let slots: usize = specs
            .iter()
            .flat_map(|s| s.gpus.iter().map(|g| (g.memory / EXPERT) as usize))
            .sum();
        if slots >= need {
            return ClusterSpec::uniform(specs, 62.5e6, 1e-3).unwrap();
        }
    }
}

/// N in [1,4], L in [1,8], E_l in [4,16], capacity between 1x and ~3x
/// the coverage need.
pub fn constraint_instance(rng: &mut ChaCha8Rng) -> Instance {
    let servers = rng.random_range(1..=4);
    let layers = rng.random_range(1..=8);
    let experts: Vec<usize> = (0..layers).map(|_| rng.random_range(4..=16)).collect();
    let top_k = rng.random_range(1..=*experts.iter().min().unwrap()).min(4);
    let model = model(experts, top_k);
    let need = model.total_experts();
    let max_slots = (3 * need).div_ceil(servers).max(1);
    let cluster = random_cluster(rng, servers, 3, need, max_slots);
    let stats = random_stats(rng, servers, &model);
    Instance { cluster, model, stats }
}

/// Oracle-sized: N <= 3, L <= 3, E_l <= 6 and every server's slots <= 8.
pub fn oracle_instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let servers = rng.random_range(1..=3);
        let layers = rng.random_range(1..=3);
        let experts: Vec<usize> = (0..layers).map(|_| rng.random_range(2..=6)).collect();
        let need: usize = experts.iter().sum();
        if need > 8 * servers {
            continue;
        }
        let model = model(experts, 1);
        let cluster = random_cluster(rng, servers, 1, need, 8);
        let stats = random_stats(rng, servers, &model);
        return Instance { cluster, model, stats };
    }
}

//! Baseline placements: uniform round-robin, random redundancy, load
//! balanced partitioning and an EPLB-style replicator.
//!
//! The balanced and EPLB strategies are re-implementations working at GPU
//! granularity; they follow the published descriptions but are not the
//! original code.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PlacementError;
use crate::domain::{ClusterSpec, ModelSpec, Placement};
use crate::stats::ActivationStats;

/// Flat list of `(server, gpu)` in fixed order with their slot counts.
struct Gpus {
    ids: Vec<(usize, usize)>,
    free: Vec<usize>,
}

impl Gpus {
    fn new(cluster: &ClusterSpec, model: &ModelSpec) -> Self {
        let mut ids = Vec::new();
        let mut free = Vec::new();
        for (n, s) in cluster.servers.iter().enumerate() {
            for (g, gpu) in s.gpus.iter().enumerate() {
                ids.push((n, g));
                free.push((gpu.memory / model.expert_size) as usize);
            }
        }
        Self { ids, free }
    }

    fn total_free(&self) -> usize {
        self.free.iter().sum()
    }
}

fn check_capacity(gpus: &Gpus, model: &ModelSpec) -> Result<(), PlacementError> {
    let need = model.total_experts();
    let have = gpus.total_free();
    if have < need {
        return Err(PlacementError::Infeasible {
            layer: model.num_layers - 1,
            deficit: need - have,
        });
    }
    Ok(())
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Round-robin each layer's (seed-shuffled) experts over all GPUs in
/// `(server, gpu)` order. The cursor carries across layers and skips full
/// GPUs. No replication.
pub fn place_uniform(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    seed: u64,
) -> Result<Placement, PlacementError> {
    let mut gpus = Gpus::new(cluster, model);
    check_capacity(&gpus, model)?;
    let mut rng = rng_for(seed);
    let mut p = Placement::empty(cluster, model);
    let count = gpus.ids.len();
    let mut cursor = 0;
    for (l, &experts) in model.experts_per_layer.iter().enumerate() {
        let mut order: Vec<usize> = (0..experts).collect();
        order.shuffle(&mut rng);
        for e in order {
            // capacity check above guarantees a free GPU exists
            while gpus.free[cursor] == 0 {
                cursor = (cursor + 1) % count;
            }
            let (n, g) = gpus.ids[cursor];
            p.place(n, g, l, e);
            gpus.free[cursor] -= 1;
            cursor = (cursor + 1) % count;
        }
    }
    Ok(p)
}

/// Uniform placement, then every GPU's remaining slots filled with random
/// experts it does not already hold.
pub fn place_redundant(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    seed: u64,
) -> Result<Placement, PlacementError> {
    let mut p = place_uniform(cluster, model, seed)?;
    let mut rng = rng_for(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for (n, s) in cluster.servers.iter().enumerate() {
        for (g, gpu) in s.gpus.iter().enumerate() {
            let slots = (gpu.memory / model.expert_size) as usize;
            let room = slots.saturating_sub(p.gpu_count(n, g));
            if room == 0 {
                continue;
            }
            let mut candidates: Vec<(usize, usize)> = model
                .experts_per_layer
                .iter()
                .enumerate()
                .flat_map(|(l, &e)| (0..e).map(move |x| (l, x)))
                .filter(|&(l, e)| !p.holds(n, g, l, e))
                .collect();
            candidates.shuffle(&mut rng);
            for (l, e) in candidates.into_iter().take(room) {
                p.place(n, g, l, e);
            }
        }
    }
    Ok(p)
}

/// Per-layer loads summed over servers. Falls back to equal loads when the
/// layer has no traffic.
fn layer_loads(stats: &ActivationStats, layer: usize, experts: usize) -> Vec<f64> {
    let loads: Vec<f64> = (0..experts)
        .map(|e| stats.total_load(layer, e) as f64)
        .collect();
    if loads.iter().all(|&x| x == 0.0) {
        vec![1.0; experts]
    } else {
        loads
    }
}

/// Pick the GPU with the least accumulated layer load among those with a
/// free slot, optionally under a per-layer count cap, never one that
/// already holds `expert`.
fn least_loaded(
    gpus: &Gpus,
    load: &[f64],
    layer_count: &[usize],
    cap: Option<usize>,
    holds: impl Fn(usize) -> bool,
) -> Option<usize> {
    (0..gpus.ids.len())
        .filter(|&i| gpus.free[i] > 0 && !holds(i))
        .filter(|&i| cap.is_none_or(|c| layer_count[i] < c))
        .min_by(|&a, &b| load[a].total_cmp(&load[b]).then(a.cmp(&b)))
}

/// Load-balanced partition: experts in descending total load, each to the
/// least-loaded GPU, keeping per-layer expert counts within one of each
/// other where memory allows. No replication.
pub fn place_balanced(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    stats: &ActivationStats,
) -> Result<Placement, PlacementError> {
    let mut gpus = Gpus::new(cluster, model);
    check_capacity(&gpus, model)?;
    let mut p = Placement::empty(cluster, model);
    let count = gpus.ids.len();
    for (l, &experts) in model.experts_per_layer.iter().enumerate() {
        let loads = layer_loads(stats, l, experts);
        let mut order: Vec<usize> = (0..experts).collect();
        order.sort_by(|&a, &b| loads[b].total_cmp(&loads[a]).then(a.cmp(&b)));
        let eligible = gpus.free.iter().filter(|&&f| f > 0).count().max(1);
        let cap = experts.div_ceil(eligible);
        let mut acc = vec![0.0; count];
        let mut per_gpu = vec![0usize; count];
        for e in order {
            let i = least_loaded(&gpus, &acc, &per_gpu, Some(cap), |_| false)
                .or_else(|| least_loaded(&gpus, &acc, &per_gpu, None, |_| false))
                .ok_or_else(|| PlacementError::Internal(format!("no GPU room for layer {l}")))?;
            let (n, g) = gpus.ids[i];
            p.place(n, g, l, e);
            gpus.free[i] -= 1;
            acc[i] += loads[e];
            per_gpu[i] += 1;
        }
    }
    Ok(p)
}

/// Slots per layer for the replicating strategy: total slots split in
/// proportion to `E_l`, each layer getting at least `E_l` and at most one
/// copy per GPU of every expert.
fn layer_slot_shares(gpus: &Gpus, model: &ModelSpec) -> Vec<usize> {
    let total = gpus.total_free();
    let need = model.total_experts();
    let ngpus = gpus.ids.len();
    let spare = total - need;
    let mut shares: Vec<usize> = model
        .experts_per_layer
        .iter()
        .map(|&e| e + spare * e / need)
        .collect();
    let mut left = total - shares.iter().sum::<usize>();
    // hand out rounding leftovers layer by layer
    let mut l = 0;
    let mut stalled = 0;
    while left > 0 && stalled < model.num_layers {
        let cap = model.experts_per_layer[l] * ngpus;
        if shares[l] < cap {
            shares[l] += 1;
            left -= 1;
            stalled = 0;
        } else {
            stalled += 1;
        }
        l = (l + 1) % model.num_layers;
    }
    for (l, s) in shares.iter_mut().enumerate() {
        *s = (*s).min(model.experts_per_layer[l] * ngpus);
    }
    shares
}

/// Number of copies of each expert: one each, then one extra per spare
/// slot in descending load order, wrapping when spares exceed experts.
pub fn replica_counts(loads: &[f64], slots: usize, max_copies: usize) -> Vec<usize> {
    let experts = loads.len();
    let mut copies = vec![1usize; experts];
    let mut order: Vec<usize> = (0..experts).collect();
    order.sort_by(|&a, &b| loads[b].total_cmp(&loads[a]).then(a.cmp(&b)));
    let mut spare = slots.saturating_sub(experts);
    'outer: while spare > 0 {
        let mut progressed = false;
        for &e in &order {
            if spare == 0 {
                break 'outer;
            }
            if copies[e] < max_copies {
                copies[e] += 1;
                spare -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    copies
}

/// EPLB-style replication: spare slots go to the hottest experts, each
/// expert's load is split evenly over its copies, and copies are placed
/// heaviest first on the least-loaded GPU that does not already hold one.
pub fn place_eplb(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    stats: &ActivationStats,
) -> Result<Placement, PlacementError> {
    let mut gpus = Gpus::new(cluster, model);
    check_capacity(&gpus, model)?;
    let shares = layer_slot_shares(&gpus, model);
    let mut p = Placement::empty(cluster, model);
    let count = gpus.ids.len();
    for (l, &experts) in model.experts_per_layer.iter().enumerate() {
        let loads = layer_loads(stats, l, experts);
        let copies = replica_counts(&loads, shares[l], count);
        // (per-copy load, expert, copy index)
        let mut replicas: Vec<(f64, usize, usize)> = (0..experts)
            .flat_map(|e| (0..copies[e]).map(move |c| (e, c)))
            .map(|(e, c)| (loads[e] / copies[e] as f64, e, c))
            .collect();
        replicas.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.2.cmp(&b.2))
                .then(a.1.cmp(&b.1))
        });
        let mut acc = vec![0.0; count];
        let per_gpu = vec![0usize; count];
        for (load, e, c) in replicas {
            let target = least_loaded(&gpus, &acc, &per_gpu, None, |i| {
                let (n, g) = gpus.ids[i];
                p.holds(n, g, l, e)
            });
            match target {
                Some(i) => {
                    let (n, g) = gpus.ids[i];
                    p.place(n, g, l, e);
                    gpus.free[i] -= 1;
                    acc[i] += load;
                }
                None if c == 0 => {
                    return Err(PlacementError::Internal(format!(
                        "no GPU room for layer {l} expert {e}"
                    )))
                }
                None => {}
            }
        }
    }
    Ok(p)
}

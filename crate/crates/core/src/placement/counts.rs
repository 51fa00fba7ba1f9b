//! Layer-wise expert count allocation.
//!
//! Each server's slot budget is split across layers in proportion to the
//! entropy of that server's activations per layer, then rebalanced so every
//! layer has at least `E_l` slots system-wide.

use serde::Serialize;

use super::PlacementError;
use crate::domain::{packable_slots, ClusterSpec, ModelSpec};
use crate::stats::ActivationStats;

/// Slack for flooring exact proportions that land a hair under an integer.
const FLOOR_EPS: f64 = 1e-9;

/// `N[server][layer]`: how many experts of each layer a server hosts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpertCounts {
    pub counts: Vec<Vec<usize>>,
}

impl ExpertCounts {
    pub fn get(&self, server: usize, layer: usize) -> usize {
        self.counts[server][layer]
    }

    pub fn layer_total(&self, layer: usize) -> usize {
        self.counts.iter().map(|row| row[layer]).sum()
    }

    /// `B_n = sum_l N[n][l]`.
    pub fn server_total(&self, server: usize) -> usize {
        self.counts[server].iter().sum()
    }

    pub fn budgets(&self) -> Vec<usize> {
        (0..self.counts.len()).map(|n| self.server_total(n)).collect()
    }

    /// Check the per-server budget and per-layer coverage invariants.
    pub fn check(&self, slots: &[usize], model: &ModelSpec) -> Result<(), PlacementError> {
        for (n, &cap) in slots.iter().enumerate() {
            if self.server_total(n) > cap {
                return Err(PlacementError::Internal(format!(
                    "server {n} allocated {} slots, has {cap}",
                    self.server_total(n)
                )));
            }
            for (l, &e) in model.experts_per_layer.iter().enumerate() {
                if self.counts[n][l] > e {
                    return Err(PlacementError::Internal(format!(
                        "server {n} layer {l} allocated {} of {e} experts",
                        self.counts[n][l]
                    )));
                }
            }
        }
        for (l, &e) in model.experts_per_layer.iter().enumerate() {
            if self.layer_total(l) < e {
                return Err(PlacementError::Infeasible {
                    layer: l,
                    deficit: e - self.layer_total(l),
                });
            }
        }
        Ok(())
    }
}

/// Entropy-proportional slot allocation with coverage rebalancing.
///
/// Uses the packable slot count of each server (per-GPU floors) so the
/// result can always be laid out on real GPUs. A server never gets more
/// slots for a layer than the layer has experts.
pub fn allocate_counts(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    stats: &ActivationStats,
) -> Result<ExpertCounts, PlacementError> {
    let servers = cluster.num_servers();
    let layers = model.num_layers;
    let experts = &model.experts_per_layer;
    let slots: Vec<usize> = (0..servers)
        .map(|n| packable_slots(cluster, n, model))
        .collect();

    // Step 1: floor of the entropy-proportional share.
    let mut counts = vec![vec![0usize; layers]; servers];
    for n in 0..servers {
        let v: Vec<f64> = (0..layers).map(|l| stats.entropy(n, l)).collect();
        let sum: f64 = v.iter().sum();
        for l in 0..layers {
            let share = if sum > 0.0 {
                slots[n] as f64 * v[l] / sum
            } else {
                slots[n] as f64 / layers as f64
            };
            counts[n][l] = ((share + FLOOR_EPS).floor() as usize).min(experts[l]);
        }
    }

    // Step 1b: hand each server's leftover slots to the layers with the
    // largest system-wide deficit.
    let mut totals: Vec<usize> = (0..layers)
        .map(|l| counts.iter().map(|row| row[l]).sum())
        .collect();
    for n in 0..servers {
        let mut left = slots[n] - counts[n].iter().sum::<usize>();
        while left > 0 {
            let pick = (0..layers)
                .filter(|&l| counts[n][l] < experts[l])
                .max_by(|&a, &b| {
                    let da = experts[a] as i64 - totals[a] as i64;
                    let db = experts[b] as i64 - totals[b] as i64;
                    da.cmp(&db).then(b.cmp(&a))
                });
            let Some(l) = pick else { break };
            counts[n][l] += 1;
            totals[l] += 1;
            left -= 1;
        }
    }

    // Step 2: borrow from over-provisioned layers, larger servers first.
    let mut order: Vec<usize> = (0..servers).collect();
    order.sort_by(|&a, &b| {
        cluster.servers[b]
            .memory()
            .cmp(&cluster.servers[a].memory())
            .then(a.cmp(&b))
    });
    for l in 0..layers {
        while totals[l] < experts[l] {
            let donor = (0..layers)
                .filter(|&k| k != l && totals[k] > experts[k])
                .max_by(|&a, &b| totals[a].cmp(&totals[b]).then(b.cmp(&a)));
            let Some(donor) = donor else {
                return Err(PlacementError::Infeasible {
                    layer: l,
                    deficit: experts[l] - totals[l],
                });
            };
            for &n in &order {
                if counts[n][donor] > 0 && counts[n][l] < experts[l] {
                    counts[n][donor] -= 1;
                    counts[n][l] += 1;
                    totals[donor] -= 1;
                    totals[l] += 1;
                    if totals[l] == experts[l] || totals[donor] == experts[donor] {
                        break;
                    }
                }
            }
        }
    }

    let out = ExpertCounts { counts };
    out.check(&slots, model)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GpuSpec, ServerSpec};

    fn cluster(slots: &[u64], size: u64) -> ClusterSpec {
        let servers = slots
            .iter()
            .map(|&s| ServerSpec {
                gpus: vec![GpuSpec {
                    memory: s * size,
                    load_bandwidth: 1e9,
                }],
            })
            .collect();
        ClusterSpec::uniform(servers, 1e8, 0.001).unwrap()
    }

    /// Counts whose per-layer entropies are `h` bits: uniform over 2^h experts.
    fn uniform_over(k: usize, experts: usize) -> Vec<u64> {
        (0..experts).map(|e| if e < k { 10 } else { 0 }).collect()
    }

    #[test]
    fn single_server_equal_entropy_gets_exact_split() {
        let model = ModelSpec::homogeneous(3, 8, 2, 100).unwrap();
        let c = cluster(&[24], 100);
        let stats = ActivationStats::from_counts(vec![vec![uniform_over(8, 8); 3]]);
        let counts = allocate_counts(&c, &model, &stats).unwrap();
        assert_eq!(counts.counts, vec![vec![8, 8, 8]]);
    }

    #[test]
    fn two_server_rebalance_trace() {
        // Entropies 3 bits and 1 bit on both servers: a 3:1 ratio.
        let model = ModelSpec::homogeneous(2, 8, 2, 100).unwrap();
        let c = cluster(&[10, 6], 100);
        let row = vec![uniform_over(8, 8), uniform_over(2, 8)];
        let stats = ActivationStats::from_counts(vec![row.clone(), row]);
        let counts = allocate_counts(&c, &model, &stats).unwrap();
        assert_eq!(counts.counts, vec![vec![5, 5], vec![3, 3]]);
        assert_eq!(counts.layer_total(0), 8);
        assert_eq!(counts.layer_total(1), 8);
    }

    #[test]
    fn infeasible_capacity_names_layer() {
        let model = ModelSpec::homogeneous(2, 8, 2, 100).unwrap();
        let c = cluster(&[8, 7], 100);
        let stats = ActivationStats::new(2, &model);
        match allocate_counts(&c, &model, &stats) {
            Err(PlacementError::Infeasible { deficit, .. }) => assert_eq!(deficit, 1),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn zero_entropy_everywhere_splits_evenly() {
        let model = ModelSpec::homogeneous(2, 4, 1, 100).unwrap();
        let c = cluster(&[8], 100);
        let point = vec![5, 0, 0, 0];
        let stats = ActivationStats::from_counts(vec![vec![point.clone(), point]]);
        let counts = allocate_counts(&c, &model, &stats).unwrap();
        assert_eq!(counts.counts, vec![vec![4, 4]]);
    }

    #[test]
    fn counts_are_capped_at_layer_size() {
        // Layer 0 dominates the entropy, but it only has 4 experts.
        let model = ModelSpec::homogeneous(2, 4, 1, 100).unwrap();
        let c = cluster(&[8, 2], 100);
        let s0 = vec![uniform_over(4, 4), vec![1, 0, 0, 0]];
        let s1 = vec![uniform_over(4, 4), uniform_over(4, 4)];
        let stats = ActivationStats::from_counts(vec![s0, s1]);
        let counts = allocate_counts(&c, &model, &stats).unwrap();
        assert!(counts.counts.iter().all(|r| r.iter().all(|&x| x <= 4)));
        assert_eq!(counts.server_total(0), 8);
        assert_eq!(counts.server_total(1), 2);
    }

    #[test]
    fn surplus_capacity_stays_allocated() {
        let model = ModelSpec::homogeneous(2, 4, 1, 100).unwrap();
        let c = cluster(&[6, 6], 100);
        let stats = ActivationStats::new(2, &model);
        let counts = allocate_counts(&c, &model, &stats).unwrap();
        assert_eq!(counts.budgets(), vec![6, 6]);
        assert!(counts.layer_total(0) >= 4 && counts.layer_total(1) >= 4);
    }
}

//! Expert-to-server assignment.
//!
//! Every server first takes its top-`N[n][l]` experts by its own activation
//! frequency. Experts nobody picked are then swapped in for duplicates,
//! servers with the fewest duplicates going first.

use serde::Serialize;

use super::{ExpertCounts, PlacementError};
use crate::domain::{pack_server_sets, ClusterSpec, ModelSpec, Placement};
use crate::stats::ActivationStats;

/// Per-server expert sets `A_n^l`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub sets: Vec<Vec<Vec<usize>>>,
}

impl Assignment {
    pub fn set(&self, server: usize, layer: usize) -> &[usize] {
        &self.sets[server][layer]
    }

    /// Lay the sets out on GPUs.
    pub fn pack(&self, cluster: &ClusterSpec, model: &ModelSpec) -> Result<Placement, PlacementError> {
        pack_server_sets(cluster, model, &self.sets).map_err(PlacementError::from)
    }
}

/// Experts of `layer` sorted by descending frequency at `server`, ties to
/// the lower id.
pub fn preference_list(stats: &ActivationStats, server: usize, layer: usize) -> Vec<usize> {
    let f = stats.frequency(server, layer);
    let mut ids: Vec<usize> = (0..f.len()).collect();
    ids.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    ids
}

pub fn assign_experts(
    counts: &ExpertCounts,
    stats: &ActivationStats,
    model: &ModelSpec,
) -> Result<Assignment, PlacementError> {
    let servers = counts.counts.len();
    let mut sets = vec![vec![Vec::new(); model.num_layers]; servers];
    for l in 0..model.num_layers {
        let layer_sets = assign_layer(counts, stats, l, model.experts_per_layer[l])?;
        for (n, s) in layer_sets.into_iter().enumerate() {
            sets[n][l] = s;
        }
    }
    Ok(Assignment { sets })
}

fn assign_layer(
    counts: &ExpertCounts,
    stats: &ActivationStats,
    layer: usize,
    experts: usize,
) -> Result<Vec<Vec<usize>>, PlacementError> {
    let servers = counts.counts.len();
    let freq: Vec<Vec<f64>> = (0..servers).map(|n| stats.frequency(n, layer)).collect();
    // holds[n][e]
    let mut holds = vec![vec![false; experts]; servers];
    for n in 0..servers {
        for &e in preference_list(stats, n, layer)
            .iter()
            .take(counts.get(n, layer))
        {
            holds[n][e] = true;
        }
    }
    let copies = |holds: &[Vec<bool>], e: usize| holds.iter().filter(|h| h[e]).count();
    let unassigned = |holds: &[Vec<bool>]| -> Vec<usize> {
        (0..experts).filter(|&e| copies(holds, e) == 0).collect()
    };
    let duplicates = |holds: &[Vec<bool>], n: usize| -> Vec<usize> {
        (0..experts)
            .filter(|&e| holds[n][e] && copies(holds, e) > 1)
            .collect()
    };

    loop {
        if unassigned(&holds).is_empty() {
            break;
        }
        let mut order: Vec<(usize, usize)> = (0..servers)
            .map(|n| (duplicates(&holds, n).len(), n))
            .collect();
        order.sort();
        let mut replaced = false;
        for (_, n) in order {
            let open = unassigned(&holds);
            if open.is_empty() {
                break;
            }
            let f = &freq[n];
            let incoming = *open
                .iter()
                .max_by(|&&a, &&b| f[a].total_cmp(&f[b]).then(b.cmp(&a)))
                .expect("non-empty");
            let evict = duplicates(&holds, n)
                .into_iter()
                .min_by(|&a, &b| f[a].total_cmp(&f[b]).then(b.cmp(&a)));
            let Some(evict) = evict else { continue };
            holds[n][evict] = false;
            holds[n][incoming] = true;
            replaced = true;
        }
        if !replaced {
            return Err(PlacementError::Internal(format!(
                "layer {layer}: experts left unassigned with no duplicates to evict"
            )));
        }
    }

    Ok(holds
        .iter()
        .map(|h| (0..experts).filter(|&e| h[e]).collect())
        .collect())
}

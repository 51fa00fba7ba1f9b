//! Local utility `U_n(S) = sum_l sum_{e in S, layer l} f_n^l(e)` and the
//! per-server comparison against the best size-`B_n` set.

use serde::Serialize;

use crate::domain::Placement;
use crate::stats::ActivationStats;

/// Frequency mass of server `n`'s locally placed experts, summed over
/// layers. Each layer contributes at most 1.
pub fn local_utility(placement: &Placement, stats: &ActivationStats, server: usize) -> f64 {
    (0..placement.num_layers())
        .map(|l| layer_utility(placement, stats, server, l))
        .sum()
}

/// Utility restricted to one layer.
pub fn layer_utility(placement: &Placement, stats: &ActivationStats, server: usize, layer: usize) -> f64 {
    let f = stats.frequency(server, layer);
    placement
        .server_set(server, layer)
        .into_iter()
        .map(|e| f[e])
        .sum()
}

/// Utility of arbitrary per-layer expert sets for one server.
pub fn sets_utility(sets: &[Vec<usize>], stats: &ActivationStats, server: usize) -> f64 {
    sets.iter()
        .enumerate()
        .map(|(l, s)| {
            let f = stats.frequency(server, l);
            s.iter().map(|&e| f[e]).sum::<f64>()
        })
        .sum()
}

/// Best achievable `U_n` with `budget` experts and no coverage obligation:
/// the `budget` largest frequencies across all layers.
pub fn unconstrained_optimum(stats: &ActivationStats, server: usize, budget: usize) -> f64 {
    let mut all: Vec<f64> = (0..stats.num_layers())
        .flat_map(|l| stats.frequency(server, l))
        .collect();
    all.sort_by(|a, b| b.total_cmp(a));
    all.iter().take(budget).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerUtility {
    pub server: usize,
    pub budget: usize,
    /// `U_n(A_n)`.
    pub utility: f64,
    /// `U_n(A_n*)`, the best size-`B_n` set for this server alone.
    pub optimal_utility: f64,
    /// `U_n(A_n*) - U_n(A_n)`, never negative.
    pub gap: f64,
    /// `C_n = L - U_n(A_n)`: expected remote mass.
    pub cost: f64,
    pub optimal_cost: f64,
    /// `U_n(A_n) / U_n(A_n*)`, 1 when the optimum is 0.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityReport {
    pub servers: Vec<ServerUtility>,
    pub total_utility: f64,
    /// Best coverage-feasible total, when the exhaustive oracle ran.
    pub oracle_total: Option<f64>,
}

impl UtilityReport {
    pub fn build(
        placement: &Placement,
        stats: &ActivationStats,
        budgets: &[usize],
        oracle_total: Option<f64>,
    ) -> Self {
        let layers = placement.num_layers() as f64;
        let servers: Vec<ServerUtility> = budgets
            .iter()
            .enumerate()
            .map(|(n, &budget)| {
                let utility = local_utility(placement, stats, n);
                let optimal_utility = unconstrained_optimum(stats, n, budget);
                ServerUtility {
                    server: n,
                    budget,
                    utility,
                    optimal_utility,
                    gap: optimal_utility - utility,
                    cost: layers - utility,
                    optimal_cost: layers - optimal_utility,
                    ratio: if optimal_utility > 0.0 {
                        utility / optimal_utility
                    } else {
                        1.0
                    },
                }
            })
            .collect();
        let total_utility = servers.iter().map(|s| s.utility).sum();
        Self {
            servers,
            total_utility,
            oracle_total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utility_extremes() {
        let stats = ActivationStats::from_counts(vec![vec![vec![1, 2, 3], vec![4, 0, 1]]]);
        let mut all = Placement::with_shape(&[1], &[3, 3]);
        for l in 0..2 {
            for e in 0..3 {
                all.place(0, 0, l, e);
            }
        }
        assert!((local_utility(&all, &stats, 0) - 2.0).abs() < 1e-12);
        let none = Placement::with_shape(&[1], &[3, 3]);
        assert_eq!(local_utility(&none, &stats, 0), 0.0);
    }

    #[test]
    fn unconstrained_takes_global_top() {
        let stats = ActivationStats::from_counts(vec![vec![vec![9, 1], vec![1, 1]]]);
        // 0.9, 0.5, 0.5, 0.1
        assert!((unconstrained_optimum(&stats, 0, 2) - 1.4).abs() < 1e-12);
        assert!((unconstrained_optimum(&stats, 0, 10) - 2.0).abs() < 1e-12);
    }
}

//! Exact optimum of `sum_n U_n` under per-server budgets and system-wide
//! coverage, for small instances.
//!
//! The search walks every `(layer, expert)` item and every non-empty subset
//! of servers that could host it, memoized on the vector of remaining
//! budgets. That is exhaustive over all coverage-feasible assignments while
//! staying fast at the sizes the guard admits.

use std::collections::HashMap;

use super::{Assignment, PlacementError};
use crate::domain::ModelSpec;
use crate::stats::ActivationStats;

pub const MAX_SERVERS: usize = 3;
pub const MAX_LAYERS: usize = 3;
pub const MAX_EXPERTS: usize = 6;
pub const MAX_BUDGET: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub assignment: Assignment,
    pub total_utility: f64,
}

pub fn check_oracle_size(budgets: &[usize], model: &ModelSpec) -> Result<(), PlacementError> {
    let too_large = budgets.len() > MAX_SERVERS
        || model.num_layers > MAX_LAYERS
        || model.experts_per_layer.iter().any(|&e| e > MAX_EXPERTS)
        || budgets.iter().any(|&b| b > MAX_BUDGET);
    if too_large {
        return Err(PlacementError::OracleTooLarge(format!(
            "oracle needs <= {MAX_SERVERS} servers, <= {MAX_LAYERS} layers, <= {MAX_EXPERTS} \
             experts per layer and budgets <= {MAX_BUDGET}; got {} servers, experts {:?}, budgets {:?}",
            budgets.len(),
            model.experts_per_layer,
            budgets
        )));
    }
    Ok(())
}

pub fn brute_force_optimal(
    budgets: &[usize],
    stats: &ActivationStats,
    model: &ModelSpec,
) -> Result<OracleSolution, PlacementError> {
    check_oracle_size(budgets, model)?;
    let servers = budgets.len();
    let items: Vec<(usize, usize)> = model
        .experts_per_layer
        .iter()
        .enumerate()
        .flat_map(|(l, &e)| (0..e).map(move |x| (l, x)))
        .collect();
    if budgets.iter().sum::<usize>() < items.len() {
        return Err(PlacementError::Infeasible {
            layer: model.num_layers - 1,
            deficit: items.len() - budgets.iter().sum::<usize>(),
        });
    }
    let freq: Vec<Vec<Vec<f64>>> = (0..servers)
        .map(|n| (0..model.num_layers).map(|l| stats.frequency(n, l)).collect())
        .collect();

    let mut search = Search {
        items: &items,
        freq: &freq,
        servers,
        memo: HashMap::new(),
    };
    let best = search.best(0, budgets.to_vec());
    let Some(total_utility) = best else {
        return Err(PlacementError::Internal("no coverage-feasible assignment".into()));
    };

    // Replay the memoized choices.
    let mut sets = vec![vec![Vec::new(); model.num_layers]; servers];
    let mut remaining = budgets.to_vec();
    for i in 0..items.len() {
        let mask = search.choice(i, &remaining);
        let (l, e) = items[i];
        for n in 0..servers {
            if mask & (1 << n) != 0 {
                sets[n][l].push(e);
                remaining[n] -= 1;
            }
        }
    }
    Ok(OracleSolution {
        assignment: Assignment { sets },
        total_utility,
    })
}

struct Search<'a> {
    items: &'a [(usize, usize)],
    freq: &'a [Vec<Vec<f64>>],
    servers: usize,
    memo: HashMap<(usize, Vec<usize>), Option<(f64, u32)>>,
}

impl Search<'_> {
    fn best(&mut self, i: usize, remaining: Vec<usize>) -> Option<f64> {
        self.solve(i, remaining).map(|(v, _)| v)
    }

    fn choice(&mut self, i: usize, remaining: &[usize]) -> u32 {
        self.solve(i, remaining.to_vec()).expect("feasible").1
    }

    fn solve(&mut self, i: usize, remaining: Vec<usize>) -> Option<(f64, u32)> {
        if i == self.items.len() {
            return Some((0.0, 0));
        }
        let key = (i, remaining);
        if let Some(&hit) = self.memo.get(&key) {
            return hit;
        }
        let remaining = key.1.clone();
        let left = self.items.len() - i;
        let (l, e) = self.items[i];
        let mut best: Option<(f64, u32)> = None;
        for mask in 1u32..(1 << self.servers) {
            let chosen: Vec<usize> = (0..self.servers).filter(|&n| mask & (1 << n) != 0).collect();
            if chosen.iter().any(|&n| remaining[n] == 0) {
                continue;
            }
            let mut next = remaining.clone();
            for &n in &chosen {
                next[n] -= 1;
            }
            // every later item still needs a slot somewhere
            if next.iter().sum::<usize>() < left - 1 {
                continue;
            }
            let gain: f64 = chosen.iter().map(|&n| self.freq[n][l][e]).sum();
            if let Some(rest) = self.best(i + 1, next) {
                let v = gain + rest;
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, mask));
                }
            }
        }
        self.memo.insert(key, best);
        best
    }
}

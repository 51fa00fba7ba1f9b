//! Activation-aware expert placement for Mixture-of-Experts inference
//! spread over heterogeneous edge servers, plus a deterministic
//! event-driven simulator to measure what a placement costs.
//!
//! The crate is layered bottom-up:
//!
//! - [`domain`]: clusters, models, placements and their validation.
//! - [`stats`]: activation counters, frequencies, entropy.
//! - [`placement`]: the entropy-guided count allocation, greedy
//!   expert assignment, baselines and an exhaustive oracle.
//! - [`cost`]: remote-invocation proxy, latency model, migration cost and
//!   the migrate/stay rule.
//! - [`sim`]: workload generation and the event loop.
//! - [`experiment`]: config files, traces and the `place` / `simulate` /
//!   `sweep` / `validate` commands used by the CLI.
//!
//! ```
//! use moe_placement::domain::{validate_placement, ClusterSpec, GpuSpec, ModelSpec, ServerSpec};
//! use moe_placement::placement::{place, Strategy};
//! use moe_placement::stats::ActivationStats;
//!
//! let model = ModelSpec::homogeneous(2, 4, 1, 1 << 20).unwrap();
//! let server = ServerSpec { gpus: vec![GpuSpec { memory: 6 << 20, load_bandwidth: 1e9 }] };
//! let cluster = ClusterSpec::uniform(vec![server.clone(), server], 62.5e6, 1e-3).unwrap();
//! let stats = ActivationStats::new(2, &model);
//!
//! let p = place(Strategy::Ours, &cluster, &model, &stats, 0).unwrap();
//! assert!(validate_placement(&p, &cluster, &model).unwrap().is_ok());
//! ```

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod domain;
pub mod experiment;
pub mod placement;
pub mod sim;
pub mod stats;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/placement.md")]
    mod placement {}
    #[doc = include_str!("../../../book/src/entropy.md")]
    mod entropy {}
    #[doc = include_str!("../../../book/src/cost.md")]
    mod cost {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

mod common;

use common::{constraint_instance, model, EXPERT};
use moe_placement::cost::{
    layer_latency, migration_cost, proxy_cost, ExpertInvocation, MigrationCostMode, ServerTiming, TimeModel,
};
use moe_placement::domain::{validate_placement, ClusterSpec, GpuSpec, Placement, PlacementWire, ServerSpec};
use moe_placement::placement::{place, place_ours, Strategy};
use moe_placement::sim::{
    generate_workload, simulate, stats_from_requests, ExpertSource, MigrationSettings, RequestTrace, Scenario,
    ServerWorkload, SimConfig, TokenDist, WorkloadSpec,
};
use moe_placement::stats::CountingMode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn timing() -> ServerTiming {
    ServerTiming {
        comp_base: 0.002,
        comp_per_token: 5e-5,
    }
}

fn cluster(servers: usize, slots: u64, bandwidth: f64) -> ClusterSpec {
    let s = ServerSpec {
        gpus: vec![GpuSpec {
            memory: slots * EXPERT,
            load_bandwidth: 1e9,
        }],
    };
    ClusterSpec::uniform(vec![s; servers], bandwidth, 1e-3).unwrap()
}

fn skew_workload(servers: usize, requests: usize, interarrival: f64, seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        servers: (0..servers)
            .map(|_| ServerWorkload {
                mean_interarrival: interarrival,
                requests,
                tokens: TokenDist::Empirical(vec![16, 64, 128]),
                experts: ExpertSource::SyntheticSkew {
                    concentration: 0.3,
                    rotation: 0,
                    distribution_seed: None,
                },
                start_time: 0.0,
            })
            .collect(),
        seed,
    }
}

fn no_migration() -> SimConfig {
    SimConfig {
        migration: MigrationSettings {
            enabled: false,
            ..Default::default()
        },
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wire_form_round_trips(seed in any::<u64>()) {
        let inst = constraint_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = place_ours(&inst.cluster, &inst.model, &inst.stats).unwrap().placement;
        let json = serde_json::to_string(&p.to_wire()).unwrap();
        let wire: PlacementWire = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(Placement::from_wire(&wire, &inst.cluster, &inst.model).unwrap(), p);
    }

    #[test]
    fn adding_a_copy_never_raises_the_proxy(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let inst = constraint_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = place_ours(&inst.cluster, &inst.model, &inst.stats).unwrap().placement;
        let missing: Vec<(usize, usize, usize)> = (0..p.num_servers())
            .flat_map(|n| (0..p.num_layers()).map(move |l| (n, l)))
            .flat_map(|(n, l)| (0..p.experts_per_layer()[l]).map(move |e| (n, l, e)))
            .filter(|&(n, l, e)| !p.server_holds(n, l, e))
            .collect();
        prop_assume!(!missing.is_empty());
        let (n, l, e) = missing[pick.index(missing.len())];
        let mut bigger = p.clone();
        bigger.place(n, 0, l, e);
        prop_assert!(proxy_cost(&bigger, &inst.stats) <= proxy_cost(&p, &inst.stats) + 1e-12);
    }

    #[test]
    fn migration_cost_is_symmetric_and_zero_on_itself(seed in any::<u64>(), other in any::<u64>()) {
        let inst = constraint_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = place(Strategy::Ours, &inst.cluster, &inst.model, &inst.stats, 0).unwrap();
        let b = place(Strategy::Uniform, &inst.cluster, &inst.model, &inst.stats, other).unwrap();
        let cost = |x: &Placement, y: &Placement, mode| migration_cost(x, y, &inst.cluster, &inst.model, mode).unwrap();
        prop_assert_eq!(cost(&a, &a, MigrationCostMode::Literal), 0.0);
        prop_assert_eq!(cost(&a, &b, MigrationCostMode::Literal), cost(&b, &a, MigrationCostMode::Literal));
        prop_assert!(cost(&a, &b, MigrationCostMode::LoadsOnly) <= cost(&a, &b, MigrationCostMode::Literal));
    }

    #[test]
    fn making_calls_remote_never_speeds_up_a_layer(
        tokens in prop::collection::vec(1u64..512, 1..8),
        remote in prop::collection::vec(any::<bool>(), 8),
        flip in 0usize..8,
    ) {
        let c = cluster(2, 4, 62.5e6);
        let m = model(vec![8], 2);
        let time = TimeModel::new(&c, vec![timing(); 2]).unwrap();
        let invs: Vec<ExpertInvocation> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| ExpertInvocation {
                origin: 0,
                target: usize::from(remote[i]),
                target_gpu: 0,
                layer: 0,
                expert: i,
                tokens: t,
            })
            .collect();
        let mut more = invs.clone();
        let i = flip % more.len();
        more[i].target = 1;
        prop_assert!(layer_latency(&more, &time, &m) >= layer_latency(&invs, &time, &m));
    }

    #[test]
    fn every_activation_becomes_one_invocation(seed in 0u64..1000, servers in 1usize..4) {
        let m = model(vec![8; 3], 2);
        let c = cluster(servers, 24u64.div_ceil(servers as u64) + 4, 62.5e6);
        let w = skew_workload(servers, 15, 2.0, seed);
        let reqs = generate_workload(&w, &m).unwrap();
        let profile = stats_from_requests(&reqs, servers, &m, CountingMode::Tokens).unwrap();
        let time = TimeModel::new(&c, vec![timing(); servers]).unwrap();
        let metrics = moe_placement::sim::run(&c, &m, &profile, &reqs, time, &SimConfig::default()).unwrap();
        let expected = reqs.len() * m.num_layers * m.top_k;
        prop_assert_eq!(metrics.requests.len(), reqs.len());
        prop_assert_eq!(metrics.requests.iter().map(|r| r.invocations).sum::<usize>(), expected);
        prop_assert_eq!(metrics.samples.len(), expected);
        prop_assert!(metrics.requests.iter().all(|r| r.completion >= r.arrival && r.latency > 0.0));
    }

    #[test]
    fn halving_bandwidth_never_lowers_latency(seed in 0u64..1000, strategy in 0usize..5) {
        let strategy = Strategy::ALL[strategy];
        let m = model(vec![8; 2], 2);
        // arrivals far apart so no batch ever overlaps another
        let w = skew_workload(3, 10, 500.0, seed);
        let reqs = generate_workload(&w, &m).unwrap();
        let profile = stats_from_requests(&reqs, 3, &m, CountingMode::Tokens).unwrap();
        let fast = cluster(3, 8, 62.5e6);
        let slow = cluster(3, 8, 31.25e6);
        let p = place(strategy, &fast, &m, &profile, seed).unwrap();
        let run = |c: &ClusterSpec| {
            let time = TimeModel::new(c, vec![timing(); 3]).unwrap();
            simulate(c, &m, p.clone(), &reqs, time, &no_migration()).unwrap()
        };
        let (a, b) = (run(&fast), run(&slow));
        for (x, y) in a.requests.iter().zip(&b.requests) {
            prop_assert!(y.latency >= x.latency - 1e-12);
        }
    }
}

#[test]
fn disabled_migration_leaves_no_records() {
    let m = model(vec![8; 2], 2);
    let c = cluster(2, 10, 62.5e6);
    let reqs = generate_workload(&skew_workload(2, 200, 5.0, 3), &m).unwrap();
    let profile = stats_from_requests(&reqs, 2, &m, CountingMode::Tokens).unwrap();
    let time = TimeModel::new(&c, vec![timing(); 2]).unwrap();
    let metrics = moe_placement::sim::run(&c, &m, &profile, &reqs, time, &no_migration()).unwrap();
    assert!(metrics.migrations.is_empty());
    assert_eq!(metrics.summary().candidates_evaluated, 0);
}

#[test]
fn fully_local_traffic_never_migrates() {
    // every server can hold every expert, so nothing is ever remote
    let m = model(vec![4; 2], 2);
    let c = cluster(2, 8, 62.5e6);
    let scenario = Scenario {
        cluster: c,
        model: m,
        workload: skew_workload(2, 300, 2.0, 11),
        timings: vec![timing(); 2],
        sim: SimConfig {
            migration: MigrationSettings {
                interval: 60.0,
                ..Default::default()
            },
            ..Default::default()
        },
        profile_seed: 0,
    };
    let metrics = scenario.run().unwrap();
    assert!(!metrics.migrations.is_empty());
    assert_eq!(metrics.adopted_migrations().count(), 0);
    assert_eq!(metrics.local_ratio(), 1.0);
    assert!(metrics.local_compute_ratio(60.0).iter().all(|p| p.ratio == 1.0));
    assert_eq!(metrics.remote_bytes, 0.0);
}

#[test]
fn local_ratio_counts_token_weight() {
    // server 0 holds expert 0 only; server 1 holds expert 1 only
    let m = model(vec![2], 1);
    let c = cluster(2, 1, 62.5e6);
    let mut p = Placement::empty(&c, &m);
    p.place(0, 0, 0, 0);
    p.place(1, 0, 0, 1);
    let req = |id, expert, tokens, arrival| RequestTrace {
        id,
        origin: 0,
        arrival,
        tokens,
        experts: vec![vec![expert]],
        phase: 0,
    };
    let reqs = vec![req(0, 0, 30, 0.0), req(1, 1, 10, 100.0)];
    let time = TimeModel::new(&c, vec![timing(); 2]).unwrap();
    let metrics = simulate(&c, &m, p, &reqs, time, &no_migration()).unwrap();
    assert!((metrics.local_ratio() - 0.75).abs() < 1e-12);
    assert_eq!(metrics.server_local_ratio(1), 1.0);
    assert_eq!(metrics.requests[1].remote_invocations, 1);
}

#[test]
fn single_remote_request_latency() {
    // 1 layer, 2 experts, request at server 0 needs expert 1 held on server 1
    let m = model(vec![2], 1);
    let c = cluster(2, 1, 62.5e6);
    let mut p = Placement::empty(&c, &m);
    p.place(0, 0, 0, 0);
    p.place(1, 0, 0, 1);
    let reqs = vec![RequestTrace {
        id: 0,
        origin: 0,
        arrival: 3.0,
        tokens: 100,
        experts: vec![vec![1]],
        phase: 0,
    }];
    let time = TimeModel::new(&c, vec![timing(); 2]).unwrap();
    let metrics = simulate(&c, &m, p.clone(), &reqs, time, &no_migration()).unwrap();
    // 1e-3 latency + 2 * 100 tokens * 4096 * 2 bytes / 62.5e6, then 0.002 + 100 * 5e-5
    let comm = 1e-3 + 2.0 * 100.0 * 4096.0 * 2.0 / 62.5e6;
    let comp = 0.002 + 100.0 * 5e-5;
    let r = &metrics.requests[0];
    assert!((r.latency - (comm + comp)).abs() < 1e-12, "{}", r.latency);
    assert_eq!(r.completion, r.arrival + r.latency);
    assert!((metrics.remote_bytes - 2.0 * 100.0 * 4096.0 * 2.0).abs() < 1e-6);
    assert!(validate_placement(&p, &c, &m).unwrap().is_ok());
}

#[test]
fn missing_expert_is_reported_not_skipped() {
    let m = model(vec![3], 1);
    let c = cluster(1, 3, 62.5e6);
    let mut p = Placement::empty(&c, &m);
    p.place(0, 0, 0, 0);
    p.place(0, 0, 0, 1);
    let reqs = vec![RequestTrace {
        id: 0,
        origin: 0,
        arrival: 0.0,
        tokens: 1,
        experts: vec![vec![2]],
        phase: 0,
    }];
    let time = TimeModel::new(&c, vec![timing()]).unwrap();
    // the placement misses expert 2 entirely, so it is rejected up front
    assert!(simulate(&c, &m, p, &reqs, time, &no_migration()).is_err());
}

use std::collections::HashSet;
use std::sync::{Arc, OnceLock};

use llc_consolidation::allocator::{
    brute_force_allocate, feasible_servers, greedy_allocate, objective, release, server_loads,
    snapshot, Outcome, SelectionRule,
};
use llc_consolidation::contention::{competing_data, criterion_two};
use llc_consolidation::degradation::{
    degradation_from_overhead, overhead_from_degradation, pairwise_degradation, total_degradation,
};
use llc_consolidation::model::{
    DegradationTable, GridPoint, PlacementState, Server, ServerProfile, WorkloadId, WorkloadSpec,
    FS_GRID_LEN, KIB, MIB, RS_GRID_LEN,
};
use llc_consolidation::scenario::{
    random_scenario, replay, run_scenario, RandomScenarioLimits, RANDOM_SEQUENCE,
};
use llc_consolidation::synth::{generate_table, GeneratorParams};
use proptest::prelude::*;

fn table() -> Arc<DegradationTable> {
    static TABLE: OnceLock<Arc<DegradationTable>> = OnceLock::new();
    Arc::clone(TABLE.get_or_init(|| {
        Arc::new(generate_table(&ServerProfile::m1("M1"), &GeneratorParams::default()).unwrap())
    }))
}

fn grid_point() -> impl Strategy<Value = GridPoint> {
    (0..RS_GRID_LEN)
        .prop_flat_map(|rs| (Just(rs), rs..FS_GRID_LEN))
        .prop_map(|(rs, fs)| GridPoint::new(rs, fs).unwrap())
}

fn workloads(max: usize) -> impl Strategy<Value = Vec<WorkloadSpec>> {
    prop::collection::vec(grid_point(), 0..=max).prop_map(|points| {
        points
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                WorkloadSpec::write(format!("w{k}").as_str(), p.request_size(), p.file_size())
                    .unwrap()
            })
            .collect()
    })
}

fn servers(alphas: &[f64]) -> Vec<Server> {
    alphas
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let p = if i % 2 == 0 {
                ServerProfile::m1(format!("S{i}"))
            } else {
                ServerProfile::m2(format!("S{i}"))
            };
            Server::new(p.with_alpha(a), table())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_is_monotone_in_every_size(a in grid_point(), b in grid_point()) {
        let t = table();
        let d = t.lookup(a, b);
        let grow = |p: GridPoint| {
            [GridPoint::new(p.rs_index() + 1, p.fs_index()), GridPoint::new(p.rs_index(), p.fs_index() + 1)]
                .into_iter()
                .flatten()
        };
        for x in grow(a) {
            prop_assert!(t.lookup(x, b) >= d);
        }
        for y in grow(b) {
            prop_assert!(t.lookup(a, y) >= d);
        }
    }

    #[test]
    fn overhead_and_degradation_invert(d in 0.0..0.999f64, ar in 1e-3..1e4f64) {
        let o = overhead_from_degradation(d, ar).unwrap();
        prop_assert!(o >= 0.0);
        prop_assert!((degradation_from_overhead(o, ar).unwrap() - d).abs() < 1e-12);
        prop_assert_eq!(d < 0.5, o < ar);
    }

    #[test]
    fn degradation_adds_over_co_residents(group in workloads(8)) {
        prop_assume!(!group.is_empty());
        let t = table();
        let (on, rest) = group.split_first().unwrap();
        let total = total_degradation(&t, on, rest).unwrap();
        let sum: f64 = rest.iter().map(|f| pairwise_degradation(&t, f, on).unwrap()).sum();
        prop_assert!((total.raw_total - sum).abs() < 1e-12);
        prop_assert_eq!(total.clamped, sum >= 1.0);
        prop_assert!(total.total < 1.0);
    }

    #[test]
    fn competing_data_counts_only_cache_sized_files(group in workloads(8), extra in grid_point()) {
        let m1 = ServerProfile::m1("M1");
        let w = WorkloadSpec::write("extra", extra.request_size(), extra.file_size()).unwrap();
        let mut with = group.clone();
        with.push(w.clone());
        let added = competing_data(&with, &m1) - competing_data(&group, &m1);
        let expected = if w.file_size <= m1.llc_size { w.request_size + w.file_size } else { w.request_size };
        prop_assert_eq!(added, expected);
    }

    #[test]
    fn criterion_two_is_monotone_in_alpha(group in workloads(8), a in 0.5..2.0f64, bump in 0.0..1.0f64) {
        let p = ServerProfile::m1("M1");
        if criterion_two(&group, &p.clone().with_alpha(a)) {
            prop_assert!(criterion_two(&group, &p.with_alpha(a + bump)));
        }
    }

    #[test]
    fn larger_alpha_only_widens_feasible_servers(
        residents in prop::collection::vec(workloads(3), 3),
        arrival in grid_point(),
        a in 0.8..1.6f64,
        bump in 0.0..0.8f64,
    ) {
        let mut state = PlacementState::new(3);
        for (i, group) in residents.iter().enumerate() {
            for w in group {
                let mut w = w.clone();
                w.id = WorkloadId::new(format!("{i}-{}", w.id));
                state.place(i, w).unwrap();
            }
        }
        let w = WorkloadSpec::write("new", arrival.request_size(), arrival.file_size()).unwrap();
        let tight: HashSet<_> = feasible_servers(&w, &servers(&[a; 3]), &state).unwrap().into_iter().collect();
        let loose: HashSet<_> = feasible_servers(&w, &servers(&[a + bump; 3]), &state).unwrap().into_iter().collect();
        prop_assert!(tight.is_subset(&loose));
    }

    #[test]
    fn adding_a_feasible_workload_never_raises_min_throughput(group in workloads(4), extra in grid_point()) {
        let server = &servers(&[1.3])[0];
        let before = server_loads(server, &group).unwrap();
        let mut with = group.clone();
        with.push(WorkloadSpec::write("extra", extra.request_size(), extra.file_size()).unwrap());
        let after = server_loads(server, &with).unwrap();
        if after.is_feasible() {
            prop_assert!(after.min_relative_throughput() <= before.min_relative_throughput());
        }
    }

    #[test]
    fn greedy_commits_only_feasible_states_and_conserves_workloads(
        arrivals in workloads(24),
        release_mask in prop::collection::vec(any::<bool>(), 24),
        alpha in prop::sample::select(vec![1.0, 1.3, 1.5]),
    ) {
        let servers = servers(&[alpha; 3]);
        let mut state = PlacementState::new(3);
        let mut released = HashSet::new();
        for (w, release_one) in arrivals.iter().zip(&release_mask) {
            greedy_allocate(w, &servers, &mut state, SelectionRule::GlobalSum).unwrap();
            if *release_one {
                let first = state.all_residents().iter().flatten().next().map(|w| w.id.clone());
                if let Some(id) = first {
                    release(&id, &servers, &mut state, SelectionRule::GlobalSum).unwrap();
                    released.insert(id);
                }
            }
            for l in snapshot(&servers, &state).unwrap() {
                prop_assert!(l.is_feasible());
            }
        }
        let mut seen: Vec<WorkloadId> = state.all_residents().iter().flatten().map(|w| w.id.clone()).collect();
        seen.extend(state.queued_ids());
        seen.extend(released.iter().cloned());
        seen.sort();
        let mut submitted: Vec<_> = arrivals.iter().map(|w| w.id.clone()).collect();
        submitted.sort();
        prop_assert_eq!(seen, submitted);
    }

    #[test]
    fn greedy_is_deterministic(arrivals in workloads(12)) {
        let servers = servers(&[1.3, 1.3]);
        let run = || {
            let mut state = PlacementState::new(2);
            let outcomes: Vec<Outcome> = arrivals
                .iter()
                .map(|w| greedy_allocate(w, &servers, &mut state, SelectionRule::GlobalSum).unwrap().outcome)
                .collect();
            (outcomes, state)
        };
        prop_assert_eq!(run(), run());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_wins_when_queue_lengths_tie(seed in any::<u64>()) {
        let s = random_scenario(seed, RandomScenarioLimits { max_arrivals: 6, ..Default::default() }, table());
        let alpha = s.alpha_sweep[0];
        let greedy = run_scenario(&s, RANDOM_SEQUENCE, alpha).unwrap();
        let servers = s.servers_with_alpha(alpha).unwrap();
        let arrivals: Vec<_> = s.sequences[RANDOM_SEQUENCE]
            .iter()
            .map(|e| match e { llc_consolidation::scenario::Event::Arrive(w) => w.clone(), _ => unreachable!() })
            .collect();
        let best = brute_force_allocate(&arrivals, &servers, &s.initial, 12).unwrap();
        prop_assert!(best.queued <= greedy.queued_count);
        if best.queued == greedy.queued_count {
            prop_assert!(best.objective.total <= greedy.objective + 1e-12);
        }
    }

    #[test]
    fn replaying_a_trace_reproduces_the_final_state(seed in any::<u64>()) {
        let s = random_scenario(seed, RandomScenarioLimits::default(), table());
        let report = run_scenario(&s, RANDOM_SEQUENCE, s.alpha_sweep[0]).unwrap();
        let state = replay(&s, &report).unwrap();
        let residents: Vec<Vec<WorkloadId>> = report.servers.iter().map(|x| x.residents.clone()).collect();
        prop_assert_eq!(state.resident_ids(), residents);
        prop_assert_eq!(state.queued_ids(), report.queued);
        prop_assert!((0.0..=1.0).contains(&report.average_min_throughput));
    }
}

#[test]
fn arrival_order_changes_the_outcome() {
    // 1MB of cache, no pairwise degradation: whoever arrives first gets the server
    let mut profile = ServerProfile::m1("s").with_alpha(1.0);
    profile.llc_size = MIB;
    let servers = [Server::new(
        profile,
        Arc::new(DegradationTable::uniform(MIB, 0.0).unwrap()),
    )];
    let big = WorkloadSpec::write("big", 512 * KIB, 512 * KIB).unwrap();
    let small = WorkloadSpec::write("small", 256 * KIB, 256 * KIB).unwrap();
    let final_objective = |order: [&WorkloadSpec; 2]| {
        let mut state = PlacementState::new(1);
        for w in order {
            greedy_allocate(w, &servers, &mut state, SelectionRule::GlobalSum).unwrap();
        }
        objective(&servers, &state).unwrap().total
    };
    assert_eq!(final_objective([&big, &small]), 0.5);
    assert_eq!(final_objective([&small, &big]), 0.25);
}

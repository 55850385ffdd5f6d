mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;
use slide_core::certify::small_scenario;
use slide_core::channel::ChannelState;
use slide_core::harness::{generate_scenario, ScenarioConfig};
use slide_core::layer_solver::{solve_with_costs, SolverConfig};
use slide_core::min_bandwidth::equal_energy_scales;
use slide_core::oracle::{exhaustive_p1, grid_p2_costs, OracleConfig, SearchMode};
use slide_core::profiles::{Catalog, ModelProfile, UserSpec};
use slide_core::rng::substream;
use slide_core::scenario::{load_scenario, Scenario, ScenarioUser};
use slide_core::scheduler::{min_bandwidths, solve, solve_eba, solve_slide, Method, SchedulerConfig, SolveResult};
use slide_core::timeline::LayerCosts;
use slide_core::SlideError;

fn sched() -> SchedulerConfig {
    SchedulerConfig::default()
}

fn hand_fixture() -> Scenario {
    load_scenario(fixture("scenarios/three_users.json")).unwrap()
}

fn build(models: Vec<ModelProfile>, users: Vec<UserSpec>, bandwidth_hz: f64) -> Scenario {
    let (bs, _) = link(bandwidth_hz, 1.0);
    let mut s = Scenario {
        seed: 0,
        config_hash: None,
        bs,
        catalog: Catalog::new(models).unwrap(),
        users: users
            .into_iter()
            .map(|spec| ScenarioUser {
                spec,
                task: None,
                channel: ChannelState {
                    gain_linear: 0.0,
                    spectral_efficiency: 1.0,
                },
            })
            .collect(),
    };
    s.validate_and_prune().unwrap();
    s
}

fn check_invariants(sc: &Scenario, r: &SolveResult) {
    assert_eq!(r.throughput, r.served_users.len());
    assert!(r.total_bandwidth_used <= 1.0 + 1e-12);
    assert!((0.0..=1.0).contains(&r.served_ratio()));
    for (a, u) in r.per_user.iter().zip(&sc.users) {
        if a.served {
            assert!(a.e2e_latency_s.unwrap() <= u.spec.deadline_s, "{} user {}", r.method, a.user_id);
            assert!(a.y > 0.0);
        } else {
            assert_eq!(a.y, 0.0);
            assert!(a.model_choice.is_none());
            assert!(a.alloc.gpu_scale.iter().all(|&z| z == 0.0));
        }
    }
}

#[test]
fn hand_fixture_admits_the_two_cheapest_users() {
    let sc = hand_fixture();
    let r = solve_slide(&sc, &sched()).unwrap();
    check_invariants(&sc, &r);
    assert_eq!(r.throughput, 2);
    assert_eq!(r.served_users, vec![0, 1]);
    let y: Vec<f64> = r.per_user.iter().map(|a| a.y_min).collect();
    for (got, want) in y.iter().zip([0.4, 0.3, 0.5]) {
        assert!(*got >= want && got - want <= 2e-4, "{got} vs {want}");
    }
    for m in Method::ALL {
        assert!(solve(m, &sc, &sched()).unwrap().throughput <= 2);
    }
    for mode in [SearchMode::Enumerate, SearchMode::BranchAndBound] {
        let exact = exhaustive_p1(&sc, &sched(), &OracleConfig::default(), mode).unwrap();
        assert_eq!(exact.result.served_users, vec![0, 1]);
    }
}

#[test]
fn single_feasible_user_gets_exactly_its_need() {
    let mut sc = hand_fixture();
    sc.users.truncate(1);
    let r = solve_slide(&sc, &sched()).unwrap();
    assert_eq!(r.throughput, 1);
    assert_eq!(r.per_user[0].y, r.per_user[0].y_min);
    let eba = solve_eba(&sc, &sched()).unwrap();
    assert_eq!(eba.throughput, 1);
    assert_eq!(eba.per_user[0].y, 1.0);
    let exact = exhaustive_p1(&sc, &sched(), &OracleConfig::default(), SearchMode::Enumerate).unwrap();
    assert_eq!(exact.result.throughput, 1);
}

#[test]
fn overlap_serves_a_user_that_sequential_download_cannot() {
    // tau = (0.5, 0.5), compute 0.3 s per layer: pipelined 1.3 s, sequential 1.6 s
    let two_layer = model(0, &[(5e7, 3e8), (5e7, 3e8)]);
    let tiny = model(1, &[(1e5, 1e3)]);
    let users = vec![
        user(0, unit_device(), 1.4, 5.0, vec![0]),
        user(1, unit_device(), 1.0, 5.0, vec![1]),
    ];
    let sc = build(vec![two_layer, tiny], users, 1e8);
    // user 0 needs nearly the whole band under SLIDE, so serve it alone
    let slide = solve(Method::Slide, &sc, &sched()).unwrap();
    let dai = solve(Method::Dai, &sc, &sched()).unwrap();
    check_invariants(&sc, &slide);
    check_invariants(&sc, &dai);
    assert!(slide.per_user[0].y_min > 0.0);
    assert_eq!(dai.per_user[0].y_min, 0.0);
    let mut alone = sc.clone();
    alone.users.truncate(1);
    assert_eq!(solve(Method::Slide, &alone, &sched()).unwrap().throughput, 1);
    assert_eq!(solve(Method::Dai, &alone, &sched()).unwrap().throughput, 0);
}

#[test]
fn smallest_model_provisioning_loses_when_it_is_compute_heavy() {
    let small_heavy = model(0, &[(1e7, 5e8)]);
    let large_light = model(1, &[(3e7, 1e7)]);
    let users = (0..2).map(|k| user(k, unit_device(), 0.7, 5.0, vec![0, 1])).collect();
    let sc = build(vec![small_heavy, large_light], users, 1e8);
    let slide = solve(Method::Slide, &sc, &sched()).unwrap();
    let gbmp = solve(Method::Gbmp, &sc, &sched()).unwrap();
    assert_eq!(slide.throughput, 2);
    assert_eq!(gbmp.throughput, 1);

    let single: Vec<UserSpec> = (0..2).map(|k| user(k, unit_device(), 0.7, 5.0, vec![1])).collect();
    let forced = build(vec![model(0, &[(1e7, 5e8)]), model(1, &[(3e7, 1e7)])], single, 1e8);
    assert_eq!(
        solve(Method::Slide, &forced, &sched()).unwrap().per_user,
        solve(Method::Gbmp, &forced, &sched()).unwrap().per_user
    );
}

#[test]
fn equal_energy_split_matches_the_solver_on_uniform_layers() {
    let uniform = LayerCosts {
        download_s: vec![1e-4, 1e-6, 1e-6, 1e-6],
        memcpy_s: vec![0.0; 4],
        compute_s: vec![0.05; 4],
        start_latency_s: 0.0,
        base_energy_j: 0.1,
        energy_scale_j: 2.0,
    };
    let q_prime = 0.4 * 0.2;
    let budget = 0.1 + 2.0 * q_prime;
    let eq = equal_energy_scales(&uniform, q_prime);
    let opt = solve_with_costs(&uniform, budget, &SolverConfig::default(), None).unwrap();
    for (a, b) in eq.iter().zip(&opt.alloc.gpu_scale) {
        assert!((a - b).abs() < 1e-6);
    }

    let mut mixed = uniform.clone();
    mixed.compute_s = vec![0.01, 0.1, 0.03, 0.06];
    let eq = equal_energy_scales(&mixed, q_prime);
    let opt = solve_with_costs(&mixed, budget, &SolverConfig::default(), None).unwrap();
    assert!(mixed.latency(slide_core::timeline::LatencyModel::Slide, &eq) > opt.e2e_latency_s.unwrap());
}

#[test]
fn leftover_donation_keeps_the_served_set() {
    let sc = generate_scenario(
        &ScenarioConfig {
            num_users: 20,
            seed: 5,
            ..ScenarioConfig::default()
        },
        &catalog(),
        &devices(),
    )
    .unwrap();
    let plain = solve_slide(&sc, &sched()).unwrap();
    let donated = solve_slide(
        &sc,
        &SchedulerConfig {
            donate_leftover: true,
            ..sched()
        },
    )
    .unwrap();
    check_invariants(&sc, &donated);
    assert_eq!(plain.served_users, donated.served_users);
    assert!(donated.total_bandwidth_used >= plain.total_bandwidth_used);
    for (a, b) in plain.per_user.iter().zip(&donated.per_user) {
        if a.served {
            assert!(b.e2e_latency_s.unwrap() <= a.e2e_latency_s.unwrap() * (1.0 + 1e-6));
        }
    }
}

#[test]
fn eba_starves_a_crowded_narrow_band() {
    let sc = generate_scenario(
        &ScenarioConfig {
            num_users: 100,
            bandwidth_hz: 200e6,
            seed: 3,
            ..ScenarioConfig::default()
        },
        &catalog(),
        &devices(),
    )
    .unwrap();
    let slide = solve_slide(&sc, &sched()).unwrap();
    let eba = solve_eba(&sc, &sched()).unwrap();
    assert!(eba.served_ratio() < slide.served_ratio());
    assert!(eba.served_ratio() < 0.05);
}

#[test]
fn oracle_caps_are_enforced() {
    let sc = generate_scenario(
        &ScenarioConfig {
            num_users: 7,
            seed: 1,
            ..ScenarioConfig::default()
        },
        &catalog(),
        &devices(),
    )
    .unwrap();
    let err = exhaustive_p1(&sc, &sched(), &OracleConfig::default(), SearchMode::Enumerate).unwrap_err();
    assert!(matches!(err, SlideError::OracleCap(_)));
}

#[test]
fn refining_the_grid_never_hurts() {
    let c = LayerCosts {
        download_s: vec![0.05, 0.08, 0.02],
        memcpy_s: vec![0.001, 0.002, 0.0],
        compute_s: vec![0.07, 0.05, 0.1],
        start_latency_s: 0.03,
        base_energy_j: 0.1,
        energy_scale_j: 3.0,
    };
    let budget = 0.1 + 3.0 * 0.5 * 0.22;
    let mut prev = f64::INFINITY;
    for points in [6, 11, 21, 41] {
        let g = grid_p2_costs(
            &c,
            budget,
            &OracleConfig {
                z_grid_points: points,
                ..OracleConfig::default()
            },
        )
        .unwrap();
        assert!(g.e2e_latency_s <= prev);
        prev = g.e2e_latency_s;
    }
}

fn random_scenario(seed: u64, num_users: usize) -> Scenario {
    let mut rng = substream(seed, "test-scenario");
    let cfg = ScenarioConfig {
        num_users,
        bandwidth_hz: *[20e6, 50e6, 100e6, 200e6, 400e6].choose(&mut rng).unwrap(),
        nano_fraction: rng.random_range(0.0..=1.0),
        energy_scale: rng.random_range(0.2..0.7),
        seed,
        ..ScenarioConfig::default()
    };
    generate_scenario(&cfg, &catalog(), &devices()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_method_is_feasible_and_none_beats_slide(seed in 0u64..100_000) {
        let sc = random_scenario(seed, 12);
        let slide = solve_slide(&sc, &sched()).unwrap();
        check_invariants(&sc, &slide);
        for m in [Method::Dai, Method::Eba, Method::Gbmp, Method::Eecra] {
            let r = solve(m, &sc, &sched()).unwrap();
            check_invariants(&sc, &r);
            prop_assert!(r.throughput <= slide.throughput, "{} {} > slide {}", m, r.throughput, slide.throughput);
        }
    }

    #[test]
    fn no_affordable_subset_is_larger_than_the_greedy_one(seed in 0u64..100_000) {
        let sc = random_scenario(seed, 15);
        let needs = min_bandwidths(&sc, &sched(), Method::Slide).unwrap();
        let slide = solve_slide(&sc, &sched()).unwrap();
        let feasible: Vec<(usize, f64)> = needs.iter().enumerate()
            .filter(|(_, n)| n.feasible).map(|(k, n)| (k, n.y_min)).collect();
        let mut rng = substream(seed, "subsets");
        for _ in 0..500 {
            let picked: Vec<f64> = feasible.iter().filter(|_| rng.random_bool(0.5)).map(|(_, y)| *y).collect();
            if picked.iter().sum::<f64>() <= 1.0 {
                prop_assert!(picked.len() <= slide.throughput);
            }
        }
        // swap a served user for an unserved one with a larger need
        let served: Vec<usize> = slide.per_user.iter().enumerate().filter(|(_, a)| a.served).map(|(k, _)| k).collect();
        for &i in &served {
            for &(j, yj) in &feasible {
                if served.contains(&j) || yj < needs[i].y_min {
                    continue;
                }
                let swapped: f64 = served.iter().map(|&k| if k == i { yj } else { needs[k].y_min }).sum();
                let count = if swapped <= 1.0 { served.len() } else { served.len() - 1 };
                prop_assert!(count <= slide.throughput);
                prop_assert!(swapped >= slide.total_bandwidth_used - 1e-12);
            }
        }
    }

    #[test]
    fn greedy_matches_both_oracles(seed in 0u64..100_000, k in 1usize..=6, i in 1usize..=6) {
        let base = ScenarioConfig { bandwidth_hz: 40e6, ..ScenarioConfig::default() };
        let sc = small_scenario(&base, &catalog(), &devices(), k, i, seed).unwrap();
        let slide = solve_slide(&sc, &sched()).unwrap();
        let oracle = OracleConfig::default();
        let enumerated = exhaustive_p1(&sc, &sched(), &oracle, SearchMode::Enumerate).unwrap();
        let bnb = exhaustive_p1(&sc, &sched(), &oracle, SearchMode::BranchAndBound).unwrap();
        prop_assert_eq!(enumerated.result.throughput, slide.throughput);
        prop_assert_eq!(&bnb.result.served_users, &enumerated.result.served_users);

        let mut reversed = sc.clone();
        reversed.users.reverse();
        let again = exhaustive_p1(&reversed, &sched(), &oracle, SearchMode::Enumerate).unwrap();
        prop_assert_eq!(again.result.throughput, enumerated.result.throughput);
    }
}

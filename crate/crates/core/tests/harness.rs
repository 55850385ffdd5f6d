mod common;

use common::*;
use slide_core::harness::{
    config_hash, generate_scenario, run_sweep, trial_seed, write_rows_csv, Axis, Mobility, ScenarioConfig, SweepSpec,
};
use slide_core::scenario::parse_scenario;
use slide_core::scheduler::{solve, Method, SchedulerConfig};

fn default_point() -> ScenarioConfig {
    ScenarioConfig {
        seed: 9,
        ..ScenarioConfig::default()
    }
}

#[test]
fn default_operating_point() {
    let cfg = default_point();
    assert_eq!(cfg.num_users, 80);
    assert_eq!(cfg.bandwidth_hz, 400e6);
    assert_eq!(cfg.nano_fraction, 0.6);
    assert_eq!(cfg.energy_scale, 0.26);
    assert_eq!(cfg.deadline_range_s, [0.6, 1.0]);

    let sc = generate_scenario(&cfg, &catalog(), &devices()).unwrap();
    assert_eq!(sc.num_users(), 80);
    assert_eq!(sc.bs.total_bandwidth_hz, 400e6);
    let mut weak = 0;
    for u in &sc.users {
        let s = &u.spec;
        assert!((0.6..1.0).contains(&s.deadline_s));
        let rated = s.device.rated_power_w.unwrap();
        assert!((s.energy_budget_j - 0.26 * rated * s.deadline_s).abs() < 1e-12);
        assert!((1..=4).contains(&s.compatible_models.len()));
        let task = u.task.unwrap();
        for id in &s.compatible_models {
            assert!(sc.catalog.model(*id).unwrap().serves_task(task));
        }
        assert!(s.position_m[0].hypot(s.position_m[1]) <= sc.bs.coverage_radius_m);
        weak += usize::from(s.device.name == "orin-nano");
    }
    // 60% weak devices, loosely
    assert!((30..=66).contains(&weak), "{weak}");
}

#[test]
fn no_weak_devices_when_the_fraction_is_zero() {
    let cfg = ScenarioConfig {
        nano_fraction: 0.0,
        ..default_point()
    };
    let sc = generate_scenario(&cfg, &catalog(), &devices()).unwrap();
    assert!(sc.users.iter().all(|u| u.spec.device.name == "orin-nx"));
}

#[test]
fn generation_is_deterministic_and_round_trips() {
    let a = generate_scenario(&default_point(), &catalog(), &devices()).unwrap();
    let b = generate_scenario(&default_point(), &catalog(), &devices()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(parse_scenario(&a.to_json()).unwrap(), a);
    let other = ScenarioConfig {
        seed: 10,
        ..default_point()
    };
    assert_ne!(generate_scenario(&other, &catalog(), &devices()).unwrap().to_json(), a.to_json());
    assert_eq!(config_hash(&default_point()), config_hash(&default_point()));
    assert_ne!(config_hash(&default_point()), config_hash(&other));
}

#[test]
fn fewer_users_are_a_prefix_of_more_users() {
    let big = generate_scenario(&default_point(), &catalog(), &devices()).unwrap();
    let small = generate_scenario(
        &ScenarioConfig {
            num_users: 10,
            ..default_point()
        },
        &catalog(),
        &devices(),
    )
    .unwrap();
    assert_eq!(small.users[..], big.users[..10]);
}

#[test]
fn moving_users_never_see_a_better_channel() {
    let fixed = generate_scenario(&default_point(), &catalog(), &devices()).unwrap();
    for mobility in [Mobility::Slow, Mobility::Fast] {
        let moving = generate_scenario(
            &ScenarioConfig {
                mobility,
                ..default_point()
            },
            &catalog(),
            &devices(),
        )
        .unwrap();
        for (a, b) in fixed.users.iter().zip(&moving.users) {
            assert_eq!(a.spec.position_m, b.spec.position_m);
            assert!(b.channel.gain_linear <= a.channel.gain_linear);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        ScenarioConfig {
            num_users: 0,
            ..default_point()
        },
        ScenarioConfig {
            energy_scale: 1.5,
            ..default_point()
        },
        ScenarioConfig {
            deadline_range_s: [0.0, 1.0],
            ..default_point()
        },
    ] {
        assert!(generate_scenario(&cfg, &catalog(), &devices()).is_err());
    }
}

#[test]
fn one_point_one_trial_is_a_plain_solve() {
    let base = ScenarioConfig {
        num_users: 30,
        ..default_point()
    };
    let spec = SweepSpec {
        axis: Axis::Bandwidth,
        values: vec![300e6],
        trials_per_point: 1,
        methods: vec![Method::Slide],
    };
    let sched = SchedulerConfig::default();
    let table = run_sweep(&spec, &base, &catalog(), &devices(), &sched).unwrap();
    let cfg = ScenarioConfig {
        bandwidth_hz: 300e6,
        seed: trial_seed(base.seed, 0),
        ..base
    };
    let direct = solve(Method::Slide, &generate_scenario(&cfg, &catalog(), &devices()).unwrap(), &sched).unwrap();
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0];
    assert_eq!(row.throughput, direct.throughput);
    assert_eq!(row.served_ratio, direct.served_ratio());
    assert_eq!(row.bw_used, direct.total_bandwidth_used);
    assert_eq!(row.mean_latency_s, direct.mean_latency_s());
}

#[test]
fn sweep_is_independent_of_worker_count_and_slide_leads_every_trial() {
    let base = ScenarioConfig {
        num_users: 20,
        deadline_range_s: [0.3, 0.3],
        energy_scale: 0.56,
        ..default_point()
    };
    let spec = SweepSpec {
        axis: Axis::NumUsers,
        values: vec![10.0, 20.0],
        trials_per_point: 3,
        methods: Method::ALL.to_vec(),
    };
    let sched = SchedulerConfig::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sweep(&spec, &base, &catalog(), &devices(), &sched).unwrap())
    };
    let one = run(1);
    let four = run(4);
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_rows_csv(&mut a, &one, 9, "h", false).unwrap();
    write_rows_csv(&mut b, &four, 9, "h", false).unwrap();
    assert_eq!(a, b);
    assert_eq!(one.summary, four.summary);

    for r in &one.rows {
        assert!(r.error.is_empty(), "{}", r.error);
        assert!((0.0..=1.0).contains(&r.served_ratio));
        let slide = one
            .rows
            .iter()
            .find(|s| s.value == r.value && s.trial == r.trial && s.method == "slide")
            .unwrap();
        assert!(slide.served_ratio >= r.served_ratio, "{} beats slide", r.method);
    }
}

#[test]
fn bad_axis_values_become_error_rows() {
    let spec = SweepSpec {
        axis: Axis::Mobility,
        values: vec![0.0, 7.0],
        trials_per_point: 1,
        methods: vec![Method::Slide],
    };
    let base = ScenarioConfig {
        num_users: 5,
        ..default_point()
    };
    let table = run_sweep(&spec, &base, &catalog(), &devices(), &SchedulerConfig::default()).unwrap();
    assert!(table.rows[0].error.is_empty());
    assert!(!table.rows[1].error.is_empty());
    assert_eq!(table.summary[1].errors, 1);
}

#[test]
fn csv_layout() {
    let spec = SweepSpec {
        axis: Axis::EnergyScale,
        values: vec![0.3],
        trials_per_point: 2,
        methods: vec![Method::Slide, Method::Dai],
    };
    let base = ScenarioConfig {
        num_users: 5,
        ..default_point()
    };
    let table = run_sweep(&spec, &base, &catalog(), &devices(), &SchedulerConfig::default()).unwrap();
    let mut out = Vec::new();
    write_rows_csv(&mut out, &table, 9, "abcd", false).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# seed=9 config_hash=abcd");
    assert_eq!(
        lines.next().unwrap(),
        "axis,value,trial,method,served_ratio,throughput,mean_latency_s,bw_used,wall_time_s,error"
    );
    assert_eq!(lines.count(), 4);
}

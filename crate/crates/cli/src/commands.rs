use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use slide_core::certify::{bench, certify};
use slide_core::harness::{
    config_hash, generate_scenario, run_sweep, write_csv_preamble, write_rows_csv, write_summary_csv,
};
use slide_core::scenario::load_scenario;
use slide_core::scheduler::{solve, Method, SolveResult};
use slide_core::SlideError;

use crate::config::RunConfig;
use crate::{Cli, CliError, Command, Common};

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    }
    let verbose = cli.verbose;
    match cli.command {
        Command::Gen { common } => cmd_gen(&common),
        Command::Solve {
            common,
            scenario,
            method,
            strict,
            timing,
        } => cmd_solve(&common, &scenario, &method, strict, timing, verbose),
        Command::Sweep { common, trials, timing } => cmd_sweep(&common, trials, timing),
        Command::Certify {
            common,
            trials,
            p2_trials,
            max_users,
            max_models,
        } => cmd_certify(&common, trials, p2_trials, max_users, max_models),
        Command::Bench { common, k, i, repeats } => cmd_bench(&common, k, i, repeats),
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
        cfg.certify.seed = seed;
    }
    if let Some(eps) = common.eps {
        cfg.scheduler.eps = eps;
    }
    cfg.scheduler.validate()?;
    Ok(cfg)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|source| {
            CliError::Input(SlideError::Io {
                path: path.to_path_buf(),
                source,
            })
        }),
        None => io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}"))),
    }
}

/// Status lines go to stdout when results go to a file, else to stderr.
fn status(out: Option<&Path>, line: &str) {
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn cmd_gen(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (catalog, devices) = cfg.load_profiles()?;
    let mut scenario = generate_scenario(&cfg.scenario, &catalog, &devices)?;
    scenario.config_hash = Some(config_hash(&(&cfg.scenario, &catalog, &devices)));
    write_output(common.out.as_deref(), (scenario.to_json() + "\n").as_bytes())?;
    let s = &cfg.scenario;
    status(
        common.out.as_deref(),
        &format!(
            "K={} B={} MHz theta={:.2} beta={:.2} seed={}",
            scenario.num_users(),
            s.bandwidth_hz / 1e6,
            s.nano_fraction,
            s.energy_scale,
            s.seed
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    seed: u64,
    config_hash: String,
    results: &'a [SolveResult],
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<BTreeMap<String, f64>>,
}

fn parse_methods(spec: &str) -> Result<Vec<Method>, CliError> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    spec.split(',')
        .map(|m| m.trim().parse::<Method>().map_err(CliError::from))
        .collect()
}

fn cmd_solve(
    common: &Common,
    scenario_path: &Path,
    method: &str,
    strict: bool,
    timing: bool,
    verbose: u8,
) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let methods = parse_methods(method)?;
    let scenario = load_scenario(scenario_path)?;
    let hash = config_hash(&(&scenario, &cfg.scheduler));
    let results: Vec<SolveResult> = methods
        .iter()
        .map(|&m| solve(m, &scenario, &cfg.scheduler))
        .collect::<Result<_, _>>()?;
    let output = SolveOutput {
        seed: scenario.seed,
        config_hash: hash,
        results: &results,
        wall_time_s: timing.then(|| results.iter().map(|r| (r.method.clone(), r.wall_time_s)).collect()),
    };
    let json = serde_json::to_string_pretty(&output).expect("results serialize") + "\n";
    write_output(common.out.as_deref(), json.as_bytes())?;

    let out = common.out.as_deref();
    let mut nonconverged = 0;
    for r in &results {
        nonconverged += r.stats.nonconverged;
        status(
            out,
            &format!(
                "{}: served {}/{} (ratio {:.4}), bandwidth used {:.4}",
                r.method,
                r.throughput,
                r.num_users,
                r.served_ratio(),
                r.total_bandwidth_used
            ),
        );
        if verbose > 0 {
            for a in &r.per_user {
                let line = match (a.model_choice, a.e2e_latency_s) {
                    (Some(m), Some(t)) if a.served => format!(
                        "  user {:>3}: model {m:>3} y={:.5} latency {:.4} s energy {:.4} J",
                        a.user_id, a.y, t, a.energy_j
                    ),
                    _ => format!("  user {:>3}: unserved (min fraction {:.5})", a.user_id, a.y_min),
                };
                status(out, &line);
            }
        }
    }
    if strict && nonconverged > 0 {
        return Err(CliError::NonConvergence(nonconverged));
    }
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn cmd_sweep(common: &Common, trials: Option<usize>, timing: bool) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let mut spec = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Usage("config has no `sweep` section".into()))?;
    if let Some(t) = trials {
        spec.trials_per_point = t;
    }
    let (catalog, devices) = cfg.load_profiles()?;
    let hash = config_hash(&(&cfg.scenario, &cfg.scheduler, &spec, &catalog, &devices));
    let seed = cfg.scenario.seed;
    let table = run_sweep(&spec, &cfg.scenario, &catalog, &devices, &cfg.scheduler)?;

    let mut rows = Vec::new();
    write_rows_csv(&mut rows, &table, seed, &hash, timing)?;
    write_output(common.out.as_deref(), &rows)?;
    if let Some(out) = &common.out {
        let mut summary = Vec::new();
        write_summary_csv(&mut summary, &table, seed, &hash)?;
        write_output(Some(&summary_path(out)), &summary)?;
    }
    for p in &table.summary {
        status(
            common.out.as_deref(),
            &format!(
                "{}={} {:>6}: served ratio {:.4} +/- {:.4} over {} trials{}",
                p.axis,
                p.value,
                p.method,
                p.mean_served_ratio,
                p.std_served_ratio,
                p.trials,
                if p.errors > 0 { format!(" ({} errors)", p.errors) } else { String::new() }
            ),
        );
    }
    Ok(())
}

fn cmd_certify(
    common: &Common,
    trials: Option<usize>,
    p2_trials: Option<usize>,
    max_users: Option<usize>,
    max_models: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    let c = &mut cfg.certify;
    if let Some(t) = trials {
        c.trials = t;
        c.p2_trials = 2 * t;
    }
    if let Some(t) = p2_trials {
        c.p2_trials = t;
    }
    if let Some(k) = max_users {
        c.max_users = k;
    }
    if let Some(i) = max_models {
        c.max_models = i;
    }
    let (catalog, devices) = cfg.load_profiles()?;
    let report = certify(&cfg.certify, &cfg.scenario, &catalog, &devices, &cfg.scheduler, &cfg.oracle)?;

    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        config_hash: String,
        report: &'a slide_core::certify::CertifyReport,
    }
    let hash = config_hash(&(&cfg.certify, &cfg.scenario, &cfg.scheduler, &cfg.oracle, &catalog, &devices));
    let json = serde_json::to_string_pretty(&Output {
        seed: cfg.certify.seed,
        config_hash: hash,
        report: &report,
    })
    .expect("report serializes")
        + "\n";
    write_output(common.out.as_deref(), json.as_bytes())?;

    let out = common.out.as_deref();
    status(
        out,
        &format!("scheduling: {}/{} trials match the exhaustive optimum", report.p1_agreements, report.p1.len()),
    );
    status(
        out,
        &format!(
            "layer solver: {}/{} within {:e} of the grid optimum, worst relative gap {}, {} energy-tightness violations",
            report.p2_within_tolerance,
            report.p2.len(),
            cfg.certify.p2_tolerance,
            report.p2_max_rel_gap.map_or("n/a".into(), |g| format!("{g:.3e}")),
            report.tightness_violations
        ),
    );
    if !report.passed() {
        return Err(CliError::Certification(format!(
            "{} scheduling mismatches, {} layer-solver deviations, {} tightness violations",
            report.p1.len() - report.p1_agreements,
            report.p2.len() - report.p2_within_tolerance,
            report.tightness_violations
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRecord {
    num_users: usize,
    num_models: usize,
    repeats: usize,
    throughput: usize,
    bnb_nodes: u64,
    greedy_s: f64,
    bnb_s: f64,
    speedup: f64,
}

fn cmd_bench(
    common: &Common,
    k: Option<Vec<usize>>,
    i: Option<Vec<usize>>,
    repeats: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(k) = k {
        cfg.bench.user_counts = k;
    }
    if let Some(i) = i {
        cfg.bench.model_counts = i;
    }
    if let Some(r) = repeats {
        cfg.bench.repeats = r;
    }
    let (catalog, devices) = cfg.load_profiles()?;
    let seed = cfg.scenario.seed;
    let rows = bench(
        &cfg.bench.user_counts,
        &cfg.bench.model_counts,
        cfg.bench.repeats,
        seed,
        &cfg.scenario,
        &catalog,
        &devices,
        &cfg.scheduler,
        &cfg.oracle,
    )?;
    let hash = config_hash(&(&cfg.bench, &cfg.scenario, &cfg.scheduler, &cfg.oracle, &catalog, &devices));
    let mut buf = Vec::new();
    write_csv_preamble(&mut buf, seed, &hash)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &rows {
            w.serialize(BenchRecord {
                num_users: r.num_users,
                num_models: r.num_models,
                repeats: r.repeats,
                throughput: r.throughput,
                bnb_nodes: r.bnb_nodes,
                greedy_s: r.greedy_s,
                bnb_s: r.bnb_s,
                speedup: r.speedup(),
            })
            .map_err(|e| CliError::Usage(format!("csv output: {e}")))?;
        }
        w.flush().map_err(|e| CliError::Usage(format!("csv output: {e}")))?;
    }
    write_output(common.out.as_deref(), &buf)?;
    for r in &rows {
        status(
            common.out.as_deref(),
            &format!(
                "K={} I={}: greedy {:.3e} s, branch and bound {:.3e} s ({} nodes), ratio {:.1}",
                r.num_users,
                r.num_models,
                r.greedy_s,
                r.bnb_s,
                r.bnb_nodes,
                r.speedup()
            ),
        );
    }
    Ok(())
}

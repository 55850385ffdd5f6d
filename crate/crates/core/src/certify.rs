//! Randomized cross-checks of the scheduler and layer solver against the
//! brute-force oracles on small instances.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, BsConfig, ChannelState};
use crate::error::{Result, SlideError};
use crate::harness::{generate_scenario, ScenarioConfig};
use crate::layer_solver::{solve_p2, SolveCase};
use crate::oracle::{exhaustive_p1, grid_p2, OracleConfig, SearchMode, GRID_MAX_LAYERS};
use crate::profiles::{Catalog, DeviceProfile, LayerProfile, ModelProfile, UserSpec};
use crate::rng::{mix, substream};
use crate::scenario::Scenario;
use crate::scheduler::{solve_slide, SchedulerConfig};
use crate::timeline::LayerCosts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyConfig {
    /// Random scheduling instances checked against the exhaustive oracle.
    pub trials: usize,
    pub max_users: usize,
    pub max_models: usize,
    /// Bandwidth of each scheduling instance, drawn uniformly in this range.
    pub bandwidth_range_hz: [f64; 2],
    /// Also run the branch-and-bound search and require it to agree.
    pub check_branch_and_bound: bool,
    pub p2_trials: usize,
    pub p2_layers: usize,
    /// Allowed relative latency excess of the layer solver over the grid.
    pub p2_tolerance: f64,
    /// Allowed relative gap between spent energy and the budget when the
    /// budget binds.
    pub tightness_tolerance: f64,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            trials: 100,
            max_users: 6,
            max_models: 6,
            bandwidth_range_hz: [20e6, 200e6],
            check_branch_and_bound: true,
            p2_trials: 200,
            p2_layers: 3,
            p2_tolerance: 1e-3,
            tightness_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self, oracle: &OracleConfig) -> Result<()> {
        if self.max_users == 0 || self.max_models == 0 {
            return Err(SlideError::invalid("certify caps", "must be at least 1"));
        }
        if self.max_users > oracle.max_users || self.max_models > oracle.max_models {
            return Err(SlideError::OracleCap(format!(
                "requested K <= {}, I <= {} but the oracle allows K <= {}, I <= {}",
                self.max_users, self.max_models, oracle.max_users, oracle.max_models
            )));
        }
        if self.p2_layers == 0 || self.p2_layers > GRID_MAX_LAYERS {
            return Err(SlideError::OracleCap(format!("p2_layers must lie in 1..={GRID_MAX_LAYERS}")));
        }
        let [lo, hi] = self.bandwidth_range_hz;
        if !(lo > 0.0 && hi >= lo) {
            return Err(SlideError::invalid("bandwidth_range_hz", "needs 0 < min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Trial {
    pub trial: usize,
    pub num_users: usize,
    pub num_models: usize,
    pub slide: usize,
    pub exhaustive: usize,
    pub branch_and_bound: Option<usize>,
    pub bnb_nodes: Option<u64>,
}

impl P1Trial {
    pub fn agrees(&self) -> bool {
        self.slide == self.exhaustive && self.branch_and_bound.is_none_or(|b| b == self.exhaustive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Trial {
    pub trial: usize,
    pub solver_latency_s: f64,
    pub grid_latency_s: f64,
    /// `(solver - grid) / grid`; negative when the solver is better.
    pub rel_gap: f64,
    pub case_tag: SolveCase,
    pub energy_j: f64,
    pub energy_budget_j: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub p1: Vec<P1Trial>,
    pub p2: Vec<P2Trial>,
    pub p1_agreements: usize,
    pub p2_within_tolerance: usize,
    pub p2_max_rel_gap: Option<f64>,
    pub tightness_violations: usize,
}

impl CertifyReport {
    /// True when every scheduling trial matched the oracle.
    pub fn optimal(&self) -> bool {
        self.p1_agreements == self.p1.len()
    }

    pub fn passed(&self) -> bool {
        self.optimal() && self.p2_within_tolerance == self.p2.len() && self.tightness_violations == 0
    }
}

/// `num_models` distinct catalog models that serve every task.
pub fn small_catalog(catalog: &Catalog, num_models: usize, seed: u64) -> Result<Catalog> {
    if num_models == 0 || num_models > catalog.len() {
        return Err(SlideError::invalid("num_models", format!("needs 1..={}", catalog.len())));
    }
    let mut rng = substream(seed, "catalog");
    let mut picked: Vec<ModelProfile> = sample(&mut rng, catalog.len(), num_models)
        .into_iter()
        .map(|j| {
            let mut m = catalog.models[j].clone();
            m.tasks.clear();
            m
        })
        .collect();
    picked.sort_by_key(|m| m.id);
    Catalog::new(picked)
}

/// Scenario with `num_users` users over a `num_models`-model catalog; any
/// catalog model is acceptable to every user.
pub fn small_scenario(
    base: &ScenarioConfig,
    catalog: &Catalog,
    devices: &BTreeMap<String, DeviceProfile>,
    num_users: usize,
    num_models: usize,
    seed: u64,
) -> Result<Scenario> {
    let small = small_catalog(catalog, num_models, seed)?;
    let mut cfg = base.clone();
    cfg.num_users = num_users;
    cfg.seed = seed;
    cfg.tasks.accuracy_range = [0.0, 0.0];
    cfg.tasks.max_compatible = cfg.tasks.max_compatible.max(num_models);
    generate_scenario(&cfg, &small, devices)
}

/// A random single-user layer allocation problem with a budget strictly
/// between the instantiation energy and the full-speed energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Instance {
    pub user: UserSpec,
    pub model: ModelProfile,
    pub y: f64,
    pub bs: BsConfig,
    pub channel: ChannelState,
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn random_p2_instance(
    devices: &BTreeMap<String, DeviceProfile>,
    num_layers: usize,
    seed: u64,
) -> Result<P2Instance> {
    if devices.is_empty() {
        return Err(SlideError::invalid("devices", "no device profiles"));
    }
    let mut rng = substream(seed, "p2");
    let device = devices
        .values()
        .nth(rng.random_range(0..devices.len()))
        .expect("index in range")
        .clone();
    let layers = (0..num_layers)
        .map(|j| LayerProfile {
            index: j + 1,
            size_bits: log_uniform(&mut rng, 1e6, 2e8),
            flops: log_uniform(&mut rng, 1e8, 5e9),
        })
        .collect();
    let model = ModelProfile {
        id: 0,
        name: String::new(),
        precision_tag: "fp32".into(),
        accuracy: 0.9,
        tasks: Vec::new(),
        layers,
    };
    let bs = BsConfig::default();
    let channel = sample_channel(&bs, rng.random_range(10.0..bs.coverage_radius_m), rng.random())?;
    let y = rng.random_range(0.005..1.0);
    let mut user = UserSpec {
        user_id: 0,
        device,
        batch_size: 1,
        deadline_s: 1.0,
        energy_budget_j: 1.0,
        compatible_models: vec![0],
        position_m: [0.0, 0.0],
        speed_mps: 0.0,
        heading_rad: 0.0,
    };
    let costs = LayerCosts::compute_only(&user, &model);
    let base = costs.base_energy_j;
    let full = costs.energy(&vec![1.0; num_layers]);
    user.energy_budget_j = base + rng.random_range(0.05..0.95) * (full - base);
    Ok(P2Instance {
        user,
        model,
        y,
        bs,
        channel,
    })
}

pub fn certify(
    cfg: &CertifyConfig,
    base: &ScenarioConfig,
    catalog: &Catalog,
    devices: &BTreeMap<String, DeviceProfile>,
    sched: &SchedulerConfig,
    oracle: &OracleConfig,
) -> Result<CertifyReport> {
    cfg.validate(oracle)?;
    sched.validate()?;
    let p1: Vec<P1Trial> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = mix(cfg.seed, trial as u64);
            let mut rng = substream(seed, "certify");
            let num_users = rng.random_range(1..=cfg.max_users);
            let num_models = rng.random_range(1..=cfg.max_models.min(catalog.len()));
            let mut base = base.clone();
            let [lo, hi] = cfg.bandwidth_range_hz;
            base.bandwidth_hz = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let scenario = small_scenario(&base, catalog, devices, num_users, num_models, seed)?;
            let slide = solve_slide(&scenario, sched)?;
            let exhaustive = exhaustive_p1(&scenario, sched, oracle, SearchMode::Enumerate)?;
            let bnb = if cfg.check_branch_and_bound {
                Some(exhaustive_p1(&scenario, sched, oracle, SearchMode::BranchAndBound)?)
            } else {
                None
            };
            Ok(P1Trial {
                trial,
                num_users,
                num_models,
                slide: slide.throughput,
                exhaustive: exhaustive.result.throughput,
                branch_and_bound: bnb.as_ref().map(|b| b.result.throughput),
                bnb_nodes: bnb.map(|b| b.nodes),
            })
        })
        .collect::<Result<_>>()?;

    let p2: Vec<P2Trial> = (0..cfg.p2_trials)
        .into_par_iter()
        .map(|trial| {
            let inst = random_p2_instance(devices, cfg.p2_layers, mix(cfg.seed ^ 0x5032, trial as u64))?;
            let solved = solve_p2(&inst.user, &inst.model, inst.y, &inst.bs, &inst.channel, &sched.solver)?;
            let grid = grid_p2(&inst.user, &inst.model, inst.y, &inst.bs, &inst.channel, oracle)?;
            let latency = solved.e2e_latency_s.expect("positive bandwidth gives a latency");
            Ok(P2Trial {
                trial,
                solver_latency_s: latency,
                grid_latency_s: grid.e2e_latency_s,
                rel_gap: (latency - grid.e2e_latency_s) / grid.e2e_latency_s,
                case_tag: solved.case_tag,
                energy_j: solved.energy_j,
                energy_budget_j: inst.user.energy_budget_j,
                converged: solved.converged,
            })
        })
        .collect::<Result<_>>()?;

    let tightness_violations = p2
        .iter()
        .filter(|t| {
            t.case_tag == SolveCase::DualEtaPositive
                && ((t.energy_j - t.energy_budget_j).abs() / t.energy_budget_j) > cfg.tightness_tolerance
        })
        .count();
    Ok(CertifyReport {
        p1_agreements: p1.iter().filter(|t| t.agrees()).count(),
        p2_within_tolerance: p2.iter().filter(|t| t.rel_gap <= cfg.p2_tolerance).count(),
        p2_max_rel_gap: p2.iter().map(|t| t.rel_gap).reduce(f64::max),
        tightness_violations,
        p1,
        p2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub num_users: usize,
    pub num_models: usize,
    pub repeats: usize,
    pub throughput: usize,
    pub bnb_nodes: u64,
    /// Median wall time of the greedy scheduler.
    pub greedy_s: f64,
    /// Median wall time of the branch-and-bound search.
    pub bnb_s: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.bnb_s / self.greedy_s
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times the greedy scheduler and the branch-and-bound search on the same
/// scenarios, `repeats` scenarios per (K, I) pair. Runs sequentially so the
/// two timings do not compete for cores.
#[allow(clippy::too_many_arguments)]
pub fn bench(
    user_counts: &[usize],
    model_counts: &[usize],
    repeats: usize,
    seed: u64,
    base: &ScenarioConfig,
    catalog: &Catalog,
    devices: &BTreeMap<String, DeviceProfile>,
    sched: &SchedulerConfig,
    oracle: &OracleConfig,
) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(SlideError::invalid("repeats", "must be at least 1"));
    }
    let mut rows = Vec::new();
    for &k in user_counts {
        for &i in model_counts {
            let mut greedy = Vec::with_capacity(repeats);
            let mut bnb = Vec::with_capacity(repeats);
            let mut nodes = 0;
            let mut throughput = 0;
            for r in 0..repeats {
                let scenario = small_scenario(base, catalog, devices, k, i, mix(seed, r as u64))?;
                let g = solve_slide(&scenario, sched)?;
                let b = exhaustive_p1(&scenario, sched, oracle, SearchMode::BranchAndBound)?;
                greedy.push(g.wall_time_s);
                bnb.push(b.result.wall_time_s);
                nodes += b.nodes;
                throughput += g.throughput;
            }
            rows.push(BenchRow {
                num_users: k,
                num_models: i,
                repeats,
                throughput,
                bnb_nodes: nodes,
                greedy_s: median(greedy),
                bnb_s: median(bnb),
            });
        }
    }
    Ok(rows)
}

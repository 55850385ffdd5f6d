//! Scenario generation and Monte Carlo sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{sample_channel, uniform_position, worst_case_channel, BsConfig};
use crate::error::{Result, SlideError};
use crate::profiles::{Catalog, DeviceProfile, ModelId, UserSpec};
use crate::rng::substream;
use crate::scenario::{Scenario, ScenarioUser};
use crate::scheduler::{solve, Method, SchedulerConfig, SolveResult};

/// Retries for an accuracy requirement no catalog model can meet.
pub const REDRAW_LIMIT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    #[default]
    Static,
    /// 1 to 2 m/s.
    Slow,
    /// 5 to 12 m/s.
    Fast,
}

impl Mobility {
    pub fn speed_range_mps(self) -> Option<[f64; 2]> {
        match self {
            Mobility::Static => None,
            Mobility::Slow => Some([1.0, 2.0]),
            Mobility::Fast => Some([5.0, 12.0]),
        }
    }
}

/// Which precision variants of the catalog users may be offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMix {
    #[default]
    All,
    Fp32Only,
    NoInt8,
}

impl PrecisionMix {
    pub fn admits(self, precision: &str) -> bool {
        match self {
            PrecisionMix::All => true,
            PrecisionMix::Fp32Only => precision == "fp32",
            PrecisionMix::NoInt8 => precision != "int8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePair {
    pub strong: String,
    pub weak: String,
}

impl Default for DevicePair {
    fn default() -> Self {
        DevicePair {
            strong: "orin-nx".into(),
            weak: "orin-nano".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub num_task_types: u32,
    /// Accuracy requirement drawn uniformly in this range.
    pub accuracy_range: [f64; 2],
    pub max_compatible: usize,
    pub batch_size: u32,
    pub precision_mix: PrecisionMix,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            num_task_types: 10,
            accuracy_range: [0.80, 0.90],
            max_compatible: 4,
            batch_size: 1,
            precision_mix: PrecisionMix::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_users: usize,
    pub bandwidth_hz: f64,
    pub deadline_range_s: [f64; 2],
    /// Share of users on the weak device.
    pub nano_fraction: f64,
    /// Energy budget is `energy_scale * rated power * deadline`.
    pub energy_scale: f64,
    pub mobility: Mobility,
    pub seed: u64,
    pub device_pair: DevicePair,
    pub tasks: TaskConfig,
    pub bs: BsConfig,
    /// Overrides the GPU clock of every strong device when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_gpu_freq_hz: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_users: 80,
            bandwidth_hz: 400e6,
            deadline_range_s: [0.6, 1.0],
            nano_fraction: 0.6,
            energy_scale: 0.26,
            mobility: Mobility::Static,
            seed: 0,
            device_pair: DevicePair::default(),
            tasks: TaskConfig::default(),
            bs: BsConfig::default(),
            strong_gpu_freq_hz: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(SlideError::invalid("num_users", "must be at least 1"));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(SlideError::invalid("bandwidth_hz", "must be positive"));
        }
        let [lo, hi] = self.deadline_range_s;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(SlideError::invalid("deadline_range_s", "needs 0 < min <= max"));
        }
        for (field, v) in [("nano_fraction", self.nano_fraction), ("energy_scale", self.energy_scale)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SlideError::invalid(field, format!("{v} not in [0, 1]")));
            }
        }
        let [alo, ahi] = self.tasks.accuracy_range;
        if !(0.0 <= alo && alo <= ahi && ahi <= 1.0) {
            return Err(SlideError::invalid("tasks.accuracy_range", "needs 0 <= min <= max <= 1"));
        }
        if self.tasks.num_task_types == 0 || self.tasks.max_compatible == 0 || self.tasks.batch_size == 0 {
            return Err(SlideError::invalid("tasks", "counts must be at least 1"));
        }
        if let Some(f) = self.strong_gpu_freq_hz {
            if !(f.is_finite() && f > 0.0) {
                return Err(SlideError::invalid("strong_gpu_freq_hz", "must be positive"));
            }
        }
        self.bs().validate()
    }

    fn bs(&self) -> BsConfig {
        BsConfig {
            total_bandwidth_hz: self.bandwidth_hz,
            ..self.bs.clone()
        }
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn device<'a>(devices: &'a BTreeMap<String, DeviceProfile>, name: &str) -> Result<&'a DeviceProfile> {
    devices
        .get(name)
        .ok_or_else(|| SlideError::invalid("device_pair", format!("unknown device `{name}`")))
}

/// Draws a scenario. Every random quantity comes from its own named
/// sub-stream of `cfg.seed`, and users are drawn in id order, so the first
/// `k` users of a scenario do not depend on `num_users`.
pub fn generate_scenario(
    cfg: &ScenarioConfig,
    catalog: &Catalog,
    devices: &BTreeMap<String, DeviceProfile>,
) -> Result<Scenario> {
    cfg.validate()?;
    let bs = cfg.bs();
    let mut strong = device(devices, &cfg.device_pair.strong)?.clone();
    if let Some(f) = cfg.strong_gpu_freq_hz {
        strong.gpu_freq_hz = f;
    }
    let weak = device(devices, &cfg.device_pair.weak)?.clone();
    let offered = catalog.filtered(|m| cfg.tasks.precision_mix.admits(&m.precision_tag));

    let mut positions = substream(cfg.seed, "positions");
    let mut channel = substream(cfg.seed, "channel");
    let mut tasks = substream(cfg.seed, "tasks");
    let mut devs = substream(cfg.seed, "devices");
    let mut deadlines = substream(cfg.seed, "deadlines");
    let mut mobility = substream(cfg.seed, "mobility");

    let mut users = Vec::with_capacity(cfg.num_users);
    for k in 0..cfg.num_users {
        let position_m = uniform_position(&bs, &mut positions);
        let fading_seed: u64 = channel.random();
        let dev = if devs.random::<f64>() < cfg.nano_fraction { &weak } else { &strong };
        let deadline_s = uniform(&mut deadlines, cfg.deadline_range_s);
        let (speed_mps, heading_rad) = match cfg.mobility.speed_range_mps() {
            Some(range) => (
                uniform(&mut mobility, range),
                mobility.random_range(0.0..std::f64::consts::TAU),
            ),
            None => (0.0, 0.0),
        };
        let rated = dev.rated_power_w.ok_or_else(|| {
            SlideError::invalid(format!("device {}: rated_power_w", dev.name), "needed for energy budgets")
        })?;
        let energy_budget_j = cfg.energy_scale * rated * deadline_s;
        let (task, compatible_models) = draw_compatible(cfg, &offered, dev, energy_budget_j, &mut tasks)?;

        let spec = UserSpec {
            user_id: k as u32,
            device: dev.clone(),
            batch_size: cfg.tasks.batch_size,
            deadline_s,
            energy_budget_j,
            compatible_models,
            position_m,
            speed_mps,
            heading_rad,
        };
        let state = if speed_mps > 0.0 {
            worst_case_channel(&bs, &spec, deadline_s, fading_seed)?.state
        } else {
            sample_channel(&bs, position_m[0].hypot(position_m[1]), fading_seed)?
        };
        users.push(ScenarioUser {
            spec,
            task: Some(task),
            channel: state,
        });
    }
    let mut scenario = Scenario {
        seed: cfg.seed,
        config_hash: None,
        bs,
        catalog: catalog.clone(),
        users,
    };
    scenario.validate_and_prune()?;
    Ok(scenario)
}

/// Task type and compatibility set: models serving the task whose accuracy
/// meets the drawn requirement, a random subset of 1 to `max_compatible`.
fn draw_compatible(
    cfg: &ScenarioConfig,
    offered: &Catalog,
    dev: &DeviceProfile,
    energy_budget_j: f64,
    rng: &mut impl Rng,
) -> Result<(u32, Vec<ModelId>)> {
    for _ in 0..REDRAW_LIMIT {
        let task = rng.random_range(0..cfg.tasks.num_task_types);
        let requirement = uniform(rng, cfg.tasks.accuracy_range);
        let eligible: Vec<ModelId> = offered
            .models
            .iter()
            .filter(|m| {
                m.serves_task(task)
                    && m.accuracy >= requirement
                    && energy_budget_j > dev.instantiation_energy(m.id)
            })
            .map(|m| m.id)
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let size = rng.random_range(1..=cfg.tasks.max_compatible.min(eligible.len()));
        let mut picked: Vec<ModelId> = sample(rng, eligible.len(), size).into_iter().map(|j| eligible[j]).collect();
        picked.sort_unstable();
        return Ok((task, picked));
    }
    Err(SlideError::invalid(
        "tasks",
        format!("no model meets a drawn accuracy requirement after {REDRAW_LIMIT} draws"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Values in Hz.
    Bandwidth,
    NumUsers,
    /// Values in seconds; every user gets this deadline.
    Deadline,
    NanoFraction,
    EnergyScale,
    /// 0 static, 1 slow, 2 fast.
    Mobility,
    /// 0 all, 1 fp32 only, 2 no int8.
    PrecisionMix,
    /// GPU clock of the strong device, in Hz.
    StrongGpuFreq,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Bandwidth => "bandwidth",
            Axis::NumUsers => "num_users",
            Axis::Deadline => "deadline",
            Axis::NanoFraction => "nano_fraction",
            Axis::EnergyScale => "energy_scale",
            Axis::Mobility => "mobility",
            Axis::PrecisionMix => "precision_mix",
            Axis::StrongGpuFreq => "strong_gpu_freq",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        let index = |n: usize| -> Result<usize> {
            let j = value as usize;
            if value.fract() != 0.0 || value < 0.0 || j >= n {
                return Err(SlideError::invalid(self.as_str(), format!("value {value} is not an index below {n}")));
            }
            Ok(j)
        };
        match self {
            Axis::Bandwidth => cfg.bandwidth_hz = value,
            Axis::NumUsers => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(SlideError::invalid("num_users", format!("{value} is not a positive count")));
                }
                cfg.num_users = value as usize;
            }
            Axis::Deadline => cfg.deadline_range_s = [value, value],
            Axis::NanoFraction => cfg.nano_fraction = value,
            Axis::EnergyScale => cfg.energy_scale = value,
            Axis::Mobility => cfg.mobility = [Mobility::Static, Mobility::Slow, Mobility::Fast][index(3)?],
            Axis::PrecisionMix => {
                cfg.tasks.precision_mix = [PrecisionMix::All, PrecisionMix::Fp32Only, PrecisionMix::NoInt8][index(3)?]
            }
            Axis::StrongGpuFreq => cfg.strong_gpu_freq_hz = Some(value),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub trials_per_point: usize,
    pub methods: Vec<Method>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(SlideError::invalid("sweep.values", "must not be empty"));
        }
        if self.trials_per_point == 0 {
            return Err(SlideError::invalid("sweep.trials_per_point", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(SlideError::invalid("sweep.methods", "must not be empty"));
        }
        Ok(())
    }
}

/// One (axis value, trial, method) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub trial: usize,
    pub method: String,
    pub served_ratio: f64,
    pub throughput: usize,
    pub mean_latency_s: Option<f64>,
    pub bw_used: f64,
    pub wall_time_s: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub axis: String,
    pub value: f64,
    pub method: String,
    pub trials: usize,
    pub errors: usize,
    pub mean_served_ratio: f64,
    pub std_served_ratio: f64,
    pub mean_latency_s: Option<f64>,
    pub mean_bw_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<PointSummary>,
}

impl SweepTable {
    pub fn point(&self, value: f64, method: Method) -> Option<&PointSummary> {
        self.summary
            .iter()
            .find(|p| p.value == value && p.method == method.as_str())
    }
}

/// Seed of trial `trial`; identical across axis values so points share
/// their random draws.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add(trial as u64)
}

fn row(axis: Axis, value: f64, trial: usize, method: Method, outcome: Result<SolveResult>) -> SweepRow {
    match outcome {
        Ok(res) => SweepRow {
            axis: axis.as_str().into(),
            value,
            trial,
            method: method.as_str().into(),
            served_ratio: res.served_ratio(),
            throughput: res.throughput,
            mean_latency_s: res.mean_latency_s(),
            bw_used: res.total_bandwidth_used,
            wall_time_s: res.wall_time_s,
            error: String::new(),
        },
        Err(e) => SweepRow {
            axis: axis.as_str().into(),
            value,
            trial,
            method: method.as_str().into(),
            served_ratio: 0.0,
            throughput: 0,
            mean_latency_s: None,
            bw_used: 0.0,
            wall_time_s: 0.0,
            error: e.to_string(),
        },
    }
}

/// Runs every (value, trial) pair in parallel and every method on the same
/// scenario. Failures become rows with an error message.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &ScenarioConfig,
    catalog: &Catalog,
    devices: &BTreeMap<String, DeviceProfile>,
    sched: &SchedulerConfig,
) -> Result<SweepTable> {
    spec.validate()?;
    sched.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.trials_per_point).map(move |t| (v, t)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .flat_map_iter(|&(value, trial)| {
            let scenario = spec.axis.apply(base, value).and_then(|mut cfg| {
                cfg.seed = trial_seed(base.seed, trial);
                generate_scenario(&cfg, catalog, devices)
            });
            spec.methods
                .iter()
                .map(|&m| {
                    let outcome = match &scenario {
                        Ok(s) => solve(m, s, sched),
                        Err(e) => Err(SlideError::Domain(e.to_string())),
                    };
                    row(spec.axis, value, trial, m, outcome)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let summary = summarize(spec, &rows);
    Ok(SweepTable { rows, summary })
}

fn summarize(spec: &SweepSpec, rows: &[SweepRow]) -> Vec<PointSummary> {
    let mut out = Vec::new();
    for &value in &spec.values {
        for &method in &spec.methods {
            let all: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.value == value && r.method == method.as_str())
                .collect();
            let ok: Vec<&SweepRow> = all.iter().copied().filter(|r| r.error.is_empty()).collect();
            let n = ok.len() as f64;
            let mean = |f: &dyn Fn(&SweepRow) -> f64| {
                if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n
                }
            };
            let mean_ratio = mean(&|r| r.served_ratio);
            let var = if ok.len() > 1 {
                ok.iter().map(|r| (r.served_ratio - mean_ratio).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let lat: Vec<f64> = ok.iter().filter_map(|r| r.mean_latency_s).collect();
            out.push(PointSummary {
                axis: spec.axis.as_str().into(),
                value,
                method: method.as_str().into(),
                trials: all.len(),
                errors: all.len() - ok.len(),
                mean_served_ratio: mean_ratio,
                std_served_ratio: var.sqrt(),
                mean_latency_s: (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64),
                mean_bw_used: mean(&|r| r.bw_used),
            });
        }
    }
    out
}

/// Short SHA-256 of a value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct RowRecord<'a> {
    axis: &'a str,
    value: f64,
    trial: usize,
    method: &'a str,
    served_ratio: f64,
    throughput: usize,
    mean_latency_s: Option<f64>,
    bw_used: f64,
    wall_time_s: Option<f64>,
    error: &'a str,
}

fn csv_error(e: csv::Error) -> SlideError {
    SlideError::Domain(format!("csv output: {e}"))
}

/// `#` comment line carrying the seed and config hash, written before a CSV header.
pub fn write_csv_preamble(out: &mut impl Write, seed: u64, hash: &str) -> Result<()> {
    writeln!(out, "# seed={seed} config_hash={hash}").map_err(|source| SlideError::Io {
        path: "<csv>".into(),
        source,
    })
}

/// Writes the per-trial rows as CSV after the seed/hash comment line. Wall
/// times are written only when `timing` is set, so identical inputs give
/// identical files.
pub fn write_rows_csv(mut out: impl Write, table: &SweepTable, seed: u64, hash: &str, timing: bool) -> Result<()> {
    write_csv_preamble(&mut out, seed, hash)?;
    let mut w = csv::Writer::from_writer(out);
    for r in &table.rows {
        w.serialize(RowRecord {
            axis: &r.axis,
            value: r.value,
            trial: r.trial,
            method: &r.method,
            served_ratio: r.served_ratio,
            throughput: r.throughput,
            mean_latency_s: r.mean_latency_s,
            bw_used: r.bw_used,
            wall_time_s: timing.then_some(r.wall_time_s),
            error: &r.error,
        })
        .map_err(csv_error)?;
    }
    w.flush().map_err(|source| SlideError::Io {
        path: "<csv>".into(),
        source,
    })
}

pub fn write_summary_csv(mut out: impl Write, table: &SweepTable, seed: u64, hash: &str) -> Result<()> {
    write_csv_preamble(&mut out, seed, hash)?;
    let mut w = csv::Writer::from_writer(out);
    for p in &table.summary {
        w.serialize(p).map_err(csv_error)?;
    }
    w.flush().map_err(|source| SlideError::Io {
        path: "<csv>".into(),
        source,
    })
}

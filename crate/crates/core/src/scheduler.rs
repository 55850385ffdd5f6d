//! User admission: the ascending minimum-bandwidth greedy and the baseline
//! schedulers it is compared against.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlideError};
use crate::layer_solver::SolverConfig;
use crate::min_bandwidth::{
    min_bandwidth_with, select_with, ComputeAllocator, MinBandwidthResult, SolverStats,
};
use crate::profiles::{ModelId, ModelProfile, UserId};
use crate::scenario::{Scenario, ScenarioUser};
use crate::timeline::{LatencyModel, LayerAllocation, LayerCosts, ScheduleTimeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Slide,
    Dai,
    Eba,
    Gbmp,
    Eecra,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Slide, Method::Dai, Method::Eba, Method::Gbmp, Method::Eecra];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Slide => "slide",
            Method::Dai => "dai",
            Method::Eba => "eba",
            Method::Gbmp => "gbmp",
            Method::Eecra => "eecra",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = SlideError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| SlideError::invalid("method", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Bisection tolerance on the bandwidth fraction.
    pub eps: f64,
    pub solver: SolverConfig,
    /// Use `sum tau + sum T` for the DAI baseline instead of overlapping
    /// instantiation with the download.
    pub dai_strict: bool,
    /// After admission, scale the served users' shares up to use the whole
    /// band. Never changes who is served.
    pub donate_leftover: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            eps: 1e-4,
            solver: SolverConfig::default(),
            dai_strict: false,
            donate_leftover: false,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(SlideError::invalid("eps", "must lie in (0, 1)"));
        }
        self.solver.validate()
    }

    fn solver_for(&self, method: Method) -> SolverConfig {
        let mut cfg = self.solver.clone();
        if method == Method::Dai {
            cfg.latency_model = if self.dai_strict {
                LatencyModel::DaiStrict
            } else {
                LatencyModel::Dai
            };
        }
        cfg
    }
}

/// Decision and outcome for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub user_id: UserId,
    /// Reserved for multi-slot weighting; always 1 here.
    pub weight: f64,
    pub served: bool,
    /// Assigned bandwidth fraction (0 when unserved).
    pub y: f64,
    /// The user's minimum feasible fraction under this method (0 when none).
    pub y_min: f64,
    pub model_choice: Option<ModelId>,
    pub alloc: LayerAllocation,
    pub timeline: Option<ScheduleTimeline>,
    pub e2e_latency_s: Option<f64>,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub method: String,
    pub num_users: usize,
    pub served_users: Vec<UserId>,
    pub throughput: usize,
    pub total_bandwidth_used: f64,
    pub per_user: Vec<Allocation>,
    pub stats: SolverStats,
    /// Measured but not serialized, so result files stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl SolveResult {
    pub fn served_ratio(&self) -> f64 {
        if self.num_users == 0 {
            0.0
        } else {
            self.throughput as f64 / self.num_users as f64
        }
    }

    /// Mean end-to-end latency over served users.
    pub fn mean_latency_s(&self) -> Option<f64> {
        let lat: Vec<f64> = self
            .per_user
            .iter()
            .filter(|a| a.served)
            .filter_map(|a| a.e2e_latency_s)
            .collect();
        (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64)
    }

    pub fn allocation(&self, user: UserId) -> Option<&Allocation> {
        self.per_user.iter().find(|a| a.user_id == user)
    }
}

/// Admits users in ascending order of their positive minimum fraction (ties
/// by user id) until the next one no longer fits in the band. Returns the
/// admitted entries in admission order.
pub fn greedy_admit(needs: &[(UserId, f64)]) -> Vec<(UserId, f64)> {
    let mut order: Vec<(UserId, f64)> = needs.iter().copied().filter(|(_, y)| *y > 0.0).collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut used = 0.0;
    let mut admitted = Vec::new();
    for (user, y) in order {
        if used + y > 1.0 {
            break;
        }
        used += y;
        admitted.push((user, y));
    }
    admitted
}

pub(crate) fn unserved(user: &ScenarioUser, y_min: f64) -> Allocation {
    Allocation {
        user_id: user.spec.user_id,
        weight: 1.0,
        served: false,
        y: 0.0,
        y_min,
        model_choice: None,
        alloc: LayerAllocation::zeros(0),
        timeline: None,
        e2e_latency_s: None,
        energy_j: 0.0,
    }
}

pub(crate) fn served(
    scenario: &Scenario,
    user: &ScenarioUser,
    model: ModelId,
    y: f64,
    y_min: f64,
    alloc: LayerAllocation,
    latency_model: LatencyModel,
) -> Result<Allocation> {
    let profile = scenario.catalog.model(model)?;
    let costs = LayerCosts::new(&user.spec, profile, y, &scenario.bs, &user.channel)?;
    let timeline = costs.timeline(latency_model, &alloc.gpu_scale)?;
    Ok(Allocation {
        user_id: user.spec.user_id,
        weight: 1.0,
        served: true,
        y,
        y_min,
        model_choice: Some(model),
        e2e_latency_s: Some(timeline.e2e_latency_s),
        energy_j: timeline.energy_j,
        alloc,
        timeline: Some(timeline),
    })
}

fn candidates<'a>(scenario: &'a Scenario, user: &ScenarioUser, smallest_only: bool) -> Result<Vec<&'a ModelProfile>> {
    let all: Vec<&ModelProfile> = user
        .spec
        .compatible_models
        .iter()
        .map(|id| scenario.catalog.model(*id))
        .collect::<Result<_>>()?;
    if !smallest_only {
        return Ok(all);
    }
    Ok(all
        .into_iter()
        .min_by(|a, b| a.size_bits().total_cmp(&b.size_bits()).then(a.id.cmp(&b.id)))
        .into_iter()
        .collect())
}

/// Minimum feasible fraction of every user, computed in parallel.
pub fn min_bandwidths(
    scenario: &Scenario,
    cfg: &SchedulerConfig,
    method: Method,
) -> Result<Vec<MinBandwidthResult>> {
    let solver = cfg.solver_for(method);
    let allocator = if method == Method::Eecra {
        ComputeAllocator::EqualEnergy
    } else {
        ComputeAllocator::Optimal
    };
    scenario
        .users
        .par_iter()
        .map(|user| {
            let models = candidates(scenario, user, method == Method::Gbmp)?;
            min_bandwidth_with(&user.spec, &models, &scenario.bs, &user.channel, cfg.eps, &solver, allocator)
        })
        .collect()
}

fn greedy_pipeline(scenario: &Scenario, cfg: &SchedulerConfig, method: Method) -> Result<SolveResult> {
    let started = Instant::now();
    let needs = min_bandwidths(scenario, cfg, method)?;
    let mut stats = SolverStats::default();
    for n in &needs {
        stats.absorb(&n.stats);
    }
    let pairs: Vec<(UserId, f64)> = scenario
        .users
        .iter()
        .zip(&needs)
        .map(|(u, n)| (u.spec.user_id, if n.feasible { n.y_min } else { 0.0 }))
        .collect();
    let admitted = greedy_admit(&pairs);
    let latency_model = cfg.solver_for(method).latency_model;

    let mut per_user = Vec::with_capacity(scenario.num_users());
    for (user, need) in scenario.users.iter().zip(&needs) {
        let id = user.spec.user_id;
        if admitted.iter().any(|(u, _)| *u == id) {
            let model = need.model_choice.expect("feasible users carry a model");
            per_user.push(served(
                scenario,
                user,
                model,
                need.y_min,
                need.y_min,
                need.alloc.clone(),
                latency_model,
            )?);
        } else {
            per_user.push(unserved(user, need.y_min));
        }
    }
    if cfg.donate_leftover {
        donate_leftover(scenario, cfg, method, &mut per_user, &mut stats)?;
    }
    Ok(finalize(method.as_str(), scenario, per_user, stats, started))
}

/// Scales served shares so they sum to one and re-optimizes each served
/// user's layers at its larger share with the same model.
fn donate_leftover(
    scenario: &Scenario,
    cfg: &SchedulerConfig,
    method: Method,
    per_user: &mut [Allocation],
    stats: &mut SolverStats,
) -> Result<()> {
    let used: f64 = per_user.iter().filter(|a| a.served).map(|a| a.y).sum();
    if used <= 0.0 || used >= 1.0 {
        return Ok(());
    }
    let solver = cfg.solver_for(method);
    let allocator = if method == Method::Eecra {
        ComputeAllocator::EqualEnergy
    } else {
        ComputeAllocator::Optimal
    };
    let mut factor = 1.0 / used;
    while per_user.iter().filter(|a| a.served).map(|a| a.y * factor).sum::<f64>() > 1.0 {
        factor = factor.next_down();
    }
    for (slot, user) in per_user.iter_mut().zip(&scenario.users) {
        if !slot.served {
            continue;
        }
        let model = scenario.catalog.model(slot.model_choice.expect("served users carry a model"))?;
        let y = slot.y * factor;
        let Some(sel) = select_with(&user.spec, &[model], y, &scenario.bs, &user.channel, &solver, allocator)? else {
            continue;
        };
        stats.p2_solves += 1;
        *slot = served(scenario, user, model.id, y, slot.y_min, sel.result.alloc, solver.latency_model)?;
    }
    Ok(())
}

pub(crate) fn finalize(
    method: &str,
    scenario: &Scenario,
    per_user: Vec<Allocation>,
    stats: SolverStats,
    started: Instant,
) -> SolveResult {
    let served_users: Vec<UserId> = per_user.iter().filter(|a| a.served).map(|a| a.user_id).collect();
    SolveResult {
        method: method.to_string(),
        num_users: scenario.num_users(),
        throughput: served_users.len(),
        served_users,
        total_bandwidth_used: per_user.iter().map(|a| a.y).sum(),
        per_user,
        stats,
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

pub fn solve_slide(scenario: &Scenario, cfg: &SchedulerConfig) -> Result<SolveResult> {
    greedy_pipeline(scenario, cfg, Method::Slide)
}

/// Same pipeline with sequential download-then-infer latency everywhere.
pub fn solve_dai(scenario: &Scenario, cfg: &SchedulerConfig) -> Result<SolveResult> {
    greedy_pipeline(scenario, cfg, Method::Dai)
}

/// Smallest compatible model only.
pub fn solve_gbmp(scenario: &Scenario, cfg: &SchedulerConfig) -> Result<SolveResult> {
    greedy_pipeline(scenario, cfg, Method::Gbmp)
}

/// Equal compute energy per layer instead of the optimal allocation.
pub fn solve_eecra(scenario: &Scenario, cfg: &SchedulerConfig) -> Result<SolveResult> {
    greedy_pipeline(scenario, cfg, Method::Eecra)
}

/// Every user gets `1/K` of the band and is served iff some model meets the
/// deadline there.
pub fn solve_eba(scenario: &Scenario, cfg: &SchedulerConfig) -> Result<SolveResult> {
    let started = Instant::now();
    let k = scenario.num_users();
    if k == 0 {
        return Ok(finalize(Method::Eba.as_str(), scenario, Vec::new(), SolverStats::default(), started));
    }
    let y = 1.0 / k as f64;
    let solver = cfg.solver_for(Method::Eba);
    let rows: Vec<(Allocation, u64)> = scenario
        .users
        .par_iter()
        .map(|user| {
            let models = candidates(scenario, user, false)?;
            let picked = select_with(&user.spec, &models, y, &scenario.bs, &user.channel, &solver, ComputeAllocator::Optimal)?;
            let solves = models.len() as u64;
            Ok(match picked {
                Some(sel) => (
                    served(scenario, user, sel.model, y, 0.0, sel.result.alloc, solver.latency_model)?,
                    solves,
                ),
                None => (unserved(user, 0.0), solves),
            })
        })
        .collect::<Result<_>>()?;
    let mut stats = SolverStats::default();
    let per_user = rows
        .into_iter()
        .map(|(a, solves)| {
            stats.p2_solves += solves;
            a
        })
        .collect();
    Ok(finalize(Method::Eba.as_str(), scenario, per_user, stats, started))
}

pub fn solve(method: Method, scenario: &Scenario, cfg: &SchedulerConfig) -> Result<SolveResult> {
    cfg.validate()?;
    match method {
        Method::Slide => solve_slide(scenario, cfg),
        Method::Dai => solve_dai(scenario, cfg),
        Method::Eba => solve_eba(scenario, cfg),
        Method::Gbmp => solve_gbmp(scenario, cfg),
        Method::Eecra => solve_eecra(scenario, cfg),
    }
}

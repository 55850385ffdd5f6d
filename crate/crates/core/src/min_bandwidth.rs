//! Smallest bandwidth fraction at which a user can meet its deadline, with
//! the model and per-layer allocation achieving it.

use serde::{Deserialize, Serialize};

use crate::channel::{BsConfig, ChannelState};
use crate::error::Result;
use crate::layer_solver::{solve_with_costs, LayerSolveResult, SolveCase, SolverConfig};
use crate::profiles::{Catalog, ModelId, ModelProfile, UserSpec};
use crate::timeline::{LayerAllocation, LayerCosts};

/// How per-layer GPU scales are chosen once a model and bandwidth are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeAllocator {
    /// Latency-optimal allocation from the layer solver.
    #[default]
    Optimal,
    /// Every layer gets the same share of the compute energy budget.
    EqualEnergy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub p2_solves: u64,
    pub dual_iterations: u64,
    pub nonconverged: u64,
}

impl SolverStats {
    pub fn absorb(&mut self, other: &SolverStats) {
        self.p2_solves += other.p2_solves;
        self.dual_iterations += other.dual_iterations;
        self.nonconverged += other.nonconverged;
    }

    fn record(&mut self, res: &LayerSolveResult) {
        self.p2_solves += 1;
        self.dual_iterations += res.iterations as u64;
        if !res.converged {
            self.nonconverged += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model: ModelId,
    pub result: LayerSolveResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinBandwidthResult {
    /// Smallest feasible fraction found, 0 when infeasible.
    pub y_min: f64,
    pub model_choice: Option<ModelId>,
    pub alloc: LayerAllocation,
    pub e2e_latency_s: Option<f64>,
    pub energy_j: f64,
    pub feasible: bool,
    pub bisection_iters: u32,
    /// Final `[y_lo, y_hi]` bracket; the true infimum lies inside it up to
    /// solver accuracy.
    pub bracket: [f64; 2],
    pub stats: SolverStats,
}

impl MinBandwidthResult {
    fn infeasible(bracket: [f64; 2], iters: u32, stats: SolverStats) -> Self {
        MinBandwidthResult {
            y_min: 0.0,
            model_choice: None,
            alloc: LayerAllocation::zeros(0),
            e2e_latency_s: None,
            energy_j: 0.0,
            feasible: false,
            bisection_iters: iters,
            bracket,
            stats,
        }
    }
}

/// Per-layer scales that give every layer the same compute energy.
pub fn equal_energy_scales(costs: &LayerCosts, q_prime: f64) -> Vec<f64> {
    let per_layer = q_prime / costs.num_layers() as f64;
    costs
        .compute_s
        .iter()
        .map(|g| (per_layer / g).sqrt().min(1.0))
        .collect()
}

/// Evaluates one candidate model at bandwidth fraction `y > 0`.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
    cfg: &SolverConfig,
    allocator: ComputeAllocator,
    warm: Option<&[f64]>,
) -> Result<LayerSolveResult> {
    let costs = LayerCosts::new(user, model, y, bs, ch)?;
    match allocator {
        ComputeAllocator::Optimal => solve_with_costs(&costs, user.energy_budget_j, cfg, warm),
        ComputeAllocator::EqualEnergy => {
            let z = equal_energy_scales(&costs, costs.compute_budget(user.energy_budget_j));
            let timeline = costs.timeline(cfg.latency_model, &z)?;
            Ok(LayerSolveResult {
                e2e_latency_s: Some(timeline.e2e_latency_s),
                energy_j: timeline.energy_j,
                alloc: LayerAllocation { gpu_scale: z },
                case_tag: SolveCase::EqualEnergy,
                iterations: 0,
                converged: true,
                multipliers: Vec::new(),
            })
        }
    }
}

/// Candidate models with warm-start state carried across bisection steps.
struct Candidates<'a> {
    models: Vec<&'a ModelProfile>,
    warm: Vec<Vec<f64>>,
}

impl<'a> Candidates<'a> {
    fn new(models: Vec<&'a ModelProfile>) -> Self {
        let warm = vec![Vec::new(); models.len()];
        Candidates { models, warm }
    }

    /// Deadline-meeting model with the lowest latency at `y`, ties to the
    /// smaller model id.
    #[allow(clippy::too_many_arguments)]
    fn select(
        &mut self,
        user: &UserSpec,
        y: f64,
        bs: &BsConfig,
        ch: &ChannelState,
        cfg: &SolverConfig,
        allocator: ComputeAllocator,
        stats: &mut SolverStats,
    ) -> Result<Option<Selection>> {
        if y <= 0.0 {
            return Ok(None);
        }
        let mut best: Option<Selection> = None;
        for (model, warm) in self.models.iter().zip(self.warm.iter_mut()) {
            let seed = (cfg.warm_start && !warm.is_empty()).then_some(warm.as_slice());
            let res = evaluate(user, model, y, bs, ch, cfg, allocator, seed)?;
            stats.record(&res);
            if !res.multipliers.is_empty() {
                warm.clone_from(&res.multipliers);
            }
            let Some(latency) = res.e2e_latency_s.filter(|t| *t <= user.deadline_s) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    let current = b.result.e2e_latency_s.unwrap_or(f64::INFINITY);
                    latency < current || (latency == current && model.id < b.model)
                }
            };
            if better {
                best = Some(Selection {
                    model: model.id,
                    result: res,
                });
            }
        }
        Ok(best)
    }
}

fn compatible<'a>(user: &UserSpec, catalog: &'a Catalog) -> Result<Vec<&'a ModelProfile>> {
    user.compatible_models.iter().map(|id| catalog.model(*id)).collect()
}

/// Picks the deadline-meeting compatible model with the lowest optimal
/// latency at bandwidth fraction `y`; `None` when `y = 0` or no model fits.
pub fn select_model_at_bandwidth(
    user: &UserSpec,
    catalog: &Catalog,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
    solver_cfg: &SolverConfig,
) -> Result<Option<Selection>> {
    select_with(user, &compatible(user, catalog)?, y, bs, ch, solver_cfg, ComputeAllocator::Optimal)
}

/// [`select_model_at_bandwidth`] over an explicit candidate list.
pub fn select_with(
    user: &UserSpec,
    models: &[&ModelProfile],
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
    solver_cfg: &SolverConfig,
    allocator: ComputeAllocator,
) -> Result<Option<Selection>> {
    let mut stats = SolverStats::default();
    Candidates::new(models.to_vec()).select(user, y, bs, ch, solver_cfg, allocator, &mut stats)
}

/// Bisection for the smallest feasible bandwidth fraction over the user's
/// compatible models.
pub fn min_feasible_bandwidth(
    user: &UserSpec,
    catalog: &Catalog,
    bs: &BsConfig,
    ch: &ChannelState,
    eps: f64,
    solver_cfg: &SolverConfig,
) -> Result<MinBandwidthResult> {
    min_bandwidth_with(
        user,
        &compatible(user, catalog)?,
        bs,
        ch,
        eps,
        solver_cfg,
        ComputeAllocator::Optimal,
    )
}

/// Bisection restricted to a single model.
pub fn min_bandwidth_for_model(
    user: &UserSpec,
    model: &ModelProfile,
    bs: &BsConfig,
    ch: &ChannelState,
    eps: f64,
    solver_cfg: &SolverConfig,
) -> Result<MinBandwidthResult> {
    min_bandwidth_with(user, &[model], bs, ch, eps, solver_cfg, ComputeAllocator::Optimal)
}

/// Bisection over an explicit candidate list with a chosen allocator.
pub fn min_bandwidth_with(
    user: &UserSpec,
    models: &[&ModelProfile],
    bs: &BsConfig,
    ch: &ChannelState,
    eps: f64,
    solver_cfg: &SolverConfig,
    allocator: ComputeAllocator,
) -> Result<MinBandwidthResult> {
    let mut stats = SolverStats::default();
    let rate = bs.total_bandwidth_hz * ch.spectral_efficiency;
    let smallest = models
        .iter()
        .map(|m| m.size_bits())
        .fold(f64::INFINITY, f64::min);
    if !(rate > 0.0) || models.is_empty() {
        return Ok(MinBandwidthResult::infeasible([0.0, 1.0], 0, stats));
    }
    let mut lo = smallest / (user.deadline_s * rate);
    let mut hi = 1.0;
    if lo > 1.0 {
        return Ok(MinBandwidthResult::infeasible([lo, hi], 0, stats));
    }

    let mut candidates = Candidates::new(models.to_vec());
    let mut found: Option<Selection> = None;
    let mut iters = 0;
    while hi - lo >= eps {
        let mid = 0.5 * (lo + hi);
        iters += 1;
        match candidates.select(user, mid, bs, ch, solver_cfg, allocator, &mut stats)? {
            Some(sel) => {
                hi = mid;
                found = Some(sel);
            }
            None => lo = mid,
        }
    }
    if found.is_none() {
        // no midpoint worked; the full band is the last candidate
        found = candidates.select(user, 1.0, bs, ch, solver_cfg, allocator, &mut stats)?;
        hi = 1.0;
    }
    let Some(sel) = found else {
        return Ok(MinBandwidthResult::infeasible([lo, hi], iters, stats));
    };
    Ok(MinBandwidthResult {
        y_min: hi,
        model_choice: Some(sel.model),
        e2e_latency_s: sel.result.e2e_latency_s,
        energy_j: sel.result.energy_j,
        alloc: sel.result.alloc,
        feasible: true,
        bisection_iters: iters,
        bracket: [lo, hi],
        stats,
    })
}

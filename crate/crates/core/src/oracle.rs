//! Brute-force references: a grid search over per-layer GPU scales and an
//! exhaustive search over served-user subsets and model assignments.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{BsConfig, ChannelState};
use crate::error::{Result, SlideError};
use crate::layer_solver::{solve_with_costs, SolverConfig};
use crate::min_bandwidth::{min_bandwidth_for_model, MinBandwidthResult, SolverStats};
use crate::profiles::{ModelId, ModelProfile, UserSpec};
use crate::scenario::Scenario;
use crate::scheduler::{finalize, served, unserved, SchedulerConfig, SolveResult};
use crate::timeline::{LatencyModel, LayerAllocation, LayerCosts};

/// Largest layer count [`grid_p2`] accepts.
pub const GRID_MAX_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub z_grid_points: usize,
    pub y_grid_points: usize,
    pub max_users: usize,
    pub max_models: usize,
    pub time_budget_s: f64,
    pub z_floor: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            z_grid_points: 60,
            y_grid_points: 50,
            max_users: 6,
            max_models: 6,
            time_budget_s: 60.0,
            z_floor: 1e-6,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_grid_points < 2 || self.y_grid_points < 2 {
            return Err(SlideError::invalid("oracle grid", "needs at least 2 points"));
        }
        if !(self.z_floor > 0.0 && self.z_floor < 1.0) {
            return Err(SlideError::invalid("oracle.z_floor", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridP2Result {
    pub alloc: LayerAllocation,
    pub e2e_latency_s: f64,
    pub energy_j: f64,
    pub evaluations: usize,
}

/// Uniform grid on `[z_floor, 1]` with `points` entries.
pub fn z_grid(points: usize, z_floor: f64) -> Vec<f64> {
    let step = (1.0 - z_floor) / (points - 1) as f64;
    (0..points)
        .map(|j| if j + 1 == points { 1.0 } else { z_floor + step * j as f64 })
        .collect()
}

/// Grid search over all scale combinations of a model with at most three
/// layers, keeping energy-feasible points only.
pub fn grid_p2(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
    cfg: &OracleConfig,
) -> Result<GridP2Result> {
    if model.num_layers() > GRID_MAX_LAYERS {
        return Err(SlideError::OracleCap(format!(
            "grid search supports at most {GRID_MAX_LAYERS} layers, model {} has {}",
            model.id,
            model.num_layers()
        )));
    }
    let costs = LayerCosts::new(user, model, y, bs, ch)?;
    grid_p2_costs(&costs, user.energy_budget_j, cfg)
}

pub fn grid_p2_costs(costs: &LayerCosts, energy_budget_j: f64, cfg: &OracleConfig) -> Result<GridP2Result> {
    cfg.validate()?;
    let n = costs.num_layers();
    if n == 0 || n > GRID_MAX_LAYERS {
        return Err(SlideError::OracleCap(format!("grid search needs 1..={GRID_MAX_LAYERS} layers")));
    }
    let grid = z_grid(cfg.z_grid_points, cfg.z_floor);
    let total = grid.len().pow(n as u32);
    let mut z = vec![0.0; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for flat in 0..total {
        let mut rest = flat;
        for zl in z.iter_mut() {
            *zl = grid[rest % grid.len()];
            rest /= grid.len();
        }
        if costs.energy(&z) > energy_budget_j {
            continue;
        }
        let latency = costs.latency(LatencyModel::Slide, &z);
        if best.as_ref().is_none_or(|(b, _)| latency < *b) {
            best = Some((latency, z.clone()));
        }
    }
    let (e2e_latency_s, gpu_scale) = best.ok_or(SlideError::NoFeasibleGridPoint)?;
    Ok(GridP2Result {
        energy_j: costs.energy(&gpu_scale),
        alloc: LayerAllocation { gpu_scale },
        e2e_latency_s,
        evaluations: total,
    })
}

/// Latency of the layer solver's allocation for one model at each `y` of a
/// uniform grid `j / points`, `j = 1..=points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthScan {
    pub model: ModelId,
    pub y: Vec<f64>,
    pub e2e_latency_s: Vec<f64>,
}

impl BandwidthScan {
    /// First grid fraction at which the deadline is met.
    pub fn first_feasible(&self, deadline_s: f64) -> Option<f64> {
        self.y
            .iter()
            .zip(&self.e2e_latency_s)
            .find(|(_, t)| **t <= deadline_s)
            .map(|(y, _)| *y)
    }
}

pub fn y_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|j| j as f64 / points as f64).collect()
}

pub fn scan_bandwidth(
    user: &UserSpec,
    model: &ModelProfile,
    bs: &BsConfig,
    ch: &ChannelState,
    points: usize,
    solver_cfg: &SolverConfig,
) -> Result<BandwidthScan> {
    let y = y_grid(points);
    let e2e_latency_s = y
        .iter()
        .map(|&yj| {
            let costs = LayerCosts::new(user, model, yj, bs, ch)?;
            let res = solve_with_costs(&costs, user.energy_budget_j, solver_cfg, None)?;
            Ok(res.e2e_latency_s.unwrap_or(f64::INFINITY))
        })
        .collect::<Result<_>>()?;
    Ok(BandwidthScan {
        model: model.id,
        y,
        e2e_latency_s,
    })
}

/// Smallest grid fraction at which any of the models meets the deadline.
pub fn scan_transition(scans: &[BandwidthScan], deadline_s: f64) -> Option<f64> {
    scans
        .iter()
        .filter_map(|s| s.first_feasible(deadline_s))
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Tabulate every (user, model) need once, then try every subset and
    /// every model assignment.
    #[default]
    Enumerate,
    /// Depth-first branching on the binary (user, model) variables. Each
    /// node re-solves the bandwidth subproblem of all assigned users and is
    /// pruned when it does not fit the band or cannot beat the incumbent's
    /// cardinality.
    BranchAndBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveReport {
    pub result: SolveResult,
    /// Subset or search-tree nodes visited.
    pub nodes: u64,
}

struct Limits {
    started: Instant,
    budget_s: f64,
}

impl Limits {
    fn check(&self) -> Result<()> {
        if self.started.elapsed().as_secs_f64() > self.budget_s {
            return Err(SlideError::OracleCap(format!("time budget of {} s exceeded", self.budget_s)));
        }
        Ok(())
    }
}

fn check_caps(scenario: &Scenario, cfg: &OracleConfig) -> Result<()> {
    cfg.validate()?;
    if scenario.num_users() > cfg.max_users {
        return Err(SlideError::OracleCap(format!(
            "{} users exceed the cap of {}",
            scenario.num_users(),
            cfg.max_users
        )));
    }
    let models: BTreeSet<ModelId> = scenario
        .users
        .iter()
        .flat_map(|u| u.spec.compatible_models.iter().copied())
        .collect();
    if models.len() > cfg.max_models {
        return Err(SlideError::OracleCap(format!(
            "{} distinct models exceed the cap of {}",
            models.len(),
            cfg.max_models
        )));
    }
    Ok(())
}

fn need(scenario: &Scenario, k: usize, model: ModelId, sched: &SchedulerConfig) -> Result<MinBandwidthResult> {
    let user = &scenario.users[k];
    min_bandwidth_for_model(
        &user.spec,
        scenario.catalog.model(model)?,
        &scenario.bs,
        &user.channel,
        sched.eps,
        &sched.solver,
    )
}

/// Lexicographically smallest maximum-cardinality subset wins.
fn better(candidate: &[usize], best: &Option<Vec<usize>>) -> bool {
    match best {
        None => true,
        Some(b) => candidate.len() > b.len() || (candidate.len() == b.len() && candidate < b.as_slice()),
    }
}

/// Maximum number of users that can be served together, found by brute
/// force. Each served user is assigned the model with the smallest need.
pub fn exhaustive_p1(
    scenario: &Scenario,
    sched: &SchedulerConfig,
    cfg: &OracleConfig,
    mode: SearchMode,
) -> Result<ExhaustiveReport> {
    check_caps(scenario, cfg)?;
    sched.validate()?;
    let started = Instant::now();
    let limits = Limits {
        started,
        budget_s: cfg.time_budget_s,
    };
    let mut stats = SolverStats::default();
    let (subset, nodes) = match mode {
        SearchMode::Enumerate => enumerate(scenario, sched, &limits, &mut stats)?,
        SearchMode::BranchAndBound => branch_and_bound(scenario, sched, &limits, &mut stats)?,
    };

    let mut per_user = Vec::with_capacity(scenario.num_users());
    for (k, user) in scenario.users.iter().enumerate() {
        if !subset.contains(&k) {
            per_user.push(unserved(user, 0.0));
            continue;
        }
        let mut best: Option<(ModelId, MinBandwidthResult)> = None;
        for &model in &user.spec.compatible_models {
            let res = need(scenario, k, model, sched)?;
            stats.absorb(&res.stats);
            if res.feasible && best.as_ref().is_none_or(|(_, b)| res.y_min < b.y_min) {
                best = Some((model, res));
            }
        }
        let (model, res) = best.expect("served users have a feasible model");
        per_user.push(served(
            scenario,
            user,
            model,
            res.y_min,
            res.y_min,
            res.alloc,
            sched.solver.latency_model,
        )?);
    }
    let mut result = finalize(
        match mode {
            SearchMode::Enumerate => "exhaustive",
            SearchMode::BranchAndBound => "branch_and_bound",
        },
        scenario,
        per_user,
        stats,
        started,
    );
    result.wall_time_s = started.elapsed().as_secs_f64();
    Ok(ExhaustiveReport { result, nodes })
}

fn enumerate(
    scenario: &Scenario,
    sched: &SchedulerConfig,
    limits: &Limits,
    stats: &mut SolverStats,
) -> Result<(Vec<usize>, u64)> {
    let k_users = scenario.num_users();
    // needs[k] lists the fractions of the models feasible for user k
    let mut needs: Vec<Vec<f64>> = Vec::with_capacity(k_users);
    for (k, user) in scenario.users.iter().enumerate() {
        let mut row = Vec::new();
        for &model in &user.spec.compatible_models {
            let res = need(scenario, k, model, sched)?;
            stats.absorb(&res.stats);
            if res.feasible {
                row.push(res.y_min);
            }
        }
        needs.push(row);
    }

    let mut best: Option<Vec<usize>> = None;
    let mut nodes = 0u64;
    for mask in 0u32..(1u32 << k_users) {
        limits.check()?;
        let members: Vec<usize> = (0..k_users).filter(|k| mask & (1 << k) != 0).collect();
        if members.iter().any(|&k| needs[k].is_empty()) {
            continue;
        }
        // walk every assignment of one feasible model per member
        let mut choice = vec![0usize; members.len()];
        loop {
            nodes += 1;
            let used: f64 = members.iter().zip(&choice).map(|(&k, &c)| needs[k][c]).sum();
            if used <= 1.0 {
                if better(&members, &best) {
                    best = Some(members.clone());
                }
                break;
            }
            let mut pos = 0;
            while pos < members.len() {
                choice[pos] += 1;
                if choice[pos] < needs[members[pos]].len() {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
            if pos == members.len() {
                break;
            }
        }
    }
    Ok((best.unwrap_or_default(), nodes))
}

fn branch_and_bound(
    scenario: &Scenario,
    sched: &SchedulerConfig,
    limits: &Limits,
    stats: &mut SolverStats,
) -> Result<(Vec<usize>, u64)> {
    // one binary variable per (user, compatible model), users in id order
    let vars: Vec<(usize, ModelId)> = scenario
        .users
        .iter()
        .enumerate()
        .flat_map(|(k, u)| u.spec.compatible_models.iter().map(move |&m| (k, m)))
        .collect();

    struct Search<'a> {
        scenario: &'a Scenario,
        sched: &'a SchedulerConfig,
        limits: &'a Limits,
        stats: &'a mut SolverStats,
        vars: Vec<(usize, ModelId)>,
        best: Option<Vec<usize>>,
        nodes: u64,
    }

    impl Search<'_> {
        /// Bandwidth subproblem of the node: every assigned user's minimum
        /// fraction, solved from scratch.
        fn relaxation_fits(&mut self, assigned: &[(usize, ModelId)]) -> Result<bool> {
            let mut used = 0.0;
            for &(k, m) in assigned {
                let res = need(self.scenario, k, m, self.sched)?;
                self.stats.absorb(&res.stats);
                if !res.feasible {
                    return Ok(false);
                }
                used += res.y_min;
            }
            Ok(used <= 1.0)
        }

        fn next_user_var(&self, pos: usize) -> usize {
            let k = self.vars[pos].0;
            self.vars[pos..]
                .iter()
                .position(|v| v.0 != k)
                .map_or(self.vars.len(), |off| pos + off)
        }

        fn visit(&mut self, pos: usize, assigned: &mut Vec<(usize, ModelId)>) -> Result<()> {
            self.nodes += 1;
            self.limits.check()?;
            let users = self.scenario.num_users();
            let current = self.vars.get(pos).map_or(users, |v| v.0);
            let current_taken = assigned.last().is_some_and(|a| a.0 == current);
            let undecided = users - current - usize::from(current_taken);
            if let Some(b) = &self.best {
                let bound = assigned.len() + undecided;
                if bound < b.len() {
                    return Ok(());
                }
                if bound == b.len() {
                    // only completion left: take every undecided user; keep
                    // it only if it wins the lexicographic tie-break
                    let first_open = current + usize::from(current_taken);
                    let completion: Vec<usize> = assigned.iter().map(|a| a.0).chain(first_open..users).collect();
                    if completion.as_slice() >= b.as_slice() {
                        return Ok(());
                    }
                }
            }
            if !self.relaxation_fits(assigned)? {
                return Ok(());
            }
            if pos == self.vars.len() {
                let subset: Vec<usize> = assigned.iter().map(|a| a.0).collect();
                if better(&subset, &self.best) {
                    self.best = Some(subset);
                }
                return Ok(());
            }
            if current_taken {
                // the remaining variables of this user are forced to zero
                return self.visit(self.next_user_var(pos), assigned);
            }
            assigned.push(self.vars[pos]);
            self.visit(pos + 1, assigned)?;
            assigned.pop();
            self.visit(pos + 1, assigned)
        }
    }

    let mut search = Search {
        scenario,
        sched,
        limits,
        stats,
        vars,
        best: None,
        nodes: 0,
    };
    search.visit(0, &mut Vec::new())?;
    Ok((search.best.unwrap_or_default(), search.nodes))
}

//! Optimal per-layer GPU scaling for a fixed user, model and bandwidth
//! fraction: minimize end-to-end latency under the energy budget.
//!
//! Notation used below: `gamma[l]` is the compute time of layer `l` at full
//! clock, `q_prime` the compute budget `(Q - e1) / (Psi f^3)`, so the energy
//! constraint reads `sum gamma[l] z[l]^2 <= q_prime`.

use serde::{Deserialize, Serialize};

use crate::channel::{BsConfig, ChannelState};
use crate::error::{Result, SlideError};
use crate::profiles::{ModelProfile, UserSpec};
use crate::timeline::{weighted_square_sum, LatencyModel, LayerAllocation, LayerCosts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecay {
    /// `delta_m = delta_0 / sqrt(m)`.
    InvSqrt,
    Constant,
}

/// Scaling applied to the subgradient before the projected step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    /// Divide each component by its own curvature estimate.
    Diagonal,
    /// Apply the inverse of the full constraint Jacobian. Constraint `l`
    /// depends on `mu_j` through every layer up to `min(l, j)`, so the
    /// Jacobian is a min-kernel matrix with a tridiagonal inverse.
    MinKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub decay: StepDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMethod {
    /// Exact solve over the breakpoints of the piecewise-linear energy curve.
    Breakpoints,
    /// Log-scale bisection on eta inside `eta_bracket`, widened as needed.
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dual_tol: f64,
    pub max_iters: usize,
    pub step_schedule: StepSchedule,
    pub preconditioner: Preconditioner,
    pub eta_method: EtaMethod,
    pub eta_bracket: [f64; 2],
    pub z_floor: f64,
    pub latency_model: LatencyModel,
    /// In the full-speed case, slow down layers that would otherwise sit idle
    /// waiting for the next download. Latency is unchanged, energy drops.
    pub pace_idle_layers: bool,
    /// Reuse multipliers across calls when the caller offers them.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dual_tol: 1e-7,
            max_iters: 20_000,
            step_schedule: StepSchedule {
                initial: 1.0,
                decay: StepDecay::Constant,
            },
            preconditioner: Preconditioner::MinKernel,
            eta_method: EtaMethod::Breakpoints,
            eta_bracket: [1e-6, 1e6],
            z_floor: 1e-6,
            latency_model: LatencyModel::Slide,
            pace_idle_layers: true,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dual_tol > 0.0) {
            return Err(SlideError::invalid("solver.dual_tol", "must be positive"));
        }
        if !(self.z_floor > 0.0 && self.z_floor <= 1.0) {
            return Err(SlideError::invalid("solver.z_floor", "must lie in (0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(SlideError::invalid("solver.max_iters", "must be at least 1"));
        }
        if !(self.step_schedule.initial > 0.0) {
            return Err(SlideError::invalid("solver.step_schedule.initial", "must be positive"));
        }
        let [lo, hi] = self.eta_bracket;
        if !(lo > 0.0 && hi > lo) {
            return Err(SlideError::invalid("solver.eta_bracket", "need 0 < lo < hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveCase {
    ZeroBandwidth,
    FullSpeed,
    DualEtaZero,
    DualEtaPositive,
    /// Not produced by the solver: the equal-energy baseline allocation.
    EqualEnergy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSolveResult {
    pub alloc: LayerAllocation,
    /// `None` when no bandwidth is assigned (the latency is unbounded).
    pub e2e_latency_s: Option<f64>,
    pub energy_j: f64,
    pub case_tag: SolveCase,
    pub iterations: usize,
    pub converged: bool,
    /// Final no-idle multipliers of the dual iteration (empty otherwise).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multipliers: Vec<f64>,
}

impl LayerSolveResult {
    pub fn meets_deadline(&self, deadline_s: f64) -> bool {
        self.e2e_latency_s.is_some_and(|t| t <= deadline_s)
    }
}

fn check_budget(costs: &LayerCosts, energy_budget_j: f64) -> Result<()> {
    if energy_budget_j <= costs.base_energy_j {
        return Err(SlideError::InfeasibleBudget {
            budget_j: energy_budget_j,
            instantiation_j: costs.base_energy_j,
        });
    }
    Ok(())
}

/// Solves for the latency-optimal allocation of `model` on `user`'s device at
/// bandwidth fraction `y`.
pub fn solve_p2(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
    cfg: &SolverConfig,
) -> Result<LayerSolveResult> {
    if y <= 0.0 {
        let costs = LayerCosts::compute_only(user, model);
        check_budget(&costs, user.energy_budget_j)?;
        return Ok(zero_bandwidth(&costs));
    }
    let costs = LayerCosts::new(user, model, y, bs, ch)?;
    solve_with_costs(&costs, user.energy_budget_j, cfg, None)
}

fn zero_bandwidth(costs: &LayerCosts) -> LayerSolveResult {
    LayerSolveResult {
        alloc: LayerAllocation::zeros(costs.num_layers()),
        e2e_latency_s: None,
        energy_j: costs.base_energy_j,
        case_tag: SolveCase::ZeroBandwidth,
        iterations: 0,
        converged: true,
        multipliers: Vec::new(),
    }
}

/// Same as [`solve_p2`] on precomputed costs (`y > 0` already applied);
/// `warm` seeds the dual multipliers.
pub fn solve_with_costs(
    costs: &LayerCosts,
    energy_budget_j: f64,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<LayerSolveResult> {
    check_budget(costs, energy_budget_j)?;
    let n = costs.num_layers();
    let ones = vec![1.0; n];
    let model = cfg.latency_model;
    if costs.energy(&ones) <= energy_budget_j {
        let mut z = ones;
        if cfg.pace_idle_layers && model == LatencyModel::Slide {
            pace_idle_layers(costs, &mut z);
        }
        return Ok(finish(costs, model, z, SolveCase::FullSpeed, 0, true, Vec::new()));
    }
    let q_prime = costs.compute_budget(energy_budget_j);
    if model != LatencyModel::Slide {
        // Without overlap only the sum of compute times matters, and the
        // equal-scale point is optimal.
        let total: f64 = costs.compute_s.iter().sum();
        let z = vec![(q_prime / total).sqrt().min(1.0); n];
        return Ok(finish(costs, model, z, SolveCase::DualEtaPositive, 0, true, Vec::new()));
    }
    if let Some(z) = admissible_zdot(costs, q_prime) {
        return Ok(finish(costs, model, z, SolveCase::DualEtaZero, 0, true, Vec::new()));
    }
    let warm = if cfg.warm_start { warm } else { None };
    let out = dual_iteration_costs(costs, q_prime, cfg, warm);
    Ok(finish(
        costs,
        model,
        out.gpu_scale,
        SolveCase::DualEtaPositive,
        out.iterations,
        out.converged,
        out.multipliers,
    ))
}

fn finish(
    costs: &LayerCosts,
    model: LatencyModel,
    gpu_scale: Vec<f64>,
    case_tag: SolveCase,
    iterations: usize,
    converged: bool,
    multipliers: Vec<f64>,
) -> LayerSolveResult {
    LayerSolveResult {
        e2e_latency_s: Some(costs.latency(model, &gpu_scale)),
        energy_j: costs.energy(&gpu_scale),
        alloc: LayerAllocation { gpu_scale },
        case_tag,
        iterations,
        converged,
        multipliers,
    }
}

/// Lowers the scale of every layer that finishes before the next layer is
/// downloaded so that it finishes exactly at that download time.
fn pace_idle_layers(costs: &LayerCosts, z: &mut [f64]) {
    let n = costs.num_layers();
    let mut downloaded = costs.download_s[0];
    let mut done = costs.start_latency_s;
    for l in 0..n {
        let start = downloaded.max(done);
        done = start + costs.memcpy_s[l] + costs.compute_s[l] / z[l];
        if l + 1 == n {
            break;
        }
        let next_download = downloaded + costs.download_s[l + 1];
        if done < next_download {
            let slack = next_download - start - costs.memcpy_s[l];
            let mut scale = (costs.compute_s[l] / slack).min(z[l]);
            while start + costs.memcpy_s[l] + costs.compute_s[l] / scale < next_download {
                scale = scale.next_down();
            }
            z[l] = scale;
            done = start + costs.memcpy_s[l] + costs.compute_s[l] / scale;
        }
        downloaded = next_download;
    }
}

/// Inference start of the first layer: the later of its download and the
/// model instantiation.
fn first_start(costs: &LayerCosts) -> f64 {
    costs.download_s[0].max(costs.start_latency_s)
}

/// Per-layer scales that make each layer finish exactly when the next layer
/// arrives, with the last layer at full clock. `None` marks a non-positive
/// denominator.
pub fn zdot_from_costs(costs: &LayerCosts) -> Vec<Option<f64>> {
    let n = costs.num_layers();
    let s1 = first_start(costs);
    (0..n)
        .map(|l| {
            if l + 1 == n {
                return Some(1.0);
            }
            let denom = if l == 0 {
                costs.download_s[0] + costs.download_s[1] - s1 - costs.memcpy_s[0]
            } else {
                costs.download_s[l + 1] - costs.memcpy_s[l]
            };
            (denom > 0.0).then(|| costs.compute_s[l] / denom)
        })
        .collect()
}

/// [`zdot_from_costs`] for a user, model and bandwidth fraction.
pub fn zdot_closed_form(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
) -> Result<Vec<Option<f64>>> {
    Ok(zdot_from_costs(&LayerCosts::new(user, model, y, bs, ch)?))
}

fn admissible_zdot(costs: &LayerCosts, q_prime: f64) -> Option<Vec<f64>> {
    let z: Vec<f64> = zdot_from_costs(costs)
        .into_iter()
        .map(|v| v.filter(|z| *z > 0.0 && *z <= 1.0))
        .collect::<Option<_>>()?;
    (weighted_square_sum(&costs.compute_s, &z) <= q_prime).then_some(z)
}

fn rho_from_mu(mu: &[f64], rho: &mut [f64]) {
    let mut suffix = 0.0;
    for l in (0..mu.len()).rev() {
        suffix += mu[l];
        rho[l] = 1.0 - suffix;
    }
}

enum EtaSolve {
    Interior(f64),
    /// The budget covers full clock on every layer with positive weight.
    Saturated,
}

/// Energy `sum gamma min(1, (rho / 2 eta)^(2/3))` at a given eta.
fn energy_at_eta(rho: &[f64], gammas: &[f64], eta: f64) -> f64 {
    rho.iter()
        .zip(gammas)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, g)| g * (r / (2.0 * eta)).powf(2.0 / 3.0).min(1.0))
        .sum()
}

fn solve_eta(rho: &[f64], gammas: &[f64], q_prime: f64, method: EtaMethod, bracket: [f64; 2]) -> EtaSolve {
    let cap: f64 = rho
        .iter()
        .zip(gammas)
        .filter(|(r, _)| **r > 0.0)
        .map(|(_, g)| g)
        .sum();
    if q_prime >= cap {
        return EtaSolve::Saturated;
    }
    match method {
        EtaMethod::Breakpoints => EtaSolve::Interior(eta_by_breakpoints(rho, gammas, q_prime)),
        EtaMethod::Bisection => EtaSolve::Interior(eta_by_bisection(rho, gammas, q_prime, bracket)),
    }
}

/// With `u = (2 eta)^(-2/3)` the energy is piecewise linear and increasing
/// in `u`, with a kink where each layer reaches full clock at
/// `u = rho^(-2/3)`. Walk the kinks in order and solve the linear piece.
fn eta_by_breakpoints(rho: &[f64], gammas: &[f64], q_prime: f64) -> f64 {
    let mut kinks: Vec<(f64, f64, f64)> = rho
        .iter()
        .zip(gammas)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, g)| {
            let w = r.powf(2.0 / 3.0);
            (1.0 / w, *g, g * w)
        })
        .collect();
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut saturated = 0.0;
    let mut slope: f64 = kinks.iter().map(|k| k.2).sum();
    let mut u = 0.0;
    for &(at, gamma, weight) in &kinks {
        let level = saturated + slope * at;
        if level >= q_prime {
            u = (q_prime - saturated) / slope;
            break;
        }
        saturated += gamma;
        slope -= weight;
        u = at;
    }
    0.5 * u.powf(-1.5)
}

fn eta_by_bisection(rho: &[f64], gammas: &[f64], q_prime: f64, bracket: [f64; 2]) -> f64 {
    let [mut lo, mut hi] = bracket;
    while energy_at_eta(rho, gammas, lo) < q_prime {
        lo *= 0.125;
    }
    while energy_at_eta(rho, gammas, hi) > q_prime {
        hi *= 8.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        if energy_at_eta(rho, gammas, mid) > q_prime {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// The eta at which the cube-root allocation for multipliers `mu` spends
/// exactly `q_prime`.
pub fn invert_eta(mu: &[f64], q_prime: f64, gammas: &[f64], cfg: &SolverConfig) -> Result<f64> {
    if mu.len() != gammas.len() {
        return Err(SlideError::invalid("mu", "length differs from the layer count"));
    }
    let mut rho = vec![0.0; mu.len()];
    rho_from_mu(mu, &mut rho);
    let cap: f64 = rho.iter().zip(gammas).filter(|(r, _)| **r > 0.0).map(|(_, g)| g).sum();
    if !(q_prime > 0.0) || q_prime >= cap {
        return Err(SlideError::EtaOutOfRange { q_prime, cap });
    }
    match solve_eta(&rho, gammas, q_prime, cfg.eta_method, cfg.eta_bracket) {
        EtaSolve::Interior(eta) => Ok(eta),
        EtaSolve::Saturated => Err(SlideError::EtaOutOfRange { q_prime, cap }),
    }
}

fn scales_from_eta(rho: &[f64], eta: Option<f64>, z_floor: f64, z: &mut [f64]) {
    for (zl, r) in z.iter_mut().zip(rho) {
        *zl = if *r <= 0.0 {
            z_floor
        } else {
            match eta {
                Some(eta) => (r / (2.0 * eta)).cbrt().clamp(z_floor, 1.0),
                None => 1.0,
            }
        };
    }
}

struct DualOutcome {
    gpu_scale: Vec<f64>,
    iterations: usize,
    converged: bool,
    multipliers: Vec<f64>,
}

/// Projected-subgradient iteration on the no-idle multipliers, with the
/// energy multiplier recovered from the budget at every step. Every iterate
/// spends the budget exactly, so the best one by true latency is returned.
fn dual_iteration_costs(
    costs: &LayerCosts,
    q_prime: f64,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
) -> DualOutcome {
    let n = costs.num_layers();
    let gammas = &costs.compute_s;
    let s1 = first_start(costs);
    // required prefix compute time for each no-idle constraint
    let mut required = vec![0.0; n.saturating_sub(1)];
    let mut downloaded = costs.download_s[0];
    let mut memcpy = 0.0;
    for l in 0..n.saturating_sub(1) {
        downloaded += costs.download_s[l + 1];
        memcpy += costs.memcpy_s[l];
        required[l] = downloaded - s1 - memcpy;
    }

    let mut mu = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![0.0; n],
    };
    mu[n - 1] = 0.0;
    let mut rho = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut best_z = vec![0.0; n];
    let mut best_mu = mu.clone();
    let mut best_latency = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = vec![0.0; n];
    let mut sensitivity = vec![0.0; n];
    let mut direction = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_rho = vec![0.0; n];
    let mut free = Vec::with_capacity(n);

    for m in 1..=cfg.max_iters {
        iterations = m;
        rho_from_mu(&mu, &mut rho);
        let eta = match solve_eta(&rho, gammas, q_prime, cfg.eta_method, cfg.eta_bracket) {
            EtaSolve::Interior(eta) => Some(eta),
            EtaSolve::Saturated => None,
        };
        scales_from_eta(&rho, eta, cfg.z_floor, &mut z);
        let latency = costs.latency(LatencyModel::Slide, &z);
        if latency < best_latency {
            best_latency = latency;
            best_z.copy_from_slice(&z);
            best_mu.copy_from_slice(&mu);
        }

        let step = match cfg.step_schedule.decay {
            StepDecay::InvSqrt => cfg.step_schedule.initial / (m as f64).sqrt(),
            StepDecay::Constant => cfg.step_schedule.initial,
        };
        // subgradient of each no-idle constraint and the sensitivity of the
        // layer compute time to its own rho
        let mut prefix = 0.0;
        for l in 0..n - 1 {
            let compute = gammas[l] / z[l];
            prefix += compute;
            grad[l] = required[l] - prefix;
            let responsive = rho[l] > 0.0 && z[l] < 1.0 && z[l] > cfg.z_floor;
            sensitivity[l] = if responsive {
                compute / (3.0 * rho[l])
            } else {
                compute / 3.0
            };
        }
        match cfg.preconditioner {
            Preconditioner::Diagonal => {
                let mut cumulative = 0.0;
                for l in 0..n - 1 {
                    cumulative += sensitivity[l];
                    direction[l] = grad[l] / cumulative;
                }
            }
            Preconditioner::MinKernel => {
                min_kernel_direction(&mu, &grad, &sensitivity, &mut free, &mut direction);
            }
        }
        for d in direction.iter_mut().take(n - 1) {
            if !d.is_finite() {
                *d = 0.0;
            }
        }
        // shorten the step until no positive rho loses more than half its value
        let mut scaled = step;
        let mut safe = false;
        for _ in 0..60 {
            for l in 0..n - 1 {
                trial[l] = (mu[l] + scaled * direction[l]).max(0.0);
            }
            rho_from_mu(&trial, &mut trial_rho);
            if rho.iter().zip(&trial_rho).all(|(r, t)| *r <= 0.0 || *t >= 0.5 * r) {
                safe = true;
                break;
            }
            scaled *= 0.5;
        }
        if !safe {
            trial[..n - 1].copy_from_slice(&mu[..n - 1]);
        }
        let mut moved: f64 = 0.0;
        let mut full_move: f64 = 0.0;
        for l in 0..n - 1 {
            moved = moved.max((trial[l] - mu[l]).abs());
            full_move = full_move.max(((mu[l] + step * direction[l]).max(0.0) - mu[l]).abs());
            mu[l] = trial[l];
        }
        if full_move < cfg.dual_tol {
            converged = true;
            break;
        }
        if moved < cfg.dual_tol {
            // the safeguard collapsed the step: some rho is pinned near zero
            // and the best iterate is as good as this iteration gets
            converged = true;
            break;
        }
    }

    // rounding can leave the spend a hair above the budget
    let spent = weighted_square_sum(gammas, &best_z);
    if spent > q_prime {
        let shrink = (q_prime / spent).sqrt();
        for zl in &mut best_z {
            *zl = (*zl * shrink).next_down();
        }
    }
    DualOutcome {
        gpu_scale: best_z,
        iterations,
        converged,
        multipliers: best_mu,
    }
}

/// Newton-type direction for the multipliers of constraints `0..n-1`.
///
/// Multipliers at zero whose subgradient points further down are held fixed.
/// On the remaining ones the Jacobian of the constraint residuals is the
/// min-kernel matrix `M[i][j] = D[min(i, j)]`, with `D` the running sum of
/// `sensitivity`; its inverse is tridiagonal in the increments of `D`.
fn min_kernel_direction(
    mu: &[f64],
    grad: &[f64],
    sensitivity: &[f64],
    free: &mut Vec<usize>,
    direction: &mut [f64],
) {
    let constraints = mu.len() - 1;
    free.clear();
    for l in 0..constraints {
        direction[l] = 0.0;
        if mu[l] > 0.0 || grad[l] > 0.0 {
            free.push(l);
        }
    }
    let mut cumulative = vec![0.0; constraints];
    let mut running = 0.0;
    for l in 0..constraints {
        running += sensitivity[l];
        cumulative[l] = running;
    }
    let increment = |k: usize| {
        let below = if k == 0 { 0.0 } else { cumulative[free[k - 1]] };
        cumulative[free[k]] - below
    };
    for k in 0..free.len() {
        let below = if k == 0 { 0.0 } else { grad[free[k - 1]] };
        let mut d = (grad[free[k]] - below) / increment(k);
        if k + 1 < free.len() {
            d -= (grad[free[k + 1]] - grad[free[k]]) / increment(k + 1);
        }
        direction[free[k]] = d;
    }
}

/// Runs the dual iteration directly, regardless of which case would apply.
/// Returns the best energy-feasible iterate.
pub fn dual_iteration(
    user: &UserSpec,
    model: &ModelProfile,
    y: f64,
    bs: &BsConfig,
    ch: &ChannelState,
    cfg: &SolverConfig,
) -> Result<LayerSolveResult> {
    let costs = LayerCosts::new(user, model, y, bs, ch)?;
    check_budget(&costs, user.energy_budget_j)?;
    let q_prime = costs.compute_budget(user.energy_budget_j);
    let out = dual_iteration_costs(&costs, q_prime, cfg, None);
    Ok(finish(
        &costs,
        LatencyModel::Slide,
        out.gpu_scale,
        SolveCase::DualEtaPositive,
        out.iterations,
        out.converged,
        out.multipliers,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn costs(tau: &[f64], memcpy: &[f64], gamma: &[f64], t0: f64) -> LayerCosts {
        LayerCosts {
            download_s: tau.to_vec(),
            memcpy_s: memcpy.to_vec(),
            compute_s: gamma.to_vec(),
            start_latency_s: t0,
            base_energy_j: 0.0,
            energy_scale_j: 1.0,
        }
    }

    #[test]
    fn zdot_hand_values() {
        let c = costs(&[0.1, 0.1], &[0.02, 0.0], &[0.04, 0.3], 0.05);
        let z = zdot_from_costs(&c);
        assert!((z[0].unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(z[1], Some(1.0));
        let single = costs(&[0.3], &[0.0], &[0.2], 0.0);
        assert_eq!(zdot_from_costs(&single), vec![Some(1.0)]);
        let blocked = costs(&[0.1, 0.1, 0.1], &[0.0, 0.2, 0.0], &[0.1, 0.1, 0.1], 0.0);
        assert_eq!(zdot_from_costs(&blocked)[1], None);
    }

    #[test]
    fn eta_hand_inversion() {
        let cfg = SolverConfig::default();
        let eta = invert_eta(&[0.0], 0.25, &[1.0], &cfg).unwrap();
        assert!((eta - 4.0).abs() < 1e-12);
        let bis = SolverConfig {
            eta_method: EtaMethod::Bisection,
            ..cfg.clone()
        };
        assert!((invert_eta(&[0.0], 0.25, &[1.0], &bis).unwrap() - 4.0).abs() < 1e-9);
        assert!(invert_eta(&[0.0], 1.0, &[1.0], &cfg).is_err());
        assert!(invert_eta(&[0.0], 0.0, &[1.0], &cfg).is_err());
    }

    #[test]
    fn eta_approaches_saturation_threshold() {
        let cfg = SolverConfig::default();
        let gammas = [0.3, 0.5, 0.2];
        let mu = [0.1, 0.2, 0.0];
        let eta = invert_eta(&mu, 1.0 - 1e-12, &gammas, &cfg).unwrap();
        // every layer clamps at 1 once eta <= min rho / 2
        assert!((eta - 0.7 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn pacing_closes_idle_gaps_without_changing_latency() {
        let c = costs(&[0.1, 0.5, 0.5], &[0.0; 3], &[0.05, 0.05, 0.05], 0.0);
        let ones = vec![1.0; 3];
        let mut z = ones.clone();
        pace_idle_layers(&c, &mut z);
        let tl = c.timeline(LatencyModel::Slide, &z).unwrap();
        for l in 1..3 {
            assert!(tl.inference_done_s[l - 1] >= tl.download_done_s[l]);
        }
        assert_eq!(tl.e2e_latency_s, c.latency(LatencyModel::Slide, &ones));
        assert!(c.energy(&z) < c.energy(&ones));
    }

    #[test]
    fn single_layer_tight_budget_is_square_root() {
        let c = costs(&[0.2], &[0.01], &[0.4], 0.0);
        let res = solve_with_costs(&c, 0.4 * 0.36, &SolverConfig::default(), None).unwrap();
        assert_eq!(res.case_tag, SolveCase::DualEtaPositive);
        assert!((res.alloc.gpu_scale[0] - 0.6).abs() < 1e-9);
    }
}

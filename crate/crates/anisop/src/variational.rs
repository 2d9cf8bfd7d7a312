//! Variational solvers on grid domains: weighted Rayleigh quotients (best
//! Hardy-type constants), obstacle capacities, Maz'ya-type ratios, tail
//! constants over exhaustions, and attainment diagnostics.
//!
//! The minimizers use projected gradient descent with Barzilai–Borwein trial
//! steps safeguarded by Armijo backtracking. Runs are deterministic: every
//! random ingredient (restart jitter, diagnostic batteries) draws from labeled
//! counter streams derived from the config seed, and restart results merge in
//! restart order regardless of thread count.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{energy_gradient, energy_q, GridDomain, GridFunction};
use crate::error::AnisopError;
use crate::norms::{self, ExponentPair, NormFamily};
use crate::sampling;
use crate::sum::NeumaierSum;
use crate::Result;

/// Knobs for the projected-gradient solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative value-change threshold; convergence needs it met on 5
    /// consecutive accepted iterations.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease fraction.
    pub armijo_c: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    pub seed: u64,
    /// Number of independent starts (first is deterministic, rest jittered).
    pub restarts: usize,
    /// Worker threads for independent restarts.
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 50_000,
            armijo_c: 1e-4,
            shrink: 0.5,
            seed: 0,
            restarts: 3,
            threads: 1,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(AnisopError::argument("tol must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(AnisopError::argument("armijo_c must lie in (0,1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(AnisopError::argument("shrink must lie in (0,1)"));
        }
        if self.max_iter == 0 || self.restarts == 0 {
            return Err(AnisopError::argument("max_iter and restarts must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a variational solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Attained minimum (quotient value or capacity).
    pub value: f64,
    pub minimizer: GridFunction,
    /// Accepted iterations of the winning restart.
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted iteration of the winning restart
    /// (starting from the initial point).
    pub history: Vec<f64>,
    /// Final value of every restart, in restart order.
    pub restart_values: Vec<f64>,
}

#[inline]
fn abspow(t: f64, p: f64) -> f64 {
    if p == 2.0 {
        t * t
    } else {
        t.abs().powf(p)
    }
}

#[inline]
fn signpow(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else if p == 2.0 {
        t
    } else {
        t.signum() * t.abs().powf(p - 1.0)
    }
}

/// Σ_masked w(x) |φ(x)|^p h^n.
fn weighted_p_mass(phi: &GridFunction, w: &GridFunction, p: f64) -> f64 {
    let dom = phi.domain();
    let vol = dom.cell_volume();
    let mut acc = NeumaierSum::new();
    for &idx in dom.masked_nodes() {
        let wv = w.values()[idx];
        let u = phi.values()[idx];
        if wv != 0.0 && u != 0.0 {
            acc.add(wv * abspow(u, p) * vol);
        }
    }
    acc.value()
}

fn potential_term(phi: &GridFunction, v: Option<&GridFunction>, p: f64) -> f64 {
    match v {
        Some(v) => weighted_p_mass(phi, v, p),
        None => 0.0,
    }
}

/// Multi-source BFS hop distance over masked nodes. Sources get distance
/// `start`; nodes adjacent to the complement (or lattice edge) seed the
/// boundary distance when `seeds` is `None`.
fn bfs_distance(dom: &GridDomain, seeds: Option<&[usize]>) -> Vec<f64> {
    let n = dom.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut queue = std::collections::VecDeque::new();
    match seeds {
        Some(seeds) => {
            for &s in seeds {
                if dist[s].is_infinite() {
                    dist[s] = 0.0;
                    queue.push_back(s);
                }
            }
        }
        None => {
            // boundary seeds: masked nodes with an unmasked or off-lattice neighbor
            for &idx in dom.masked_nodes() {
                let mut boundary = false;
                for ax in 0..dom.dim() {
                    for nb in [dom.forward(idx, ax), dom.backward(idx, ax)] {
                        match nb {
                            Some(j) if dom.is_masked(j) => {}
                            _ => boundary = true,
                        }
                    }
                }
                if boundary {
                    dist[idx] = 1.0;
                    queue.push_back(idx);
                }
            }
        }
    }
    while let Some(idx) = queue.pop_front() {
        let d = dist[idx];
        for ax in 0..dom.dim() {
            for nb in [dom.forward(idx, ax), dom.backward(idx, ax)] {
                if let Some(j) = nb {
                    if dom.is_masked(j) && dist[j].is_infinite() {
                        dist[j] = d + 1.0;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    dist
}

fn dot_masked(dom: &GridDomain, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for &idx in dom.masked_nodes() {
        acc.add(a[idx] * b[idx]);
    }
    acc.value()
}

const CONSEC_FOR_CONVERGENCE: usize = 5;
const MAX_BACKTRACKS: usize = 60;
const STEP_MIN: f64 = 1e-16;
const STEP_MAX: f64 = 1e12;

struct LoopState {
    consec: usize,
    converged: bool,
    stagnated: bool,
}

impl LoopState {
    fn new() -> Self {
        LoopState { consec: 0, converged: false, stagnated: false }
    }
    /// Track the 5-consecutive relative-change rule.
    fn observe(&mut self, old: f64, new: f64, tol: f64) {
        let rel = (new - old).abs() / new.abs().max(1.0);
        if rel <= tol {
            self.consec += 1;
            if self.consec >= CONSEC_FOR_CONVERGENCE {
                self.converged = true;
            }
        } else {
            self.consec = 0;
        }
    }
}

/// Barzilai–Borwein step with safeguards; falls back to growing the previous
/// step when the curvature estimate is unusable.
fn bb_step(dom: &GridDomain, dphi: &[f64], dgrad: &[f64], prev: f64) -> f64 {
    let ss = dot_masked(dom, dphi, dphi);
    let sy = dot_masked(dom, dphi, dgrad);
    let t = if sy > 0.0 && ss > 0.0 { ss / sy } else { prev * 2.0 };
    t.clamp(STEP_MIN, STEP_MAX)
}

// ---------------------------------------------------------------------------
// Hardy-type best constant
// ---------------------------------------------------------------------------

fn validate_weight(g: &GridFunction) -> Result<()> {
    if g.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(AnisopError::argument("weight must be finite and nonnegative"));
    }
    Ok(())
}

/// Best constant `S = inf Q[φ] / Σ g|φ|^p h^n` over gated φ ≠ 0.
///
/// Errors: `IllPosed` when the weight vanishes on the whole mask;
/// `Supercritical` when the energy itself turns negative (the quotient is
/// then unbounded below and no minimizer exists).
pub fn hardy_constant(
    fam: &NormFamily,
    ep: &ExponentPair,
    weight: &GridFunction,
    potential: Option<&GridFunction>,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    validate_weight(weight)?;
    let dom = weight.domain().clone();
    if !dom.masked_nodes().iter().any(|&i| weight.values()[i] > 0.0) {
        return Err(AnisopError::IllPosed(
            "weight vanishes on every masked node; the quotient is undefined".into(),
        ));
    }
    let d_boundary = bfs_distance(&dom, None);

    let run = |restart: usize| -> Result<(SolveOutcome, bool)> {
        let mut phi = GridFunction::zeros(dom.clone());
        for &idx in dom.masked_nodes() {
            phi.values_mut()[idx] = d_boundary[idx];
        }
        if restart > 0 {
            let mut rng = sampling::stream(cfg.seed, &format!("restart:{restart}"));
            for &idx in dom.masked_nodes() {
                phi.values_mut()[idx] *= (0.3 * sampling::gaussian1(&mut rng)).exp();
            }
        }
        hardy_single(fam, ep, weight, potential, cfg, phi)
    };

    run_restarts(cfg, run)
}

/// One renormalized projected-gradient descent on the quotient.
fn hardy_single(
    fam: &NormFamily,
    ep: &ExponentPair,
    weight: &GridFunction,
    potential: Option<&GridFunction>,
    cfg: &SolverConfig,
    mut phi: GridFunction,
) -> Result<(SolveOutcome, bool)> {
    let dom = phi.domain().clone();
    let p = ep.p();
    let vol = dom.cell_volume();

    let normalize = |phi: &mut GridFunction| -> Result<()> {
        let n = weighted_p_mass(phi, weight, p);
        if !(n.is_finite() && n > 1e-300) {
            return Err(AnisopError::argument("iterate left the weight's support"));
        }
        let scale = n.powf(-1.0 / p);
        for &idx in dom.masked_nodes() {
            phi.values_mut()[idx] *= scale;
        }
        Ok(())
    };
    // split evaluation so the supercritical test can compare against the
    // (always positive) gradient part
    let evaluate = |phi: &GridFunction| -> Result<(f64, f64)> {
        let qgrad = energy_q(fam, ep, phi, None)?;
        Ok((qgrad + potential_term(phi, potential, p), qgrad))
    };

    normalize(&mut phi)?;
    let (mut value, mut qgrad) = evaluate(&phi)?;
    let mut history = vec![value];
    let mut state = LoopState::new();
    let mut iterations = 0usize;

    let quotient_grad = |phi: &GridFunction, value: f64| -> Result<Vec<f64>> {
        let mut grad = energy_gradient(fam, ep, phi, potential)?;
        for &idx in dom.masked_nodes() {
            let gw = weight.values()[idx];
            if gw != 0.0 {
                grad[idx] -= value * p * gw * signpow(phi.values()[idx], p) * vol;
            }
        }
        Ok(grad)
    };

    let mut grad = quotient_grad(&phi, value)?;
    let mut step = {
        let gg = dot_masked(&dom, &grad, &grad);
        (value.abs() / gg.max(1e-300)).clamp(STEP_MIN, 1.0)
    };

    for _ in 0..cfg.max_iter {
        if state.converged {
            break;
        }
        if value < -1e-9 * qgrad.abs().max(1e-300) {
            return Err(AnisopError::Supercritical(value));
        }
        let gg = dot_masked(&dom, &grad, &grad);
        if gg == 0.0 {
            state.converged = true;
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = phi.clone();
            for &idx in dom.masked_nodes() {
                trial.values_mut()[idx] -= t * grad[idx];
            }
            if normalize(&mut trial).is_err() {
                t *= cfg.shrink;
                continue;
            }
            let (v_new, qg_new) = evaluate(&trial)?;
            if v_new <= value - cfg.armijo_c * t * gg {
                accepted = Some((trial, v_new, qg_new));
                break;
            }
            t *= cfg.shrink;
        }
        let Some((trial, v_new, qg_new)) = accepted else {
            state.stagnated = true;
            break;
        };
        let grad_new = quotient_grad(&trial, v_new)?;
        let (dphi, dgrad): (Vec<f64>, Vec<f64>) = {
            let mut dp = vec![0.0; dom.node_count()];
            let mut dg = vec![0.0; dom.node_count()];
            for &idx in dom.masked_nodes() {
                dp[idx] = trial.values()[idx] - phi.values()[idx];
                dg[idx] = grad_new[idx] - grad[idx];
            }
            (dp, dg)
        };
        step = bb_step(&dom, &dphi, &dgrad, t);
        state.observe(value, v_new, cfg.tol);
        phi = trial;
        value = v_new;
        qgrad = qg_new;
        grad = grad_new;
        history.push(value);
        iterations += 1;
    }
    if value < -1e-9 * qgrad.abs().max(1e-300) {
        return Err(AnisopError::Supercritical(value));
    }

    // canonical sign: nonnegative total mass
    let total: f64 = dom.masked_nodes().iter().map(|&i| phi.values()[i]).sum();
    if total < 0.0 {
        for &idx in dom.masked_nodes() {
            phi.values_mut()[idx] = -phi.values()[idx];
        }
    }
    let converged = state.converged;
    Ok((
        SolveOutcome {
            value,
            minimizer: phi,
            iterations,
            converged,
            history,
            restart_values: Vec::new(),
        },
        converged,
    ))
}

/// Run `cfg.restarts` independent starts (optionally on threads) and keep the
/// best value; restart bookkeeping merges in restart order.
fn run_restarts(
    cfg: &SolverConfig,
    run: impl Fn(usize) -> Result<(SolveOutcome, bool)> + Sync,
) -> Result<SolveOutcome> {
    let restarts = cfg.restarts;
    let mut slots: Vec<Option<Result<(SolveOutcome, bool)>>> = Vec::new();
    slots.resize_with(restarts, || None);
    if cfg.threads > 1 && restarts > 1 {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots_mx = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..cfg.threads.min(restarts) {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if k >= restarts {
                        break;
                    }
                    let out = run(k);
                    slots_mx.lock().unwrap()[k] = Some(out);
                });
            }
        });
    } else {
        for (k, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run(k));
        }
    }
    let mut best: Option<SolveOutcome> = None;
    let mut restart_values = Vec::with_capacity(restarts);
    for slot in slots {
        let (out, _) = slot.expect("restart ran")?;
        restart_values.push(out.value);
        let take = match &best {
            None => true,
            Some(b) => out.value < b.value,
        };
        if take {
            best = Some(out);
        }
    }
    let mut best = best.expect("at least one restart");
    best.restart_values = restart_values;
    Ok(best)
}

// ---------------------------------------------------------------------------
// Obstacle capacity
// ---------------------------------------------------------------------------

/// Variational capacity `inf { Q[φ] : φ ≥ obstacle on K }` over gated φ.
///
/// `k_nodes` must be masked node indices; `warm` optionally replaces the
/// deterministic initial guess (restart 0 only).
pub fn capacity(
    fam: &NormFamily,
    ep: &ExponentPair,
    obstacle: &GridFunction,
    k_nodes: &[usize],
    potential: Option<&GridFunction>,
    cfg: &SolverConfig,
    warm: Option<&GridFunction>,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    let dom = obstacle.domain().clone();
    if k_nodes.is_empty() {
        return Err(AnisopError::argument("the compact set K selects no nodes"));
    }
    if k_nodes.iter().any(|&i| i >= dom.node_count() || !dom.is_masked(i)) {
        return Err(AnisopError::argument("K must consist of masked node indices"));
    }
    if obstacle.values().iter().any(|v| !v.is_finite()) {
        return Err(AnisopError::argument("obstacle must be finite"));
    }
    let ob_max = k_nodes.iter().map(|&i| obstacle.values()[i]).fold(f64::NEG_INFINITY, f64::max);

    let project = |phi: &mut GridFunction| {
        for &idx in k_nodes {
            let u = obstacle.values()[idx];
            if phi.values()[idx] < u {
                phi.values_mut()[idx] = u;
            }
        }
    };

    let d_boundary = bfs_distance(&dom, None);
    let d_k = bfs_distance(&dom, Some(k_nodes));

    let run = |restart: usize| -> Result<(SolveOutcome, bool)> {
        let mut phi = match (restart, warm) {
            (0, Some(w)) => {
                if w.domain() != &dom {
                    return Err(AnisopError::argument("warm start lives on a different domain"));
                }
                let mut w = w.clone();
                w.gate();
                w
            }
            _ => {
                let mut phi = GridFunction::zeros(dom.clone());
                for &idx in dom.masked_nodes() {
                    let (db, dk) = (d_boundary[idx], d_k[idx]);
                    if db.is_finite() && dk.is_finite() {
                        phi.values_mut()[idx] = ob_max.max(0.0) * db / (db + dk);
                    }
                }
                if restart > 0 {
                    let mut rng = sampling::stream(cfg.seed, &format!("restart:{restart}"));
                    for &idx in dom.masked_nodes() {
                        phi.values_mut()[idx] *= (0.3 * sampling::gaussian1(&mut rng)).exp();
                    }
                }
                phi
            }
        };
        project(&mut phi);
        capacity_single(fam, ep, potential, cfg, phi, &project)
    };
    run_restarts(cfg, run)
}

fn capacity_single(
    fam: &NormFamily,
    ep: &ExponentPair,
    potential: Option<&GridFunction>,
    cfg: &SolverConfig,
    mut phi: GridFunction,
    project: &impl Fn(&mut GridFunction),
) -> Result<(SolveOutcome, bool)> {
    let dom = phi.domain().clone();
    let p = ep.p();
    let evaluate = |phi: &GridFunction| -> Result<(f64, f64)> {
        let qgrad = energy_q(fam, ep, phi, None)?;
        Ok((qgrad + potential_term(phi, potential, p), qgrad))
    };
    let (mut value, mut qgrad) = evaluate(&phi)?;
    let mut history = vec![value];
    let mut state = LoopState::new();
    let mut iterations = 0usize;
    let mut grad = energy_gradient(fam, ep, &phi, potential)?;
    let mut step = {
        let gg = dot_masked(&dom, &grad, &grad);
        (value.abs().max(1e-12) / gg.max(1e-300)).clamp(STEP_MIN, 1.0)
    };

    for _ in 0..cfg.max_iter {
        if state.converged {
            break;
        }
        if value < -1e-9 * qgrad.abs().max(1e-300) {
            return Err(AnisopError::Supercritical(value));
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = phi.clone();
            for &idx in dom.masked_nodes() {
                trial.values_mut()[idx] -= t * grad[idx];
            }
            project(&mut trial);
            // sufficient decrease along the projection arc
            let mut gdx = NeumaierSum::new();
            for &idx in dom.masked_nodes() {
                gdx.add(grad[idx] * (phi.values()[idx] - trial.values()[idx]));
            }
            let decrease = gdx.value();
            let (v_new, qg_new) = evaluate(&trial)?;
            if decrease <= 0.0 {
                // projection removed all progress along -grad
                t *= cfg.shrink;
                if t < STEP_MIN {
                    break;
                }
                continue;
            }
            if v_new <= value - cfg.armijo_c * decrease {
                accepted = Some((trial, v_new, qg_new));
                break;
            }
            t *= cfg.shrink;
        }
        let Some((trial, v_new, qg_new)) = accepted else {
            state.stagnated = true;
            break;
        };
        let grad_new = energy_gradient(fam, ep, &trial, potential)?;
        let (dphi, dgrad): (Vec<f64>, Vec<f64>) = {
            let mut dp = vec![0.0; dom.node_count()];
            let mut dg = vec![0.0; dom.node_count()];
            for &idx in dom.masked_nodes() {
                dp[idx] = trial.values()[idx] - phi.values()[idx];
                dg[idx] = grad_new[idx] - grad[idx];
            }
            (dp, dg)
        };
        step = bb_step(&dom, &dphi, &dgrad, t);
        state.observe(value, v_new, cfg.tol);
        phi = trial;
        value = v_new;
        qgrad = qg_new;
        grad = grad_new;
        history.push(value);
        iterations += 1;
    }
    if value < -1e-9 * qgrad.abs().max(1e-300) {
        return Err(AnisopError::Supercritical(value));
    }
    let converged = state.converged;
    Ok((
        SolveOutcome {
            value,
            minimizer: phi,
            iterations,
            converged,
            history,
            restart_values: Vec::new(),
        },
        converged,
    ))
}

// ---------------------------------------------------------------------------
// Maz'ya-type ratio
// ---------------------------------------------------------------------------

/// One compact set's contribution to the Maz'ya-type norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazyaEntry {
    pub k_index: usize,
    /// Σ_K |g| u^p h^n.
    pub mass: f64,
    /// cap_u(K) = inf { Q[φ] : φ ≥ u on K }.
    pub capacity: f64,
    /// mass / capacity, when the capacity is positive.
    pub ratio: Option<f64>,
}

/// Maz'ya-type norm of a weight against a positive profile, with the matched
/// Hardy constant for the two-sided comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazyaReport {
    /// sup over the supplied compacta of mass/capacity.
    pub norm_u: f64,
    /// Index (into the input list) attaining the sup.
    pub best_k: usize,
    pub entries: Vec<MazyaEntry>,
    /// Best constant S of the weighted quotient on the same domain.
    pub hardy: f64,
    /// 1/S, the quantity the norm brackets.
    pub inv_hardy: f64,
}

/// Evaluate the Maz'ya-type norm `sup_K (Σ_K |g| u^p h^n) / cap_u(K)` over the
/// supplied compacta and the Hardy constant of the same weight.
///
/// `profile` must be strictly positive on the mask. Compacta with vanishing
/// capacity are recorded but excluded from the sup.
pub fn mazya_ratio(
    fam: &NormFamily,
    ep: &ExponentPair,
    weight: &GridFunction,
    profile: &GridFunction,
    compacta: &[Vec<usize>],
    potential: Option<&GridFunction>,
    cfg: &SolverConfig,
) -> Result<MazyaReport> {
    validate_weight(weight)?;
    let dom = weight.domain().clone();
    if profile.domain() != &dom {
        return Err(AnisopError::argument("profile lives on a different domain"));
    }
    if dom.masked_nodes().iter().any(|&i| !(profile.values()[i] > 0.0)) {
        return Err(AnisopError::argument("profile must be strictly positive on the mask"));
    }
    if compacta.is_empty() {
        return Err(AnisopError::argument("need at least one compact set"));
    }
    let p = ep.p();
    let vol = dom.cell_volume();
    let mut entries = Vec::with_capacity(compacta.len());
    let mut norm_u = f64::NEG_INFINITY;
    let mut best_k = 0usize;
    for (k_index, k_nodes) in compacta.iter().enumerate() {
        let mut mass = NeumaierSum::new();
        for &idx in k_nodes {
            mass.add(weight.values()[idx].abs() * abspow(profile.values()[idx], p) * vol);
        }
        let mass = mass.value();
        let cap = capacity(fam, ep, profile, k_nodes, potential, cfg, None)?.value;
        let ratio = if cap > 0.0 { Some(mass / cap) } else { None };
        if let Some(r) = ratio {
            if r > norm_u {
                norm_u = r;
                best_k = k_index;
            }
        }
        entries.push(MazyaEntry { k_index, mass, capacity: cap, ratio });
    }
    if !norm_u.is_finite() {
        return Err(AnisopError::IllPosed(
            "every supplied compact set has vanishing capacity".into(),
        ));
    }
    let hardy = hardy_constant(fam, ep, weight, potential, cfg)?;
    Ok(MazyaReport {
        norm_u,
        best_k,
        entries,
        hardy: hardy.value,
        inv_hardy: 1.0 / hardy.value,
    })
}

// ---------------------------------------------------------------------------
// Tail constant over an exhaustion
// ---------------------------------------------------------------------------

/// Hardy constants of the complements `Ω \ ω_i` along a nested exhaustion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    /// Constant of each tail domain, in exhaustion order.
    pub values: Vec<f64>,
    /// Whether the sequence is nondecreasing (up to 1e-10 relative slack).
    pub monotone: bool,
    /// Last value — the discrete stand-in for the tail constant.
    pub limit_estimate: f64,
}

/// Compute tail Hardy constants over a nested exhaustion.
///
/// Every `ω_i` must share Ω's lattice, be masked inside Ω, and grow with `i`;
/// each complement must stay connected (otherwise the tail constant of the
/// discretization is meaningless and an error is returned).
pub fn hardy_tail_constant(
    fam: &NormFamily,
    ep: &ExponentPair,
    weight: &GridFunction,
    exhaustion: &[Arc<GridDomain>],
    potential: Option<&GridFunction>,
    cfg: &SolverConfig,
) -> Result<TailReport> {
    let dom = weight.domain().clone();
    if exhaustion.is_empty() {
        return Err(AnisopError::argument("exhaustion is empty"));
    }
    for (i, omega) in exhaustion.iter().enumerate() {
        if omega.dim() != dom.dim()
            || omega.shape() != dom.shape()
            || omega.spacing() != dom.spacing()
            || omega.origin() != dom.origin()
        {
            return Err(AnisopError::argument(format!(
                "exhaustion member {i} does not share the host lattice"
            )));
        }
        for idx in 0..dom.node_count() {
            if omega.is_masked(idx) && !dom.is_masked(idx) {
                return Err(AnisopError::argument(format!(
                    "exhaustion member {i} leaves the host domain"
                )));
            }
            if i > 0 && exhaustion[i - 1].is_masked(idx) && !omega.is_masked(idx) {
                return Err(AnisopError::argument(format!(
                    "exhaustion member {i} does not contain member {}",
                    i - 1
                )));
            }
        }
    }
    let mut values = Vec::with_capacity(exhaustion.len());
    for omega in exhaustion {
        let mask: Vec<bool> = (0..dom.node_count())
            .map(|idx| dom.is_masked(idx) && !omega.is_masked(idx))
            .collect();
        let tail = GridDomain::new(dom.dim(), dom.shape(), dom.spacing(), dom.origin(), mask)
            .map_err(|e| {
                AnisopError::argument(format!("tail domain is unusable: {e}"))
            })?;
        let g_tail = GridFunction::from_values(tail.clone(), weight.values().to_vec())?;
        let v_tail = match potential {
            Some(v) => Some(GridFunction::from_values(tail.clone(), v.values().to_vec())?),
            None => None,
        };
        let out = hardy_constant(fam, ep, &g_tail, v_tail.as_ref(), cfg)?;
        values.push(out.value);
    }
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0));
    let limit_estimate = *values.last().unwrap();
    Ok(TailReport { values, monotone, limit_estimate })
}

// ---------------------------------------------------------------------------
// Attainment diagnostics
// ---------------------------------------------------------------------------

/// Diagnostics supporting (or refuting) attainment of a computed quotient
/// minimum by the returned minimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttainmentReport {
    /// Fraction of masked nodes where the canonical-sign minimizer is
    /// noticeably negative.
    pub negative_fraction: f64,
    /// negative_fraction ≤ 1e-3 (sign-definiteness up to the 99.9% quantile).
    pub sign_ok: bool,
    /// Largest relative Euler–Lagrange residual over the nodal-hat battery.
    pub max_rel_residual: f64,
    /// Number of hats tested.
    pub battery: usize,
    /// Minimum of R(φ+εψ) − R(φ) over the seeded perturbation battery
    /// (second-order optimality witness; should not be meaningfully negative).
    pub rayleigh_min_gap: f64,
    pub perturbations: usize,
}

/// Check a minimizer of the weighted quotient: sign-definiteness, nodal
/// Euler–Lagrange residuals against the effective potential `V − S·g`, and a
/// seeded Rayleigh-quotient perturbation battery.
pub fn attainment_check(
    fam: &NormFamily,
    ep: &ExponentPair,
    weight: &GridFunction,
    potential: Option<&GridFunction>,
    outcome: &SolveOutcome,
    seed: u64,
    battery: usize,
    perturbations: usize,
) -> Result<AttainmentReport> {
    let phi = &outcome.minimizer;
    let dom = phi.domain().clone();
    let p = ep.p();
    let vol = dom.cell_volume();
    let s_val = outcome.value;

    // sign-definiteness of the canonical representative
    let max_abs = dom
        .masked_nodes()
        .iter()
        .map(|&i| phi.values()[i].abs())
        .fold(0.0f64, f64::max);
    let negatives = dom
        .masked_nodes()
        .iter()
        .filter(|&&i| phi.values()[i] < -1e-9 * max_abs)
        .count();
    let negative_fraction = negatives as f64 / dom.masked_nodes().len() as f64;

    // effective potential V_eff = V − S·g zeroes the first variation at φ
    let mut v_eff = GridFunction::zeros(dom.clone());
    for idx in 0..dom.node_count() {
        let base = potential.map_or(0.0, |v| v.values()[idx]);
        v_eff.values_mut()[idx] = base - s_val * weight.values()[idx];
    }
    let grad = energy_gradient(fam, ep, phi, Some(&v_eff))?;

    let mut rng = sampling::stream(seed, "attainment:hats");
    let masked = dom.masked_nodes();
    let battery = battery.min(masked.len());
    let mut max_rel = 0.0f64;
    let dim = dom.dim();
    let mut w_cell = vec![0.0f64; dim];
    for _ in 0..battery {
        use rand::Rng;
        let node = masked[rng.gen_range(0..masked.len())];
        // residual of the hat at `node` is grad[node]/p; scale it by the
        // absolute sizes of the flux and potential contributions at the node
        let res = grad[node] / p;
        let mut scale = NeumaierSum::new();
        let hfac = vol / dom.spacing();
        let mut add_cell = |cell: usize| {
            let g = phi.grad_at(cell);
            if g[..dim].iter().any(|c| *c != 0.0) {
                norms::operator_a_into(fam, ep, &g[..dim], &mut w_cell);
                for ax in 0..dim {
                    scale.add((w_cell[ax] * hfac).abs());
                }
            }
        };
        add_cell(node);
        for ax in 0..dim {
            if let Some(back) = dom.backward(node, ax) {
                add_cell(back);
            }
        }
        let pot = (v_eff.values()[node] * abspow(phi.values()[node], p - 1.0) * vol).abs();
        let denom = (scale.value() + pot).max(1e-300);
        max_rel = max_rel.max(res.abs() / denom);
    }

    // Rayleigh gap battery
    let q_base = energy_q(fam, ep, phi, potential)?;
    let n_base = weighted_p_mass(phi, weight, p);
    let r_base = q_base / n_base;
    let phi_norm = dot_masked(&dom, phi.values(), phi.values()).sqrt();
    let mut min_gap = f64::INFINITY;
    let mut rng_p = sampling::stream(seed, "attainment:perturb");
    for _ in 0..perturbations {
        let mut psi = phi.clone();
        let mut dir = vec![0.0; dom.node_count()];
        for &idx in masked {
            dir[idx] = sampling::gaussian1(&mut rng_p);
        }
        let dir_norm = dot_masked(&dom, &dir, &dir).sqrt().max(1e-300);
        let eps = 1e-3 * phi_norm.max(1e-12) / dir_norm;
        for &idx in masked {
            psi.values_mut()[idx] += eps * dir[idx];
        }
        let q = energy_q(fam, ep, &psi, potential)?;
        let n = weighted_p_mass(&psi, weight, p);
        if n > 1e-300 {
            min_gap = min_gap.min(q / n - r_base);
        }
    }

    Ok(AttainmentReport {
        negative_fraction,
        sign_ok: negative_fraction <= 1e-3,
        max_rel_residual: max_rel,
        battery,
        rayleigh_min_gap: min_gap,
        perturbations,
    })
}

// ---------------------------------------------------------------------------
// Radial oracle
// ---------------------------------------------------------------------------

/// Independent 1-D oracle: smallest eigenvalue of the truncated radial Hardy
/// quotient `∫ u'² dr / ∫ u²/r² dr` on `(r0, 1)` with Dirichlet ends.
///
/// In the log variable `t = ln r` the quotient becomes
/// `(∫ v'² + v²/4 dt) / ∫ v² dt` on an interval of length `ln(1/r0)`, whose
/// minimum tends to `1/4 + π²/ln²(r0)`. Discretized by second differences on
/// `n_grid` interior points; the smallest eigenvalue is found by inverse
/// power iteration with Thomas solves.
pub fn radial_hardy_eigenvalue(r0: f64, n_grid: usize) -> Result<f64> {
    if !(r0 > 0.0 && r0 < 1.0) {
        return Err(AnisopError::argument("need 0 < r0 < 1"));
    }
    if n_grid < 8 {
        return Err(AnisopError::argument("need at least 8 grid points"));
    }
    let length = -r0.ln();
    let dt = length / (n_grid + 1) as f64;
    let diag = 2.0 / (dt * dt) + 0.25;
    let off = -1.0 / (dt * dt);

    // Thomas solve of the constant tridiagonal system (diag, off)
    let solve = |b: &[f64], c_prime: &mut Vec<f64>, d_prime: &mut Vec<f64>, x: &mut Vec<f64>| {
        let n = b.len();
        c_prime[0] = off / diag;
        d_prime[0] = b[0] / diag;
        for i in 1..n {
            let m = diag - off * c_prime[i - 1];
            c_prime[i] = off / m;
            d_prime[i] = (b[i] - off * d_prime[i - 1]) / m;
        }
        x[n - 1] = d_prime[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d_prime[i] - c_prime[i] * x[i + 1];
        }
    };

    let n = n_grid;
    let mut v: Vec<f64> = (0..n)
        .map(|i| (std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).sin())
        .collect();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut lambda = f64::INFINITY;
    for _ in 0..200 {
        solve(&v, &mut c_prime, &mut d_prime, &mut x);
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in x.iter_mut() {
            *a /= norm;
        }
        // Rayleigh quotient of the tridiagonal operator at x
        let mut num = 0.0;
        for i in 0..n {
            let left = if i > 0 { x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] } else { 0.0 };
            num += x[i] * (diag * x[i] + off * (left + right));
        }
        v.copy_from_slice(&x);
        let rel = (num - lambda).abs() / num.abs().max(1.0);
        lambda = num;
        if rel < 1e-14 {
            break;
        }
    }
    Ok(lambda)
}

/// Closed form the oracle converges to: `1/4 + π² / ln²(r0)`.
pub fn radial_hardy_limit(r0: f64) -> f64 {
    0.25 + std::f64::consts::PI.powi(2) / r0.ln().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn euclid(dim: usize) -> NormFamily {
        NormFamily::weighted_s(2.0, vec![1.0; dim]).unwrap()
    }

    fn ep22() -> ExponentPair {
        ExponentPair::new(2.0, 2.0).unwrap()
    }

    fn ones(dom: &Arc<GridDomain>) -> GridFunction {
        GridFunction::from_fn(dom.clone(), |_| 1.0)
    }

    #[test]
    fn radial_oracle_matches_closed_form() {
        for r0 in [0.01, 0.1] {
            let lam = radial_hardy_eigenvalue(r0, 3000).unwrap();
            assert_relative_eq!(lam, radial_hardy_limit(r0), max_relative = 1e-5);
        }
    }

    #[test]
    fn interval_eigenvalue() {
        // min ∫φ'²/∫φ² on (0,1) is π²; the forward-difference lattice value is
        // (2/h²)(1−cos πh), within O(h²) of it
        let dom = GridDomain::unit_box(1, 64).unwrap();
        let g = ones(&dom);
        let cfg = SolverConfig { tol: 1e-11, restarts: 2, seed: 3, ..Default::default() };
        let out = hardy_constant(&euclid(1), &ep22(), &g, None, &cfg).unwrap();
        assert!(out.converged);
        let target = std::f64::consts::PI.powi(2);
        assert_relative_eq!(out.value, target, max_relative = 3e-3);
        // the history never increases (descent with renormalization)
        assert!(out.history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
        // canonical sign
        let total: f64 = out.minimizer.values().iter().sum();
        assert!(total > 0.0);
    }

    #[test]
    fn square_eigenvalue_and_attainment() {
        let dom = GridDomain::unit_box(2, 32).unwrap();
        let g = ones(&dom);
        let cfg = SolverConfig { tol: 1e-10, restarts: 2, seed: 11, threads: 2, ..Default::default() };
        let fam = euclid(2);
        let e = ep22();
        let out = hardy_constant(&fam, &e, &g, None, &cfg).unwrap();
        let target = 2.0 * std::f64::consts::PI.powi(2);
        assert_relative_eq!(out.value, target, max_relative = 1e-2);
        assert_eq!(out.restart_values.len(), 2);
        for v in &out.restart_values {
            assert_relative_eq!(*v, out.value, max_relative = 1e-6);
        }
        let rep = attainment_check(&fam, &e, &g, None, &out, 99, 64, 32).unwrap();
        assert!(rep.sign_ok, "{rep:?}");
        assert!(rep.max_rel_residual < 1e-3, "{rep:?}");
        assert!(rep.rayleigh_min_gap > -1e-8, "{rep:?}");
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let dom = GridDomain::unit_box(2, 16).unwrap();
        let g = ones(&dom);
        let fam = euclid(2);
        let e = ep22();
        let base = SolverConfig { tol: 1e-9, restarts: 3, seed: 5, threads: 1, ..Default::default() };
        let wide = SolverConfig { threads: 3, ..base.clone() };
        let a = hardy_constant(&fam, &e, &g, None, &base).unwrap();
        let b = hardy_constant(&fam, &e, &g, None, &wide).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.restart_values.len(), b.restart_values.len());
        for (x, y) in a.restart_values.iter().zip(&b.restart_values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn weight_validation() {
        let dom = GridDomain::unit_box(2, 8).unwrap();
        let zero = GridFunction::zeros(dom.clone());
        let cfg = SolverConfig::default();
        let err = hardy_constant(&euclid(2), &ep22(), &zero, None, &cfg).unwrap_err();
        assert!(matches!(err, AnisopError::IllPosed(_)));
        let neg = GridFunction::from_fn(dom, |_| -1.0);
        let err = hardy_constant(&euclid(2), &ep22(), &neg, None, &cfg).unwrap_err();
        assert!(matches!(err, AnisopError::Argument(_)));
    }

    #[test]
    fn supercritical_potential_is_an_error() {
        let dom = GridDomain::unit_box(1, 16).unwrap();
        let g = ones(&dom);
        let v = GridFunction::from_fn(dom, |_| -1000.0);
        let cfg = SolverConfig { restarts: 1, ..Default::default() };
        let err = hardy_constant(&euclid(1), &ep22(), &g, Some(&v), &cfg).unwrap_err();
        assert!(matches!(err, AnisopError::Supercritical(_)), "{err}");
    }

    #[test]
    fn capacity_scaling_with_warm_start() {
        let dom = GridDomain::unit_box(2, 24).unwrap();
        let k = dom.nodes_within([0.5, 0.5, 0.0], 0.2);
        assert!(!k.is_empty());
        let fam = euclid(2);
        let e = ep22();
        let cfg = SolverConfig { tol: 1e-10, restarts: 1, seed: 2, ..Default::default() };
        let ob = ones(&dom);
        let base = capacity(&fam, &e, &ob, &k, None, &cfg, None).unwrap();
        assert!(base.converged && base.value > 0.0);
        // minimizer respects the obstacle
        for &idx in &k {
            assert!(base.minimizer.values()[idx] >= 1.0 - 1e-12);
        }
        for alpha in [0.5f64, 2.0] {
            let ob_a = GridFunction::from_fn(dom.clone(), |_| alpha);
            let warm = GridFunction::from_values(
                dom.clone(),
                base.minimizer.values().iter().map(|v| alpha * v).collect(),
            )
            .unwrap();
            let scaled = capacity(&fam, &e, &ob_a, &k, None, &cfg, Some(&warm)).unwrap();
            let expect = alpha.powi(2) * base.value;
            assert_relative_eq!(scaled.value, expect, max_relative = 1e-7);
        }
    }

    #[test]
    fn capacity_monotone_in_the_compactum() {
        let dom = GridDomain::unit_box(2, 20).unwrap();
        let fam = euclid(2);
        let e = ep22();
        let cfg = SolverConfig { tol: 1e-10, restarts: 1, seed: 4, ..Default::default() };
        let ob = ones(&dom);
        let k_small = dom.nodes_within([0.5, 0.5, 0.0], 0.15);
        let k_big = dom.nodes_within([0.5, 0.5, 0.0], 0.3);
        assert!(k_small.len() < k_big.len());
        let c_small = capacity(&fam, &e, &ob, &k_small, None, &cfg, None).unwrap().value;
        let c_big = capacity(&fam, &e, &ob, &k_big, None, &cfg, None).unwrap().value;
        assert!(c_small <= c_big * (1.0 + 1e-8), "{c_small} vs {c_big}");
    }

    #[test]
    fn mazya_ratio_brackets_inverse_hardy() {
        let dom = GridDomain::unit_box(2, 20).unwrap();
        let g = ones(&dom);
        let profile = GridFunction::from_fn(dom.clone(), |_| 1.0);
        let compacta: Vec<Vec<usize>> = vec![
            dom.nodes_within([0.5, 0.5, 0.0], 0.15),
            dom.nodes_within([0.5, 0.5, 0.0], 0.3),
            dom.nodes_within([0.3, 0.6, 0.0], 0.2),
        ];
        let cfg = SolverConfig { tol: 1e-9, restarts: 1, seed: 8, ..Default::default() };
        let rep = mazya_ratio(&euclid(2), &ep22(), &g, &profile, &compacta, None, &cfg).unwrap();
        assert!(rep.norm_u > 0.0 && rep.inv_hardy > 0.0);
        // the easy direction of the characterization, with discretization slack
        assert!(rep.norm_u <= 1.1 * rep.inv_hardy, "{rep:?}");
        assert_eq!(rep.entries.len(), 3);
        for e in &rep.entries {
            assert!(e.capacity > 0.0);
        }
    }

    #[test]
    fn tail_constants_grow_along_an_exhaustion() {
        let dom = GridDomain::unit_box(2, 24).unwrap();
        let g = ones(&dom);
        // growing centered boxes; complements are connected frames
        let omegas: Vec<Arc<GridDomain>> = [4usize, 8]
            .iter()
            .map(|&half| {
                let mask: Vec<bool> = (0..dom.node_count())
                    .map(|idx| {
                        let (i, j, _) = dom.unflatten(idx);
                        let c = 12usize;
                        dom.is_masked(idx)
                            && i.abs_diff(c) <= half
                            && j.abs_diff(c) <= half
                    })
                    .collect();
                GridDomain::new(2, dom.shape(), dom.spacing(), dom.origin(), mask).unwrap()
            })
            .collect();
        let cfg = SolverConfig { tol: 1e-9, restarts: 1, seed: 6, ..Default::default() };
        let rep =
            hardy_tail_constant(&euclid(2), &ep22(), &g, &omegas, None, &cfg).unwrap();
        assert_eq!(rep.values.len(), 2);
        assert!(rep.monotone, "{rep:?}");
        assert!(rep.limit_estimate >= rep.values[0]);
        // the tails are sub-domains of Ω, so their constants exceed Ω's
        let whole = hardy_constant(&euclid(2), &ep22(), &g, None, &cfg).unwrap();
        assert!(rep.values[0] >= whole.value);
    }

    #[test]
    fn exhaustion_validation() {
        let dom = GridDomain::unit_box(2, 12).unwrap();
        let g = ones(&dom);
        let other = GridDomain::unit_box(2, 10).unwrap();
        let cfg = SolverConfig::default();
        let err = hardy_tail_constant(&euclid(2), &ep22(), &g, &[other], None, &cfg).unwrap_err();
        assert!(matches!(err, AnisopError::Argument(_)));
    }
}

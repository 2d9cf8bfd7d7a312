//! The acceptance suite: nine deterministic criteria exercising the identity
//! layer, the calibrated estimate batteries, the variational solvers against
//! closed-form oracles, and the bracket/diagnostic machinery. Each criterion
//! writes an evidence file into the output directory and returns a pass/fail
//! outcome carrying its pinned tolerances; a failed criterion is reported,
//! never panicked, so the suite always completes and the summary always
//! reflects every criterion.
//!
//! Determinism contract: with a fixed seed the entire suite — values,
//! evidence files, summary — is byte-identical across runs and thread
//! counts. Timing never enters the files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::json;

use anisop::bregman::{
    bregman_chain_decompose, bregman_distance_with_scale, estimate_equivalence_constants,
    scalar_bregman,
};
use anisop::calibration::{
    battery_family, battery_matrix_rows, battery_plan, battery_weights, CalibrationTable,
};
use anisop::energy::{
    induced_potential, morrey_norm, morrey_radii, shrinking_ball_lq, simplified_energy_bracket,
    GridDomain, GridFunction, MorreySpec, MorreyVariant,
};
use anisop::gridio;
use anisop::norms::{verify_family, ExponentPair, NormFamily};
use anisop::sampling::{log_uniform_point, stream};
use anisop::variational::{
    capacity, hardy_constant, mazya_ratio, radial_hardy_eigenvalue, radial_hardy_limit,
    SolverConfig,
};

use crate::commands::{classify, estimate_csv, standard_compacta, write_json, CliError};
use crate::fixtures::FieldSpec;

/// Seed the acceptance run is pinned to by the integration tests.
pub const ACCEPTANCE_SEED: u64 = 20240814;

/// Outcome of one criterion. `elapsed` is never serialized — evidence files
/// must be byte-identical across runs.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    /// One-line digest with the measured values against their pinned bounds.
    pub headline: String,
    pub notes: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl CriterionOutcome {
    pub fn status_line(&self) -> String {
        format!(
            "criterion {:02} ({}): {} — {} [{:.1}s]",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.headline,
            self.elapsed.as_secs_f64(),
        )
    }
}

struct Ctx<'a> {
    seed: u64,
    threads: usize,
    calib: &'a CalibrationTable,
    out: &'a Path,
}

impl Ctx<'_> {
    fn solver(&self, tol: f64, max_iter: usize) -> SolverConfig {
        SolverConfig {
            tol,
            max_iter,
            armijo_c: 1e-4,
            shrink: 0.5,
            seed: self.seed,
            restarts: 1,
            threads: self.threads,
        }
    }

    fn write(&self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        write_json(Some(&self.out.join(name)), value)
    }
}

fn outcome(id: usize, name: &str, passed: bool, headline: String) -> CriterionOutcome {
    CriterionOutcome {
        id,
        name: name.to_string(),
        passed,
        headline,
        notes: Vec::new(),
        metrics: BTreeMap::new(),
        elapsed: Duration::ZERO,
    }
}

fn euclid(n: usize) -> Result<NormFamily, CliError> {
    NormFamily::weighted_s(2.0, vec![1.0; n]).map_err(classify)
}

fn pair(p: f64, s: f64) -> Result<ExponentPair, CliError> {
    ExponentPair::new(p, s).map_err(classify)
}

/// Run the whole suite into `out_dir` and write `acceptance_summary.json`.
pub fn acceptance_suite(
    out_dir: &Path,
    seed: u64,
    threads: usize,
    calib: &CalibrationTable,
) -> Result<Vec<CriterionOutcome>, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", out_dir.display())))?;
    let ctx = Ctx { seed, threads, calib, out: out_dir };
    type Runner = fn(&Ctx) -> Result<CriterionOutcome, CliError>;
    let runners: [(usize, &str, Runner); 9] = [
        (1, "bregman-identities", criterion_01),
        (2, "estimate-batteries", criterion_02),
        (3, "norm-structure", criterion_03),
        (4, "hardy-square", criterion_04),
        (5, "hardy-puncture", criterion_05),
        (6, "capacity-disk", criterion_06),
        (7, "mazya-bracket", criterion_07),
        (8, "energy-bracket", criterion_08),
        (9, "morrey-refinement", criterion_09),
    ];
    let mut outcomes = Vec::with_capacity(runners.len());
    for (id, name, runner) in runners {
        let t0 = Instant::now();
        let oc = match runner(&ctx) {
            Ok(mut oc) => {
                oc.elapsed = t0.elapsed();
                oc
            }
            Err(e) => {
                let mut oc = outcome(id, name, false, format!("errored: {e}"));
                oc.notes.push(e.to_string());
                oc.elapsed = t0.elapsed();
                oc
            }
        };
        outcomes.push(oc);
    }
    let summary = json!({
        "seed": seed,
        "criteria": outcomes,
        "all_passed": outcomes.iter().all(|o| o.passed),
    });
    ctx.write("acceptance_summary.json", &summary)?;
    Ok(outcomes)
}

// ---------------------------------------------------------------------------
// 1: exact identities of the Bregman layer
// ---------------------------------------------------------------------------

const C1_PAIRS: u64 = 100_000;
const C1_TOL_HILBERT: f64 = 1e-12;
const C1_TOL_COMPONENTWISE: f64 = 1e-12;
const C1_TOL_CHAIN: f64 = 1e-10;

fn criterion_01(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    // Hilbert case: D(ξ+η, ξ) = |η|² exactly.
    let fam = euclid(3)?;
    let ep = pair(2.0, 2.0)?;
    let mut rng = stream(ctx.seed, "c1:hilbert");
    let mut hilbert_max = 0.0f64;
    for _ in 0..C1_PAIRS {
        let xi = log_uniform_point(&mut rng, 3);
        let eta = log_uniform_point(&mut rng, 3);
        let (d, scale) = bregman_distance_with_scale(&fam, &ep, &xi, &eta).map_err(classify)?;
        let expected: f64 = eta.iter().map(|e| e * e).sum();
        hilbert_max = hilbert_max.max((d - expected).abs() / scale.max(f64::MIN_POSITIVE));
    }

    // p = s: the distance splits componentwise into scalar Bregman terms.
    let mut componentwise = BTreeMap::new();
    let mut comp_max_all = 0.0f64;
    for p in [1.5, 3.0] {
        let a = battery_weights(3);
        let fam = NormFamily::weighted_s(p, a.clone()).map_err(classify)?;
        let ep = pair(p, p)?;
        let mut rng = stream(ctx.seed, &format!("c1:componentwise:{p}"));
        let mut max_rel = 0.0f64;
        for _ in 0..C1_PAIRS {
            let xi = log_uniform_point(&mut rng, 3);
            let eta = log_uniform_point(&mut rng, 3);
            let (d, scale) =
                bregman_distance_with_scale(&fam, &ep, &xi, &eta).map_err(classify)?;
            let mut expected = 0.0;
            for i in 0..3 {
                expected +=
                    a[i] * scalar_bregman(p, xi[i], xi[i] + eta[i]).map_err(classify)?;
            }
            max_rel = max_rel.max((d - expected).abs() / scale.max(f64::MIN_POSITIVE));
        }
        comp_max_all = comp_max_all.max(max_rel);
        componentwise.insert(format!("{p}"), max_rel);
    }

    // Chain split: total = outer + slope_term, and total equals the direct
    // distance of H^p.
    let w3 = battery_weights(3);
    let rows3 = battery_matrix_rows(3);
    let chain_fams: [(&str, NormFamily, ExponentPair); 3] = [
        ("weighted", NormFamily::weighted_s(3.0, w3.clone()).map_err(classify)?, pair(3.0, 3.0)?),
        ("matrix", NormFamily::matrix_from_rows(&rows3).map_err(classify)?, pair(2.5, 2.0)?),
        (
            "combined",
            NormFamily::combined_from_rows(2.0, w3, &rows3).map_err(classify)?,
            pair(3.0, 2.0)?,
        ),
    ];
    let mut chain = BTreeMap::new();
    let mut chain_max_all = 0.0f64;
    for (label, fam, ep) in &chain_fams {
        let mut rng = stream(ctx.seed, &format!("c1:chain:{label}"));
        let mut max_rel = 0.0f64;
        for _ in 0..C1_PAIRS {
            let xi = log_uniform_point(&mut rng, fam.dim());
            let eta = log_uniform_point(&mut rng, fam.dim());
            let dec =
                bregman_chain_decompose(fam, ep, ep.p(), &xi, &eta).map_err(classify)?;
            let (d, _) = bregman_distance_with_scale(fam, ep, &xi, &eta).map_err(classify)?;
            let scale = dec.scale.max(f64::MIN_POSITIVE);
            let split = (dec.total - dec.outer - dec.slope_term).abs() / scale;
            let direct = (dec.total - d).abs() / scale;
            max_rel = max_rel.max(split.max(direct));
        }
        chain_max_all = chain_max_all.max(max_rel);
        chain.insert(label.to_string(), max_rel);
    }

    let passed = hilbert_max <= C1_TOL_HILBERT
        && comp_max_all <= C1_TOL_COMPONENTWISE
        && chain_max_all <= C1_TOL_CHAIN;
    ctx.write(
        "c01_bregman_identities.json",
        &json!({
            "pairs_per_check": C1_PAIRS,
            "seed": ctx.seed,
            "tolerance_hilbert": C1_TOL_HILBERT,
            "tolerance_componentwise": C1_TOL_COMPONENTWISE,
            "tolerance_chain": C1_TOL_CHAIN,
            "hilbert_max_rel": hilbert_max,
            "componentwise_max_rel": componentwise,
            "chain_max_rel": chain,
            "passed": passed,
        }),
    )?;
    let mut oc = outcome(
        1,
        "bregman-identities",
        passed,
        format!(
            "hilbert {hilbert_max:.2e} ≤ 1e-12, componentwise {comp_max_all:.2e} ≤ 1e-12, chain {chain_max_all:.2e} ≤ 1e-10"
        ),
    );
    oc.metrics.insert("hilbert_max_rel".into(), hilbert_max);
    oc.metrics.insert("componentwise_max_rel".into(), comp_max_all);
    oc.metrics.insert("chain_max_rel".into(), chain_max_all);
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 2: estimate batteries against calibrated caps
// ---------------------------------------------------------------------------

const C2_SAMPLES: u64 = 100_000;

fn criterion_02(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let mut reports = Vec::new();
    let mut failing = Vec::new();
    let mut min_c_hat = f64::INFINITY;
    let mut max_cap_util = 0.0f64;
    for entry in battery_plan() {
        let fam = battery_family(entry.lemma, entry.s, entry.n).map_err(classify)?;
        let ep = ExponentPair::new(entry.p, entry.s).map_err(classify)?;
        let cap = if entry.lemma.sides().1 {
            let c = ctx.calib.upper_cap(entry.lemma.as_str(), entry.p, entry.s, entry.n);
            if c.is_none() {
                failing.push(format!(
                    "{} p={} s={} n={}: no calibrated cap",
                    entry.lemma.as_str(),
                    entry.p,
                    entry.s,
                    entry.n
                ));
                continue;
            }
            c
        } else {
            None
        };
        let rep = estimate_equivalence_constants(
            &fam,
            &ep,
            entry.lemma,
            C2_SAMPLES,
            ctx.seed,
            ctx.threads,
            cap,
        )
        .map_err(classify)?;
        min_c_hat = min_c_hat.min(rep.c_hat);
        if let Some(c) = cap {
            max_cap_util = max_cap_util.max(rep.c_big_hat / c);
        }
        if !rep.passes() {
            failing.push(format!(
                "{} p={} s={} n={}: {} violations, c_hat={}",
                rep.lemma_id, rep.p, rep.s, rep.n, rep.violation_count, rep.c_hat
            ));
        }
        reports.push(rep);
    }
    let text = estimate_csv(&reports);
    write_json_text(ctx, "c02_estimates.csv", &text)?;
    let passed = failing.is_empty();
    let mut oc = outcome(
        2,
        "estimate-batteries",
        passed,
        format!(
            "{} cells at {C2_SAMPLES} samples: min ĉ = {min_c_hat:.3e} > 0, max Ĉ/cap = {max_cap_util:.3} ≤ 1, {} failures",
            reports.len(),
            failing.len()
        ),
    );
    oc.notes = failing;
    oc.metrics.insert("cells".into(), reports.len() as f64);
    oc.metrics.insert("min_c_hat".into(), min_c_hat);
    oc.metrics.insert("max_cap_utilization".into(), max_cap_util);
    Ok(oc)
}

fn write_json_text(ctx: &Ctx, name: &str, text: &str) -> Result<(), CliError> {
    gridio::atomic_write(&ctx.out.join(name), text.as_bytes())
        .map_err(|e| CliError::Run(e.to_string()))
}

// ---------------------------------------------------------------------------
// 3: norm-family structure invariants
// ---------------------------------------------------------------------------

const C3_SAMPLES: u64 = 10_000;

fn criterion_03(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let w3 = battery_weights(3);
    let rows3 = battery_matrix_rows(3);
    let combos: [(NormFamily, ExponentPair); 3] = [
        (NormFamily::weighted_s(3.0, w3.clone()).map_err(classify)?, pair(3.0, 3.0)?),
        (NormFamily::matrix_from_rows(&rows3).map_err(classify)?, pair(2.5, 2.0)?),
        (NormFamily::combined_from_rows(2.0, w3, &rows3).map_err(classify)?, pair(3.0, 2.0)?),
    ];
    let mut rows = Vec::new();
    let mut worst_fd = 0.0f64;
    let mut all_pass = true;
    for (fam, ep) in &combos {
        let rep = verify_family(fam, ep, C3_SAMPLES, ctx.seed).map_err(classify)?;
        all_pass &= rep.passes();
        worst_fd = worst_fd.max(rep.gradient_dev);
        rows.push(json!({
            "family": rep.family,
            "p": rep.p,
            "s": rep.s,
            "samples": rep.samples,
            "homogeneity_dev": rep.homogeneity_dev,
            "triangle_violations": rep.triangle_violations,
            "gradient_dev": rep.gradient_dev,
            "euler_dev": rep.euler_dev,
            "monotonicity_violations": rep.monotonicity_violations,
            "structure_violations": rep.structure_violations,
            "passes": rep.passes(),
        }));
    }
    ctx.write(
        "c03_structure.json",
        &json!({
            "samples_per_family": C3_SAMPLES,
            "seed": ctx.seed,
            "families": rows,
            "passed": all_pass,
        }),
    )?;
    let mut oc = outcome(
        3,
        "norm-structure",
        all_pass,
        format!(
            "3 families × {C3_SAMPLES} samples: FD dev {worst_fd:.2e} ≤ 1e-6, no violations"
        ),
    );
    oc.metrics.insert("max_gradient_dev".into(), worst_fd);
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 4: Hardy constant of the unit square against 2π²
// ---------------------------------------------------------------------------

const C4_REL_TOL: f64 = 0.02;

fn criterion_04(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let target = 2.0 * PI * PI;
    let fam = euclid(2)?;
    let ep = pair(2.0, 2.0)?;
    let solver = ctx.solver(1e-8, 50_000);
    let mut lambdas = Vec::new();
    let cells_list = [32usize, 64, 128];
    for &cells in &cells_list {
        let dom = GridDomain::unit_box(2, cells).map_err(classify)?;
        let g = GridFunction::from_fn_gated(dom.clone(), |_| 1.0);
        let out = hardy_constant(&fam, &ep, &g, None, &solver).map_err(classify)?;
        if cells == 128 {
            gridio::save_grid_function(&ctx.out.join("c04_minimizer_h128.csv"), &out.minimizer)
                .map_err(|e| CliError::Run(e.to_string()))?;
        }
        lambdas.push(out.value);
    }
    let errors: Vec<f64> = lambdas.iter().map(|l| (l - target).abs()).collect();
    let rel_finest = errors[2] / target;
    let decreasing = errors[0] > errors[1] && errors[1] > errors[2];
    let passed = rel_finest <= C4_REL_TOL && decreasing;
    ctx.write(
        "c04_hardy_square.json",
        &json!({
            "cells": cells_list,
            "lambda": lambdas,
            "target": target,
            "abs_error": errors,
            "rel_error_finest": rel_finest,
            "rel_tolerance": C4_REL_TOL,
            "errors_decreasing": decreasing,
            "seed": ctx.seed,
            "passed": passed,
        }),
    )?;
    let mut oc = outcome(
        4,
        "hardy-square",
        passed,
        format!(
            "λ(h=1/128) = {:.4} vs 2π² = {target:.4}: rel err {rel_finest:.4} ≤ {C4_REL_TOL}, errors decreasing = {decreasing}",
            lambdas[2]
        ),
    );
    oc.metrics.insert("lambda_h128".into(), lambdas[2]);
    oc.metrics.insert("rel_error_finest".into(), rel_finest);
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 5: Hardy constant of the punctured ball against 1/4
// ---------------------------------------------------------------------------

const C5_REL_TOL: f64 = 0.15;
const C5_TARGET: f64 = 0.25;
/// Effective-cutoff window for the radial oracle: the lattice puncture acts
/// like an inner radius between h/4 and 4h.
const C5_CUTOFF_WINDOW: (f64, f64) = (0.25, 4.0);

fn criterion_05(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let fam = euclid(3)?;
    let ep = pair(2.0, 2.0)?;
    let solver = ctx.solver(1e-7, 200_000);
    let hs = [1.0 / 16.0, 1.0 / 24.0, 1.0 / 48.0];
    let mut lambdas = Vec::new();
    for &h in &hs {
        let dom = GridDomain::punctured_ball(3, 1.0, h).map_err(classify)?;
        let g = GridFunction::from_fn_gated(dom.clone(), |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            if r2 == 0.0 {
                0.0
            } else {
                1.0 / r2
            }
        });
        let out = hardy_constant(&fam, &ep, &g, None, &solver).map_err(classify)?;
        lambdas.push(out.value);
    }
    let h_fine = hs[2];
    let rel_finest = (lambdas[2] - C5_TARGET).abs() / C5_TARGET;
    let within_tol = rel_finest <= C5_REL_TOL;
    let monotone_toward =
        lambdas[0] > lambdas[1] && lambdas[1] > lambdas[2] && lambdas[2] > C5_TARGET;

    // 1-D radial oracle: the puncture acts like an inner cutoff of a few
    // lattice cells, so λ_h must land inside the eigenvalue window of the
    // radial problem with cutoff in [h/4, 4h].
    let oracle_lo_r0 = C5_CUTOFF_WINDOW.0 * h_fine;
    let oracle_hi_r0 = C5_CUTOFF_WINDOW.1 * h_fine;
    let band_lo = radial_hardy_eigenvalue(oracle_lo_r0, 4000).map_err(classify)?;
    let band_hi = radial_hardy_eigenvalue(oracle_hi_r0, 4000).map_err(classify)?;
    let oracle_ok = band_lo <= lambdas[2] && lambdas[2] <= band_hi;

    let passed = within_tol && monotone_toward && oracle_ok;
    ctx.write(
        "c05_hardy_puncture.json",
        &json!({
            "h": hs,
            "lambda": lambdas,
            "target": C5_TARGET,
            "rel_error_finest": rel_finest,
            "rel_tolerance": C5_REL_TOL,
            "within_tolerance": within_tol,
            "monotone_toward_target": monotone_toward,
            "radial_oracle": {
                "cutoff_window_cells": [C5_CUTOFF_WINDOW.0, C5_CUTOFF_WINDOW.1],
                "r0": [oracle_lo_r0, oracle_hi_r0],
                "band": [band_lo, band_hi],
                "band_limits_closed_form": [
                    radial_hardy_limit(oracle_lo_r0),
                    radial_hardy_limit(oracle_hi_r0),
                ],
                "contains_lambda": oracle_ok,
            },
            "seed": ctx.seed,
            "passed": passed,
        }),
    )?;
    let mut oc = outcome(
        5,
        "hardy-puncture",
        passed,
        format!(
            "λ(h=1/48) = {:.4} vs 1/4: rel err {rel_finest:.3} (tol {C5_REL_TOL}), monotone = {monotone_toward}, radial band [{band_lo:.3}, {band_hi:.3}] contains = {oracle_ok}",
            lambdas[2]
        ),
    );
    oc.metrics.insert("lambda_finest".into(), lambdas[2]);
    oc.metrics.insert("rel_error_finest".into(), rel_finest);
    oc.metrics.insert("oracle_band_lo".into(), band_lo);
    oc.metrics.insert("oracle_band_hi".into(), band_hi);
    oc.metrics.insert("monotone_toward_target".into(), monotone_toward as u8 as f64);
    oc.metrics.insert("oracle_band_contains".into(), oracle_ok as u8 as f64);
    oc.metrics.insert("within_tolerance".into(), within_tol as u8 as f64);
    if !within_tol {
        oc.notes.push(format!(
            "the log-type cutoff keeps the lattice eigenvalue near 0.25 + π²/ln²(c·h); at h=1/48 that is ≈ {:.2}, far above the 15% window around 0.25",
            radial_hardy_limit(h_fine)
        ));
    }
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 6: disk-in-disk capacity against 2π/ln(R/r)
// ---------------------------------------------------------------------------

const C6_REL_TOL: f64 = 0.03;
const C6_TOL: f64 = 1e-8;
/// Scaling deviation allowance: twice the solver's value tolerance.
const C6_SCALING_BOUND: f64 = 2.0 * C6_TOL;
/// The four scaling solves run tighter than [`C6_TOL`] so their own
/// termination scatter is negligible against [`C6_SCALING_BOUND`].
const C6_SCALING_SOLVE_TOL: f64 = 1e-11;

fn criterion_06(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let fam = euclid(2)?;
    let ep = pair(2.0, 2.0)?;
    let solver = ctx.solver(C6_TOL, 200_000);
    let target = 2.0 * PI / 4.0f64.ln();

    // value: Ω = unit disk, K = disk of radius 1/4, h = 1/256
    let dom = GridDomain::ball(2, 1.0, 1.0 / 256.0).map_err(classify)?;
    let obstacle = GridFunction::from_fn_gated(dom.clone(), |_| 1.0);
    let k = dom.nodes_within([0.0, 0.0, 0.0], 0.25);
    let fine = capacity(&fam, &ep, &obstacle, &k, None, &solver, None).map_err(classify)?;
    let rel_err = (fine.value - target).abs() / target;

    // homogeneity: cap(α·obstacle) = α^p · cap(obstacle) on a coarser disk.
    // Every solver decision (default start, BB ratio, Armijo test, relative
    // stopping rule) is invariant under φ → αφ, so the α-run retraces the
    // base trajectory: the check measures the law, not the optimality gap.
    // The solves run at a tolerance well below the 2×tol allowance so that
    // termination scatter (rounding desyncs the α=3 path) stays negligible.
    let scaling_solver = ctx.solver(C6_SCALING_SOLVE_TOL, 200_000);
    let dom64 = GridDomain::ball(2, 1.0, 1.0 / 64.0).map_err(classify)?;
    let ob64 = GridFunction::from_fn_gated(dom64.clone(), |_| 1.0);
    let k64 = dom64.nodes_within([0.0, 0.0, 0.0], 0.25);
    let base = capacity(&fam, &ep, &ob64, &k64, None, &scaling_solver, None).map_err(classify)?;
    let mut scaling_devs = Vec::new();
    for alpha in [0.5, 2.0, 3.0] {
        let mut ob_a = ob64.clone();
        for v in ob_a.values_mut() {
            *v *= alpha;
        }
        let scaled =
            capacity(&fam, &ep, &ob_a, &k64, None, &scaling_solver, None).map_err(classify)?;
        let expected = alpha * alpha * base.value;
        scaling_devs.push((scaled.value - expected).abs() / expected);
    }
    let scaling_max = scaling_devs.iter().copied().fold(0.0f64, f64::max);
    let scaling_ok = scaling_max <= C6_SCALING_BOUND;

    // monotonicity in K and in Ω at h = 1/128
    let dom128 = GridDomain::ball(2, 1.0, 1.0 / 128.0).map_err(classify)?;
    let ob128 = GridFunction::from_fn_gated(dom128.clone(), |_| 1.0);
    let k_small = dom128.nodes_within([0.0, 0.0, 0.0], 0.2);
    let k_big = dom128.nodes_within([0.0, 0.0, 0.0], 0.25);
    let cap_k_small =
        capacity(&fam, &ep, &ob128, &k_small, None, &solver, None).map_err(classify)?.value;
    let cap_k_big =
        capacity(&fam, &ep, &ob128, &k_big, None, &solver, None).map_err(classify)?.value;
    let dom_shrunk = GridDomain::ball(2, 0.8, 1.0 / 128.0).map_err(classify)?;
    let ob_shrunk = GridFunction::from_fn_gated(dom_shrunk.clone(), |_| 1.0);
    let k_shrunk = dom_shrunk.nodes_within([0.0, 0.0, 0.0], 0.25);
    let cap_dom_shrunk =
        capacity(&fam, &ep, &ob_shrunk, &k_shrunk, None, &solver, None).map_err(classify)?.value;
    let mono_k = cap_k_small <= cap_k_big;
    let mono_dom = cap_dom_shrunk >= cap_k_big;

    let passed = rel_err <= C6_REL_TOL && scaling_ok && mono_k && mono_dom;
    ctx.write(
        "c06_capacity.json",
        &json!({
            "target": target,
            "value_h256": fine.value,
            "rel_error": rel_err,
            "rel_tolerance": C6_REL_TOL,
            "scaling": {
                "alpha": [0.5, 2.0, 3.0],
                "rel_dev": scaling_devs,
                "bound": C6_SCALING_BOUND,
                "solve_tol": C6_SCALING_SOLVE_TOL,
                "ok": scaling_ok,
            },
            "monotonicity": {
                "cap_K_r02": cap_k_small,
                "cap_K_r025": cap_k_big,
                "cap_domain_r08": cap_dom_shrunk,
                "k_ok": mono_k,
                "domain_ok": mono_dom,
            },
            "seed": ctx.seed,
            "passed": passed,
        }),
    )?;
    let mut oc = outcome(
        6,
        "capacity-disk",
        passed,
        format!(
            "cap(h=1/256) = {:.4} vs 2π/ln4 = {target:.4}: rel err {rel_err:.4} ≤ {C6_REL_TOL}, scaling dev {scaling_max:.1e} ≤ {C6_SCALING_BOUND:.0e}, monotone K/Ω = {mono_k}/{mono_dom}",
            fine.value
        ),
    );
    oc.metrics.insert("capacity_h256".into(), fine.value);
    oc.metrics.insert("rel_error".into(), rel_err);
    oc.metrics.insert("scaling_max_dev".into(), scaling_max);
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 7: Maz'ya-type bracket on seeded instances
// ---------------------------------------------------------------------------

const C7_EASY_SLACK: f64 = 1.05;

fn criterion_07(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let fam = euclid(2)?;
    let ep = pair(2.0, 2.0)?;
    let solver = ctx.solver(1e-8, 50_000);
    let cap = match ctx.calib.upper_cap("mazya", 2.0, 2.0, 2) {
        Some(c) => c,
        None => {
            let mut oc = outcome(7, "mazya-bracket", false, "no calibrated cap".into());
            oc.notes.push("calibration table lacks the mazya battery record".into());
            return Ok(oc);
        }
    };
    let dom = GridDomain::unit_box(2, 32).map_err(classify)?;
    let mut rows = Vec::new();
    let mut all_ok = true;
    let mut worst_easy = 0.0f64;
    let mut worst_cal = 0.0f64;
    for i in 0..3 {
        let g = FieldSpec::RandomBumps {
            count: 3,
            base: 0.1,
            amplitude: 1.0,
            width: 0.25,
            label: format!("c7:g:{i}"),
        }
        .build(&dom, ctx.seed, true);
        let u = FieldSpec::RandomBumps {
            count: 2,
            base: 1.0,
            amplitude: 0.5,
            width: 0.3,
            label: format!("c7:u:{i}"),
        }
        .build(&dom, ctx.seed, false);
        let hardy = hardy_constant(&fam, &ep, &g, None, &solver).map_err(classify)?;
        let compacta = standard_compacta(&dom, &hardy.minimizer, ctx.seed, &format!("c7:k:{i}"))?;
        let rep = mazya_ratio(&fam, &ep, &g, &u, &compacta, None, &solver).map_err(classify)?;
        let easy_ok = rep.norm_u <= C7_EASY_SLACK * rep.inv_hardy;
        let cal_ok = rep.inv_hardy <= cap * rep.norm_u;
        worst_easy = worst_easy.max(rep.norm_u / rep.inv_hardy);
        worst_cal = worst_cal.max(rep.inv_hardy / rep.norm_u);
        all_ok &= easy_ok && cal_ok;
        rows.push(json!({
            "instance": i,
            "norm_u": rep.norm_u,
            "inv_hardy": rep.inv_hardy,
            "hardy": rep.hardy,
            "best_k": rep.best_k,
            "entries": rep.entries,
            "easy_ok": easy_ok,
            "calibrated_ok": cal_ok,
        }));
    }
    ctx.write(
        "c07_mazya.json",
        &json!({
            "instances": rows,
            "easy_slack": C7_EASY_SLACK,
            "calibrated_cap": cap,
            "seed": ctx.seed,
            "passed": all_ok,
        }),
    )?;
    let mut oc = outcome(
        7,
        "mazya-bracket",
        all_ok,
        format!(
            "3 instances: max ‖g‖_u/(1/S) = {worst_easy:.3} ≤ {C7_EASY_SLACK}, max (1/S)/‖g‖_u = {worst_cal:.3} ≤ cap {cap:.3}"
        ),
    );
    oc.metrics.insert("max_norm_over_inv_hardy".into(), worst_easy);
    oc.metrics.insert("max_inv_hardy_over_norm".into(), worst_cal);
    oc.metrics.insert("calibrated_cap".into(), cap);
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 8: two-sided bracket of the product energy
// ---------------------------------------------------------------------------

fn criterion_08(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let dom = GridDomain::unit_box(2, 24).map_err(classify)?;
    type Field = fn(&[f64; 3]) -> f64;
    let us: [(&str, Field); 5] = [
        ("bump", |x| {
            let d2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            1.0 + 0.5 * (-d2 / 0.09).exp()
        }),
        ("affine", |x| 1.0 + 0.4 * x[0]),
        ("tanh-front", |x| 1.0 + 0.3 * (2.0 * x[0] - x[1]).tanh()),
        ("exp-sin", |x| (0.3 * (PI * x[0]).sin() * (PI * x[1]).sin()).exp()),
        ("cos-grid", |x| 1.5 + 0.2 * (PI * x[0]).cos() * (2.0 * PI * x[1]).cos()),
    ];
    let psis: [(&str, Field); 5] = [
        ("sine", |x| (PI * x[0]).sin() * (PI * x[1]).sin()),
        ("sine-squared", |x| ((PI * x[0]).sin() * (PI * x[1]).sin()).powi(2)),
        ("tapered-bump", |x| {
            let d2 = (x[0] - 0.4).powi(2) + (x[1] - 0.6).powi(2);
            (-d2 / 0.04).exp() * (PI * x[0]).sin() * (PI * x[1]).sin()
        }),
        ("tent", |x| 2.0 * x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1])),
        ("quartic", |x| 16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])),
    ];
    let regimes = [(2.0, 2.0), (3.0, 2.0), (2.0, 3.0)];
    let mut rows = Vec::new();
    let mut all_ok = true;
    let mut min_lower_margin = f64::INFINITY;
    let mut min_upper_margin = f64::INFINITY;
    for (p, s) in regimes {
        let fam = NormFamily::weighted_s(s, battery_weights(2)).map_err(classify)?;
        let ep = ExponentPair::new(p, s).map_err(classify)?;
        for k in 0..5 {
            let (u_name, u_fn) = us[k];
            let (psi_name, psi_fn) = psis[k];
            let u = GridFunction::from_fn(dom.clone(), u_fn);
            let psi = GridFunction::from_fn_gated(dom.clone(), psi_fn);
            let pot = induced_potential(&fam, &ep, &u).map_err(classify)?;
            let br = simplified_energy_bracket(&fam, &ep, &u, &psi, Some(&pot), ctx.calib)
                .map_err(classify)?;
            all_ok &= br.lower_ok && br.upper_ok;
            if br.lower > 0.0 {
                min_lower_margin = min_lower_margin.min(br.q_value / br.lower);
            }
            if br.q_value > 0.0 {
                min_upper_margin = min_upper_margin.min(br.upper / br.q_value);
            }
            rows.push(json!({
                "p": p,
                "s": s,
                "u": u_name,
                "psi": psi_name,
                "regime": br.regime,
                "q_value": br.q_value,
                "d_sum": br.d_sum,
                "defect": br.defect,
                "r1_sum": br.r1_sum,
                "r2_sum": br.r2_sum,
                "lower": br.lower,
                "upper": br.upper,
                "dropped_nodes": br.dropped_nodes,
                "lower_ok": br.lower_ok,
                "upper_ok": br.upper_ok,
            }));
        }
    }
    ctx.write(
        "c08_bracket.json",
        &json!({
            "grid": "unit square, 24 cells per side",
            "pairs": rows,
            "seed": ctx.seed,
            "passed": all_ok,
        }),
    )?;
    let mut oc = outcome(
        8,
        "energy-bracket",
        all_ok,
        format!(
            "15 (u, ψ) pairs over 3 regimes: all brackets contain Q, margins ≥ {:.3}/{:.3}",
            min_lower_margin, min_upper_margin
        ),
    );
    oc.metrics.insert("min_lower_margin".into(), min_lower_margin);
    oc.metrics.insert("min_upper_margin".into(), min_upper_margin);
    Ok(oc)
}

// ---------------------------------------------------------------------------
// 9: Morrey-norm stability under radius refinement
// ---------------------------------------------------------------------------

const C9_REL_TOL: f64 = 0.01;
const C9_BLOWUP_FACTOR: f64 = 10.0;

fn criterion_09(ctx: &Ctx) -> Result<CriterionOutcome, CliError> {
    let dom = GridDomain::ball(2, 1.0, 1.0 / 128.0).map_err(classify)?;
    // f = |x|^{−n/q} with n = 2, q = 3: borderline for the q-scale, inside
    // the Morrey scale
    let f = FieldSpec::RadialPower { center: vec![0.0, 0.0], exponent: -2.0 / 3.0 }
        .build(&dom, ctx.seed, true);
    let spec = MorreySpec { p: 1.5, q: 3.0, variant: MorreyVariant::Basic, theta: None, vartheta: None };
    let coarse_radii = morrey_radii(&dom, 2f64.powf(0.25));
    let fine_radii = morrey_radii(&dom, 2f64.powf(0.125));
    let coarse = morrey_norm(&spec, &f, &coarse_radii).map_err(classify)?;
    let fine = morrey_norm(&spec, &f, &fine_radii).map_err(classify)?;
    let rel_change = (fine.value - coarse.value).abs() / coarse.value;

    let diag = shrinking_ball_lq(&f, [0.0, 0.0, 0.0], 3.0, &fine_radii).map_err(classify)?;
    let small = diag.first().map(|&(_, v)| v).unwrap_or(0.0);
    let large = diag.last().map(|&(_, v)| v).unwrap_or(f64::INFINITY);
    let blowup = small / large;

    let passed = rel_change < C9_REL_TOL && blowup >= C9_BLOWUP_FACTOR;
    ctx.write(
        "c09_morrey.json",
        &json!({
            "spec": spec,
            "coarse": {"radii": coarse_radii.len(), "value": coarse.value, "best_radius": coarse.best_radius},
            "fine": {"radii": fine_radii.len(), "value": fine.value, "best_radius": fine.best_radius},
            "rel_change": rel_change,
            "rel_tolerance": C9_REL_TOL,
            "shrinking_ball": diag.iter().map(|&(r, v)| json!({"r": r, "lq_mean": v})).collect::<Vec<_>>(),
            "blowup_ratio": blowup,
            "blowup_required": C9_BLOWUP_FACTOR,
            "seed": ctx.seed,
            "passed": passed,
        }),
    )?;
    let mut oc = outcome(
        9,
        "morrey-refinement",
        passed,
        format!(
            "refinement changes the norm by {rel_change:.2e} < {C9_REL_TOL}; shrinking-ball L³ ratio {blowup:.1} ≥ {C9_BLOWUP_FACTOR}"
        ),
    );
    oc.metrics.insert("rel_change".into(), rel_change);
    oc.metrics.insert("blowup_ratio".into(), blowup);
    Ok(oc)
}

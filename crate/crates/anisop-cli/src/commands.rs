//! One driver per subcommand. Every driver builds its inputs from the typed
//! config, runs the library call, writes the result (atomically when a path
//! is given, to stdout otherwise), and only then reports check failures —
//! so a failing run still leaves its evidence on disk.
//!
//! Exit-code contract: configuration problems (bad values, mismatched
//! shapes, missing calibration) map to [`CliError::Config`] = exit 3;
//! failed invariants and runtime faults map to [`CliError::Run`] = exit 2.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde_json::json;

use anisop::bregman::{estimate_equivalence_constants, EstimateReport, LemmaId};
use anisop::calibration::{battery_family, battery_plan, CalibrationRecord, CalibrationTable};
use anisop::energy::{
    energy_gradient, energy_q, morrey_norm, morrey_radii, GridDomain, GridFunction,
};
use anisop::gridio;
use anisop::norms::{modulus_of_convexity_estimate, verify_family, ExponentPair, NormFamily};
use anisop::sampling::{fnv1a64, stream};
use anisop::variational::{
    attainment_check, capacity, hardy_constant, hardy_tail_constant, mazya_ratio, SolveOutcome,
    SolverConfig,
};
use anisop::AnisopError;

use crate::config::Config;
use crate::fixtures::{CompactSpec, FieldSpec};

/// Driver-level failure, carrying the exit class.
#[derive(Debug)]
pub enum CliError {
    /// Configuration error — exit code 3.
    Config(String),
    /// Assertion/invariant failure or runtime fault — exit code 2.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Run(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Run(msg) => write!(f, "run failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Library errors about the problem as stated are configuration errors;
/// everything discovered while computing is a run failure.
pub(crate) fn classify(e: AnisopError) -> CliError {
    let msg = e.to_string();
    match e {
        AnisopError::Construction(_)
        | AnisopError::Argument(_)
        | AnisopError::Regime(_)
        | AnisopError::IllPosed(_) => CliError::Config(msg),
        _ => CliError::Run(msg),
    }
}

fn exponents(cfg: &Config) -> Result<ExponentPair, CliError> {
    ExponentPair::new(cfg.p, cfg.s).map_err(classify)
}

/// Write `text` to `path` atomically (temp + rename) or print it.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir).map_err(|e| {
                        CliError::Run(format!("cannot create {}: {e}", dir.display()))
                    })?;
                }
            }
            gridio::atomic_write(path, text.as_bytes()).map_err(|e| CliError::Run(e.to_string()))
        }
        None => {
            let mut handle = std::io::stdout().lock();
            handle.write_all(text.as_bytes()).and_then(|_| handle.flush()).map_err(|e| {
                CliError::Run(format!("stdout: {e}"))
            })
        }
    }
}

pub(crate) fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Run(format!("serialize: {e}")))?;
    text.push('\n');
    emit(out, &text)
}

/// `<stem><suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Stable hex id of a problem instance, built from content hashes and
/// exponent bits — identical configs hash identically, and any change to
/// mask, field values, exponents, or family changes it.
pub(crate) fn problem_hash(parts: &[u64]) -> String {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    format!("{:016x}", fnv1a64(&bytes))
}

fn family_tag(fam: &NormFamily) -> u64 {
    let tag = match fam {
        NormFamily::WeightedS { .. } => "weighted_s",
        NormFamily::Matrix { .. } => "matrix",
        NormFamily::Combined { .. } => "combined",
    };
    fnv1a64(tag.as_bytes())
}

pub(crate) fn load_calibration(path: &Path) -> Result<CalibrationTable, CliError> {
    CalibrationTable::load(path).map_err(|e| {
        CliError::Config(format!(
            "calibration table {}: {e} (run `anisop calibrate` first)",
            path.display()
        ))
    })
}

fn solve_summary(cfg: &Config, hash: String, dom: &GridDomain, out: &SolveOutcome) -> serde_json::Value {
    json!({
        "problem": hash,
        "value": out.value,
        "converged": out.converged,
        "iterations": out.iterations,
        "seed": cfg.seed,
        "h": dom.spacing(),
        "p": cfg.p,
        "s": cfg.s,
        "n": dom.dim(),
        "restart_values": out.restart_values,
    })
}

// ---------------------------------------------------------------------------
// verify-norms
// ---------------------------------------------------------------------------

pub fn cmd_verify_norms(cfg: &Config) -> Result<(), CliError> {
    let ep = exponents(cfg)?;
    let fam = cfg.family_for(cfg.n)?;
    let report = verify_family(&fam, &ep, cfg.samples as u64, cfg.seed).map_err(classify)?;
    let mut modulus = BTreeMap::new();
    for eps in [0.5, 1.0, 1.5] {
        let delta = modulus_of_convexity_estimate(&fam, &ep, eps, 20_000, cfg.seed)
            .map_err(classify)?;
        modulus.insert(format!("{eps}"), delta);
    }
    let value = json!({
        "family": report.family,
        "p": report.p,
        "s": report.s,
        "n": cfg.n,
        "samples": report.samples,
        "homogeneity_dev": report.homogeneity_dev,
        "triangle_violations": report.triangle_violations,
        "gradient_dev": report.gradient_dev,
        "euler_dev": report.euler_dev,
        "monotonicity_violations": report.monotonicity_violations,
        "structure_violations": report.structure_violations,
        "modulus_of_convexity": modulus,
        "passes": report.passes(),
        "seed": cfg.seed,
    });
    write_json(cfg.out.as_deref(), &value)?;
    if !report.passes() {
        return Err(CliError::Run("norm family invariants failed; see report".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-bregman
// ---------------------------------------------------------------------------

fn lemma_family(cfg: &Config, lemma: LemmaId) -> Result<NormFamily, CliError> {
    // Explicit weights/matrix pin the family; otherwise each lemma runs
    // against the standard battery family of its kind.
    if cfg.weights.is_some() || cfg.matrix_rows.is_some() {
        cfg.family_for(cfg.n)
    } else {
        battery_family(lemma, cfg.s, cfg.n).map_err(classify)
    }
}

pub(crate) fn estimate_csv(reports: &[EstimateReport]) -> String {
    let mut csv = String::from("lemma_id,p,s,n,samples,c_hat,C_hat,violations,seed\n");
    for r in reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.lemma_id, r.p, r.s, r.n, r.sample_count, r.c_hat, r.c_big_hat, r.violation_count,
            r.seed
        ));
    }
    csv
}

pub fn cmd_verify_bregman(cfg: &Config) -> Result<(), CliError> {
    let ep = exponents(cfg)?;
    let lemmas: Vec<LemmaId> = if cfg.lemma == "all" {
        LemmaId::ALL
            .iter()
            .copied()
            .filter(|l| {
                lemma_family(cfg, *l)
                    .map(|fam| l.check_regime(&fam, &ep).is_ok())
                    .unwrap_or(false)
            })
            .collect()
    } else {
        let lemma = LemmaId::parse(&cfg.lemma).map_err(classify)?;
        let fam = lemma_family(cfg, lemma)?;
        lemma.check_regime(&fam, &ep).map_err(classify)?;
        vec![lemma]
    };
    if lemmas.is_empty() {
        return Err(CliError::Config(format!(
            "no estimate applies to p={}, s={} with this family",
            cfg.p, cfg.s
        )));
    }
    let caps = if cfg.cap_check { Some(load_calibration(&cfg.calibration)?) } else { None };
    let mut reports = Vec::with_capacity(lemmas.len());
    for lemma in lemmas {
        let fam = lemma_family(cfg, lemma)?;
        let cap = caps
            .as_ref()
            .and_then(|t| t.upper_cap(lemma.as_str(), cfg.p, cfg.s, cfg.n));
        let report = estimate_equivalence_constants(
            &fam,
            &ep,
            lemma,
            cfg.samples as u64,
            cfg.seed,
            cfg.threads,
            cap,
        )
        .map_err(classify)?;
        reports.push(report);
    }
    emit(cfg.out.as_deref(), &estimate_csv(&reports))?;
    let failing: Vec<&str> =
        reports.iter().filter(|r| !r.passes()).map(|r| r.lemma_id.as_str()).collect();
    if !failing.is_empty() {
        return Err(CliError::Run(format!("estimates failed: {}", failing.join(", "))));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

/// Solver used inside calibration/battery sweeps: single deterministic start.
fn battery_solver(cfg: &Config) -> SolverConfig {
    SolverConfig { restarts: 1, ..cfg.solver_config() }
}

/// One seeded Maz'ya-bracket instance on the standard 32² square: weight and
/// profile from labeled bump fields, compacta from minimizer superlevels plus
/// two seeded balls. Returns inv_hardy / norm_u.
fn mazya_instance(cfg: &Config, i: usize) -> Result<f64, CliError> {
    let dom = GridDomain::unit_box(2, 32).map_err(classify)?;
    let fam = NormFamily::weighted_s(2.0, vec![1.0, 1.0]).map_err(classify)?;
    let ep = ExponentPair::new(2.0, 2.0).map_err(classify)?;
    let g = FieldSpec::RandomBumps {
        count: 3,
        base: 0.1,
        amplitude: 1.0,
        width: 0.25,
        label: format!("mazya:g:{i}"),
    }
    .build(&dom, cfg.seed, true);
    let u = FieldSpec::RandomBumps {
        count: 2,
        base: 1.0,
        amplitude: 0.5,
        width: 0.3,
        label: format!("mazya:u:{i}"),
    }
    .build(&dom, cfg.seed, false);
    let solver = battery_solver(cfg);
    let hardy = hardy_constant(&fam, &ep, &g, None, &solver).map_err(classify)?;
    let compacta = standard_compacta(&dom, &hardy.minimizer, cfg.seed, &format!("mazya:k:{i}"))?;
    let rep = mazya_ratio(&fam, &ep, &g, &u, &compacta, None, &solver).map_err(classify)?;
    if !(rep.norm_u > 0.0 && rep.inv_hardy.is_finite()) {
        return Err(CliError::Run(format!(
            "degenerate calibration instance {i}: norm_u={}, inv_hardy={}",
            rep.norm_u, rep.inv_hardy
        )));
    }
    Ok(rep.inv_hardy / rep.norm_u)
}

/// Superlevel sets of the reference at quantiles 0.3/0.5/0.7 plus two balls
/// with centers drawn in the middle of the mask's bounding box.
pub(crate) fn standard_compacta(
    dom: &std::sync::Arc<GridDomain>,
    reference: &GridFunction,
    seed: u64,
    label: &str,
) -> Result<Vec<Vec<usize>>, CliError> {
    let mut sets = Vec::new();
    for q in [0.3, 0.5, 0.7] {
        sets.push(CompactSpec::Superlevel { quantile: q }.nodes(dom, Some(reference))?);
    }
    let dim = dom.dim();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &idx in dom.masked_nodes() {
        let x = dom.coord(idx);
        for ax in 0..dim {
            lo[ax] = lo[ax].min(x[ax]);
            hi[ax] = hi[ax].max(x[ax]);
        }
    }
    let min_extent =
        (0..dim).map(|ax| hi[ax] - lo[ax]).fold(f64::INFINITY, f64::min);
    let mut rng = stream(seed, label);
    for _ in 0..2 {
        let mut center = [0.0; 3];
        for ax in 0..dim {
            let span = hi[ax] - lo[ax];
            center[ax] = lo[ax] + (0.3 + 0.4 * rng.gen::<f64>()) * span;
        }
        let radius = (0.1 + 0.1 * rng.gen::<f64>()) * min_extent;
        let ball: Vec<usize> = CompactSpec::Ball {
            center: center[..dim].to_vec(),
            radius,
        }
        .nodes(dom, None)?;
        sets.push(ball);
    }
    Ok(sets)
}

pub fn cmd_calibrate(cfg: &Config) -> Result<(), CliError> {
    if cfg.samples < 1_000_000 {
        return Err(CliError::Config(format!(
            "calibration requires at least 1000000 samples per battery point, got {}",
            cfg.samples
        )));
    }
    let mut table = CalibrationTable::new();
    let mut failures = Vec::new();
    for entry in battery_plan() {
        let fam = battery_family(entry.lemma, entry.s, entry.n).map_err(classify)?;
        let ep = ExponentPair::new(entry.p, entry.s).map_err(classify)?;
        let report = estimate_equivalence_constants(
            &fam,
            &ep,
            entry.lemma,
            cfg.samples as u64,
            cfg.seed,
            cfg.threads,
            None,
        )
        .map_err(classify)?;
        if !report.passes() {
            failures.push(format!(
                "{} p={} s={} n={}",
                report.lemma_id, entry.p, entry.s, entry.n
            ));
        }
        // the Hilbert ratio is an identity: the calibration run must confirm it
        if entry.lemma == LemmaId::Pseudo && entry.p == 2.0 && entry.s == 2.0 {
            let dev = (report.c_hat - 1.0).abs().max((report.c_big_hat - 1.0).abs());
            if dev > 1e-12 {
                failures.push(format!(
                    "pseudo p=2 s=2 n={} drifted from 1 by {dev:.2e} (expected ≤ 1e-12)",
                    entry.n
                ));
            }
        }
        table.insert(
            entry.lemma.as_str(),
            CalibrationRecord {
                p: entry.p,
                s: entry.s,
                n: entry.n,
                c_hat: report.c_hat,
                c_big_hat: report.c_big_hat,
                samples: report.sample_count,
                seed: cfg.seed,
            },
        );
    }
    // the Maz'ya bracket battery: 12 seeded weight/profile instances
    let mut ratios = Vec::with_capacity(12);
    for i in 0..12 {
        ratios.push(mazya_instance(cfg, i)?);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &r in &ratios {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    table.insert(
        "mazya",
        CalibrationRecord {
            p: 2.0,
            s: 2.0,
            n: 2,
            c_hat: lo,
            c_big_hat: hi,
            samples: ratios.len() as u64,
            seed: cfg.seed,
        },
    );
    let path = cfg.out.clone().unwrap_or_else(|| cfg.calibration.clone());
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Run(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    table.save(&path).map_err(|e| CliError::Run(e.to_string()))?;
    println!(
        "calibration written to {} ({} estimate cells + mazya battery)",
        path.display(),
        battery_plan().len()
    );
    if !failures.is_empty() {
        return Err(CliError::Run(format!(
            "{} battery cells failed their own invariants: {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// energy / morrey
// ---------------------------------------------------------------------------

pub fn cmd_energy(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let fam = cfg.family_for(dom.dim())?;
    let ep = exponents(cfg)?;
    let phi = cfg.field.build(&dom, cfg.seed, true);
    let pot = cfg.potential_field.as_ref().map(|s| s.build(&dom, cfg.seed, true));
    let q = energy_q(&fam, &ep, &phi, pot.as_ref()).map_err(classify)?;
    let grad = energy_gradient(&fam, &ep, &phi, pot.as_ref()).map_err(classify)?;
    let grad_sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let hash = problem_hash(&[
        dom.mask_hash(),
        phi.value_hash(),
        pot.as_ref().map_or(0, GridFunction::value_hash),
        cfg.p.to_bits(),
        cfg.s.to_bits(),
        family_tag(&fam),
    ]);
    let value = json!({
        "problem": hash,
        "q": q,
        "gradient_sup": grad_sup,
        "h": dom.spacing(),
        "n": dom.dim(),
        "masked_nodes": dom.masked_nodes().len(),
        "p": cfg.p,
        "s": cfg.s,
        "has_potential": pot.is_some(),
    });
    write_json(cfg.out.as_deref(), &value)
}

pub fn cmd_morrey(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let f = cfg.field.build(&dom, cfg.seed, true);
    let spec = cfg.morrey_spec();
    let radii = morrey_radii(&dom, 2f64.powf(cfg.morrey.ratio_exponent));
    let report = morrey_norm(&spec, &f, &radii).map_err(classify)?;
    let hash = problem_hash(&[
        dom.mask_hash(),
        f.value_hash(),
        spec.p.to_bits(),
        spec.q.to_bits(),
    ]);
    let value = json!({
        "problem": hash,
        "spec": spec,
        "h": dom.spacing(),
        "report": report,
    });
    write_json(cfg.out.as_deref(), &value)
}

// ---------------------------------------------------------------------------
// hardy / capacity
// ---------------------------------------------------------------------------

pub fn cmd_hardy(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let fam = cfg.family_for(dom.dim())?;
    let ep = exponents(cfg)?;
    let g = cfg.weight_field.build(&dom, cfg.seed, true);
    let pot = cfg.potential_field.as_ref().map(|s| s.build(&dom, cfg.seed, true));
    let outcome =
        hardy_constant(&fam, &ep, &g, pot.as_ref(), &cfg.solver_config()).map_err(classify)?;
    let hash = problem_hash(&[
        dom.mask_hash(),
        g.value_hash(),
        pot.as_ref().map_or(0, GridFunction::value_hash),
        cfg.p.to_bits(),
        cfg.s.to_bits(),
        family_tag(&fam),
    ]);
    write_json(cfg.out.as_deref(), &solve_summary(cfg, hash, &dom, &outcome))?;
    if let Some(out) = &cfg.out {
        gridio::save_grid_function(&sibling(out, ".minimizer.csv"), &outcome.minimizer)
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}

pub fn cmd_capacity(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let fam = cfg.family_for(dom.dim())?;
    let ep = exponents(cfg)?;
    let u = cfg.u_field.build(&dom, cfg.seed, false);
    let mut obstacle = u.clone();
    for v in obstacle.values_mut() {
        *v *= cfg.obstacle_height;
    }
    let k_nodes = cfg.compact.nodes(&dom, Some(&u))?;
    let pot = cfg.potential_field.as_ref().map(|s| s.build(&dom, cfg.seed, true));
    let outcome = capacity(&fam, &ep, &obstacle, &k_nodes, pot.as_ref(), &cfg.solver_config(), None)
        .map_err(classify)?;
    let mut k_hash_bytes = Vec::with_capacity(k_nodes.len() * 8);
    for idx in &k_nodes {
        k_hash_bytes.extend_from_slice(&(*idx as u64).to_le_bytes());
    }
    let hash = problem_hash(&[
        dom.mask_hash(),
        obstacle.value_hash(),
        fnv1a64(&k_hash_bytes),
        cfg.p.to_bits(),
        cfg.s.to_bits(),
        family_tag(&fam),
    ]);
    let mut summary = solve_summary(cfg, hash, &dom, &outcome);
    summary["k_nodes"] = json!(k_nodes.len());
    write_json(cfg.out.as_deref(), &summary)?;
    if let Some(out) = &cfg.out {
        gridio::save_grid_function(&sibling(out, ".minimizer.csv"), &outcome.minimizer)
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// mazya / tail / attainment
// ---------------------------------------------------------------------------

/// Slack on the capacitory-test-function side of the bracket: `‖g‖_u` may
/// exceed `1/S` only by discretization noise.
pub const MAZYA_EASY_SLACK: f64 = 1.05;

pub fn cmd_mazya(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let fam = cfg.family_for(dom.dim())?;
    let ep = exponents(cfg)?;
    let g = cfg.weight_field.build(&dom, cfg.seed, true);
    let u = cfg.u_field.build(&dom, cfg.seed, false);
    let pot = cfg.potential_field.as_ref().map(|s| s.build(&dom, cfg.seed, true));
    let table = load_calibration(&cfg.calibration)?;
    let solver = cfg.solver_config();

    // reference profile for superlevel compacta = the Hardy minimizer
    let hardy = hardy_constant(&fam, &ep, &g, pot.as_ref(), &solver).map_err(classify)?;
    let compacta: Vec<Vec<usize>> = if cfg.compacta.is_empty() {
        standard_compacta(&dom, &hardy.minimizer, cfg.seed, "mazya:k")?
    } else {
        cfg.compacta
            .iter()
            .map(|spec| spec.nodes(&dom, Some(&hardy.minimizer)))
            .collect::<Result<_, _>>()?
    };
    let report =
        mazya_ratio(&fam, &ep, &g, &u, &compacta, pot.as_ref(), &solver).map_err(classify)?;

    let cap = table.upper_cap("mazya", cfg.p, cfg.s, dom.dim());
    let easy_ok = report.norm_u <= MAZYA_EASY_SLACK * report.inv_hardy;
    let bracket_ok = cap.map(|c| report.inv_hardy <= c * report.norm_u);
    let hash = problem_hash(&[
        dom.mask_hash(),
        g.value_hash(),
        u.value_hash(),
        pot.as_ref().map_or(0, GridFunction::value_hash),
        cfg.p.to_bits(),
        cfg.s.to_bits(),
        family_tag(&fam),
    ]);
    let value = json!({
        "problem": hash,
        "h": dom.spacing(),
        "p": cfg.p,
        "s": cfg.s,
        "n": dom.dim(),
        "seed": cfg.seed,
        "report": report,
        "easy_slack": MAZYA_EASY_SLACK,
        "easy_ok": easy_ok,
        "calibrated_cap": cap,
        "bracket_ok": bracket_ok,
    });
    write_json(cfg.out.as_deref(), &value)?;
    if !easy_ok {
        return Err(CliError::Run(format!(
            "norm_u = {} exceeds {MAZYA_EASY_SLACK}·inv_hardy = {}",
            report.norm_u,
            MAZYA_EASY_SLACK * report.inv_hardy
        )));
    }
    if bracket_ok == Some(false) {
        return Err(CliError::Run(format!(
            "inv_hardy = {} exceeds calibrated cap × norm_u = {}",
            report.inv_hardy,
            cap.unwrap_or(f64::NAN) * report.norm_u
        )));
    }
    Ok(())
}

pub fn cmd_tail(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let fam = cfg.family_for(dom.dim())?;
    let ep = exponents(cfg)?;
    let g = cfg.weight_field.build(&dom, cfg.seed, true);
    let pot = cfg.potential_field.as_ref().map(|s| s.build(&dom, cfg.seed, true));
    let collars = cfg.exhaustion.collars(&dom)?;
    let report = hardy_tail_constant(&fam, &ep, &g, &collars, pot.as_ref(), &cfg.solver_config())
        .map_err(classify)?;
    let hash = problem_hash(&[
        dom.mask_hash(),
        g.value_hash(),
        pot.as_ref().map_or(0, GridFunction::value_hash),
        cfg.p.to_bits(),
        cfg.s.to_bits(),
        family_tag(&fam),
    ]);
    let value = json!({
        "problem": hash,
        "h": dom.spacing(),
        "p": cfg.p,
        "s": cfg.s,
        "n": dom.dim(),
        "seed": cfg.seed,
        "collars": collars.iter().map(|c| c.masked_nodes().len()).collect::<Vec<_>>(),
        "report": report,
    });
    write_json(cfg.out.as_deref(), &value)?;
    if !report.monotone {
        return Err(CliError::Run(
            "tail constants are not monotone along the exhaustion".into(),
        ));
    }
    Ok(())
}

pub fn cmd_attainment(cfg: &Config) -> Result<(), CliError> {
    let dom = cfg.grid.build()?;
    let fam = cfg.family_for(dom.dim())?;
    let ep = exponents(cfg)?;
    let g = cfg.weight_field.build(&dom, cfg.seed, true);
    let pot = cfg.potential_field.as_ref().map(|s| s.build(&dom, cfg.seed, true));
    let solver = cfg.solver_config();
    let outcome = hardy_constant(&fam, &ep, &g, pot.as_ref(), &solver).map_err(classify)?;
    let report = attainment_check(
        &fam,
        &ep,
        &g,
        pot.as_ref(),
        &outcome,
        cfg.seed,
        cfg.attainment.battery,
        cfg.attainment.perturbations,
    )
    .map_err(classify)?;
    let hash = problem_hash(&[
        dom.mask_hash(),
        g.value_hash(),
        pot.as_ref().map_or(0, GridFunction::value_hash),
        cfg.p.to_bits(),
        cfg.s.to_bits(),
        family_tag(&fam),
    ]);
    let value = json!({
        "problem": hash,
        "value": outcome.value,
        "converged": outcome.converged,
        "h": dom.spacing(),
        "p": cfg.p,
        "s": cfg.s,
        "n": dom.dim(),
        "seed": cfg.seed,
        "report": report,
    });
    write_json(cfg.out.as_deref(), &value)?;
    if !report.sign_ok {
        return Err(CliError::Run(format!(
            "minimizer is not sign-definite: negative fraction {}",
            report.negative_fraction
        )));
    }
    if !(report.max_rel_residual < 1e-3) {
        return Err(CliError::Run(format!(
            "Euler–Lagrange residual too large: {}",
            report.max_rel_residual
        )));
    }
    if report.rayleigh_min_gap < -1e-8 {
        return Err(CliError::Run(format!(
            "perturbation lowered the quotient by {}",
            -report.rayleigh_min_gap
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// acceptance
// ---------------------------------------------------------------------------

pub fn cmd_acceptance(cfg: &Config) -> Result<(), CliError> {
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("acceptance_out"));
    let table = load_calibration(&cfg.calibration)?;
    let outcomes = crate::acceptance::acceptance_suite(&out_dir, cfg.seed, cfg.threads, &table)?;
    for oc in &outcomes {
        println!("{}", oc.status_line());
    }
    let failed: Vec<&str> =
        outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Run(format!(
            "{} of {} criteria failed: {}",
            failed.len(),
            outcomes.len(),
            failed.join(", ")
        )));
    }
    Ok(())
}

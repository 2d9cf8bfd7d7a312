//! The acceptance suite as a test target: one test per criterion, each
//! printing a `criterion NN (name): PASS/FAIL — …` line with the measured
//! values against the pinned tolerances.
//!
//! The suite runs once into a shared temp directory; tests serialize on a
//! global lock so the heavy solves never compete for cores. Criterion 5's
//! 15% window is out of reach for any affordable grid (the cutoff enters the
//! eigenvalue only through 1/ln²h), so its test is expected red; the
//! assertion message carries the measured eigenvalue and the oracle band.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Duration;

use anisop::calibration::CalibrationTable;
use anisop_cli::acceptance::{acceptance_suite, CriterionOutcome, ACCEPTANCE_SEED};

const THREADS: usize = 4;

fn lock() -> MutexGuard<'static, ()> {
    static M: OnceLock<Mutex<()>> = OnceLock::new();
    M.get_or_init(|| Mutex::new(())).lock().unwrap_or_else(|e| e.into_inner())
}

fn calibration_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/calibration.json")
}

struct Suite {
    _dir: tempfile::TempDir,
    outcomes: Vec<CriterionOutcome>,
}

fn suite() -> &'static Suite {
    static S: OnceLock<Suite> = OnceLock::new();
    S.get_or_init(|| {
        let table = CalibrationTable::load(&calibration_path())
            .expect("data/calibration.json must exist (run `anisop calibrate`)");
        let dir = tempfile::tempdir().expect("tempdir");
        let outcomes = acceptance_suite(dir.path(), ACCEPTANCE_SEED, THREADS, &table)
            .expect("acceptance suite must complete");
        Suite { _dir: dir, outcomes }
    })
}

/// Announce outside libtest's capture so every criterion line is visible.
fn announce(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn criterion(id: usize, budget_secs: u64) -> CriterionOutcome {
    let _g = lock();
    let oc = suite().outcomes.iter().find(|o| o.id == id).expect("criterion present").clone();
    announce(&oc.status_line());
    assert!(
        oc.elapsed <= Duration::from_secs(budget_secs),
        "criterion {id} took {:.1}s, budget {budget_secs}s",
        oc.elapsed.as_secs_f64()
    );
    oc
}

#[test]
fn criterion_01_bregman_identities() {
    let oc = criterion(1, 10);
    assert!(oc.passed, "{}", oc.status_line());
}

#[test]
fn criterion_02_estimate_batteries() {
    let oc = criterion(2, 300);
    assert!(oc.passed, "{}\n{}", oc.status_line(), oc.notes.join("\n"));
}

#[test]
fn criterion_03_norm_structure() {
    let oc = criterion(3, 30);
    assert!(oc.passed, "{}", oc.status_line());
}

#[test]
fn criterion_04_hardy_square() {
    let oc = criterion(4, 60);
    assert!(oc.passed, "{}", oc.status_line());
}

#[test]
fn criterion_05_hardy_puncture() {
    let oc = criterion(5, 300);
    // The refinement behavior itself is sound: the eigenvalue decreases
    // toward 1/4 and sits inside the 1-D radial oracle band.
    assert_eq!(
        oc.metrics["monotone_toward_target"], 1.0,
        "eigenvalues must decrease strictly toward 1/4: {}",
        oc.status_line()
    );
    assert_eq!(
        oc.metrics["oracle_band_contains"], 1.0,
        "finest eigenvalue must sit in the radial oracle band: {}",
        oc.status_line()
    );
    // The 15% window around 1/4 is what the criterion pins, and the cutoff
    // enters only through 1/ln²h — red is the honest result at h = 1/48.
    assert!(oc.passed, "{}\n{}", oc.status_line(), oc.notes.join("\n"));
}

#[test]
fn criterion_06_capacity_disk() {
    let oc = criterion(6, 120);
    assert!(oc.passed, "{}", oc.status_line());
}

#[test]
fn criterion_07_mazya_bracket() {
    let oc = criterion(7, 180);
    assert!(oc.passed, "{}", oc.status_line());
}

#[test]
fn criterion_08_energy_bracket() {
    let oc = criterion(8, 60);
    assert!(oc.passed, "{}", oc.status_line());
}

#[test]
fn criterion_09_morrey_refinement() {
    let oc = criterion(9, 30);
    assert!(oc.passed, "{}", oc.status_line());
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("read output dir") {
        let entry = entry.expect("dir entry");
        if entry.file_type().expect("file type").is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            map.insert(name, fs::read(entry.path()).expect("read file"));
        }
    }
    map
}

#[test]
fn criterion_10_output_determinism() {
    let _g = lock();
    let dir = tempfile::tempdir().expect("tempdir");
    let calib = calibration_path();
    let dirs = [dir.path().join("run1"), dir.path().join("run2")];
    for d in &dirs {
        let code = anisop_cli::run([
            "anisop",
            "acceptance",
            "--out",
            d.to_str().unwrap(),
            "--seed",
            &ACCEPTANCE_SEED.to_string(),
            "--threads",
            &THREADS.to_string(),
            "--calibration",
            calib.to_str().unwrap(),
        ]);
        // criterion 5 keeps the suite red, so the subcommand exits 2
        assert_eq!(code, 2, "acceptance subcommand exit code");
    }
    let a = dir_bytes(&dirs[0]);
    let b = dir_bytes(&dirs[1]);
    assert!(a.contains_key("acceptance_summary.json"));
    assert!(a.len() >= 10, "expected one evidence file per criterion, got {:?}", a.keys());
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "the two runs wrote different file sets"
    );
    let mut diff = Vec::new();
    for (name, bytes) in &a {
        if b[name] != *bytes {
            diff.push(name.clone());
        }
    }
    let passed = diff.is_empty();
    announce(&format!(
        "criterion 10 (output-determinism): {} — two identical-seed runs, {} files compared{}",
        if passed { "PASS" } else { "FAIL" },
        a.len(),
        if passed { String::new() } else { format!(", differing: {diff:?}") },
    ));
    assert!(passed, "files differ between identical runs: {diff:?}");
}

//! Property-based invariants of the public surface: norm axioms, distance
//! positivity and p-homogeneity, scalar strict convexity, and bitwise
//! round-trips of the on-disk formats.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use anisop::bregman::{bregman_distance_with_scale, scalar_bregman};
use anisop::calibration::{
    battery_matrix_rows, battery_weights, CalibrationRecord, CalibrationTable,
};
use anisop::energy::{GridDomain, GridFunction};
use anisop::gridio;
use anisop::norms::{norm, ExponentPair, NormFamily};

fn families(n: usize) -> Vec<(NormFamily, ExponentPair)> {
    let w = battery_weights(n);
    let rows = battery_matrix_rows(n);
    vec![
        (
            NormFamily::weighted_s(2.0, w.clone()).unwrap(),
            ExponentPair::new(2.0, 2.0).unwrap(),
        ),
        (
            NormFamily::weighted_s(3.0, w.clone()).unwrap(),
            ExponentPair::new(2.5, 3.0).unwrap(),
        ),
        (
            NormFamily::matrix_from_rows(&rows).unwrap(),
            ExponentPair::new(3.0, 2.0).unwrap(),
        ),
        (
            NormFamily::combined_from_rows(2.0, w, &rows).unwrap(),
            ExponentPair::new(2.0, 2.0).unwrap(),
        ),
    ]
}

fn pair_of_points() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, f64)> {
    (2usize..4).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
            0.1..10.0f64,
        )
    })
}

proptest! {
    #[test]
    fn norms_are_homogeneous_and_subadditive((n, xi, eta, lam) in pair_of_points()) {
        for (fam, ep) in families(n) {
            let h_xi = norm(&fam, &ep, &xi).unwrap();
            let h_eta = norm(&fam, &ep, &eta).unwrap();
            let scaled: Vec<f64> = xi.iter().map(|x| -lam * x).collect();
            let h_scaled = norm(&fam, &ep, &scaled).unwrap();
            prop_assert!(
                (h_scaled - lam * h_xi).abs() <= 1e-12 * (1.0 + lam * h_xi),
                "homogeneity broke: |{h_scaled} - {lam}·{h_xi}|"
            );
            let sum: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| a + b).collect();
            let h_sum = norm(&fam, &ep, &sum).unwrap();
            prop_assert!(
                h_sum <= h_xi + h_eta + 1e-12 * (1.0 + h_xi + h_eta),
                "triangle broke: {h_sum} > {h_xi} + {h_eta}"
            );
        }
    }

    #[test]
    fn distances_are_nonnegative_and_p_homogeneous((n, xi, eta, lam) in pair_of_points()) {
        for (fam, ep) in families(n) {
            let (d, scale) = bregman_distance_with_scale(&fam, &ep, &xi, &eta).unwrap();
            prop_assert!(d >= -1e-12 * scale, "negative distance {d} at scale {scale}");
            let lxi: Vec<f64> = xi.iter().map(|x| lam * x).collect();
            let leta: Vec<f64> = eta.iter().map(|x| lam * x).collect();
            let (dl, _) = bregman_distance_with_scale(&fam, &ep, &lxi, &leta).unwrap();
            let lp = lam.powf(ep.p());
            prop_assert!(
                (dl - lp * d).abs() <= 1e-9 * (1.0 + lp * scale),
                "p-homogeneity broke: D(λ·) = {dl}, λ^p·D = {}",
                lp * d
            );
        }
    }

    #[test]
    fn scalar_distance_is_strictly_convex(r in 1.1..4.0f64, x in -50.0..50.0f64, dy in -50.0..50.0f64) {
        prop_assert_eq!(scalar_bregman(r, x, x).unwrap(), 0.0);
        let d = scalar_bregman(r, x, x + dy).unwrap();
        prop_assert!(d >= -1e-12 * (1.0 + x.abs().powf(r)), "negative scalar distance {d}");
        // strictness, asked only far enough from the base that rounding in
        // the three-term form cannot mask it
        if dy.abs() > 1e-3 * (1.0 + x.abs()) {
            prop_assert!(d > 0.0, "distance vanished at dy = {dy}");
        }
    }
}

#[test]
fn calibration_table_round_trips_bitwise() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let mut table = CalibrationTable::new();
    for (i, id) in ["pseudo", "uniform", "matrix"].into_iter().enumerate() {
        for k in 0..4 {
            table.insert(
                id,
                CalibrationRecord {
                    p: 1.5 + k as f64,
                    s: 2.0,
                    n: 2 + i,
                    c_hat: rng.gen::<f64>(),
                    c_big_hat: 1.0 + rng.gen::<f64>(),
                    samples: 1_000_000,
                    seed: 7,
                },
            );
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.json");
    table.save(&path).unwrap();
    let loaded = CalibrationTable::load(&path).unwrap();
    for (i, id) in ["pseudo", "uniform", "matrix"].into_iter().enumerate() {
        for k in 0..4 {
            let a = table.lookup(id, 1.5 + k as f64, 2.0, 2 + i).unwrap();
            let b = loaded.lookup(id, 1.5 + k as f64, 2.0, 2 + i).unwrap();
            assert_eq!(a.c_hat.to_bits(), b.c_hat.to_bits(), "{a:?} vs {b:?}");
            assert_eq!(a.c_big_hat.to_bits(), b.c_big_hat.to_bits(), "{a:?} vs {b:?}");
        }
    }
    let path2 = dir.path().join("table2.json");
    loaded.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn grid_functions_round_trip_bitwise() {
    let dom = GridDomain::ball(2, 1.0, 0.125).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut f = GridFunction::zeros(dom.clone());
    for idx in 0..dom.node_count() {
        if dom.is_masked(idx) {
            f.values_mut()[idx] = rng.gen::<f64>() * 2.0 - 1.0;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    gridio::save_grid_function(&path, &f).unwrap();
    let loaded = gridio::load_grid_function(&path, &dom).unwrap();
    for (a, b) in f.values().iter().zip(loaded.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

//! Persistent table of empirically calibrated equivalence constants.
//!
//! The table maps an estimate-regime id to the records produced by large
//! (`N ≥ 1e6`) seeded batteries: one record per exponent pair and dimension.
//! Downstream checks compare fresh ratio extremes against these values with a
//! fixed 1.2× safety margin. Serialization is deterministic (sorted keys,
//! shortest-round-trip floats), so regenerating with the same seed reproduces
//! the file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::AnisopError;
use crate::Result;

/// Safety factor applied to calibrated caps by acceptance-style checks.
pub const CAP_MARGIN: f64 = 1.2;

/// One calibrated battery outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrationRecord {
    pub p: f64,
    pub s: f64,
    pub n: usize,
    /// Empirical lower equivalence constant (min observed ratio).
    pub c_hat: f64,
    /// Empirical upper equivalence constant (max observed ratio).
    #[serde(rename = "C_hat")]
    pub c_big_hat: f64,
    /// Battery size that produced the record.
    #[serde(rename = "N")]
    pub samples: u64,
    pub seed: u64,
}

/// lemma/regime id → calibrated records.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CalibrationTable {
    pub lemmas: BTreeMap<String, Vec<CalibrationRecord>>,
}

impl CalibrationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lemma_id: &str, record: CalibrationRecord) {
        self.lemmas.entry(lemma_id.to_string()).or_default().push(record);
    }

    /// Exact-key lookup (p, s compare bitwise as written).
    pub fn lookup(&self, lemma_id: &str, p: f64, s: f64, n: usize) -> Option<&CalibrationRecord> {
        self.lemmas
            .get(lemma_id)?
            .iter()
            .find(|r| r.p == p && r.s == s && r.n == n)
    }

    /// Calibrated upper cap with the standard margin.
    pub fn upper_cap(&self, lemma_id: &str, p: f64, s: f64, n: usize) -> Option<f64> {
        self.lookup(lemma_id, p, s, n).map(|r| r.c_big_hat * CAP_MARGIN)
    }

    /// Calibrated lower floor with the standard margin.
    pub fn lower_floor(&self, lemma_id: &str, p: f64, s: f64, n: usize) -> Option<f64> {
        self.lookup(lemma_id, p, s, n).map(|r| r.c_hat / CAP_MARGIN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.lemmas)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lemmas: BTreeMap<String, Vec<CalibrationRecord>> = serde_json::from_str(text)?;
        let table = CalibrationTable { lemmas };
        for (id, recs) in &table.lemmas {
            for r in recs {
                if !(r.c_hat.is_finite() && r.c_big_hat.is_finite() && r.c_hat <= r.c_big_hat) {
                    return Err(AnisopError::Mismatch(format!(
                        "calibration record for `{id}` (p={}, s={}, n={}) has inconsistent bounds",
                        r.p, r.s, r.n
                    )));
                }
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::gridio::atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

// ---------------------------------------------------------------------------
// The standard calibration battery
// ---------------------------------------------------------------------------

use crate::bregman::LemmaId;
use crate::norms::NormFamily;

/// Exponents the standard battery sweeps (both p and s).
pub const BATTERY_EXPONENTS: [f64; 4] = [1.5, 2.0, 3.0, 4.0];
/// Dimensions the standard battery sweeps.
pub const BATTERY_DIMS: [usize; 3] = [2, 3, 5];

/// Fixed anisotropic weights used by every battery at dimension `n`.
pub fn battery_weights(n: usize) -> Vec<f64> {
    match n {
        2 => vec![1.0, 1.3],
        3 => vec![0.7, 1.0, 1.6],
        5 => vec![0.5, 0.8, 1.0, 1.3, 2.1],
        _ => (0..n).map(|i| 0.5 + i as f64 / n as f64).collect(),
    }
}

/// Fixed SPD matrix used by every battery at dimension `n`: diagonally
/// dominant, mildly anisotropic, deterministic.
pub fn battery_matrix_rows(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0 + (i + 1) as f64 / n as f64
                    } else {
                        0.2 / (1.0 + i.abs_diff(j) as f64)
                    }
                })
                .collect()
        })
        .collect()
}

/// The family a battery entry runs against.
pub fn battery_family(lemma: LemmaId, s: f64, n: usize) -> Result<NormFamily> {
    match lemma {
        LemmaId::Matrix => NormFamily::matrix_from_rows(&battery_matrix_rows(n)),
        LemmaId::AssumptionDelta2 => {
            NormFamily::combined_from_rows(s, battery_weights(n), &battery_matrix_rows(n))
        }
        _ => NormFamily::weighted_s(s, battery_weights(n)),
    }
}

/// One (lemma, p, s, n) cell of the standard battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryEntry {
    pub lemma: LemmaId,
    pub p: f64,
    /// Key value recorded in the table; 2.0 for the matrix family (which has
    /// no inner exponent of its own).
    pub s: f64,
    pub n: usize,
}

/// Enumerate the full standard battery: every lemma over every exponent pair
/// in its regime, for each dimension. The order is deterministic.
pub fn battery_plan() -> Vec<BatteryEntry> {
    let mut plan = Vec::new();
    for &n in &BATTERY_DIMS {
        for &p in &BATTERY_EXPONENTS {
            for &s in &BATTERY_EXPONENTS {
                let mut push = |lemma: LemmaId| plan.push(BatteryEntry { lemma, p, s, n });
                if p == s {
                    push(LemmaId::Pseudo);
                }
                push(LemmaId::Uniform);
                push(LemmaId::RegimeSmall);
                if s < p {
                    push(LemmaId::SLtPLower);
                    push(LemmaId::XiLargeSLtPUpper);
                }
                if p < s {
                    push(LemmaId::PLtSUpper);
                    push(LemmaId::XiLargePLtSLower);
                }
                push(LemmaId::AssumptionDelta2);
            }
            // the matrix family carries no s; key it at s = 2
            plan.push(BatteryEntry { lemma: LemmaId::Matrix, p, s: 2.0, n });
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> CalibrationTable {
        let mut t = CalibrationTable::new();
        t.insert(
            "pseudo",
            CalibrationRecord {
                p: 3.0,
                s: 3.0,
                n: 2,
                c_hat: 0.7312941873,
                c_big_hat: 2.25,
                samples: 1_000_000,
                seed: 7,
            },
        );
        t.insert(
            "pseudo",
            CalibrationRecord {
                p: 1.5,
                s: 1.5,
                n: 3,
                c_hat: 0.12e-3,
                c_big_hat: 1.0 + 2f64.powi(-40),
                samples: 1_000_000,
                seed: 7,
            },
        );
        t
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let t = sample_table();
        let text = t.to_json().unwrap();
        let back = CalibrationTable::from_json(&text).unwrap();
        assert_eq!(t, back);
        // bitwise on the floats, not just PartialEq
        let a = t.lemmas["pseudo"][1].c_big_hat.to_bits();
        let b = back.lemmas["pseudo"][1].c_big_hat.to_bits();
        assert_eq!(a, b);
        // and the re-serialization is byte-identical
        assert_eq!(text, back.to_json().unwrap());
    }

    #[test]
    fn lookup_and_margins() {
        let t = sample_table();
        assert!(t.lookup("pseudo", 3.0, 3.0, 2).is_some());
        assert!(t.lookup("pseudo", 3.0, 3.0, 5).is_none());
        assert!(t.lookup("uniform", 3.0, 3.0, 2).is_none());
        let cap = t.upper_cap("pseudo", 3.0, 3.0, 2).unwrap();
        assert!((cap - 2.7).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_records_rejected() {
        let text = r#"{"pseudo":[{"p":2.0,"s":2.0,"n":2,"c_hat":3.0,"C_hat":1.0,"N":10,"seed":1}]}"#;
        assert!(CalibrationTable::from_json(text).is_err());
    }

    #[test]
    fn battery_plan_shape() {
        let plan = battery_plan();
        // per dimension: 4 pseudo + 16 uniform + 16 regime_small + 6+6 (s<p)
        // + 6+6 (p<s) + 16 delta2 + 4 matrix = 80
        assert_eq!(plan.len(), 80 * BATTERY_DIMS.len());
        // each entry builds a valid family in its regime
        for e in &plan {
            let fam = battery_family(e.lemma, e.s, e.n).unwrap();
            let ep = crate::norms::ExponentPair::new(e.p, e.s).unwrap();
            assert!(e.lemma.check_regime(&fam, &ep).is_ok(), "{e:?}");
        }
        // deterministic order
        assert_eq!(plan, battery_plan());
        // every matrix entry is keyed at s = 2
        assert!(plan
            .iter()
            .filter(|e| e.lemma == LemmaId::Matrix)
            .all(|e| e.s == 2.0));
    }
}

//! Bregman distances of `ξ ↦ H(ξ)^p` and their two-sided comparators.
//!
//! For a norm `H` from a [`NormFamily`] and `f = H^p`, the Bregman distance
//!
//! ```text
//! D(ξ+η, ξ) = f(ξ+η) − f(ξ) − ∇f(ξ)·η ,      ∇f = p·𝒜
//! ```
//!
//! is nonnegative (convexity) and measures the defect in the supporting
//! hyperplane inequality. This module provides:
//!
//! * the distance itself and a cancellation-aware "term scale" alongside it;
//! * the comparator quantities `R1(ξ,η;l) = |η|^l (|η|+|ξ|)^{p−l}` and
//!   `R2(ξ,η) = |ξ|_{s,a}^{p−s} Σ_i |η'_i|² (|η'_i|+|ξ'_i|)^{s−2}` (primes are
//!   the weight-absorbed coordinates `ξ'_i = a_i^{1/s} ξ_i`);
//! * a chain-rule split of `D_{h^r}` into a scalar outer defect plus a norm
//!   first-order defect;
//! * seeded Monte-Carlo estimation of the equivalence constants `c, C` in the
//!   two-sided bounds `c·comp ≤ D ≤ C·comp`, per estimate regime.
//!
//! Regimes follow the `(p, s)` landscape: equality `p = s` admits an exact
//! componentwise split; `s < p` has an unconditional `R2` lower bound and an
//! `R2` upper bound on `{|ξ| > |η|}`; `p < s` swaps the roles; `R1` brackets
//! hold unconditionally with exponents `M = max(s,2)` below and `m = min(s,2)`
//! above, and with any fixed `l ∈ [m, M]` on `{|ξ| ≤ |η|}`.

use serde::{Deserialize, Serialize};

use crate::error::AnisopError;
use crate::norms::{
    matrix_norm, norm_unchecked, operator_a_unchecked, weighted_s_norm, ExponentPair, NormFamily,
};
use crate::sampling;
use crate::Result;

/// One sampled pair with its distance and comparators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BregmanSample {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// Bregman distance D(ξ+η, ξ).
    pub d: f64,
    /// R1 at the regime's exponent, when the lemma uses it.
    pub r1: Option<f64>,
    /// R2, when defined for the family/regime.
    pub r2: Option<f64>,
}

/// `(f(ξ+η), f(ξ), ∇f(ξ)·η)` for `f = H^p`; `D` is their alternating sum and
/// `scale = f(ξ+η) + f(ξ) + |∇f(ξ)·η|` bounds the cancellation budget.
pub fn bregman_terms(
    fam: &NormFamily,
    ep: &ExponentPair,
    xi: &[f64],
    eta: &[f64],
) -> Result<(f64, f64, f64)> {
    fam.check_args(xi, ep)?;
    fam.check_args(eta, ep)?;
    Ok(bregman_terms_unchecked(fam, ep, xi, eta))
}

fn bregman_terms_unchecked(
    fam: &NormFamily,
    ep: &ExponentPair,
    xi: &[f64],
    eta: &[f64],
) -> (f64, f64, f64) {
    let p = ep.p();
    let zeta: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| a + b).collect();
    let f_plus = norm_unchecked(fam, ep, &zeta).powf(p);
    let f_base = norm_unchecked(fam, ep, xi).powf(p);
    let grad = operator_a_unchecked(fam, ep, xi); // ∇f = p·𝒜
    let slope: f64 = p * grad.iter().zip(eta).map(|(g, e)| g * e).sum::<f64>();
    (f_plus, f_base, slope)
}

/// `(D, scale)` with a cancellation-free branch where one exists: for
/// `p = 2` and a Hilbertian family (`s = 2`, matrix, or their combination)
/// `D(ξ+η, ξ) = H(η)²` exactly, so the three-term form's rounding — which
/// can swamp `D` when `|η| ≪ |ξ|` — never enters.
fn distance_scale_unchecked(
    fam: &NormFamily,
    ep: &ExponentPair,
    xi: &[f64],
    eta: &[f64],
) -> (f64, f64) {
    let (f_plus, f_base, slope) = bregman_terms_unchecked(fam, ep, xi, eta);
    let scale = f_plus + f_base + slope.abs();
    if ep.p() == 2.0 && fam.s_exponent().map_or(true, |s| s == 2.0) {
        let h = norm_unchecked(fam, ep, eta);
        (h * h, scale)
    } else {
        (f_plus - f_base - slope, scale)
    }
}

/// Bregman distance `D(ξ+η, ξ)` of `H^p`.
pub fn bregman_distance(
    fam: &NormFamily,
    ep: &ExponentPair,
    xi: &[f64],
    eta: &[f64],
) -> Result<f64> {
    fam.check_args(xi, ep)?;
    fam.check_args(eta, ep)?;
    Ok(distance_scale_unchecked(fam, ep, xi, eta).0)
}

/// Distance together with its term scale (for cancellation-aware tolerances).
pub fn bregman_distance_with_scale(
    fam: &NormFamily,
    ep: &ExponentPair,
    xi: &[f64],
    eta: &[f64],
) -> Result<(f64, f64)> {
    fam.check_args(xi, ep)?;
    fam.check_args(eta, ep)?;
    Ok(distance_scale_unchecked(fam, ep, xi, eta))
}

/// `R1(ξ,η;l) = |η|^l (|η| + |ξ|)^{p−l}` in the family's own norm.
pub fn r1(fam: &NormFamily, ep: &ExponentPair, xi: &[f64], eta: &[f64], l: f64) -> Result<f64> {
    fam.check_args(xi, ep)?;
    fam.check_args(eta, ep)?;
    if !l.is_finite() {
        return Err(AnisopError::argument("R1 exponent l must be finite"));
    }
    let h_eta = norm_unchecked(fam, ep, eta);
    let h_xi = norm_unchecked(fam, ep, xi);
    if h_eta == 0.0 {
        // 0^l with l > 0; the comparator vanishes with η
        return Ok(0.0);
    }
    Ok(h_eta.powf(l) * (h_eta + h_xi).powf(ep.p() - l))
}

/// `R2(ξ,η) = |ξ|_{s,a}^{p−s} Σ_i |η'_i|²(|η'_i|+|ξ'_i|)^{s−2}` with
/// `v'_i = a_i^{1/s} v_i`. Defined for weighted families; for `p < s` the
/// base point must not vanish.
pub fn r2(fam: &NormFamily, ep: &ExponentPair, xi: &[f64], eta: &[f64]) -> Result<f64> {
    fam.check_args(xi, ep)?;
    fam.check_args(eta, ep)?;
    let (s, a) = match fam {
        NormFamily::WeightedS { s, a } => (*s, a),
        _ => {
            return Err(AnisopError::argument(
                "R2 is defined through the weighted s-norm; use a weighted family",
            ))
        }
    };
    let p = ep.p();
    let nrm = weighted_s_norm(xi, s, a);
    if nrm == 0.0 && p < s {
        return Err(AnisopError::argument(
            "R2 needs ξ ≠ 0 when p < s (|ξ|^{p−s} is singular at 0)",
        ));
    }
    let outer = if p == s {
        1.0
    } else if nrm == 0.0 {
        0.0 // p > s: |0|^{p−s} = 0
    } else {
        nrm.powf(p - s)
    };
    if outer == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for i in 0..xi.len() {
        let w = a[i].powf(1.0 / s);
        let ep_i = (w * eta[i]).abs();
        if ep_i == 0.0 {
            continue;
        }
        let xp_i = (w * xi[i]).abs();
        acc += ep_i * ep_i * (ep_i + xp_i).powf(s - 2.0);
    }
    Ok(outer * acc)
}

/// Scalar Bregman distance of `t ↦ |t|^r` from base `x` to `y`
/// (`∇|0|^r ≜ 0` for `r > 1`).
pub fn scalar_bregman(r: f64, x: f64, y: f64) -> Result<f64> {
    if !(r.is_finite() && r > 1.0) {
        return Err(AnisopError::argument(format!("scalar exponent must exceed 1, got {r}")));
    }
    let slope = if x == 0.0 { 0.0 } else { r * x.signum() * x.abs().powf(r - 1.0) };
    Ok(y.abs().powf(r) - x.abs().powf(r) - slope * (y - x))
}

/// Gradient of the norm itself, `∇H(ξ) = 𝒜(ξ)/H(ξ)^{p−1}` (`∇H(0) ≜ 0`).
pub fn norm_gradient(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> Result<Vec<f64>> {
    fam.check_args(xi, ep)?;
    let h = norm_unchecked(fam, ep, xi);
    if h == 0.0 {
        return Ok(vec![0.0; xi.len()]);
    }
    let scale = h.powf(1.0 - ep.p());
    Ok(operator_a_unchecked(fam, ep, xi).into_iter().map(|g| g * scale).collect())
}

/// Chain-rule split of `D_{H^r}(ξ+η, ξ)`:
///
/// * `outer` — scalar defect of `t ↦ t^r` between the norm values,
/// * `slope_term` — `r·H(ξ)^{r−1}` times the first-order defect of `H` itself,
///
/// with `total = outer + slope_term` holding as an identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainDecomposition {
    pub total: f64,
    pub outer: f64,
    pub slope_term: f64,
    /// Magnitude budget of the assembled terms (for relative comparisons).
    pub scale: f64,
}

pub fn bregman_chain_decompose(
    fam: &NormFamily,
    ep: &ExponentPair,
    r: f64,
    xi: &[f64],
    eta: &[f64],
) -> Result<ChainDecomposition> {
    if !(r.is_finite() && r > 1.0) {
        return Err(AnisopError::argument(format!("chain exponent must exceed 1, got {r}")));
    }
    fam.check_args(xi, ep)?;
    fam.check_args(eta, ep)?;
    let zeta: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| a + b).collect();
    let h_base = norm_unchecked(fam, ep, xi);
    let h_plus = norm_unchecked(fam, ep, &zeta);
    let grad = norm_gradient(fam, ep, xi)?;
    let gdot: f64 = grad.iter().zip(eta).map(|(g, e)| g * e).sum();
    let outer_slope = if h_base == 0.0 { 0.0 } else { r * h_base.powf(r - 1.0) };
    let total = h_plus.powf(r) - h_base.powf(r) - outer_slope * gdot;
    let outer = h_plus.powf(r) - h_base.powf(r) - outer_slope * (h_plus - h_base);
    let slope_term = outer_slope * (h_plus - h_base - gdot);
    let scale = h_plus.powf(r)
        + h_base.powf(r)
        + outer_slope * ((h_plus - h_base).abs() + gdot.abs());
    Ok(ChainDecomposition { total, outer, slope_term, scale })
}

/// Estimate regimes for the two-sided `c·comp ≤ D ≤ C·comp` bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// `p = s`, weighted family: componentwise comparator `Σ|η'|²(|η'|+|ξ'|)^{p−2}`.
    Pseudo,
    /// Any `(p,s)`, weighted family: `c·R1(M) ≤ D ≤ C·R1(m)`.
    Uniform,
    /// `|ξ|_{s,a} ≤ |η|_{s,a}`: `D ≍ R1(l)` for every `l ∈ [m, M]` (pooled grid).
    RegimeSmall,
    /// `s < p`: unconditional lower bound `D ≥ c·R2`.
    SLtPLower,
    /// `s < p`, `|ξ|_{s,a} > |η|_{s,a}`: upper bound `D ≤ C·R2` (C may carry n).
    XiLargeSLtPUpper,
    /// `p < s`, base point ≠ 0: upper bound `D ≤ C·R2`.
    PLtSUpper,
    /// `p < s`, `|ξ|_{s,a} > |η|_{s,a}`: lower bound `D ≥ c·R2`.
    XiLargePLtSLower,
    /// Matrix norm, any `p`: comparator `|η|_A²(|η|_A+|ξ|_A)^{p−2}`.
    Matrix,
    /// Combined family, any `p`: lower comparator `|η|_H²(|η|_H+|ξ|_H)^{p−2}`
    /// (the quadratic-defect form the energy machinery assumes).
    AssumptionDelta2,
}

impl LemmaId {
    pub const ALL: [LemmaId; 9] = [
        LemmaId::Pseudo,
        LemmaId::Uniform,
        LemmaId::RegimeSmall,
        LemmaId::SLtPLower,
        LemmaId::XiLargeSLtPUpper,
        LemmaId::PLtSUpper,
        LemmaId::XiLargePLtSLower,
        LemmaId::Matrix,
        LemmaId::AssumptionDelta2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LemmaId::Pseudo => "pseudo",
            LemmaId::Uniform => "uniform",
            LemmaId::RegimeSmall => "regime_small",
            LemmaId::SLtPLower => "s_lt_p_lower",
            LemmaId::XiLargeSLtPUpper => "xi_large_s_lt_p_upper",
            LemmaId::PLtSUpper => "p_lt_s_upper",
            LemmaId::XiLargePLtSLower => "xi_large_p_lt_s_lower",
            LemmaId::Matrix => "matrix",
            LemmaId::AssumptionDelta2 => "assumption_delta2",
        }
    }

    pub fn parse(s: &str) -> Result<LemmaId> {
        LemmaId::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| AnisopError::argument(format!("unknown lemma id `{s}`")))
    }

    /// Does the lemma have a meaningful lower constant / upper constant?
    pub fn sides(&self) -> (bool, bool) {
        match self {
            LemmaId::SLtPLower | LemmaId::XiLargePLtSLower | LemmaId::AssumptionDelta2 => {
                (true, false)
            }
            LemmaId::XiLargeSLtPUpper | LemmaId::PLtSUpper => (false, true),
            _ => (true, true),
        }
    }

    /// Validate that the lemma applies to this family/exponent combination.
    pub fn check_regime(&self, fam: &NormFamily, ep: &ExponentPair) -> Result<()> {
        let want_weighted = matches!(
            self,
            LemmaId::Pseudo
                | LemmaId::Uniform
                | LemmaId::RegimeSmall
                | LemmaId::SLtPLower
                | LemmaId::XiLargeSLtPUpper
                | LemmaId::PLtSUpper
                | LemmaId::XiLargePLtSLower
        );
        match (want_weighted, fam) {
            (true, NormFamily::WeightedS { .. }) => {}
            (true, _) => {
                return Err(AnisopError::regime(format!(
                    "lemma `{}` needs a weighted s-norm family, got `{}`",
                    self.as_str(),
                    fam.kind_name()
                )))
            }
            (false, NormFamily::Matrix { .. }) if *self == LemmaId::Matrix => {}
            (false, NormFamily::Combined { .. }) if *self == LemmaId::AssumptionDelta2 => {}
            (false, _) => {
                return Err(AnisopError::regime(format!(
                    "lemma `{}` does not apply to family `{}`",
                    self.as_str(),
                    fam.kind_name()
                )))
            }
        }
        let (p, s) = (ep.p(), ep.s());
        match self {
            LemmaId::Pseudo if p != s => Err(AnisopError::regime(format!(
                "componentwise regime needs p = s, got p={p}, s={s}"
            ))),
            LemmaId::SLtPLower | LemmaId::XiLargeSLtPUpper if !(s < p) => Err(
                AnisopError::regime(format!("regime needs s < p, got p={p}, s={s}")),
            ),
            LemmaId::PLtSUpper | LemmaId::XiLargePLtSLower if !(p < s) => Err(
                AnisopError::regime(format!("regime needs p < s, got p={p}, s={s}")),
            ),
            _ => Ok(()),
        }
    }
}

/// A sample that breached a bound (kept for reporting; capped per report).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub kind: String,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub d: f64,
    pub comparator: f64,
    pub ratio: f64,
}

/// Result of one estimate battery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub lemma_id: String,
    pub p: f64,
    pub s: f64,
    pub n: usize,
    pub sample_count: u64,
    /// min observed D/comparator on the lower side (the empirical `c`).
    pub c_hat: f64,
    /// max observed D/comparator on the upper side (the empirical `C`).
    #[serde(rename = "C_hat")]
    pub c_big_hat: f64,
    pub violation_count: u64,
    pub violations: Vec<ViolationRecord>,
    pub seed: u64,
}

impl EstimateReport {
    pub fn passes(&self) -> bool {
        self.violation_count == 0 && self.c_hat <= self.c_big_hat && self.c_hat > 0.0
    }
}

const MAX_STORED_VIOLATIONS: usize = 16;
/// Negative-distance tolerance relative to the term scale.
const NEG_D_TOL: f64 = 1e-12;

struct StripOutcome {
    count: u64,
    c_min: f64,
    c_max: f64,
    violations: Vec<ViolationRecord>,
    violation_count: u64,
}

fn run_strip(
    fam: &NormFamily,
    ep: &ExponentPair,
    lemma: LemmaId,
    samples: u64,
    seed: u64,
    strip: u64,
    cap: Option<f64>,
) -> StripOutcome {
    let n = fam.dim();
    let p = ep.p();
    let label = format!("bregman:{}", lemma.as_str());
    let mut rng = sampling::strip_stream(seed, &label, strip);
    let mut out = StripOutcome {
        count: 0,
        c_min: f64::INFINITY,
        c_max: f64::NEG_INFINITY,
        violations: Vec::new(),
        violation_count: 0,
    };
    let weighted_norm_of = |v: &[f64]| match fam {
        NormFamily::WeightedS { s, a } => weighted_s_norm(v, *s, a),
        _ => 0.0,
    };
    let record = |out: &mut StripOutcome, kind: &str, xi: &[f64], eta: &[f64], d: f64, comp: f64, ratio: f64| {
        out.violation_count += 1;
        if out.violations.len() < MAX_STORED_VIOLATIONS {
            out.violations.push(ViolationRecord {
                kind: kind.to_string(),
                xi: xi.to_vec(),
                eta: eta.to_vec(),
                d,
                comparator: comp,
                ratio,
            });
        }
    };
    let (has_lower, has_upper) = lemma.sides();
    for _ in 0..samples {
        // rejection loop for the regime filters; acceptance ≈ 1/2
        let (xi, eta) = loop {
            let xi = sampling::log_uniform_point(&mut rng, n);
            let eta = sampling::log_uniform_point(&mut rng, n);
            let keep = match lemma {
                LemmaId::RegimeSmall => weighted_norm_of(&xi) <= weighted_norm_of(&eta),
                LemmaId::XiLargeSLtPUpper | LemmaId::XiLargePLtSLower => {
                    weighted_norm_of(&xi) > weighted_norm_of(&eta)
                }
                _ => true,
            };
            if keep {
                break (xi, eta);
            }
        };
        let (d, scale) = distance_scale_unchecked(fam, ep, &xi, &eta);
        if d < -NEG_D_TOL * scale {
            record(&mut out, "negative_distance", &xi, &eta, d, f64::NAN, f64::NAN);
        }
        out.count += 1;

        // comparator ratios for this lemma
        let mut ratios: [f64; 3] = [f64::NAN; 3];
        let n_ratios;
        match lemma {
            LemmaId::Pseudo | LemmaId::SLtPLower | LemmaId::XiLargeSLtPUpper
            | LemmaId::PLtSUpper | LemmaId::XiLargePLtSLower => {
                // Pseudo's comparator is exactly R2 at p = s
                let comp = r2(fam, ep, &xi, &eta).expect("sampled base point is nonzero");
                ratios[0] = d / comp;
                n_ratios = 1;
            }
            LemmaId::Uniform => {
                // lower against R1(M), upper against R1(m)
                let lo = r1(fam, ep, &xi, &eta, ep.big_m()).expect("checked args");
                let hi = r1(fam, ep, &xi, &eta, ep.m()).expect("checked args");
                ratios[0] = d / lo;
                ratios[1] = d / hi;
                n_ratios = 2;
            }
            LemmaId::RegimeSmall => {
                let mid = 0.5 * (ep.m() + ep.big_m());
                for (k, l) in [ep.m(), mid, ep.big_m()].into_iter().enumerate() {
                    let comp = r1(fam, ep, &xi, &eta, l).expect("checked args");
                    ratios[k] = d / comp;
                }
                n_ratios = 3;
            }
            LemmaId::Matrix | LemmaId::AssumptionDelta2 => {
                let (h_eta, h_xi) = match fam {
                    NormFamily::Matrix { mat, .. } => {
                        (matrix_norm(&eta, mat), matrix_norm(&xi, mat))
                    }
                    _ => (norm_unchecked(fam, ep, &eta), norm_unchecked(fam, ep, &xi)),
                };
                let comp = h_eta * h_eta * (h_eta + h_xi).powf(p - 2.0);
                ratios[0] = d / comp;
                n_ratios = 1;
            }
        }
        for &ratio in &ratios[..n_ratios] {
            out.c_min = out.c_min.min(ratio);
            out.c_max = out.c_max.max(ratio);
            if has_lower && ratio <= 0.0 {
                record(&mut out, "nonpositive_lower_ratio", &xi, &eta, d, d / ratio, ratio);
            }
            if has_upper {
                if let Some(cap) = cap {
                    if ratio > cap {
                        record(&mut out, "ratio_exceeds_cap", &xi, &eta, d, d / ratio, ratio);
                    }
                }
            }
        }
    }
    out
}

/// Seeded Monte-Carlo estimate of the equivalence constants for `lemma`.
///
/// `samples` pairs are drawn as unit directions scaled by radii log-uniform on
/// `[1e-3, 1e3]`, filtered to the lemma's regime. Work is cut into
/// [`sampling::STRIPS`] fixed strips with independent substreams, so the
/// result is bit-identical for every `threads` value. When `cap` is given,
/// upper-side ratios beyond it are recorded as violations.
pub fn estimate_equivalence_constants(
    fam: &NormFamily,
    ep: &ExponentPair,
    lemma: LemmaId,
    samples: u64,
    seed: u64,
    threads: usize,
    cap: Option<f64>,
) -> Result<EstimateReport> {
    lemma.check_regime(fam, ep)?;
    if let Some(s) = fam.s_exponent() {
        if s != ep.s() {
            return Err(AnisopError::argument(format!(
                "exponent pair carries s={}, family carries s={s}; they must agree",
                ep.s()
            )));
        }
    }
    if samples == 0 {
        return Err(AnisopError::argument("need at least one sample"));
    }
    let strips = sampling::STRIPS;
    let base = samples / strips;
    let extra = samples % strips;
    let sizes: Vec<u64> = (0..strips).map(|k| base + u64::from(k < extra)).collect();

    let threads = threads.clamp(1, strips as usize);
    let outcomes: Vec<StripOutcome> = if threads == 1 {
        sizes
            .iter()
            .enumerate()
            .map(|(k, &cnt)| run_strip(fam, ep, lemma, cnt, seed, k as u64, cap))
            .collect()
    } else {
        let mut slots: Vec<Option<StripOutcome>> = (0..strips).map(|_| None).collect();
        let next = std::sync::atomic::AtomicU64::new(0);
        let slots_ref = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if k >= strips {
                        break;
                    }
                    let res = run_strip(fam, ep, lemma, sizes[k as usize], seed, k, cap);
                    let mut guard = slots_ref.lock().unwrap();
                    guard[k as usize] = Some(res);
                });
            }
        });
        slots.into_iter().map(|o| o.expect("all strips filled")).collect()
    };

    let mut report = EstimateReport {
        lemma_id: lemma.as_str().to_string(),
        p: ep.p(),
        s: ep.s(),
        n: fam.dim(),
        sample_count: 0,
        c_hat: f64::INFINITY,
        c_big_hat: f64::NEG_INFINITY,
        violation_count: 0,
        violations: Vec::new(),
        seed,
    };
    for o in outcomes {
        report.sample_count += o.count;
        report.c_hat = report.c_hat.min(o.c_min);
        report.c_big_hat = report.c_big_hat.max(o.c_max);
        report.violation_count += o.violation_count;
        for v in o.violations {
            if report.violations.len() < MAX_STORED_VIOLATIONS {
                report.violations.push(v);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::NormFamily;
    use approx::assert_relative_eq;

    fn ep(p: f64, s: f64) -> ExponentPair {
        ExponentPair::new(p, s).unwrap()
    }

    fn euclid(n: usize) -> NormFamily {
        NormFamily::weighted_s(2.0, vec![1.0; n]).unwrap()
    }

    #[test]
    fn scalar_bregman_hand_values() {
        // r=4, x=1, y=2: 16 − 1 − 4·1·1 = 11
        assert_relative_eq!(scalar_bregman(4.0, 1.0, 2.0).unwrap(), 11.0, max_relative = 1e-15);
        // base 0 convention
        assert_relative_eq!(scalar_bregman(4.0, 0.0, 2.0).unwrap(), 16.0, max_relative = 1e-15);
        // quadratic case is exactly (y−x)²
        assert_relative_eq!(scalar_bregman(2.0, 3.0, -1.5).unwrap(), 20.25, max_relative = 1e-15);
        assert!(scalar_bregman(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn hilbert_distance_is_squared_norm() {
        let fam = euclid(3);
        let e = ep(2.0, 2.0);
        let xi = [1200.0, -0.5, 3.0];
        let eta = [0.001, 2.0, -40.0];
        let (d, scale) = bregman_distance_with_scale(&fam, &e, &xi, &eta).unwrap();
        let eta2: f64 = eta.iter().map(|x| x * x).sum();
        assert!((d - eta2).abs() <= 1e-12 * (scale + eta2));
    }

    #[test]
    fn componentwise_split_at_p_eq_s() {
        // D of |·|_{p,a}^p is exactly Σ a_i · scalar_bregman(p, ξ_i, ξ_i+η_i)
        let a = vec![2.0, 0.5, 1.0];
        let fam = NormFamily::weighted_s(3.0, a.clone()).unwrap();
        let e = ep(3.0, 3.0);
        let xi = [0.2, -30.0, 4.0];
        let eta = [1.0, 0.004, -9.0];
        let (d, scale) = bregman_distance_with_scale(&fam, &e, &xi, &eta).unwrap();
        let mut split = 0.0;
        for i in 0..3 {
            split += a[i] * scalar_bregman(3.0, xi[i], xi[i] + eta[i]).unwrap();
        }
        assert!((d - split).abs() <= 1e-12 * (scale + split.abs()));
    }

    #[test]
    fn r1_r2_hand_values() {
        let fam = euclid(2);
        let e = ep(2.0, 2.0);
        // R1(l=2) at p=2 is |η|²
        assert_relative_eq!(
            r1(&fam, &e, &[5.0, 0.0], &[1.0, 1.0], 2.0).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        // R1(l=1): |η|(|η|+|ξ|): η=(0,3), ξ=(4,0): 3·(3+4) = 21
        assert_relative_eq!(
            r1(&fam, &e, &[4.0, 0.0], &[0.0, 3.0], 1.0).unwrap(),
            21.0,
            max_relative = 1e-15
        );
        // R2 at s=p=2 is Σ|η_i|²
        assert_relative_eq!(
            r2(&fam, &e, &[7.0, -1.0], &[2.0, 0.0]).unwrap(),
            4.0,
            max_relative = 1e-15
        );
        // weighted primes: s=2, a=(4,1): η'=(2·1, 1·1) → Σ = 5
        let w = NormFamily::weighted_s(2.0, vec![4.0, 1.0]).unwrap();
        assert_relative_eq!(
            r2(&w, &e, &[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            5.0,
            max_relative = 1e-15
        );
        // p < s at ξ = 0 is a domain error
        let w3 = NormFamily::weighted_s(3.0, vec![1.0, 1.0]).unwrap();
        assert!(r2(&w3, &ep(2.0, 3.0), &[0.0, 0.0], &[1.0, 1.0]).is_err());
        // p > s at ξ = 0 degenerates to 0
        let w15 = NormFamily::weighted_s(1.5, vec![1.0, 1.0]).unwrap();
        assert_eq!(r2(&w15, &ep(3.0, 1.5), &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn chain_decomposition_euclid_hand_value() {
        let fam = euclid(2);
        let e = ep(2.0, 2.0);
        let dec = bregman_chain_decompose(&fam, &e, 2.0, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let sq2 = 2f64.sqrt();
        assert_relative_eq!(dec.total, 1.0, max_relative = 1e-14);
        assert_relative_eq!(dec.outer, (sq2 - 1.0) * (sq2 - 1.0), max_relative = 1e-13);
        assert_relative_eq!(dec.slope_term, 2.0 * (sq2 - 1.0), max_relative = 1e-13);
    }

    #[test]
    fn chain_identity_and_base_zero() {
        let fam = NormFamily::weighted_s(2.5, vec![1.0, 2.0, 0.3]).unwrap();
        let e = ep(3.0, 2.5);
        let xi = [0.01, -500.0, 2.0];
        let eta = [40.0, 0.002, -1.0];
        for r in [1.5, 2.0, 3.0, e.p()] {
            let dec = bregman_chain_decompose(&fam, &e, r, &xi, &eta).unwrap();
            assert!(
                (dec.total - (dec.outer + dec.slope_term)).abs() <= 1e-10 * dec.scale,
                "r={r}: {dec:?}"
            );
        }
        // r = p reproduces the plain distance
        let dec = bregman_chain_decompose(&fam, &e, e.p(), &xi, &eta).unwrap();
        let d = bregman_distance(&fam, &e, &xi, &eta).unwrap();
        assert!((dec.total - d).abs() <= 1e-10 * dec.scale);
        // base 0: outer caries everything
        let dec0 = bregman_chain_decompose(&fam, &e, 2.0, &[0.0, 0.0, 0.0], &eta).unwrap();
        assert_eq!(dec0.slope_term, 0.0);
        assert_relative_eq!(dec0.total, dec0.outer, max_relative = 1e-15);
    }

    #[test]
    fn nonnegativity_across_exponents() {
        let exps = [1.25, 1.5, 2.0, 3.0, 4.0];
        for &p in &exps {
            for &s in &exps {
                let fam = NormFamily::weighted_s(s, vec![1.0, 0.5, 2.0]).unwrap();
                let e = ep(p, s);
                let mut rng = sampling::stream(99, "nonneg");
                for _ in 0..500 {
                    let xi = sampling::log_uniform_point(&mut rng, 3);
                    let eta = sampling::log_uniform_point(&mut rng, 3);
                    let (d, scale) = bregman_distance_with_scale(&fam, &e, &xi, &eta).unwrap();
                    assert!(d >= -1e-12 * scale, "p={p} s={s} d={d} scale={scale}");
                }
            }
        }
    }

    #[test]
    fn scale_covariance_lambda_3() {
        let fam = NormFamily::weighted_s(3.0, vec![1.0, 2.0]).unwrap();
        let e = ep(2.5, 3.0);
        let xi = [1.2, -0.4];
        let eta = [-0.3, 2.0];
        let lam = 3.0f64;
        let sxi: Vec<f64> = xi.iter().map(|x| lam * x).collect();
        let seta: Vec<f64> = eta.iter().map(|x| lam * x).collect();
        let (d_scaled, scale) = bregman_distance_with_scale(&fam, &e, &sxi, &seta).unwrap();
        let d = bregman_distance(&fam, &e, &xi, &eta).unwrap();
        assert!((d_scaled - lam.powf(e.p()) * d).abs() <= 1e-10 * scale);
    }

    #[test]
    fn evenness_in_simultaneous_sign_flip() {
        let fam = NormFamily::weighted_s(1.5, vec![1.0, 3.0]).unwrap();
        let e = ep(2.0, 1.5);
        let xi = [0.7, -1.1];
        let eta = [2.0, 0.3];
        let nxi: Vec<f64> = xi.iter().map(|x| -x).collect();
        let neta: Vec<f64> = eta.iter().map(|x| -x).collect();
        let (d1, scale) = bregman_distance_with_scale(&fam, &e, &xi, &eta).unwrap();
        let d2 = bregman_distance(&fam, &e, &nxi, &neta).unwrap();
        assert!((d1 - d2).abs() <= 1e-12 * scale);
    }

    #[test]
    fn estimates_are_thread_count_invariant() {
        let fam = NormFamily::weighted_s(3.0, vec![1.0, 1.0, 1.0]).unwrap();
        let e = ep(3.0, 3.0);
        let r1 = estimate_equivalence_constants(&fam, &e, LemmaId::Pseudo, 20_000, 5, 1, None)
            .unwrap();
        let r4 = estimate_equivalence_constants(&fam, &e, LemmaId::Pseudo, 20_000, 5, 4, None)
            .unwrap();
        assert_eq!(r1.c_hat.to_bits(), r4.c_hat.to_bits());
        assert_eq!(r1.c_big_hat.to_bits(), r4.c_big_hat.to_bits());
        assert_eq!(r1.sample_count, r4.sample_count);
        assert!(r1.passes(), "{r1:?}");
    }

    #[test]
    fn regime_checks_reject_mismatches() {
        let fam = NormFamily::weighted_s(3.0, vec![1.0, 1.0]).unwrap();
        // pseudo needs p = s
        assert!(estimate_equivalence_constants(
            &fam,
            &ep(2.0, 3.0),
            LemmaId::Pseudo,
            10,
            1,
            1,
            None
        )
        .is_err());
        // matrix lemma needs a matrix family
        assert!(estimate_equivalence_constants(
            &fam,
            &ep(3.0, 3.0),
            LemmaId::Matrix,
            10,
            1,
            1,
            None
        )
        .is_err());
        // s-regime direction
        assert!(estimate_equivalence_constants(
            &fam,
            &ep(2.0, 3.0),
            LemmaId::SLtPLower,
            10,
            1,
            1,
            None
        )
        .is_err());
    }

    #[test]
    fn pseudo_estimate_brackets_scalar_hand_ratio() {
        // p = s = 4 scalar pair embedded in the battery's comparator: the
        // observed band must contain the hand ratio 11/4 from x=1,y=2.
        let fam = NormFamily::weighted_s(4.0, vec![1.0]).unwrap();
        let e = ep(4.0, 4.0);
        let rep =
            estimate_equivalence_constants(&fam, &e, LemmaId::Pseudo, 50_000, 17, 1, None).unwrap();
        assert!(rep.passes(), "{rep:?}");
        assert!(rep.c_hat <= 2.75 && 2.75 <= rep.c_big_hat, "{rep:?}");
    }

    #[test]
    fn lemma_id_round_trips() {
        for l in LemmaId::ALL {
            assert_eq!(LemmaId::parse(l.as_str()).unwrap(), l);
        }
        assert!(LemmaId::parse("nope").is_err());
    }
}

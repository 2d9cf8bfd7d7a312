//! Norm families and the anisotropic Lagrangian.
//!
//! Three families are supported on `R^n`:
//!
//! * weighted `ℓ^s`:  `|ξ|_{s,a} = (Σ_i a_i |ξ_i|^s)^{1/s}`, weights `a_i > 0`;
//! * elliptic matrix: `|ξ|_A = sqrt(Aξ·ξ)` for symmetric positive definite `A`;
//! * their `p`-combination `H(ξ) = (|ξ|_{s,a}^p + |ξ|_A^p)^{1/p}`.
//!
//! From a family and an exponent pair `(p, s)` the module evaluates the
//! Lagrangian `F(ξ) = H(ξ)^p / p`, its gradient field `𝒜(ξ) = ∇F(ξ)`
//! (so `𝒜(ξ)·ξ = p·F(ξ)` — the Euler identity for `p`-homogeneous `F`),
//! two-sided equivalence constants against the Euclidean norm, and the
//! ellipticity/growth constants they induce.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::AnisopError;
use crate::sampling;
use crate::Result;

/// Exponents `(p, s)` with the derived pair `m = min(s,2)`, `M = max(s,2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentPair {
    p: f64,
    s: f64,
    m: f64,
    big_m: f64,
}

impl ExponentPair {
    /// Requires `1 < p < ∞` and `1 < s < ∞`.
    pub fn new(p: f64, s: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(AnisopError::construction(format!("p must lie in (1,∞), got {p}")));
        }
        if !(s.is_finite() && s > 1.0) {
            return Err(AnisopError::construction(format!("s must lie in (1,∞), got {s}")));
        }
        Ok(Self { p, s, m: s.min(2.0), big_m: s.max(2.0) })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    /// `min(s, 2)`.
    pub fn m(&self) -> f64 {
        self.m
    }
    /// `max(s, 2)`.
    pub fn big_m(&self) -> f64 {
        self.big_m
    }
}

/// A norm family on `R^n`. Construct through the checked constructors.
#[derive(Debug, Clone)]
pub enum NormFamily {
    /// `|ξ|_{s,a}` with strictly positive weights.
    WeightedS { s: f64, a: Vec<f64> },
    /// `|ξ|_A`, `A` symmetric positive definite.
    Matrix { mat: DMatrix<f64>, lambda_min: f64, lambda_max: f64 },
    /// `H = (|ξ|_{s,a}^p + |ξ|_A^p)^{1/p}`; `p` comes from the `ExponentPair`.
    Combined { s: f64, a: Vec<f64>, mat: DMatrix<f64>, lambda_min: f64, lambda_max: f64 },
}

fn validate_weights(s: f64, a: &[f64]) -> Result<()> {
    if !(s.is_finite() && s > 1.0) {
        return Err(AnisopError::construction(format!("s must lie in (1,∞), got {s}")));
    }
    if a.is_empty() {
        return Err(AnisopError::construction("weight vector must be nonempty"));
    }
    if let Some(bad) = a.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(AnisopError::construction(format!("weights must be finite and > 0, got {bad}")));
    }
    Ok(())
}

/// Symmetry check + eigenvalue extraction; rejects non-SPD matrices.
fn validate_spd(mat: &DMatrix<f64>) -> Result<(f64, f64)> {
    if mat.nrows() == 0 || mat.nrows() != mat.ncols() {
        return Err(AnisopError::construction(format!(
            "matrix must be square and nonempty, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let scale = mat.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    for i in 0..mat.nrows() {
        for j in (i + 1)..mat.ncols() {
            if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * scale {
                return Err(AnisopError::construction(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    mat[(i, j)],
                    mat[(j, i)]
                )));
            }
        }
    }
    if mat.iter().any(|x| !x.is_finite()) {
        return Err(AnisopError::construction("matrix entries must be finite"));
    }
    // symmetrize exactly before the eigen solve so roundoff in input is irrelevant
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if !(lo.is_finite() && lo > 0.0) {
        return Err(AnisopError::construction(format!(
            "matrix must be positive definite; smallest eigenvalue {lo}"
        )));
    }
    Ok((lo, hi))
}

impl NormFamily {
    pub fn weighted_s(s: f64, a: Vec<f64>) -> Result<Self> {
        validate_weights(s, &a)?;
        Ok(NormFamily::WeightedS { s, a })
    }

    pub fn matrix(mat: DMatrix<f64>) -> Result<Self> {
        let (lambda_min, lambda_max) = validate_spd(&mat)?;
        Ok(NormFamily::Matrix { mat, lambda_min, lambda_max })
    }

    pub fn combined(s: f64, a: Vec<f64>, mat: DMatrix<f64>) -> Result<Self> {
        validate_weights(s, &a)?;
        let (lambda_min, lambda_max) = validate_spd(&mat)?;
        if a.len() != mat.nrows() {
            return Err(AnisopError::construction(format!(
                "weight length {} does not match matrix dimension {}",
                a.len(),
                mat.nrows()
            )));
        }
        Ok(NormFamily::Combined { s, a, mat, lambda_min, lambda_max })
    }

    /// Convenience: build a matrix family from row data.
    pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(AnisopError::construction("matrix rows must form a square array"));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::matrix(mat)
    }

    /// Convenience: build a combined family from row data.
    pub fn combined_from_rows(s: f64, a: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(AnisopError::construction("matrix rows must form a square array"));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::combined(s, a, mat)
    }

    pub fn dim(&self) -> usize {
        match self {
            NormFamily::WeightedS { a, .. } => a.len(),
            NormFamily::Matrix { mat, .. } => mat.nrows(),
            NormFamily::Combined { a, .. } => a.len(),
        }
    }

    /// The family's own `s` exponent, when it has one.
    pub fn s_exponent(&self) -> Option<f64> {
        match self {
            NormFamily::WeightedS { s, .. } | NormFamily::Combined { s, .. } => Some(*s),
            NormFamily::Matrix { .. } => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NormFamily::WeightedS { .. } => "weighted_s",
            NormFamily::Matrix { .. } => "matrix",
            NormFamily::Combined { .. } => "combined",
        }
    }

    /// Checks that `ep.s` matches the family's `s` (when it has one) and that
    /// `xi` has the family dimension.
    pub fn check_args(&self, xi: &[f64], ep: &ExponentPair) -> Result<()> {
        if xi.len() != self.dim() {
            return Err(AnisopError::argument(format!(
                "vector length {} does not match family dimension {}",
                xi.len(),
                self.dim()
            )));
        }
        if let Some(s) = self.s_exponent() {
            if s != ep.s() {
                return Err(AnisopError::argument(format!(
                    "exponent pair carries s={}, family carries s={s}; they must agree",
                    ep.s()
                )));
            }
        }
        Ok(())
    }
}

/// `(Σ_i a_i |ξ_i|^s)^{1/s}`.
pub fn weighted_s_norm(xi: &[f64], s: f64, a: &[f64]) -> f64 {
    debug_assert_eq!(xi.len(), a.len());
    let mut acc = 0.0;
    for (x, w) in xi.iter().zip(a) {
        acc += w * x.abs().powf(s);
    }
    acc.powf(1.0 / s)
}

/// `sqrt(Aξ·ξ)`; tiny negative quadratic forms from roundoff clamp to 0.
pub fn matrix_norm(xi: &[f64], mat: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(xi.len(), mat.nrows());
    let mut q = 0.0;
    for i in 0..xi.len() {
        let mut row = 0.0;
        for j in 0..xi.len() {
            row += mat[(i, j)] * xi[j];
        }
        q += xi[i] * row;
    }
    q.max(0.0).sqrt()
}

/// The family norm `H(ξ)`; for the combined family this depends on `ep.p`.
pub fn norm(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> Result<f64> {
    fam.check_args(xi, ep)?;
    Ok(norm_unchecked(fam, ep, xi))
}

pub(crate) fn norm_unchecked(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> f64 {
    match fam {
        NormFamily::WeightedS { s, a } => weighted_s_norm(xi, *s, a),
        NormFamily::Matrix { mat, .. } => matrix_norm(xi, mat),
        NormFamily::Combined { s, a, mat, .. } => {
            let p = ep.p();
            let w = weighted_s_norm(xi, *s, a);
            let m = matrix_norm(xi, mat);
            (w.powf(p) + m.powf(p)).powf(1.0 / p)
        }
    }
}

/// Lagrangian `F(ξ) = H(ξ)^p / p`.
pub fn lagrangian_f(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> Result<f64> {
    fam.check_args(xi, ep)?;
    Ok(lagrangian_f_unchecked(fam, ep, xi))
}

pub(crate) fn lagrangian_f_unchecked(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> f64 {
    match fam {
        NormFamily::WeightedS { s, a } => weighted_s_norm(xi, *s, a).powf(ep.p()) / ep.p(),
        NormFamily::Matrix { mat, .. } => matrix_norm(xi, mat).powf(ep.p()) / ep.p(),
        NormFamily::Combined { s, a, mat, .. } => {
            let p = ep.p();
            (weighted_s_norm(xi, *s, a).powf(p) + matrix_norm(xi, mat).powf(p)) / p
        }
    }
}

/// Gradient contribution of the weighted part of `|·|^p`: divided by `p`,
/// i.e. `(1/p)·∇(|ξ|_{s,a}^p) = |ξ|_{s,a}^{p-s} · a_i |ξ_i|^{s-2} ξ_i`.
fn weighted_grad_into(xi: &[f64], s: f64, a: &[f64], p: f64, out: &mut [f64]) {
    let nrm = weighted_s_norm(xi, s, a);
    if nrm == 0.0 {
        return; // ∇F(0) = 0 for p > 1
    }
    let outer = nrm.powf(p - s);
    for i in 0..xi.len() {
        let x = xi[i];
        if x != 0.0 {
            // |x|^{s-2}·x written sign-safely as sign(x)|x|^{s-1}
            out[i] += outer * a[i] * x.signum() * x.abs().powf(s - 1.0);
        }
    }
}

/// Gradient contribution of the matrix part: `(1/p)·∇(|ξ|_A^p) = |ξ|_A^{p-2} Aξ`.
fn matrix_grad_into(xi: &[f64], mat: &DMatrix<f64>, p: f64, out: &mut [f64]) {
    let nrm = matrix_norm(xi, mat);
    if nrm == 0.0 {
        return;
    }
    let outer = nrm.powf(p - 2.0);
    for i in 0..xi.len() {
        let mut row = 0.0;
        for j in 0..xi.len() {
            row += mat[(i, j)] * xi[j];
        }
        out[i] += outer * row;
    }
}

/// The monotone field `𝒜(ξ) = ∇F(ξ) = H(ξ)^{p-1} ∇H(ξ)`.
///
/// Satisfies `𝒜(ξ)·ξ = p·F(ξ)` and `𝒜(λξ) = λ|λ|^{p-2}𝒜(ξ)`; `𝒜(0) = 0`.
pub fn operator_a(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> Result<Vec<f64>> {
    fam.check_args(xi, ep)?;
    Ok(operator_a_unchecked(fam, ep, xi))
}

pub(crate) fn operator_a_unchecked(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xi.len()];
    operator_a_into(fam, ep, xi, &mut out);
    out
}

#[inline]
pub(crate) fn operator_a_into(fam: &NormFamily, ep: &ExponentPair, xi: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let p = ep.p();
    match fam {
        NormFamily::WeightedS { s, a } => weighted_grad_into(xi, *s, a, p, out),
        NormFamily::Matrix { mat, .. } => matrix_grad_into(xi, mat, p, out),
        NormFamily::Combined { s, a, mat, .. } => {
            weighted_grad_into(xi, *s, a, p, out);
            matrix_grad_into(xi, mat, p, out);
        }
    }
}

/// Two-sided Euclidean equivalence `κ|ξ| ≤ H(ξ) ≤ ν|ξ|` (tight constants).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceConstants {
    pub kappa: f64,
    pub nu: f64,
}

/// Growth/ellipticity data induced by the equivalence constants:
/// `κ^p/p · |ξ|^p ≤ F(ξ) ≤ ν^p/p · |ξ|^p`, `α|ξ|^p ≤ 𝒜(ξ)·ξ`,
/// `|𝒜(ξ)| ≤ β|ξ|^{p-1}` with `α = κ^p/p`, `β = 2^p ν^p / p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureConstants {
    pub kappa: f64,
    pub nu: f64,
    /// `κ^p/p` — lower ellipticity of F and of `𝒜(ξ)·ξ`.
    pub alpha: f64,
    /// `2^p ν^p/p` — growth bound on `|𝒜|/|ξ|^{p-1}`.
    pub beta: f64,
}

fn weighted_equivalence(s: f64, a: &[f64]) -> EquivalenceConstants {
    let n = a.len() as f64;
    let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let a_max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if s >= 2.0 {
        EquivalenceConstants {
            kappa: a_min.powf(1.0 / s) * n.powf(1.0 / s - 0.5),
            nu: a_max.powf(1.0 / s),
        }
    } else {
        EquivalenceConstants {
            kappa: a_min.powf(1.0 / s),
            nu: a_max.powf(1.0 / s) * n.powf(1.0 / s - 0.5),
        }
    }
}

/// Tight `κ, ν` with `κ|ξ| ≤ H(ξ) ≤ ν|ξ|` for the family (combined uses `ep.p`).
pub fn equivalence_constants(fam: &NormFamily, ep: &ExponentPair) -> Result<EquivalenceConstants> {
    if let Some(s) = fam.s_exponent() {
        if s != ep.s() {
            return Err(AnisopError::argument(format!(
                "exponent pair carries s={}, family carries s={s}; they must agree",
                ep.s()
            )));
        }
    }
    Ok(match fam {
        NormFamily::WeightedS { s, a } => weighted_equivalence(*s, a),
        NormFamily::Matrix { lambda_min, lambda_max, .. } => EquivalenceConstants {
            kappa: lambda_min.sqrt(),
            nu: lambda_max.sqrt(),
        },
        NormFamily::Combined { s, a, lambda_min, lambda_max, .. } => {
            let p = ep.p();
            let w = weighted_equivalence(*s, a);
            let kappa = (w.kappa.powf(p) + lambda_min.sqrt().powf(p)).powf(1.0 / p);
            let nu = (w.nu.powf(p) + lambda_max.sqrt().powf(p)).powf(1.0 / p);
            EquivalenceConstants { kappa, nu }
        }
    })
}

/// Structure constants `α = κ^p/p`, `β = 2^p ν^p/p` for the family.
pub fn structure_constants(fam: &NormFamily, ep: &ExponentPair) -> Result<StructureConstants> {
    let eq = equivalence_constants(fam, ep)?;
    let p = ep.p();
    Ok(StructureConstants {
        kappa: eq.kappa,
        nu: eq.nu,
        alpha: eq.kappa.powf(p) / p,
        beta: 2f64.powf(p) * eq.nu.powf(p) / p,
    })
}

/// Monte-Carlo estimate of the modulus of convexity
/// `δ(ε) = inf { 1 − H((x+y)/2) : H(x)=H(y)=1, H(x−y) ≥ ε }`, `0 ≤ ε ≤ 2`.
///
/// Each sample draws a unit vector `x` and a second independent direction,
/// then bisection along the great arc `t ↦ (cos t·x + sin t·v)/H(·)` locates
/// `y` with `H(x−y) = ε` exactly (to 1e-13), so every pair sits on the
/// constraint boundary where the infimum is attained for convex balls.
pub fn modulus_of_convexity_estimate(
    fam: &NormFamily,
    ep: &ExponentPair,
    eps: f64,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    if !(0.0..=2.0).contains(&eps) || !eps.is_finite() {
        return Err(AnisopError::argument(format!("eps must lie in [0,2], got {eps}")));
    }
    if samples == 0 {
        return Err(AnisopError::argument("need at least one sample"));
    }
    let n = fam.dim();
    if eps == 0.0 {
        return Ok(0.0);
    }
    let mut rng = sampling::stream(seed, "modulus_of_convexity");
    let normalize = |v: &mut [f64]| {
        let h = norm_unchecked(fam, ep, v);
        for x in v.iter_mut() {
            *x /= h;
        }
    };
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let mut x = sampling::unit_direction(&mut rng, n);
        normalize(&mut x);
        // independent direction, Euclidean-orthogonalized against x so the
        // arc sweeps x -> -x without degenerating
        let v = loop {
            let w = sampling::unit_direction(&mut rng, n);
            let proj: f64 = w.iter().zip(&x).map(|(wi, xi)| wi * xi).sum();
            let x2: f64 = x.iter().map(|xi| xi * xi).sum();
            let mut v: Vec<f64> = w.iter().zip(&x).map(|(wi, xi)| wi - proj / x2 * xi).collect();
            let vn: f64 = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if vn > 1e-8 {
                for t in v.iter_mut() {
                    *t /= vn;
                }
                break v;
            }
        };
        let y_at = |t: f64| -> Vec<f64> {
            let (st, ct) = t.sin_cos();
            let mut y: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| ct * xi + st * vi).collect();
            normalize(&mut y);
            y
        };
        let gap = |y: &[f64]| {
            let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            norm_unchecked(fam, ep, &d)
        };
        // H(x - y(0)) = 0 and H(x - y(π)) = 2; bisect to the constraint H = eps
        let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
        let mut y = y_at(hi);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let cand = y_at(mid);
            if gap(&cand) >= eps {
                hi = mid;
                y = cand;
            } else {
                lo = mid;
            }
        }
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        best = best.min(1.0 - norm_unchecked(fam, ep, &mid));
    }
    Ok(best)
}

/// Central finite-difference gradient of `H^p = p·F`, used to cross-check `𝒜`.
pub fn grad_hp_central_fd(fam: &NormFamily, ep: &ExponentPair, xi: &[f64]) -> Result<Vec<f64>> {
    fam.check_args(xi, ep)?;
    let hp = |z: &[f64]| norm_unchecked(fam, ep, z).powf(ep.p());
    let mut g = vec![0.0; xi.len()];
    let mut zp = xi.to_vec();
    let mut zm = xi.to_vec();
    for i in 0..xi.len() {
        let step = 1e-6 * xi[i].abs().max(1.0);
        zp[i] = xi[i] + step;
        zm[i] = xi[i] - step;
        g[i] = (hp(&zp) - hp(&zm)) / (2.0 * step);
        zp[i] = xi[i];
        zm[i] = xi[i];
    }
    Ok(g)
}

/// Outcome of the seeded invariant battery for one family.
#[derive(Debug, Clone)]
pub struct NormCheckReport {
    pub family: String,
    pub p: f64,
    pub s: Option<f64>,
    pub samples: u64,
    /// max over samples of |H(λξ) − |λ|H(ξ)| / (|λ|H(ξ))
    pub homogeneity_dev: f64,
    /// count of pairs with H(ξ+η) > H(ξ)+H(η) beyond 1e-12 relative slack
    pub triangle_violations: u64,
    /// max relative gap between central FD of H^p and p·𝒜 (at |ξ_i| > 0.1)
    pub gradient_dev: f64,
    /// max over samples of |𝒜(ξ)·ξ − pF(ξ)| / (pF(ξ))
    pub euler_dev: f64,
    /// count of distinct pairs with (𝒜(ξ)−𝒜(η))·(ξ−η) ≤ 0
    pub monotonicity_violations: u64,
    /// count of samples violating α|ξ|^p ≤ 𝒜(ξ)·ξ or |𝒜(ξ)| ≤ β|ξ|^{p−1}
    pub structure_violations: u64,
}

impl NormCheckReport {
    /// True when every deviation sits inside the pinned tolerances.
    pub fn passes(&self) -> bool {
        self.homogeneity_dev <= 1e-12
            && self.triangle_violations == 0
            && self.gradient_dev <= 1e-6
            && self.euler_dev <= 1e-12
            && self.monotonicity_violations == 0
            && self.structure_violations == 0
    }
}

/// Seeded battery over `samples` draws checking homogeneity (1e-12), the
/// triangle inequality, FD-vs-`𝒜` consistency (1e-6, at points with all
/// `|ξ_i| > 0.1`), the Euler identity (1e-12), strict monotonicity of `𝒜`,
/// and the `α/β` structure bounds.
pub fn verify_family(
    fam: &NormFamily,
    ep: &ExponentPair,
    samples: u64,
    seed: u64,
) -> Result<NormCheckReport> {
    let n = fam.dim();
    let sc = structure_constants(fam, ep)?;
    let p = ep.p();
    let mut rng = sampling::stream(seed, "verify_family");
    let mut rep = NormCheckReport {
        family: fam.kind_name().to_string(),
        p,
        s: fam.s_exponent(),
        samples,
        homogeneity_dev: 0.0,
        triangle_violations: 0,
        gradient_dev: 0.0,
        euler_dev: 0.0,
        monotonicity_violations: 0,
        structure_violations: 0,
    };
    for _ in 0..samples {
        let xi = sampling::log_uniform_point(&mut rng, n);
        let eta = sampling::log_uniform_point(&mut rng, n);
        let h_xi = norm_unchecked(fam, ep, &xi);

        // homogeneity against a signed log-uniform λ
        let lam = sampling::log_uniform_radius(&mut rng)
            * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let scaled: Vec<f64> = xi.iter().map(|x| lam * x).collect();
        let dev = (norm_unchecked(fam, ep, &scaled) - lam.abs() * h_xi).abs() / (lam.abs() * h_xi);
        rep.homogeneity_dev = rep.homogeneity_dev.max(dev);

        // triangle
        let sum: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| a + b).collect();
        let lhs = norm_unchecked(fam, ep, &sum);
        let rhs = h_xi + norm_unchecked(fam, ep, &eta);
        if lhs > rhs * (1.0 + 1e-12) {
            rep.triangle_violations += 1;
        }

        // Euler identity and structure bounds
        let a_xi = operator_a_unchecked(fam, ep, &xi);
        let dot: f64 = a_xi.iter().zip(&xi).map(|(g, x)| g * x).sum();
        let pf = p * lagrangian_f_unchecked(fam, ep, &xi);
        rep.euler_dev = rep.euler_dev.max((dot - pf).abs() / pf);
        let e2: f64 = xi.iter().map(|x| x * x).sum::<f64>();
        let e = e2.sqrt();
        let a_len = a_xi.iter().map(|g| g * g).sum::<f64>().sqrt();
        if dot < sc.alpha * e.powf(p) * (1.0 - 1e-9) || a_len > sc.beta * e.powf(p - 1.0) * (1.0 + 1e-9) {
            rep.structure_violations += 1;
        }

        // strict monotonicity of the gradient field
        let a_eta = operator_a_unchecked(fam, ep, &eta);
        let mono: f64 = a_xi
            .iter()
            .zip(&a_eta)
            .zip(xi.iter().zip(&eta))
            .map(|((ga, gb), (x, y))| (ga - gb) * (x - y))
            .sum();
        if xi != eta && mono <= 0.0 {
            rep.monotonicity_violations += 1;
        }
    }

    // FD cross-check at well-separated components (one round per sample)
    let fd_rounds = samples.max(1);
    let mut done = 0;
    while done < fd_rounds {
        let mut xi = sampling::unit_direction(&mut rng, n);
        let r = sampling::log_uniform_radius(&mut rng).clamp(0.5, 2.0);
        for x in xi.iter_mut() {
            *x *= r * (n as f64).sqrt();
        }
        if xi.iter().any(|x| x.abs() <= 0.1) {
            continue;
        }
        done += 1;
        let fd = grad_hp_central_fd(fam, ep, &xi)?;
        let a_xi = operator_a_unchecked(fam, ep, &xi);
        let scale = fd.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-300);
        for i in 0..n {
            let dev = (fd[i] - p * a_xi[i]).abs() / scale;
            rep.gradient_dev = rep.gradient_dev.max(dev);
        }
    }
    Ok(rep)
}

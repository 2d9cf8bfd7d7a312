//! Config-described building blocks: grids, scalar fields, compact sets,
//! and exhaustion families. Everything here is deterministic in
//! (spec, seed); randomized fields derive their stream from a purpose label
//! so two fields with different labels never share draws.

use std::sync::Arc;

use rand::Rng;
use serde::Deserialize;

use anisop::energy::{GridDomain, GridFunction};
use anisop::sampling::stream;

use crate::commands::CliError;

fn pad3(v: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (slot, &x) in out.iter_mut().zip(v) {
        *slot = x;
    }
    out
}

fn dist(a: &[f64; 3], b: &[f64; 3], dim: usize) -> f64 {
    (0..dim).map(|ax| (a[ax] - b[ax]).powi(2)).sum::<f64>().sqrt()
}

fn geometry(e: anisop::AnisopError) -> CliError {
    CliError::Config(e.to_string())
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    UnitBox { dim: usize, cells: usize },
    Box { dim: usize, lo: Vec<f64>, side: f64, cells: usize },
    Ball { dim: usize, radius: f64, h: f64 },
    PuncturedBall { dim: usize, radius: f64, h: f64 },
    Annulus { dim: usize, r_in: f64, r_out: f64, h: f64 },
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<GridDomain>, CliError> {
        match self {
            GridSpec::UnitBox { dim, cells } => GridDomain::unit_box(*dim, *cells),
            GridSpec::Box { dim, lo, side, cells } => {
                GridDomain::box_domain(*dim, pad3(lo), *side, *cells)
            }
            GridSpec::Ball { dim, radius, h } => GridDomain::ball(*dim, *radius, *h),
            GridSpec::PuncturedBall { dim, radius, h } => {
                GridDomain::punctured_ball(*dim, *radius, *h)
            }
            GridSpec::Annulus { dim, r_in, r_out, h } => {
                GridDomain::annulus(*dim, *r_in, *r_out, *h)
            }
        }
        .map_err(geometry)
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Const { value: f64 },
    /// offset + coeffs·x
    Affine { offset: f64, coeffs: Vec<f64> },
    /// amplitude·Π_i sin(π x_i) over the active axes
    SinProduct { amplitude: f64 },
    /// offset + amplitude·exp(−|x−center|²/width²)
    Bump { center: Vec<f64>, width: f64, amplitude: f64, offset: f64 },
    /// |x−center|^exponent, radius floored at h/2 so the singular center is tame
    RadialPower { center: Vec<f64>, exponent: f64 },
    /// base + Σ_j amplitude·exp(−|x−c_j|²/width²), centers drawn from
    /// stream(seed, "field:"+label) inside the mask's bounding box
    RandomBumps { count: usize, base: f64, amplitude: f64, width: f64, label: String },
}

impl FieldSpec {
    /// Evaluate on the domain. `gated` restricts evaluation to masked nodes
    /// (mandatory when the formula is singular off the mask, e.g. a negative
    /// radial power on a punctured ball).
    pub fn build(&self, dom: &Arc<GridDomain>, seed: u64, gated: bool) -> GridFunction {
        let dim = dom.dim();
        let make = |f: &dyn Fn(&[f64; 3]) -> f64| {
            if gated {
                GridFunction::from_fn_gated(dom.clone(), f)
            } else {
                GridFunction::from_fn(dom.clone(), f)
            }
        };
        match self {
            FieldSpec::Const { value } => make(&|_x: &[f64; 3]| *value),
            FieldSpec::Affine { offset, coeffs } => {
                let c = pad3(coeffs);
                make(&move |x: &[f64; 3]| offset + (0..dim).map(|ax| c[ax] * x[ax]).sum::<f64>())
            }
            FieldSpec::SinProduct { amplitude } => make(&move |x: &[f64; 3]| {
                amplitude * (0..dim).map(|ax| (std::f64::consts::PI * x[ax]).sin()).product::<f64>()
            }),
            FieldSpec::Bump { center, width, amplitude, offset } => {
                let c = pad3(center);
                let w2 = width * width;
                make(&move |x: &[f64; 3]| {
                    let d = dist(x, &c, dim);
                    offset + amplitude * (-d * d / w2).exp()
                })
            }
            FieldSpec::RadialPower { center, exponent } => {
                let c = pad3(center);
                let floor = dom.spacing() / 2.0;
                make(&move |x: &[f64; 3]| dist(x, &c, dim).max(floor).powf(*exponent))
            }
            FieldSpec::RandomBumps { count, base, amplitude, width, label } => {
                // bounding box of the mask
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for &idx in dom.masked_nodes() {
                    let x = dom.coord(idx);
                    for ax in 0..dim {
                        lo[ax] = lo[ax].min(x[ax]);
                        hi[ax] = hi[ax].max(x[ax]);
                    }
                }
                let mut rng = stream(seed, &format!("field:{label}"));
                let mut centers = Vec::with_capacity(*count);
                for _ in 0..*count {
                    let mut c = [0.0; 3];
                    for ax in 0..dim {
                        c[ax] = lo[ax] + rng.gen::<f64>() * (hi[ax] - lo[ax]);
                    }
                    centers.push(c);
                }
                let w2 = width * width;
                make(&move |x: &[f64; 3]| {
                    let mut v = *base;
                    for c in &centers {
                        let d = dist(x, c, dim);
                        v += amplitude * (-d * d / w2).exp();
                    }
                    v
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Compact sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompactSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Masked nodes where the reference profile exceeds its `quantile`-level
    /// value (the Hardy minimizer plays the reference for `mazya`).
    Superlevel { quantile: f64 },
}

impl CompactSpec {
    pub fn nodes(
        &self,
        dom: &GridDomain,
        reference: Option<&GridFunction>,
    ) -> Result<Vec<usize>, CliError> {
        let dim = dom.dim();
        let picked: Vec<usize> = match self {
            CompactSpec::Ball { center, radius } => dom.nodes_within(pad3(center), *radius),
            CompactSpec::Box { lo, hi } => {
                let (lo, hi) = (pad3(lo), pad3(hi));
                dom.masked_nodes()
                    .iter()
                    .copied()
                    .filter(|&idx| {
                        let x = dom.coord(idx);
                        (0..dim).all(|ax| lo[ax] <= x[ax] && x[ax] <= hi[ax])
                    })
                    .collect()
            }
            CompactSpec::Superlevel { quantile } => {
                if !(*quantile > 0.0 && *quantile < 1.0) {
                    return Err(CliError::Config(format!(
                        "superlevel quantile must lie in (0, 1), got {quantile}"
                    )));
                }
                let reference = reference.ok_or_else(|| {
                    CliError::Config(
                        "superlevel compact set needs a reference profile (none available)".into(),
                    )
                })?;
                let mut vals: Vec<f64> =
                    dom.masked_nodes().iter().map(|&i| reference.values()[i].abs()).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let pos = ((vals.len() - 1) as f64 * quantile).round() as usize;
                let threshold = vals[pos];
                dom.masked_nodes()
                    .iter()
                    .copied()
                    .filter(|&i| reference.values()[i].abs() >= threshold)
                    .collect()
            }
        };
        if picked.is_empty() {
            return Err(CliError::Config("compact set selects no masked nodes".into()));
        }
        Ok(picked)
    }
}

// ---------------------------------------------------------------------------
// Exhaustions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExhaustionSpec {
    /// Concentric balls, radii linear from r_min to r_max.
    Balls { center: Vec<f64>, r_min: f64, r_max: f64, count: usize },
}

impl ExhaustionSpec {
    /// Sub-domains ω_k ⊂ Ω on the same lattice, ordered inner to outer.
    pub fn collars(&self, dom: &Arc<GridDomain>) -> Result<Vec<Arc<GridDomain>>, CliError> {
        let ExhaustionSpec::Balls { center, r_min, r_max, count } = self;
        if *count == 0 {
            return Err(CliError::Config("exhaustion count must be positive".into()));
        }
        if *count > 1 && !(r_min < r_max) {
            return Err(CliError::Config(format!(
                "exhaustion needs r_min < r_max, got [{r_min}, {r_max}]"
            )));
        }
        let c = pad3(center);
        let dim = dom.dim();
        let mut out = Vec::with_capacity(*count);
        for k in 0..*count {
            let t = if *count == 1 { 1.0 } else { k as f64 / (*count as f64 - 1.0) };
            let r = r_min + t * (r_max - r_min);
            let mask: Vec<bool> = (0..dom.node_count())
                .map(|idx| dom.is_masked(idx) && dist(&dom.coord(idx), &c, dim) <= r)
                .collect();
            let collar =
                GridDomain::new(dim, dom.shape(), dom.spacing(), dom.origin(), mask).map_err(
                    |e| CliError::Config(format!("exhaustion collar {k} (radius {r}): {e}")),
                )?;
            out.push(collar);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_power_is_floored_at_half_spacing() {
        let dom = GridDomain::punctured_ball(2, 1.0, 1.0 / 16.0).unwrap();
        let spec = FieldSpec::RadialPower { center: vec![0.0, 0.0], exponent: -2.0 };
        let f = spec.build(&dom, 0, true);
        let cap = (1.0 / 32.0f64).powf(-2.0);
        assert!(f.values().iter().all(|v| v.is_finite() && *v <= cap + 1.0));
    }

    #[test]
    fn random_bumps_reproducible_and_label_separated() {
        let dom = GridDomain::unit_box(2, 16).unwrap();
        let mk = |label: &str, seed| {
            FieldSpec::RandomBumps {
                count: 3,
                base: 0.1,
                amplitude: 1.0,
                width: 0.2,
                label: label.into(),
            }
            .build(&dom, seed, false)
        };
        assert_eq!(mk("g", 7).value_hash(), mk("g", 7).value_hash());
        assert_ne!(mk("g", 7).value_hash(), mk("u", 7).value_hash());
        assert_ne!(mk("g", 7).value_hash(), mk("g", 8).value_hash());
    }

    #[test]
    fn superlevel_needs_reference_and_shrinks_with_quantile() {
        let dom = GridDomain::unit_box(2, 16).unwrap();
        let profile = GridFunction::from_fn(dom.clone(), |x| {
            (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
        });
        let lo = CompactSpec::Superlevel { quantile: 0.3 };
        let hispec = CompactSpec::Superlevel { quantile: 0.8 };
        assert!(lo.nodes(&dom, None).is_err());
        let big = lo.nodes(&dom, Some(&profile)).unwrap();
        let small = hispec.nodes(&dom, Some(&profile)).unwrap();
        assert!(small.len() < big.len());
        assert!(!small.is_empty());
    }

    #[test]
    fn collars_nest_and_share_lattice() {
        let dom = GridDomain::unit_box(2, 32).unwrap();
        let spec = ExhaustionSpec::Balls {
            center: vec![0.5, 0.5],
            r_min: 0.1,
            r_max: 0.35,
            count: 4,
        };
        let collars = spec.collars(&dom).unwrap();
        assert_eq!(collars.len(), 4);
        for w in collars.windows(2) {
            assert!(w[0].masked_nodes().len() <= w[1].masked_nodes().len());
            assert_eq!(w[0].shape(), w[1].shape());
        }
        assert_eq!(collars[0].spacing(), dom.spacing());
    }
}

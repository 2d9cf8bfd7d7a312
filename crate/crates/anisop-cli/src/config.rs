//! Configuration loading: schema defaults ← config file ← command-line flags.
//!
//! The JSON schema shipped with the binary is the single home of every
//! physical default. At startup we extract the `default` entries from it,
//! deep-merge the config file on top, then the flag overlay, and only then
//! deserialize into the typed [`Config`] — so an unknown key or a value of
//! the wrong shape is rejected no matter which layer it came from.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use anisop::energy::{MorreySpec, MorreyVariant};
use anisop::norms::NormFamily;
use anisop::variational::SolverConfig;
use anisop::calibration::{battery_matrix_rows, battery_weights};

use crate::commands::CliError;
use crate::fixtures::{CompactSpec, ExhaustionSpec, FieldSpec, GridSpec};

/// The schema text compiled into the binary (also published at `schema/config.schema.json`).
pub const SCHEMA_TEXT: &str = include_str!("../../../schema/config.schema.json");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub command: Option<String>,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub calibration: PathBuf,
    pub p: f64,
    pub s: f64,
    pub n: usize,
    pub family: String,
    pub weights: Option<Vec<f64>>,
    pub matrix_rows: Option<Vec<Vec<f64>>>,
    pub samples: usize,
    pub lemma: String,
    pub cap_check: bool,
    pub grid: GridSpec,
    pub field: FieldSpec,
    pub weight_field: FieldSpec,
    pub potential_field: Option<FieldSpec>,
    pub u_field: FieldSpec,
    pub obstacle_height: f64,
    pub compact: CompactSpec,
    pub compacta: Vec<CompactSpec>,
    pub exhaustion: ExhaustionSpec,
    pub morrey: MorreySection,
    pub solver: SolverSection,
    pub attainment: AttainmentSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorreySection {
    pub p: f64,
    pub q: f64,
    pub variant: MorreyVariant,
    pub theta: Option<f64>,
    pub vartheta: Option<f64>,
    pub ratio_exponent: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttainmentSection {
    pub battery: usize,
    pub perturbations: usize,
}

impl Config {
    /// defaults ← optional file ← flag overlay, then typed deserialization
    /// and validation. `command` is the subcommand actually invoked.
    pub fn load(path: Option<&Path>, overlay: Value, command: &str) -> Result<Config, CliError> {
        let mut merged = schema_defaults();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{} is not valid JSON: {e}", path.display())))?;
            if !file.is_object() {
                return Err(CliError::Config(format!(
                    "{} must contain a JSON object",
                    path.display()
                )));
            }
            deep_merge(&mut merged, file);
        }
        deep_merge(&mut merged, overlay);
        let cfg: Config = serde_json::from_value(merged)
            .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        if let Some(expect) = &cfg.command {
            if expect != command {
                return Err(CliError::Config(format!(
                    "config is marked for `{expect}` but `{command}` was invoked"
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.p.is_finite() && self.p > 1.0) {
            return bad(format!("p must be a finite number > 1, got {}", self.p));
        }
        if !(self.s.is_finite() && self.s > 1.0) {
            return bad(format!("s must be a finite number > 1, got {}", self.s));
        }
        if self.n == 0 || self.n > 16 {
            return bad(format!("n must lie in 1..=16, got {}", self.n));
        }
        if self.threads == 0 || self.threads > 512 {
            return bad(format!("threads must lie in 1..=512, got {}", self.threads));
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        match self.family.as_str() {
            "weighted_s" | "matrix" | "combined" => {}
            other => return bad(format!("unknown family `{other}`")),
        }
        // length-vs-dimension checks live in `family_for`, which knows whether
        // the family acts in `n` or in the grid's dimension
        if let Some(w) = &self.weights {
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return bad("weights must be finite and positive".into());
            }
        }
        if let Some(rows) = &self.matrix_rows {
            if rows.iter().any(|r| r.len() != rows.len()) {
                return bad("matrix_rows must be square".into());
            }
            if rows.iter().flatten().any(|x| !x.is_finite()) {
                return bad("matrix_rows entries must be finite".into());
            }
        }
        if !(self.obstacle_height.is_finite() && self.obstacle_height > 0.0) {
            return bad("obstacle_height must be finite and positive".into());
        }
        if !(self.morrey.p.is_finite() && self.morrey.p > 1.0) {
            return bad(format!("morrey.p must exceed 1, got {}", self.morrey.p));
        }
        if !(self.morrey.q.is_finite() && self.morrey.q >= 1.0) {
            return bad(format!("morrey.q must be ≥ 1, got {}", self.morrey.q));
        }
        if !(self.morrey.ratio_exponent > 0.0 && self.morrey.ratio_exponent <= 1.0) {
            return bad("morrey.ratio_exponent must lie in (0, 1]".into());
        }
        let s = &self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) {
            return bad("solver.tol must be positive".into());
        }
        if s.max_iter == 0 {
            return bad("solver.max_iter must be positive".into());
        }
        if !(s.armijo_c > 0.0 && s.armijo_c <= 0.5) {
            return bad("solver.armijo_c must lie in (0, 0.5]".into());
        }
        if !(s.shrink > 0.0 && s.shrink < 1.0) {
            return bad("solver.shrink must lie in (0, 1)".into());
        }
        if s.restarts == 0 {
            return bad("solver.restarts must be positive".into());
        }
        if self.attainment.battery == 0 || self.attainment.perturbations == 0 {
            return bad("attainment battery/perturbations must be positive".into());
        }
        Ok(())
    }

    /// Norm family from the `family`/`weights`/`matrix_rows` section, with the
    /// standard battery weights/matrix filling in for nulls. `dim` is the
    /// dimension the family must act in (grid dimension for grid commands,
    /// `n` for sampling commands).
    pub fn family_for(&self, dim: usize) -> Result<NormFamily, CliError> {
        if let Some(w) = &self.weights {
            if w.len() != dim {
                return Err(CliError::Config(format!(
                    "weights has {} entries but the domain is {dim}-dimensional",
                    w.len()
                )));
            }
        }
        if let Some(rows) = &self.matrix_rows {
            if rows.len() != dim {
                return Err(CliError::Config(format!(
                    "matrix_rows is {}×{} but the domain is {dim}-dimensional",
                    rows.len(),
                    rows.first().map_or(0, Vec::len)
                )));
            }
        }
        let weights = || self.weights.clone().unwrap_or_else(|| battery_weights(dim));
        let rows = || self.matrix_rows.clone().unwrap_or_else(|| battery_matrix_rows(dim));
        let fam = match self.family.as_str() {
            "weighted_s" => NormFamily::weighted_s(self.s, weights()),
            "matrix" => NormFamily::matrix_from_rows(&rows()),
            "combined" => NormFamily::combined_from_rows(self.s, weights(), &rows()),
            other => return Err(CliError::Config(format!("unknown family `{other}`"))),
        };
        fam.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            armijo_c: self.solver.armijo_c,
            shrink: self.solver.shrink,
            seed: self.seed,
            restarts: self.solver.restarts,
            threads: self.threads,
        }
    }

    pub fn morrey_spec(&self) -> MorreySpec {
        MorreySpec {
            p: self.morrey.p,
            q: self.morrey.q,
            variant: self.morrey.variant,
            theta: self.morrey.theta,
            vartheta: self.morrey.vartheta,
        }
    }
}

/// Defaults extracted from the schema: a node's own `default` wins, otherwise
/// the object assembled from its `properties` recursively.
pub fn schema_defaults() -> Value {
    let schema: Value = serde_json::from_str(SCHEMA_TEXT).expect("embedded schema is valid JSON");
    extract_defaults(&schema)
}

fn extract_defaults(node: &Value) -> Value {
    if let Some(d) = node.get("default") {
        return d.clone();
    }
    if let Some(props) = node.get("properties").and_then(Value::as_object) {
        let mut out = serde_json::Map::new();
        for (key, sub) in props {
            out.insert(key.clone(), extract_defaults(sub));
        }
        return Value::Object(out);
    }
    Value::Null
}

/// Overlay merge. Objects merge key-by-key, except that two tagged sections
/// (both carrying `kind`) with different tags replace wholesale — half a ball
/// overlaid on a box is never stitched together. Everything else replaces.
pub fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            let retag = match (b.get("kind"), o.get("kind")) {
                (Some(bk), Some(ok)) => bk != ok,
                _ => false,
            };
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, overlay) => *slot = overlay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_deserialize_and_validate() {
        let cfg = Config::load(None, json!({}), "energy").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.p, 2.0);
        assert_eq!(cfg.samples, 100_000);
        assert!(cfg.potential_field.is_none());
        assert!(cfg.out.is_none());
        assert_eq!(cfg.solver.tol, 1e-8);
        assert_eq!(cfg.attainment.battery, 64);
    }

    #[test]
    fn overlay_merges_scalars_and_sections() {
        let overlay = json!({"p": 3.0, "solver": {"tol": 1e-6}, "grid": {"cells": 32}});
        let cfg = Config::load(None, overlay, "energy").unwrap();
        assert_eq!(cfg.p, 3.0);
        assert_eq!(cfg.solver.tol, 1e-6);
        // partial grid overlay keeps the default kind
        match cfg.grid {
            GridSpec::UnitBox { dim, cells } => {
                assert_eq!(dim, 2);
                assert_eq!(cells, 32);
            }
            other => panic!("expected unit_box, got {other:?}"),
        }
        assert_eq!(cfg.solver.max_iter, 50_000); // untouched sibling survives
    }

    #[test]
    fn tagged_section_with_new_kind_replaces_wholesale() {
        let overlay = json!({"grid": {"kind": "ball", "dim": 2, "radius": 1.0, "h": 0.05}});
        let cfg = Config::load(None, overlay, "energy").unwrap();
        match cfg.grid {
            GridSpec::Ball { dim, radius, h } => {
                assert_eq!(dim, 2);
                assert_eq!(radius, 1.0);
                assert_eq!(h, 0.05);
            }
            other => panic!("expected ball, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_config_errors() {
        assert!(matches!(
            Config::load(None, json!({"tolerance": 1e-8}), "energy"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            Config::load(None, json!({"p": 0.5}), "energy"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            Config::load(None, json!({"solver": {"shrink": 1.5}}), "energy"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn command_echo_must_match() {
        let cfg = Config::load(None, json!({"command": "hardy"}), "hardy");
        assert!(cfg.is_ok());
        assert!(matches!(
            Config::load(None, json!({"command": "hardy"}), "energy"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn family_null_sections_use_battery_defaults() {
        let cfg = Config::load(None, json!({"family": "combined"}), "energy").unwrap();
        let fam = cfg.family_for(3).unwrap();
        assert_eq!(fam.dim(), 3);
    }
}

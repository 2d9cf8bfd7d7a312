//! Batch runner for the anisop library.
//!
//! Every subcommand follows the same pipeline: schema defaults ← JSON config
//! file ← command-line flags, validated into a typed [`config::Config`], then
//! dispatched to a driver in [`commands`]. Exit codes: 0 on success, 2 when a
//! requested check fails or a run aborts, 3 when the configuration is
//! rejected.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod fixtures;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use commands::CliError;
use config::Config;

#[derive(Parser, Debug)]
#[command(name = "anisop", version, about = "anisotropic energy and estimate toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options every subcommand accepts. Flags override config-file keys, which
/// override the published schema defaults.
#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file (see schema/config.schema.json)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// RNG seed; identical seed and config give byte-identical output
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads for the sampling batteries
    #[arg(long)]
    threads: Option<usize>,
    /// output file (directory for `acceptance`); stdout when omitted
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// calibration table produced by `calibrate`
    #[arg(long, value_name = "FILE")]
    calibration: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExpOpts {
    /// outer exponent p
    #[arg(long)]
    p: Option<f64>,
    /// inner exponent s of the norm family
    #[arg(long)]
    s: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample-based structure checks of a norm family
    VerifyNorms {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        /// ambient dimension
        #[arg(long)]
        n: Option<usize>,
        /// family kind: weighted_s, matrix, combined
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Estimate two-sided distance-comparison constants for one or all lemmas
    VerifyBregman {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        /// lemma id or "all"
        #[arg(long)]
        lemma: Option<String>,
        /// also enforce the calibrated upper caps
        #[arg(long)]
        cap_check: bool,
    },
    /// Run the full battery at high sample count and write the calibration table
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate the energy and its gradient for a configured field
    Energy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        /// cells per axis for box-type grids
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Morrey-type norm of a configured field
    Morrey {
        #[command(flatten)]
        common: Common,
        /// integrability exponent q
        #[arg(long)]
        q: Option<f64>,
        /// variant: basic, theta, double_phase
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Best constant of the weighted quotient on the configured domain
    Hardy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        #[arg(long)]
        cells: Option<usize>,
        /// solver value tolerance
        #[arg(long)]
        tol: Option<f64>,
        /// solver restarts
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Variational capacity of the configured compact set
    Capacity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        /// scale applied to the obstacle profile
        #[arg(long)]
        obstacle_height: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Two-sided mass/capacity comparison against the quotient constant
    Mazya {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Quotient constant along an exhausting family of subdomains
    Tail {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Minimizer existence diagnostics: residual, sign, Rayleigh battery
    Attainment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ex: ExpOpts,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run the acceptance suite into the output directory
    Acceptance {
        #[command(flatten)]
        common: Common,
    },
}

fn put(m: &mut Map<String, Value>, key: &str, v: Option<Value>) {
    if let Some(v) = v {
        m.insert(key.to_string(), v);
    }
}

fn nested(m: &mut Map<String, Value>, section: &str, entries: Vec<(&str, Option<Value>)>) {
    let mut inner = Map::new();
    for (k, v) in entries {
        put(&mut inner, k, v);
    }
    if !inner.is_empty() {
        m.insert(section.to_string(), Value::Object(inner));
    }
}

fn overlay_common(m: &mut Map<String, Value>, c: &Common) {
    put(m, "seed", c.seed.map(|v| json!(v)));
    put(m, "threads", c.threads.map(|v| json!(v)));
    put(m, "out", c.out.as_ref().map(|v| json!(v)));
    put(m, "calibration", c.calibration.as_ref().map(|v| json!(v)));
}

fn overlay_exp(m: &mut Map<String, Value>, ex: &ExpOpts) {
    put(m, "p", ex.p.map(|v| json!(v)));
    put(m, "s", ex.s.map(|v| json!(v)));
}

fn load(common: &Common, overlay: Map<String, Value>, command: &str) -> Result<Config, CliError> {
    Config::load(common.config.as_deref(), Value::Object(overlay), command)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::VerifyNorms { common, ex, n, family, samples } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            put(&mut m, "n", n.map(|v| json!(v)));
            put(&mut m, "family", family.as_ref().map(|v| json!(v)));
            put(&mut m, "samples", samples.map(|v| json!(v)));
            commands::cmd_verify_norms(&load(common, m, "verify-norms")?)
        }
        Cmd::VerifyBregman { common, ex, n, family, samples, lemma, cap_check } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            put(&mut m, "n", n.map(|v| json!(v)));
            put(&mut m, "family", family.as_ref().map(|v| json!(v)));
            put(&mut m, "samples", samples.map(|v| json!(v)));
            put(&mut m, "lemma", lemma.as_ref().map(|v| json!(v)));
            if *cap_check {
                m.insert("cap_check".to_string(), json!(true));
            }
            commands::cmd_verify_bregman(&load(common, m, "verify-bregman")?)
        }
        Cmd::Calibrate { common, samples } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            put(&mut m, "samples", samples.map(|v| json!(v)));
            commands::cmd_calibrate(&load(common, m, "calibrate")?)
        }
        Cmd::Energy { common, ex, cells } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            nested(&mut m, "grid", vec![("cells", cells.map(|v| json!(v)))]);
            commands::cmd_energy(&load(common, m, "energy")?)
        }
        Cmd::Morrey { common, q, variant, cells } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            nested(&mut m, "grid", vec![("cells", cells.map(|v| json!(v)))]);
            nested(
                &mut m,
                "morrey",
                vec![
                    ("q", q.map(|v| json!(v))),
                    ("variant", variant.as_ref().map(|v| json!(v))),
                ],
            );
            commands::cmd_morrey(&load(common, m, "morrey")?)
        }
        Cmd::Hardy { common, ex, cells, tol, restarts } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            nested(&mut m, "grid", vec![("cells", cells.map(|v| json!(v)))]);
            nested(
                &mut m,
                "solver",
                vec![
                    ("tol", tol.map(|v| json!(v))),
                    ("restarts", restarts.map(|v| json!(v))),
                ],
            );
            commands::cmd_hardy(&load(common, m, "hardy")?)
        }
        Cmd::Capacity { common, ex, obstacle_height, tol, cells } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            put(&mut m, "obstacle_height", obstacle_height.map(|v| json!(v)));
            nested(&mut m, "grid", vec![("cells", cells.map(|v| json!(v)))]);
            nested(&mut m, "solver", vec![("tol", tol.map(|v| json!(v)))]);
            commands::cmd_capacity(&load(common, m, "capacity")?)
        }
        Cmd::Mazya { common, ex, tol, cells } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            nested(&mut m, "grid", vec![("cells", cells.map(|v| json!(v)))]);
            nested(&mut m, "solver", vec![("tol", tol.map(|v| json!(v)))]);
            commands::cmd_mazya(&load(common, m, "mazya")?)
        }
        Cmd::Tail { common, ex, tol } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            nested(&mut m, "solver", vec![("tol", tol.map(|v| json!(v)))]);
            commands::cmd_tail(&load(common, m, "tail")?)
        }
        Cmd::Attainment { common, ex, tol } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            overlay_exp(&mut m, ex);
            nested(&mut m, "solver", vec![("tol", tol.map(|v| json!(v)))]);
            commands::cmd_attainment(&load(common, m, "attainment")?)
        }
        Cmd::Acceptance { common } => {
            let mut m = Map::new();
            overlay_common(&mut m, common);
            commands::cmd_acceptance(&load(common, m, "acceptance")?)
        }
    }
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

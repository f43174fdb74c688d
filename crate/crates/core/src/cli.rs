//! Experiment front end: config parsing, batch execution across the
//! (population, alpha) grid, and report/manifest output.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{emit_report, MetricReport, ReportFormat, RunBatch};
use crate::protocol::{run_protocol, ProtocolParams, ProtocolTrace, UpdatePolicy};
use crate::rng::derive_seed;
use crate::schedule::{collision_floor_p0, ScheduleParams};
use crate::sic::SicMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{message}")]
    Usage { message: String, is_help: bool },
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown config key '{key}'")]
    UnknownKey { key: String },
    #[error("cannot read config file {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Fully resolved experiment description; every run is a pure function of
/// this plus the master seed it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_values: Vec<u32>,
    pub alpha_values: Vec<f64>,
    /// Resolved first-round access probability.
    pub p0: f64,
    /// True when p0 was derived from (n_min, target_collision_prob).
    pub p0_auto: bool,
    pub n_min: u32,
    pub n_max: u32,
    pub target_collision_prob: f64,
    pub k_idle: u32,
    pub beta: f64,
    pub gamma: f64,
    pub update_policy: UpdatePolicy,
    pub sic_mode: SicMode,
    pub degree_cap: u32,
    pub repeats: u32,
    pub master_seed: u64,
    pub output_path: PathBuf,
    pub output_format: ReportFormat,
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_values: vec![100, 1000, 10_000],
            alpha_values: vec![1.02],
            p0: 0.047,
            p0_auto: false,
            n_min: 100,
            n_max: 10_000,
            target_collision_prob: 0.95,
            k_idle: 6,
            beta: 2.9,
            gamma: 0.8,
            update_policy: UpdatePolicy::MidRound,
            sic_mode: SicMode::Backtrack,
            degree_cap: 10,
            repeats: 5000,
            master_seed: 1,
            output_path: PathBuf::from("results"),
            output_format: ReportFormat::Csv,
            parallelism: 1,
        }
    }
}

impl ExperimentConfig {
    /// Protocol parameters for one alpha of the sweep.
    pub fn protocol_params(&self, alpha: f64) -> Result<ProtocolParams, ConfigError> {
        let schedule = ScheduleParams::new(
            self.p0,
            alpha,
            self.beta,
            self.n_min,
            self.target_collision_prob,
        )
        .map_err(|e| invalid("schedule", e.to_string()))?;
        ProtocolParams::new(
            schedule,
            self.k_idle,
            self.gamma,
            self.update_policy,
            self.sic_mode,
            self.degree_cap,
            self.n_max,
            2.0,
        )
        .map_err(|e| invalid("params", e.to_string()))
    }
}

#[derive(Parser, Debug, Default)]
#[command(
    name = "frameless-aloha",
    about = "Monte-Carlo experiments for frameless slotted ALOHA with joint user-count estimation and successive interference cancellation",
    disable_version_flag = true
)]
struct CliArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Population sizes to sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u32>>,
    /// Lower end of the anticipated population range.
    #[arg(long = "n-min")]
    n_min: Option<u32>,
    /// Upper end of the anticipated population range.
    #[arg(long = "n-max")]
    n_max: Option<u32>,
    /// First-round ramp factors to sweep (comma separated).
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// First-round access probability, or "auto" to derive it from
    /// --n-min and --pc.
    #[arg(long)]
    p0: Option<String>,
    /// Target collision probability used when --p0 auto.
    #[arg(long)]
    pc: Option<f64>,
    /// Consecutive idle slots ending the initial round.
    #[arg(long = "k-idle")]
    k_idle: Option<u32>,
    /// Target expected slot degree of resolution rounds.
    #[arg(long)]
    beta: Option<f64>,
    /// Resolved fraction ending a resolution round.
    #[arg(long)]
    gamma: Option<f64>,
    /// When the estimate refreshes: per-round, mid-round, or per-slot.
    #[arg(long = "update-policy")]
    update_policy: Option<String>,
    /// Cancellation span: backtrack or no-backtrack.
    #[arg(long = "sic-mode")]
    sic_mode: Option<String>,
    /// Largest exploitable original slot degree.
    #[arg(long = "degree-cap")]
    degree_cap: Option<u32>,
    /// Independent repeats per (n, alpha) cell.
    #[arg(long)]
    repeats: Option<u32>,
    /// Master seed; per-repeat streams are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Worker threads for repeats (outputs are identical at any level).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_update_policy(s: &str) -> Result<UpdatePolicy, ConfigError> {
    match s {
        "per-round" => Ok(UpdatePolicy::PerRound),
        "mid-round" => Ok(UpdatePolicy::MidRound),
        "per-slot" => Ok(UpdatePolicy::PerSlot),
        other => Err(invalid(
            "update-policy",
            format!("'{other}' is not one of per-round|mid-round|per-slot"),
        )),
    }
}

fn parse_sic_mode(s: &str) -> Result<SicMode, ConfigError> {
    match s {
        "backtrack" => Ok(SicMode::Backtrack),
        "no-backtrack" => Ok(SicMode::NoBacktrack),
        other => Err(invalid(
            "sic-mode",
            format!("'{other}' is not one of backtrack|no-backtrack"),
        )),
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, ConfigError> {
    match s {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(invalid(
            "format",
            format!("'{other}' is not one of csv|json"),
        )),
    }
}

/// Applies one config-file entry onto the argument set, unless the same
/// key was already given as a flag (flags win).
fn apply_file_entry(args: &mut CliArgs, key: &str, value: &str) -> Result<(), ConfigError> {
    let parse_list_u32 = |v: &str| -> Result<Vec<u32>, ConfigError> {
        v.split(',')
            .map(|s| s.trim().parse::<u32>().map_err(|e| invalid(key, e.to_string())))
            .collect()
    };
    let parse_list_f64 = |v: &str| -> Result<Vec<f64>, ConfigError> {
        v.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| invalid(key, e.to_string())))
            .collect()
    };
    macro_rules! set_parsed {
        ($field:ident) => {
            if args.$field.is_none() {
                args.$field = Some(value.parse().map_err(|e| invalid(key, format!("{e}")))?);
            }
        };
    }
    match key {
        "n" => {
            if args.n.is_none() {
                args.n = Some(parse_list_u32(value)?);
            }
        }
        "n-min" => set_parsed!(n_min),
        "n-max" => set_parsed!(n_max),
        "alpha" => {
            if args.alpha.is_none() {
                args.alpha = Some(parse_list_f64(value)?);
            }
        }
        "p0" => {
            if args.p0.is_none() {
                args.p0 = Some(value.to_string());
            }
        }
        "pc" => set_parsed!(pc),
        "k-idle" => set_parsed!(k_idle),
        "beta" => set_parsed!(beta),
        "gamma" => set_parsed!(gamma),
        "update-policy" => {
            if args.update_policy.is_none() {
                args.update_policy = Some(value.to_string());
            }
        }
        "sic-mode" => {
            if args.sic_mode.is_none() {
                args.sic_mode = Some(value.to_string());
            }
        }
        "degree-cap" => set_parsed!(degree_cap),
        "repeats" => set_parsed!(repeats),
        "seed" => set_parsed!(seed),
        "out" => {
            if args.out.is_none() {
                args.out = Some(PathBuf::from(value));
            }
        }
        "format" => {
            if args.format.is_none() {
                args.format = Some(value.to_string());
            }
        }
        "jobs" => set_parsed!(jobs),
        other => {
            return Err(ConfigError::UnknownKey {
                key: other.to_string(),
            })
        }
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// ignored.
fn load_config_file(args: &mut CliArgs, path: &PathBuf) -> Result<(), ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            invalid(
                &format!("{}:{}", path.display(), lineno + 1),
                "expected 'key = value'",
            )
        })?;
        apply_file_entry(args, key.trim(), value.trim())?;
    }
    Ok(())
}

/// Parses command-line arguments (argv, program name first) plus an
/// optional config file into a fully resolved [`ExperimentConfig`].
/// Flags override file values; unknown keys are rejected; a "p0 = auto"
/// setting is resolved through the collision-probability design
/// inequality before the run.
pub fn parse_config<I, T>(argv: I) -> Result<ExperimentConfig, ConfigError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut args = CliArgs::try_parse_from(argv).map_err(|e| {
        let is_help = matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        );
        ConfigError::Usage {
            message: e.to_string(),
            is_help,
        }
    })?;
    if let Some(path) = args.config.clone() {
        load_config_file(&mut args, &path)?;
    }
    let defaults = ExperimentConfig::default();

    let n_values = args.n.unwrap_or(defaults.n_values);
    if n_values.is_empty() {
        return Err(invalid("n", "at least one population size required"));
    }
    let alpha_values = args.alpha.unwrap_or(defaults.alpha_values);
    if alpha_values.is_empty() {
        return Err(invalid("alpha", "at least one ramp factor required"));
    }
    for &a in &alpha_values {
        if !(a > 1.0) {
            return Err(invalid("alpha", format!("{a} must be > 1")));
        }
    }
    let n_min = args.n_min.unwrap_or(defaults.n_min);
    if n_min < 1 {
        return Err(invalid("n-min", "must be >= 1"));
    }
    let n_max = args.n_max.unwrap_or(defaults.n_max);
    if n_max < n_min {
        return Err(invalid("n-max", format!("must be >= n-min ({n_min})")));
    }
    for &n in &n_values {
        if n < 1 || n > n_max {
            return Err(invalid("n", format!("{n} must lie within [1, {n_max}]")));
        }
    }
    let target_collision_prob = args.pc.unwrap_or(defaults.target_collision_prob);
    if !(target_collision_prob > 0.0 && target_collision_prob < 1.0) {
        return Err(invalid("pc", "must lie in (0, 1)"));
    }
    let (p0, p0_auto) = match args.p0.as_deref() {
        None => (defaults.p0, false),
        Some("auto") => {
            let v = collision_floor_p0(n_min, target_collision_prob)
                .map_err(|e| invalid("p0", e.to_string()))?;
            (v, true)
        }
        Some(text) => {
            let v: f64 = text
                .parse()
                .map_err(|_| invalid("p0", format!("'{text}' is neither a number nor 'auto'")))?;
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid("p0", "must lie in (0, 1]"));
            }
            (v, false)
        }
    };
    let k_idle = args.k_idle.unwrap_or(defaults.k_idle);
    if k_idle < 1 {
        return Err(invalid("k-idle", "must be >= 1"));
    }
    let beta = args.beta.unwrap_or(defaults.beta);
    if !(beta > 0.0) {
        return Err(invalid("beta", "must be > 0"));
    }
    let gamma = args.gamma.unwrap_or(defaults.gamma);
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", "must lie in (0, 1)"));
    }
    let update_policy = match args.update_policy.as_deref() {
        None => defaults.update_policy,
        Some(s) => parse_update_policy(s)?,
    };
    let sic_mode = match args.sic_mode.as_deref() {
        None => defaults.sic_mode,
        Some(s) => parse_sic_mode(s)?,
    };
    let degree_cap = args.degree_cap.unwrap_or(defaults.degree_cap);
    if degree_cap < 1 {
        return Err(invalid("degree-cap", "must be >= 1"));
    }
    let repeats = args.repeats.unwrap_or(defaults.repeats);
    if repeats < 1 {
        return Err(invalid("repeats", "must be >= 1"));
    }
    let parallelism = args.jobs.unwrap_or(defaults.parallelism);
    if parallelism < 1 {
        return Err(invalid("jobs", "must be >= 1"));
    }
    let output_format = match args.format.as_deref() {
        None => defaults.output_format,
        Some(s) => parse_format(s)?,
    };

    Ok(ExperimentConfig {
        n_values,
        alpha_values,
        p0,
        p0_auto,
        n_min,
        n_max,
        target_collision_prob,
        k_idle,
        beta,
        gamma,
        update_policy,
        sic_mode,
        degree_cap,
        repeats,
        master_seed: args.seed.unwrap_or(defaults.master_seed),
        output_path: args.out.unwrap_or(defaults.output_path),
        output_format,
        parallelism,
    })
}

/// Runs all repeats of one cell, optionally in parallel. Traces come back
/// in repeat order regardless of the thread count, so aggregation is
/// independent of the parallelism level.
pub fn run_cell(
    n: u32,
    params: &ProtocolParams,
    seeds: &[u64],
    jobs: usize,
) -> Vec<ProtocolTrace> {
    if jobs <= 1 {
        return seeds.iter().map(|&s| run_protocol(n, params, s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("worker pool");
    pool.install(|| {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&s| run_protocol(n, params, s))
            .collect()
    })
}

#[derive(Debug, Serialize)]
struct ManifestCell {
    n: u32,
    alpha_index: usize,
    alpha: f64,
    file: String,
}

/// Everything needed to re-run any cell exactly: the resolved config, the
/// master seed, the seed-derivation rule, and the code version.
/// Deliberately excludes the parallelism level, which cannot affect
/// outputs.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    version: &'a str,
    master_seed: u64,
    seed_rule: &'a str,
    repeats: u32,
    n_values: &'a [u32],
    alpha_values: &'a [f64],
    p0: f64,
    p0_auto: bool,
    n_min: u32,
    n_max: u32,
    target_collision_prob: f64,
    k_idle: u32,
    beta: f64,
    gamma: f64,
    update_policy: &'a str,
    sic_mode: &'a str,
    degree_cap: u32,
    round_slot_cap_factor: f64,
    output_format: &'a str,
    cells: Vec<ManifestCell>,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    /// (n, alpha, report path) per completed cell.
    pub cells: Vec<(u32, f64, PathBuf)>,
    pub manifest_path: PathBuf,
    /// Human-readable description per failed cell.
    pub failures: Vec<String>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Config(#[from] ConfigError),
}

/// Executes the full experiment grid and writes one report per cell plus
/// the run manifest. Identical (config, master seed) produce byte-identical
/// outputs at any parallelism level.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, RunError> {
    fs::create_dir_all(&config.output_path).map_err(|e| RunError::Io {
        path: config.output_path.display().to_string(),
        message: e.to_string(),
    })?;
    let extension = config.output_format.as_str();
    let mut cells = Vec::new();
    let mut manifest_cells = Vec::new();
    let mut failures = Vec::new();

    for &n in &config.n_values {
        for (alpha_index, &alpha) in config.alpha_values.iter().enumerate() {
            let params = config.protocol_params(alpha)?;
            let seeds: Vec<u64> = (0..config.repeats)
                .map(|r| derive_seed(config.master_seed, n as u64, alpha_index as u64, r as u64))
                .collect();
            let traces = run_cell(n, &params, &seeds, config.parallelism);
            let batch = match RunBatch::new(n, config.master_seed, traces) {
                Ok(b) => b,
                Err(e) => {
                    failures.push(format!("cell n={n} alpha={alpha}: {e}"));
                    continue;
                }
            };
            // The bootstrap stream gets a repeat index outside the repeat
            // range, so it never collides with a run seed.
            let ci_seed = derive_seed(config.master_seed, n as u64, alpha_index as u64, u64::MAX);
            let report = match MetricReport::from_batch(&batch, 1000, ci_seed) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("cell n={n} alpha={alpha}: {e}"));
                    continue;
                }
            };
            let file = format!("metrics_n{n}_a{alpha_index}.{extension}");
            let path = config.output_path.join(&file);
            if let Err(e) = fs::write(&path, emit_report(&report, config.output_format)) {
                failures.push(format!("cell n={n} alpha={alpha}: write {}: {e}", path.display()));
                continue;
            }
            manifest_cells.push(ManifestCell {
                n,
                alpha_index,
                alpha,
                file,
            });
            cells.push((n, alpha, path));
        }
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        master_seed: config.master_seed,
        seed_rule: "splitmix64-chain(master_seed, n, alpha_index, repeat_index)",
        repeats: config.repeats,
        n_values: &config.n_values,
        alpha_values: &config.alpha_values,
        p0: config.p0,
        p0_auto: config.p0_auto,
        n_min: config.n_min,
        n_max: config.n_max,
        target_collision_prob: config.target_collision_prob,
        k_idle: config.k_idle,
        beta: config.beta,
        gamma: config.gamma,
        update_policy: config.update_policy.as_str(),
        sic_mode: config.sic_mode.as_str(),
        degree_cap: config.degree_cap,
        round_slot_cap_factor: 2.0,
        output_format: config.output_format.as_str(),
        cells: manifest_cells,
    };
    let manifest_path = config.output_path.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| RunError::Io {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;

    Ok(ExperimentSummary {
        cells,
        manifest_path,
        failures,
    })
}

/// One-line textual summary of a finished experiment.
pub fn summarize(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} cell(s) written, manifest at {}",
        summary.cells.len(),
        summary.manifest_path.display()
    );
    for failure in &summary.failures {
        let _ = writeln!(out, "FAILED: {failure}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(rest: &[&str]) -> Vec<String> {
        std::iter::once("frameless-aloha")
            .chain(rest.iter().copied())
            .map(String::from)
            .collect()
    }

    #[test]
    fn defaults_match_reference_setup() {
        let config = parse_config(argv(&[])).unwrap();
        assert_eq!(config.n_values, vec![100, 1000, 10_000]);
        assert_eq!(config.alpha_values, vec![1.02]);
        assert_eq!(config.repeats, 5000);
        assert_eq!(config.p0, 0.047);
        assert_eq!(config.k_idle, 6);
        assert_eq!(config.beta, 2.9);
        assert_eq!(config.gamma, 0.8);
        assert_eq!(config.degree_cap, 10);
        assert_eq!(config.update_policy, UpdatePolicy::MidRound);
        assert_eq!(config.sic_mode, SicMode::Backtrack);
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        let err = parse_config(argv(&["--gamma", "1.5"])).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("gamma"), "{text}");
        assert!(text.contains("(0, 1)"), "{text}");
    }

    #[test]
    fn auto_p0_resolves_through_design_inequality() {
        let config = parse_config(argv(&["--p0", "auto", "--n-min", "100", "--pc", "0.95"])).unwrap();
        assert!(config.p0_auto);
        assert!((config.p0 - 0.047).abs() < 2e-3, "p0 = {}", config.p0);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        fs::write(&path, "gamma = 0.7\nrepeats = 17\nn = 200,300\n# comment\n").unwrap();
        let config = parse_config(argv(&[
            "--config",
            path.to_str().unwrap(),
            "--gamma",
            "0.6",
        ]))
        .unwrap();
        assert_eq!(config.gamma, 0.6, "flag wins");
        assert_eq!(config.repeats, 17, "file applies");
        assert_eq!(config.n_values, vec![200, 300]);
    }

    #[test]
    fn unknown_file_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        fs::write(&path, "bogus = 3\n").unwrap();
        let err = parse_config(argv(&["--config", path.to_str().unwrap()])).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key } if key == "bogus"));
    }

    #[test]
    fn unknown_flag_rejected() {
        assert!(parse_config(argv(&["--bogus", "3"])).is_err());
    }

    #[test]
    fn n_outside_bound_rejected() {
        let err = parse_config(argv(&["--n", "20000"])).unwrap_err();
        assert!(err.to_string().contains("20000"));
    }

    #[test]
    fn policy_and_mode_strings() {
        let config = parse_config(argv(&[
            "--update-policy",
            "per-slot",
            "--sic-mode",
            "no-backtrack",
        ]))
        .unwrap();
        assert_eq!(config.update_policy, UpdatePolicy::PerSlot);
        assert_eq!(config.sic_mode, SicMode::NoBacktrack);
        assert!(parse_config(argv(&["--update-policy", "sometimes"])).is_err());
    }
}

//! The three subcommands. Each returns the text to print and an exit code.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use chaintube::model::CoupledSystem;
use chaintube::runtime::{failure_stage, run_baseline, ControllerKind, SimLog};
use chaintube::synthesis::{synthesize, validate, SynthesisError, TubeDesign};

use crate::config::{ConfigError, RunConfig};
use crate::report::{Comparison, ROWS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_SYNTHESIS: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug)]
pub struct Outcome {
    pub code: u8,
    pub text: String,
}

impl Outcome {
    fn new(code: u8, text: String) -> Self {
        Self { code, text }
    }
}

impl From<ConfigError> for Outcome {
    fn from(e: ConfigError) -> Self {
        Outcome::new(EXIT_USAGE, format!("error: {e}"))
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Outcome {
    Outcome::new(EXIT_USAGE, format!("error: cannot write {}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), Outcome> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn cache_path(cfg: &RunConfig) -> PathBuf {
    cfg.run.out.join("cache").join(format!("{}.design", cfg.design_key()))
}

/// Loads the design from the cache, synthesizing and caching it on a miss.
pub fn design(cfg: &RunConfig, sys: &CoupledSystem) -> Result<TubeDesign, Outcome> {
    let path = cache_path(cfg);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(d) = TubeDesign::from_text(&text) {
            if d.len() == sys.len() {
                return Ok(d);
            }
        }
    }
    match synthesize(sys, &cfg.synthesis_options(sys)) {
        Ok(d) => {
            write(&path, &d.to_text())?;
            Ok(d)
        }
        Err(e) => Err(synthesis_failure(cfg, e)),
    }
}

fn synthesis_failure(cfg: &RunConfig, e: SynthesisError) -> Outcome {
    match e {
        SynthesisError::Failed { check, detail, report } => {
            let path = cfg.run.out.join("synthesis_report.md");
            let mut text = format!("synthesis failed at check \"{check}\": {detail}\n");
            if write(&path, &report.render()).is_ok() {
                let _ = writeln!(text, "checks so far: {}", path.display());
            }
            Outcome::new(EXIT_SYNTHESIS, text)
        }
        SynthesisError::InvalidOptions(m) => Outcome::new(EXIT_USAGE, format!("error: {m}")),
        other => Outcome::new(EXIT_SYNTHESIS, format!("synthesis failed: {other}")),
    }
}

fn prepare(cfg: &RunConfig) -> Result<CoupledSystem, Outcome> {
    cfg.validate()?;
    Ok(cfg.system()?)
}

pub fn cmd_synth(cfg: &RunConfig) -> Outcome {
    let sys = match prepare(cfg) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let design = match design(cfg, &sys) {
        Ok(d) => d,
        Err(o) => return o,
    };
    let report = match validate(&sys, &design) {
        Ok(r) => r,
        Err(e) => return Outcome::new(EXIT_SYNTHESIS, format!("validation failed: {e}")),
    };
    let path = cfg.run.out.join("synthesis_report.md");
    if let Err(o) = write(&path, &report.render()) {
        return o;
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    let mut text = format!("design cache: {}\nreport: {}\n", cache_path(cfg).display(), path.display());
    if failed.is_empty() {
        let _ = writeln!(text, "all {} checks pass", report.checks.len());
        Outcome::new(EXIT_OK, text)
    } else {
        let _ = writeln!(text, "failed checks: {}", failed.join("; "));
        Outcome::new(EXIT_SYNTHESIS, text)
    }
}

fn simulate(cfg: &RunConfig, sys: &CoupledSystem, design: &TubeDesign, kind: ControllerKind) -> Result<SimLog, Outcome> {
    let mut log = run_baseline(sys, design, &cfg.x0(), &cfg.run_options(), kind)
        .map_err(|e| Outcome::new(EXIT_USAGE, format!("error: {e}")))?;
    log.config_hash = cfg.hash();
    write(&csv_path(cfg, kind), &log.to_csv(sys))?;
    Ok(log)
}

pub fn csv_path(cfg: &RunConfig, kind: ControllerKind) -> PathBuf {
    cfg.run.out.join(format!("{}.csv", kind.name()))
}

fn summary(sys: &CoupledSystem, log: &SimLog) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "controller: {}", log.controller.label());
    let _ = writeln!(text, "steps: {}", log.records.len());
    match &log.failure {
        None => {
            let _ = writeln!(text, "feasible: yes");
        }
        Some(f) => {
            let stage = failure_stage(&f.error).map_or(String::new(), |s| format!(" ({s})"));
            let _ = writeln!(text, "feasible: no, stopped at t = {}, subsystem {}{stage}: {}", f.t, f.subsystem + 1, f.error);
        }
    }
    let _ = writeln!(text, "final state norm (max): {:.6e}", log.final_state.amax());
    let _ = writeln!(text, "total cost: {:.10}", log.total_cost());
    let _ = writeln!(text, "largest constraint violation: {:.3e}", log.constraint_violation(sys));
    if log.saturations() > 0 {
        let _ = writeln!(text, "saturated inputs: {}", log.saturations());
    }
    text
}

pub fn cmd_simulate(cfg: &RunConfig) -> Outcome {
    let sys = match prepare(cfg) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let kind = match cfg.controller() {
        Ok(k) => k,
        Err(e) => return e.into(),
    };
    let design = match design(cfg, &sys) {
        Ok(d) => d,
        Err(o) => return o,
    };
    match simulate(cfg, &sys, &design, kind) {
        Ok(log) => {
            let mut text = summary(&sys, &log);
            let _ = writeln!(text, "log: {}", csv_path(cfg, kind).display());
            Outcome::new(if log.completed() { EXIT_OK } else { EXIT_INFEASIBLE }, text)
        }
        Err(o) => o,
    }
}

/// Runs all four controllers from the same state; `None` with the outcome
/// when setup or synthesis fails.
pub fn compare(cfg: &RunConfig) -> Result<Comparison, Outcome> {
    let sys = prepare(cfg)?;
    let design = design(cfg, &sys)?;
    let mut logs = Vec::with_capacity(ROWS.len());
    for kind in ROWS {
        logs.push(simulate(cfg, &sys, &design, kind)?);
    }
    Ok(Comparison { logs })
}

pub fn report_path(cfg: &RunConfig) -> PathBuf {
    cfg.run.out.join("report.md")
}

pub fn cmd_compare(cfg: &RunConfig) -> Outcome {
    let cmp = match compare(cfg) {
        Ok(c) => c,
        Err(o) => return o,
    };
    let report = cmp.render(&cfg.hash(), &cfg.run.x0);
    if let Err(o) = write(&report_path(cfg), &report) {
        return o;
    }
    let chain_ok = cmp.log(ControllerKind::Chain).completed();
    let mut text = report;
    let _ = writeln!(text, "\nreport: {}", report_path(cfg).display());
    Outcome::new(if chain_ok { EXIT_OK } else { EXIT_INFEASIBLE }, text)
}

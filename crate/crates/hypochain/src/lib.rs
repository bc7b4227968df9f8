//! Configuration-driven experiments on chained hypoelliptic SDE models.
//!
//! Each run reads a TOML configuration, builds the model, runs one experiment
//! and writes `<out>/<subcommand>.csv` together with
//! `<out>/<subcommand>.summary.json`.

pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod output;
pub mod registry;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, LoadedConfig, Overrides};
pub use engine::Engine;
pub use error::AppError;
pub use experiments::Subcommand;
pub use output::{Check, Report};

/// Result of one run: the report and the files written.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

/// Loads `config_path`, applies the overrides and runs `cmd`.
pub fn run_file(cmd: Subcommand, config_path: &Path, overrides: &Overrides) -> Result<Outcome, AppError> {
    let mut loaded = LoadedConfig::load(config_path)?;
    loaded.apply(overrides);
    run_loaded(cmd, &loaded)
}

pub fn run_loaded(cmd: Subcommand, loaded: &LoadedConfig) -> Result<Outcome, AppError> {
    let start = Instant::now();
    let run = &loaded.config.run;
    let model = registry::build(&loaded.config.model)?;
    let engine = Engine::new(run.workers)?;
    let ctx = experiments::Context {
        run,
        model: &model,
        engine: &engine,
    };
    let report = experiments::run(cmd, &ctx)?;
    let passed = report.passed();
    let summary = output::Summary {
        subcommand: cmd.name(),
        model_key: model.system.key(),
        seed: run.seed,
        paths: run.paths,
        workers: engine.workers(),
        version: output::VERSION,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        passed,
        checks: &report.checks,
        warnings: &report.warnings,
        results: &report.results,
        config: serde_json::to_value(&loaded.config)?,
        config_text: &loaded.text,
    };
    let files = output::write_artifacts(&loaded.out_dir(), cmd.name(), &report, &summary)?;
    Ok(Outcome { report, files, passed })
}

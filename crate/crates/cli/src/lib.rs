//! Command-line driver: flags and config files, pipelines, CSV reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use anyhow::Result;

use crate::args::{Cli, Command};
use crate::config::RunConfig;

/// Builds the resolved configuration for `cli`: defaults, then the config
/// file, then the output-directory variable, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(config::OUT_DIR_ENV) {
        cfg.out = dir.into();
    }
    cli.global.apply(&mut cfg);
    cli.command.apply(&mut cfg);
    cfg.resolve()
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    if cfg.threads > 0 {
        // A pool may already exist when called more than once in a process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    match cli.command {
        Command::Gen(_) => commands::gen(&cfg).map(drop),
        Command::Oracle(a) => commands::oracle(&mut cfg, a.dataset, a.n).map(drop),
        Command::Pretrain(_) => commands::pretrain(&mut cfg).map(drop),
        Command::Train(a) => commands::train(&mut cfg, a.log_every).map(drop),
        Command::Eval(_) => commands::eval(&mut cfg).map(drop),
        Command::Sweep(_) => commands::sweep(&mut cfg).map(drop),
        Command::Pattern(_) => commands::pattern(&mut cfg).map(drop),
        Command::Gradcheck(_) => commands::gradcheck(&cfg).map(drop),
    }
}

//! Command-line driver for deep-equilibrium fusion experiments.
//!
//! Every subcommand resolves its settings as flag > `--config` file >
//! default, validates them, runs, writes CSV files under `--out` and prints
//! a summary. Exit statuses: 0 success, 1 validation error, 2 numeric
//! failure, 3 I/O error.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

use args::{AblateArgs, Cli, Command, ConvergeArgs, GradcheckArgs, SolvebenchArgs, TrainArgs, TrainFlags};
use config::{base_config, ConvergeConfig, GradcheckSettings, SolvebenchConfig, TrainSettings};
pub use error::{CliError, CliResult, EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION};

pub fn converge_config(a: &ConvergeArgs) -> CliResult<ConvergeConfig> {
    let mut c: ConvergeConfig = base_config(a.common.config.as_deref(), &[])?;
    overlay!(c, a.common; seed, out);
    overlay!(c, a; n_modalities, dim, batch, groups, solver, steps, memory, beta, lambda);
    if a.checkpoint.is_some() {
        c.checkpoint = a.checkpoint.clone();
    }
    Ok(c)
}

pub fn gradcheck_config(a: &GradcheckArgs) -> CliResult<GradcheckSettings> {
    let mut c: GradcheckSettings = base_config(a.common.config.as_deref(), &[])?;
    overlay!(c, a.common; seed, out);
    overlay!(c, a; n_modalities, dim, batch, groups, seeds, tol, h, forward_tol, unrolled_steps);
    Ok(c)
}

fn overlay_train(c: &mut TrainSettings, t: &TrainFlags) {
    overlay!(c, t; epochs, batch_size, lr, optimizer, gamma, jac_probes, width, sigma, n_train, n_test,
        label_rule, groups, init_gain, solver, solver_tol, solver_max_steps);
    if t.fusion_lr.is_some() {
        c.fusion_lr = t.fusion_lr;
    }
}

pub fn train_config(a: &TrainArgs) -> CliResult<TrainSettings> {
    let mut c: TrainSettings = base_config(a.common.config.as_deref(), TrainSettings::ABLATE_ONLY)?;
    overlay!(c, a.common; seed, out);
    overlay!(c, a; variant);
    overlay_train(&mut c, &a.train);
    Ok(c)
}

pub fn ablate_config(a: &AblateArgs) -> CliResult<TrainSettings> {
    let mut c: TrainSettings = base_config(a.common.config.as_deref(), TrainSettings::TRAIN_ONLY)?;
    overlay!(c, a.common; seed, out);
    overlay!(c, a; seeds);
    overlay_train(&mut c, &a.train);
    Ok(c)
}

pub fn solvebench_config(a: &SolvebenchArgs) -> CliResult<SolvebenchConfig> {
    let mut c: SolvebenchConfig = base_config(a.common.config.as_deref(), &[])?;
    overlay!(c, a.common; seed, out);
    overlay!(c, a; n_modalities, dim, batch, groups, seeds, target_resid, max_steps, memory, beta, lambda, trace_steps);
    Ok(c)
}

/// Runs a parsed command, printing its summary to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Converge(a) => commands::converge::run(&converge_config(a)?, out).map(|_| ()),
        Command::Gradcheck(a) => commands::gradcheck::run(&gradcheck_config(a)?, out).map(|_| ()),
        Command::Train(a) => commands::train::run(&train_config(a)?, out).map(|_| ()),
        Command::Ablate(a) => commands::ablate::run(&ablate_config(a)?, out).map(|_| ()),
        Command::Solvebench(a) => commands::solvebench::run(&solvebench_config(a)?, out).map(|_| ()),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Errors go to `err`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

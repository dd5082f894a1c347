use std::io::Write;

use deqfuse_core::equilibrium::{random_instance, solve_equilibrium, JointMap, SolverTrace};
use deqfuse_core::layers::{FusionArch, ModalityBundle};
use deqfuse_core::numcore::Rng;
use deqfuse_core::DeqError;

use crate::checkpoint::Checkpoint;
use crate::config::ConvergeConfig;
use crate::error::{CliError, CliResult};
use crate::output::{out_file, write_file};

/// Steps reported on stdout, as far as the run reaches.
pub const REPORT_STEPS: [usize; 5] = [1, 10, 20, 40, 100];

pub const CSV_NAME: &str = "converge.csv";

/// Runs the solver for exactly `cfg.steps` steps, writes the trace and
/// prints the relative difference at [`REPORT_STEPS`].
pub fn run(cfg: &ConvergeConfig, out: &mut dyn Write) -> CliResult<SolverTrace> {
    let solver = cfg.solver_config()?;
    let (x, params) = match &cfg.checkpoint {
        None => random_instance(cfg.seed, cfg.n_modalities, cfg.dim, cfg.batch, cfg.groups)?,
        Some(path) => {
            let params = Checkpoint::load(path)?.to_fusion()?;
            let mut rng = Rng::new(cfg.seed);
            let x = ModalityBundle::new(
                (0..params.n_modalities())
                    .map(|_| rng.randn(cfg.batch, params.width, 1.0))
                    .collect(),
            )?;
            (x, params)
        }
    };
    let map = JointMap::new(&x, &params, FusionArch::FULL)?;
    let path = out_file(&cfg.out, CSV_NAME);
    let (trace, failure) = match solve_equilibrium(&map, &solver) {
        Ok(eq) => (eq.trace, None),
        Err(DeqError::Divergence { what, residual, trace }) => {
            let msg = format!(
                "{what} diverged after {} steps (residual {residual:.3e}); partial trace in {}",
                trace.steps_taken,
                path.display()
            );
            (trace, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };
    write_file(&path, &trace.to_csv())?;
    let io = |e| CliError::io("<stdout>", e);
    writeln!(
        out,
        "{} solver, N={} d={} batch={} seed={}, {} steps",
        solver.method.as_str(),
        params.n_modalities(),
        params.width,
        cfg.batch,
        cfg.seed,
        trace.steps_taken
    )
    .map_err(io)?;
    out.write_all(report(&trace).as_bytes()).map_err(io)?;
    writeln!(out, "trace written to {}", path.display()).map_err(io)?;
    match failure {
        Some(msg) => Err(CliError::Numeric(msg)),
        None => Ok(trace),
    }
}

/// Two-row table of the relative difference norm at the reported steps.
pub fn report(trace: &SolverTrace) -> String {
    let cells: Vec<(String, String)> = REPORT_STEPS
        .iter()
        .filter_map(|&s| trace.at_step(s).map(|v| (s.to_string(), format!("{v:.2e}"))))
        .collect();
    let width = cells.iter().map(|(a, b)| a.len().max(b.len())).max().unwrap_or(0);
    let mut steps = String::from("step    ");
    let mut values = String::from("rel_diff");
    for (s, v) in &cells {
        steps.push_str(&format!("  {s:>width$}"));
        values.push_str(&format!("  {v:>width$}"));
    }
    format!("{steps}\n{values}\n")
}

use std::io::Write;

use deqfuse_core::equilibrium::{random_instance, solve_equilibrium, JointMap, SolverConfig, SolverMethod, SolverTrace};
use deqfuse_core::layers::FusionArch;
use deqfuse_core::DeqError;

use crate::config::SolvebenchConfig;
use crate::error::{CliError, CliResult};
use crate::output::{csv, out_file, table, write_file};

pub const CSV_NAME: &str = "solvebench.csv";
pub const TRACE_NAME: &str = "solvebench_trace.csv";

/// Steps to reach the target, or `None` when the run was censored at the
/// step limit or diverged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchRow {
    pub seed: u64,
    pub naive: Option<usize>,
    pub anderson: Option<usize>,
}

impl BenchRow {
    /// Anderson needed no more steps than naive iteration. A censored naive
    /// run counts as slower than any finished one.
    pub fn anderson_not_slower(&self) -> bool {
        match (self.anderson, self.naive) {
            (Some(a), Some(n)) => a <= n,
            (Some(_), None) => true,
            (None, None) => true,
            (None, Some(_)) => false,
        }
    }
}

pub fn render_steps(steps: Option<usize>, max_steps: usize) -> String {
    steps.map_or_else(|| format!(">{max_steps}"), |s| s.to_string())
}

fn steps_to_target(map: &JointMap<'_>, cfg: &SolverConfig) -> CliResult<Option<usize>> {
    match solve_equilibrium(map, cfg) {
        Ok(eq) => Ok(eq.trace.steps_to(cfg.tol)),
        Err(DeqError::Divergence { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Fixed-length trace; a divergent run keeps its partial trace.
fn fixed_trace(map: &JointMap<'_>, cfg: &SolverConfig) -> CliResult<SolverTrace> {
    match solve_equilibrium(map, cfg) {
        Ok(eq) => Ok(eq.trace),
        Err(DeqError::Divergence { trace, .. }) => Ok(trace),
        Err(e) => Err(e.into()),
    }
}

pub fn bench(cfg: &SolvebenchConfig) -> CliResult<Vec<BenchRow>> {
    cfg.validate()?;
    (cfg.seed..cfg.seed + cfg.seeds as u64)
        .map(|seed| {
            let (x, params) = random_instance(seed, cfg.n_modalities, cfg.dim, cfg.batch, cfg.groups)?;
            let map = JointMap::new(&x, &params, FusionArch::FULL)?;
            Ok(BenchRow {
                seed,
                naive: steps_to_target(&map, &cfg.solver(SolverMethod::Naive))?,
                anderson: steps_to_target(&map, &cfg.solver(SolverMethod::Anderson))?,
            })
        })
        .collect()
}

/// `step,naive,anderson` traces of the first instance over `trace_steps`
/// steps without early stopping. Naive iteration is the weight-tied
/// reference that simply re-applies the fusion layer.
pub fn traces(cfg: &SolvebenchConfig) -> CliResult<String> {
    let (x, params) = random_instance(cfg.seed, cfg.n_modalities, cfg.dim, cfg.batch, cfg.groups)?;
    let map = JointMap::new(&x, &params, FusionArch::FULL)?;
    let run = |m| {
        let mut c = cfg.solver(m);
        c.early_stop = false;
        c.max_steps = cfg.trace_steps;
        fixed_trace(&map, &c)
    };
    let naive = run(SolverMethod::Naive)?;
    let anderson = run(SolverMethod::Anderson)?;
    let cell = |t: &SolverTrace, k: usize| t.at_step(k).map_or_else(String::new, |v| format!("{v:.6e}"));
    let rows: Vec<Vec<String>> = (1..=cfg.trace_steps)
        .map(|k| vec![k.to_string(), cell(&naive, k), cell(&anderson, k)])
        .collect();
    Ok(csv(&["step", "naive", "anderson"], &rows))
}

pub fn run(cfg: &SolvebenchConfig, out: &mut dyn Write) -> CliResult<Vec<BenchRow>> {
    let rows = bench(cfg)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                render_steps(r.naive, cfg.max_steps),
                render_steps(r.anderson, cfg.max_steps),
            ]
        })
        .collect();
    write_file(&out_file(&cfg.out, CSV_NAME), &csv(&["seed", "naive_steps", "anderson_steps"], &cells))?;
    write_file(&out_file(&cfg.out, TRACE_NAME), &traces(cfg)?)?;
    let io = |e| CliError::io("<stdout>", e);
    writeln!(
        out,
        "steps to rel_diff <= {:e} (N={} d={} batch={}, memory {}, beta {})",
        cfg.target_resid, cfg.n_modalities, cfg.dim, cfg.batch, cfg.memory, cfg.beta
    )
    .map_err(io)?;
    out.write_all(table(&["seed", "naive", "anderson"], &cells).as_bytes())
        .map_err(io)?;
    let wins = rows.iter().filter(|r| r.anderson_not_slower()).count();
    writeln!(out, "anderson <= naive on {wins}/{} instances", rows.len()).map_err(io)?;
    Ok(rows)
}

use std::io::Write;

use deqfuse_core::equilibrium::random_instance;
use deqfuse_core::implicit_grad::{gradcheck, GradcheckConfig, GradcheckReport};
use deqfuse_core::layers::FusionArch;
use deqfuse_core::numcore::Rng;

use crate::config::GradcheckSettings;
use crate::error::{CliError, CliResult};
use crate::output::{csv, out_file, write_file};

pub const CSV_NAME: &str = "gradcheck.csv";

/// Worst per-group errors over seeds `seed..seed + seeds`. A report that
/// misses the tolerance is returned as an error after it is printed.
pub fn run(cfg: &GradcheckSettings, out: &mut dyn Write) -> CliResult<GradcheckReport> {
    cfg.validate()?;
    let check_cfg = GradcheckConfig {
        h: cfg.h,
        forward_tol: cfg.forward_tol,
        unrolled_steps: cfg.unrolled_steps,
        tol: cfg.tol,
        ..GradcheckConfig::default()
    };
    let mut merged: Option<GradcheckReport> = None;
    for seed in cfg.seed..cfg.seed + cfg.seeds as u64 {
        let (x, params) = random_instance(seed, cfg.n_modalities, cfg.dim, cfg.batch, cfg.groups)?;
        let g = Rng::new(seed).fork().randn(cfg.batch, cfg.dim, 1.0);
        let report = gradcheck(&x, &params, FusionArch::FULL, &g, &check_cfg)?;
        match &mut merged {
            None => merged = Some(report),
            Some(m) => m.merge_worst(&report),
        }
    }
    let report = merged.expect("at least one seed");
    let rows: Vec<Vec<String>> = report
        .groups
        .iter()
        .map(|g| {
            vec![
                g.name.clone(),
                format!("{:.6e}", g.fd_error),
                g.unrolled_error.map_or_else(String::new, |e| format!("{e:.6e}")),
            ]
        })
        .collect();
    let path = out_file(&cfg.out, CSV_NAME);
    write_file(&path, &csv(&["group", "fd_rel_err", "unrolled_rel_err"], &rows))?;
    let io = |e| CliError::io("<stdout>", e);
    writeln!(
        out,
        "gradcheck: N={} d={} batch={} seeds {}..{}",
        cfg.n_modalities,
        cfg.dim,
        cfg.batch,
        cfg.seed,
        cfg.seed + cfg.seeds as u64 - 1
    )
    .map_err(io)?;
    writeln!(out, "{report}").map_err(io)?;
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::Numeric(format!(
            "gradcheck failed: max error {:.3e} >= tol {:.1e}",
            report.max_error(),
            cfg.tol
        )))
    }
}

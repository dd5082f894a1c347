use std::io::Write;

use deqfuse_core::training::{AblationVariant, Metrics};
use rayon::prelude::*;

use super::train::train_once;
use crate::config::TrainSettings;
use crate::error::{CliError, CliResult};
use crate::output::{csv, out_file, table, write_file};

pub const CSV_NAME: &str = "ablate.csv";
pub const RUNS_CSV_NAME: &str = "ablate_runs.csv";
pub const THREADS_ENV: &str = "DEQFUSE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: AblationVariant,
    pub seed: u64,
    /// Final test metrics, or why training stopped.
    pub outcome: Result<Metrics, String>,
}

/// Mean and sample standard deviation, in percent, over the completed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub completed: usize,
    pub failed: usize,
    pub accuracy: (f64, f64),
    pub macro_f1: (f64, f64),
    pub weighted_f1: (f64, f64),
}

impl VariantSummary {
    fn from_runs(variant: AblationVariant, runs: &[RunResult]) -> Self {
        let ok: Vec<Metrics> = runs
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.outcome.as_ref().ok().copied())
            .collect();
        let total = runs.iter().filter(|r| r.variant == variant).count();
        let stat = |f: fn(&Metrics) -> f64| mean_std(&ok.iter().map(|m| 100.0 * f(m)).collect::<Vec<_>>());
        Self {
            variant,
            completed: ok.len(),
            failed: total - ok.len(),
            accuracy: stat(|m| m.accuracy),
            macro_f1: stat(|m| m.macro_f1),
            weighted_f1: stat(|m| m.weighted_f1),
        }
    }

    fn cells(&self) -> Vec<String> {
        let fmt = |(m, s): (f64, f64)| {
            if self.completed == 0 {
                ("failed".to_string(), "failed".to_string())
            } else {
                (format!("{m:.2}"), format!("{s:.2}"))
            }
        };
        let (am, asd) = fmt(self.accuracy);
        let (mm, msd) = fmt(self.macro_f1);
        let (wm, wsd) = fmt(self.weighted_f1);
        vec![
            self.variant.to_string(),
            self.completed.to_string(),
            self.failed.to_string(),
            am,
            asd,
            mm,
            msd,
            wm,
            wsd,
        ]
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Thread cap from `DEQFUSE_THREADS`, if set.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::validation(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
    }
}

/// Trains every variant on every seed. Runs are independent and may execute
/// on several threads; results come back in (variant, seed) order.
pub fn sweep(cfg: &TrainSettings, threads: Option<usize>) -> CliResult<Vec<RunResult>> {
    cfg.validate()?;
    let jobs: Vec<(AblationVariant, u64)> = AblationVariant::ALL
        .into_iter()
        .flat_map(|v| (cfg.seed..cfg.seed + cfg.seeds as u64).map(move |s| (v, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::validation(e.to_string()))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed)| RunResult {
                variant,
                seed,
                outcome: train_once(cfg, variant, seed)
                    .map(|r| r.final_metrics())
                    .map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

pub fn summarize(runs: &[RunResult]) -> Vec<VariantSummary> {
    AblationVariant::ALL
        .into_iter()
        .map(|v| VariantSummary::from_runs(v, runs))
        .collect()
}

const HEADER: [&str; 9] = [
    "variant",
    "completed",
    "failed",
    "acc_mean",
    "acc_std",
    "macro_f1_mean",
    "macro_f1_std",
    "weighted_f1_mean",
    "weighted_f1_std",
];

pub fn summary_csv(rows: &[VariantSummary]) -> String {
    csv(&HEADER, &rows.iter().map(VariantSummary::cells).collect::<Vec<_>>())
}

/// Aligned text table with `mean ± std` cells, in percent.
pub fn summary_table(rows: &[VariantSummary]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let c = r.cells();
            let pm = |m: &str, s: &str| if m == "failed" { m.to_string() } else { format!("{m} ± {s}") };
            vec![
                c[0].clone(),
                format!("{}/{}", r.completed, r.completed + r.failed),
                pm(&c[3], &c[4]),
                pm(&c[5], &c[6]),
                pm(&c[7], &c[8]),
            ]
        })
        .collect();
    table(&["variant", "runs", "accuracy %", "macro-F1 %", "weighted-F1 %"], &body)
}

pub fn runs_csv(runs: &[RunResult]) -> String {
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| match &r.outcome {
            Ok(m) => vec![
                r.variant.to_string(),
                r.seed.to_string(),
                "ok".into(),
                format!("{:.6}", m.accuracy),
                format!("{:.6}", m.macro_f1),
                format!("{:.6}", m.weighted_f1),
            ],
            Err(_) => vec![
                r.variant.to_string(),
                r.seed.to_string(),
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
            ],
        })
        .collect();
    csv(&["variant", "seed", "status", "accuracy", "macro_f1", "weighted_f1"], &rows)
}

pub fn run(cfg: &TrainSettings, out: &mut dyn Write) -> CliResult<Vec<VariantSummary>> {
    let threads = thread_cap()?;
    let runs = sweep(cfg, threads)?;
    let rows = summarize(&runs);
    write_file(&out_file(&cfg.out, CSV_NAME), &summary_csv(&rows))?;
    write_file(&out_file(&cfg.out, RUNS_CSV_NAME), &runs_csv(&runs))?;
    let io = |e| CliError::io("<stdout>", e);
    writeln!(
        out,
        "ablation over seeds {}..{} ({} epochs each)",
        cfg.seed,
        cfg.seed + cfg.seeds as u64 - 1,
        cfg.epochs
    )
    .map_err(io)?;
    out.write_all(summary_table(&rows).as_bytes()).map_err(io)?;
    for r in runs.iter().filter(|r| r.outcome.is_err()) {
        writeln!(out, "failed: {} seed {}: {}", r.variant, r.seed, r.outcome.as_ref().unwrap_err()).map_err(io)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(acc: f64) -> Metrics {
        Metrics {
            accuracy: acc,
            macro_f1: acc,
            weighted_f1: acc,
        }
    }

    #[test]
    fn failed_runs_are_excluded_and_counted() {
        let runs = vec![
            RunResult {
                variant: AblationVariant::Full,
                seed: 0,
                outcome: Ok(m(0.9)),
            },
            RunResult {
                variant: AblationVariant::Full,
                seed: 1,
                outcome: Ok(m(0.7)),
            },
            RunResult {
                variant: AblationVariant::NoGate,
                seed: 0,
                outcome: Err("diverged".into()),
            },
        ];
        let rows = summarize(&runs);
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.last().unwrap().variant, AblationVariant::Full);
        let full = rows.last().unwrap();
        assert_eq!((full.completed, full.failed), (2, 0));
        assert!((full.accuracy.0 - 80.0).abs() < 1e-12);
        assert!((full.accuracy.1 - 200f64.sqrt()).abs() < 1e-9);
        let gate = rows.iter().find(|r| r.variant == AblationVariant::NoGate).unwrap();
        assert_eq!((gate.completed, gate.failed), (0, 1));
        assert!(summary_table(&rows).contains("failed"));
        assert!(summary_csv(&rows).contains("no-gate,0,1,failed"));
    }

    #[test]
    fn mean_std_edge_cases() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}

use std::io::Write;
use std::path::PathBuf;

use deqfuse_core::numcore::Rng;
use deqfuse_core::training::{
    gen_signproduct, history_csv, init_model, jacobian_estimate, train_from, AblationVariant, Metrics, Model,
    TrainResult,
};
use deqfuse_core::DeqError;

use crate::checkpoint::Checkpoint;
use crate::config::TrainSettings;
use crate::error::{CliError, CliResult};
use crate::output::{out_file, write_file};

pub const HISTORY_NAME: &str = "history.csv";
pub const CHECKPOINT_NAME: &str = "checkpoint.json";
pub const ABORT_NAME: &str = "abort.txt";

/// Test samples, probes and probe seed of the reported Jacobian estimate.
pub const JAC_SAMPLES: usize = 256;
pub const JAC_PROBES: usize = 16;
pub const JAC_SEED: u64 = 99;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Metrics,
    /// Hutchinson estimate at the final parameters, for equilibrium variants.
    pub jacobian: Option<f64>,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

/// One training run of `variant` on the sign-product task drawn from `seed`.
pub fn train_once(cfg: &TrainSettings, variant: AblationVariant, seed: u64) -> CliResult<TrainResult> {
    let spec = cfg.task()?;
    let tc = cfg.train_config(variant, seed)?;
    let data = gen_signproduct(&spec, &mut Rng::new(seed))?;
    Ok(train_from(init_model(&data, &tc)?, &data, &tc)?)
}

pub fn run(cfg: &TrainSettings, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let variant = cfg.variant()?;
    let spec = cfg.task()?;
    let tc = cfg.train_config(variant, cfg.seed)?;
    let data = gen_signproduct(&spec, &mut Rng::new(cfg.seed))?;
    let init = init_model(&data, &tc)?;
    let res = match train_from(init, &data, &tc) {
        Ok(r) => r,
        Err(e @ DeqError::TrainingAborted { .. }) => {
            let path = out_file(&cfg.out, ABORT_NAME);
            write_file(&path, &format!("variant {variant}, seed {}\n{e}\n{cfg:#?}\n", cfg.seed))?;
            return Err(CliError::Numeric(format!("{e} (diagnostics in {})", path.display())));
        }
        Err(e) => return Err(e.into()),
    };
    let history = out_file(&cfg.out, HISTORY_NAME);
    write_file(&history, &history_csv(&res.history))?;
    let checkpoint = out_file(&cfg.out, CHECKPOINT_NAME);
    Checkpoint::from_model(&res.model, cfg.seed, &format!("train:{variant}")).save(&checkpoint)?;
    let jacobian = if variant.is_equilibrium() {
        Some(jacobian_estimate(
            &res.model,
            &data.test,
            variant,
            &tc.solver,
            JAC_SAMPLES,
            JAC_PROBES,
            JAC_SEED,
        )?)
    } else {
        None
    };
    let metrics = res.final_metrics();
    let io = |e| CliError::io("<stdout>", e);
    writeln!(
        out,
        "variant {variant}, seed {}, {} epochs, final train loss {:.4}",
        cfg.seed,
        tc.epochs,
        res.history.last().map_or(f64::NAN, |r| r.train_loss)
    )
    .map_err(io)?;
    writeln!(
        out,
        "test accuracy {:.4}  macro-F1 {:.4}  weighted-F1 {:.4}",
        metrics.accuracy, metrics.macro_f1, metrics.weighted_f1
    )
    .map_err(io)?;
    if let Some(j) = jacobian {
        writeln!(out, "jacobian estimate {j:.6}").map_err(io)?;
    }
    writeln!(out, "history {}, checkpoint {}", history.display(), checkpoint.display()).map_err(io)?;
    Ok(TrainOutcome {
        model: res.model,
        metrics,
        jacobian,
        checkpoint,
        history,
    })
}

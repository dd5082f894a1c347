//! Per-command settings. Each command starts from its defaults, overlays an
//! optional JSON file, then overlays the flags given on the command line.

use std::path::{Path, PathBuf};

use deqfuse_core::equilibrium::{SolverConfig, SolverMethod};
use deqfuse_core::training::{AblationVariant, LabelRule, OptimizerKind, SyntheticTaskSpec, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_OUT: &str = "deqfuse-out";

fn default_out() -> PathBuf {
    PathBuf::from(DEFAULT_OUT)
}

/// Reads a JSON object of settings. Keys in `forbidden` are rejected on top
/// of the struct's own unknown-key check.
pub fn load_json<T: DeserializeOwned>(path: &Path, forbidden: &[&str]) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object() {
        if let Some(key) = obj.keys().find(|k| forbidden.contains(&k.as_str())) {
            return Err(CliError::validation(format!(
                "{}: unknown field `{key}` for this command",
                path.display()
            )));
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Defaults, overlaid by `file` when given.
pub fn base_config<T: DeserializeOwned + Default>(file: Option<&Path>, forbidden: &[&str]) -> CliResult<T> {
    match file {
        Some(p) => load_json(p, forbidden),
        None => Ok(T::default()),
    }
}

/// Copies every flag that was given onto the matching config field.
#[macro_export]
macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = $args.$field.clone() {
                $cfg.$field = v;
            }
        )*
    };
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(msg()))
    }
}

fn parse<T: std::str::FromStr<Err = deqfuse_core::DeqError>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: deqfuse_core::DeqError| CliError::validation(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub n_modalities: usize,
    pub dim: usize,
    pub batch: usize,
    pub groups: usize,
    pub solver: String,
    pub steps: usize,
    pub memory: usize,
    pub beta: f64,
    pub lambda: f64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            seed: 0,
            out: default_out(),
            n_modalities: 3,
            dim: 64,
            batch: 8,
            groups: 1,
            solver: "anderson".into(),
            steps: 100,
            memory: s.memory,
            beta: s.beta,
            lambda: s.lambda,
            checkpoint: None,
        }
    }
}

impl ConvergeConfig {
    /// Fixed-length run: no early stop.
    pub fn solver_config(&self) -> CliResult<SolverConfig> {
        check(self.n_modalities > 0 && self.dim > 0 && self.batch > 0, || {
            "n_modalities, dim and batch must be positive".into()
        })?;
        let cfg = SolverConfig {
            method: parse::<SolverMethod>(&self.solver)?,
            tol: f64::MIN_POSITIVE,
            max_steps: self.steps,
            memory: self.memory,
            beta: self.beta,
            lambda: self.lambda,
            early_stop: false,
            keep_iterates: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub seed: u64,
    pub out: PathBuf,
    pub n_modalities: usize,
    pub dim: usize,
    pub batch: usize,
    pub groups: usize,
    pub seeds: usize,
    pub tol: f64,
    pub h: f64,
    pub forward_tol: f64,
    pub unrolled_steps: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        let g = deqfuse_core::implicit_grad::GradcheckConfig::default();
        Self {
            seed: 0,
            out: default_out(),
            n_modalities: 2,
            dim: 6,
            batch: 2,
            groups: 1,
            seeds: 5,
            tol: g.tol,
            h: g.h,
            forward_tol: g.forward_tol,
            unrolled_steps: g.unrolled_steps,
        }
    }
}

impl GradcheckSettings {
    pub fn validate(&self) -> CliResult<()> {
        check(self.n_modalities > 0 && self.dim > 0 && self.batch > 0 && self.seeds > 0, || {
            "n_modalities, dim, batch and seeds must be positive".into()
        })?;
        check(self.tol > 0.0 && self.h > 0.0 && self.forward_tol > 0.0, || {
            "tol, h and forward_tol must be positive".into()
        })
    }
}

/// Shared by `train` (which takes `variant`) and `ablate` (which takes
/// `seeds`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub seed: u64,
    pub out: PathBuf,
    pub variant: String,
    pub seeds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Separate learning rate for the fusion parameters.
    pub fusion_lr: Option<f64>,
    pub optimizer: String,
    pub gamma: f64,
    pub jac_probes: usize,
    pub width: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub label_rule: String,
    pub groups: usize,
    pub init_gain: f64,
    pub solver: String,
    pub solver_tol: f64,
    pub solver_max_steps: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let task = SyntheticTaskSpec::default();
        Self {
            seed: 0,
            out: default_out(),
            variant: t.variant.as_str().into(),
            seeds: 5,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            fusion_lr: t.fusion_lr,
            optimizer: t.optimizer.as_str().into(),
            gamma: t.gamma,
            jac_probes: t.jac_probes,
            width: task.width,
            sigma: task.sigma,
            n_train: task.n_train,
            n_test: task.n_test,
            label_rule: task.rule.as_str().into(),
            groups: t.groups,
            init_gain: t.init_gain,
            solver: t.solver.method.as_str().into(),
            solver_tol: t.solver.tol,
            solver_max_steps: t.solver.max_steps,
        }
    }
}

impl TrainSettings {
    pub const TRAIN_ONLY: &'static [&'static str] = &["variant"];
    pub const ABLATE_ONLY: &'static [&'static str] = &["seeds"];

    pub fn variant(&self) -> CliResult<AblationVariant> {
        parse(&self.variant)
    }

    pub fn task(&self) -> CliResult<SyntheticTaskSpec> {
        let spec = SyntheticTaskSpec {
            width: self.width,
            sigma: self.sigma,
            n_train: self.n_train,
            n_test: self.n_test,
            rule: parse::<LabelRule>(&self.label_rule)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Training configuration for one run of `variant` at `seed`.
    pub fn train_config(&self, variant: AblationVariant, seed: u64) -> CliResult<TrainConfig> {
        check(self.init_gain > 0.0, || format!("init_gain must be > 0, got {}", self.init_gain))?;
        let solver = SolverConfig {
            method: parse::<SolverMethod>(&self.solver)?,
            ..SolverConfig::default()
        }
        .with_tol(self.solver_tol)
        .with_max_steps(self.solver_max_steps);
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            fusion_lr: self.fusion_lr,
            optimizer: parse::<OptimizerKind>(&self.optimizer)?,
            gamma: self.gamma,
            jac_probes: self.jac_probes,
            seed,
            solver,
            variant,
            groups: self.groups,
            init_gain: self.init_gain,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.variant()?;
        self.task()?;
        check(self.seeds > 0, || "seeds must be >= 1".into())?;
        self.train_config(AblationVariant::Full, self.seed).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolvebenchConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub n_modalities: usize,
    pub dim: usize,
    pub batch: usize,
    pub groups: usize,
    pub seeds: usize,
    pub target_resid: f64,
    pub max_steps: usize,
    pub memory: usize,
    pub beta: f64,
    pub lambda: f64,
    /// Length of the side-by-side trace of the first instance.
    pub trace_steps: usize,
}

impl Default for SolvebenchConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            seed: 0,
            out: default_out(),
            n_modalities: 3,
            dim: 64,
            batch: 8,
            groups: 1,
            seeds: 10,
            target_resid: 1e-3,
            max_steps: 1000,
            memory: s.memory,
            beta: s.beta,
            lambda: s.lambda,
            trace_steps: 100,
        }
    }
}

impl SolvebenchConfig {
    pub fn validate(&self) -> CliResult<()> {
        check(self.n_modalities > 0 && self.dim > 0 && self.batch > 0 && self.seeds > 0, || {
            "n_modalities, dim, batch and seeds must be positive".into()
        })?;
        check(self.target_resid > 0.0, || "target_resid must be > 0".into())?;
        check(self.trace_steps > 0, || "trace_steps must be >= 1".into())?;
        self.solver(SolverMethod::Anderson).validate()?;
        Ok(())
    }

    /// Solver stopping at the target within `max_steps`.
    pub fn solver(&self, method: SolverMethod) -> SolverConfig {
        SolverConfig {
            method,
            tol: self.target_resid,
            max_steps: self.max_steps,
            memory: self.memory,
            beta: self.beta,
            lambda: self.lambda,
            early_stop: true,
            keep_iterates: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ConvergeConfig::default().solver_config().unwrap();
        GradcheckSettings::default().validate().unwrap();
        TrainSettings::default().validate().unwrap();
        SolvebenchConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_and_forbidden_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"dim": 4, "bogus": 1}"#).unwrap();
        assert!(matches!(load_json::<ConvergeConfig>(&p, &[]), Err(CliError::Validation(_))));
        std::fs::write(&p, r#"{"seeds": 3}"#).unwrap();
        assert!(load_json::<TrainSettings>(&p, TrainSettings::ABLATE_ONLY).is_err());
        assert_eq!(load_json::<TrainSettings>(&p, TrainSettings::TRAIN_ONLY).unwrap().seeds, 3);
    }

    #[test]
    fn file_values_fill_missing_fields_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"dim": 4}"#).unwrap();
        let c: ConvergeConfig = load_json(&p, &[]).unwrap();
        assert_eq!(c, ConvergeConfig { dim: 4, ..ConvergeConfig::default() });
    }

    #[test]
    fn bad_enum_strings_are_validation_errors() {
        let c = ConvergeConfig {
            solver: "broyden".into(),
            ..ConvergeConfig::default()
        };
        assert!(matches!(c.solver_config(), Err(CliError::Validation(_))));
        let t = TrainSettings {
            variant: "nope".into(),
            ..TrainSettings::default()
        };
        assert!(t.validate().is_err());
    }
}

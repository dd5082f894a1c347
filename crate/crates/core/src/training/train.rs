use super::data::{Dataset, TaskData};
use super::metrics::{metrics, Metrics};
use super::model::{cross_entropy, Model};
use super::optim::{Optimizer, OptimizerKind};
use super::variant::{forward_predict, loss_and_grads, AblationVariant, StepConfig};
use crate::equilibrium::SolverConfig;
use crate::error::{DeqError, Result};
use crate::equilibrium::{solve_equilibrium, JointMap};
use crate::implicit_grad::{default_backward_config, jacobian_reg};
use crate::layers::FusionParams;
use crate::numcore::{Rng, Tensor2};

/// Weight gain for training on the synthetic task, whose input entries have
/// a standard deviation of about 0.4 rather than 1.
pub const TASK_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the fusion parameters when it differs from `lr`,
    /// which then only applies to the head.
    pub fusion_lr: Option<f64>,
    pub optimizer: OptimizerKind,
    /// Jacobian-penalty weight.
    pub gamma: f64,
    pub jac_probes: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub backward: SolverConfig,
    pub variant: AblationVariant,
    pub groups: usize,
    pub init_gain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            fusion_lr: None,
            optimizer: OptimizerKind::ADAM,
            gamma: 0.1,
            jac_probes: 1,
            seed: 0,
            solver: SolverConfig::default(),
            backward: default_backward_config(),
            variant: AblationVariant::Full,
            groups: 1,
            init_gain: TASK_INIT_GAIN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DeqError::config("epochs and batch size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(DeqError::config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if let Some(f) = self.fusion_lr {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(DeqError::config(format!("fusion learning rate must be >= 0, got {f}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DeqError::config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.jac_probes == 0 {
            return Err(DeqError::config("jac_probes must be >= 1"));
        }
        self.solver.validate()?;
        self.backward.validate()
    }

    fn step_config(&self) -> StepConfig {
        StepConfig {
            solver: self.solver.clone(),
            backward: self.backward.clone(),
            gamma: self.gamma,
            jac_probes: self.jac_probes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

impl TrainResult {
    pub fn final_metrics(&self) -> Metrics {
        self.history.last().map(|r| r.test).unwrap_or_default()
    }
}

/// `epoch,train_loss,test_acc,macro_f1,weighted_f1` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,test_acc,macro_f1,weighted_f1\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6e},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.test.accuracy, r.test.macro_f1, r.test.weighted_f1
        ));
    }
    out
}

/// Initial model for a task. Weights come from a stream forked off
/// `cfg.seed`, independent of a task generated from `Rng::new(cfg.seed)`.
pub fn init_model(data: &TaskData, cfg: &TrainConfig) -> Result<Model> {
    let mut rng = Rng::new(cfg.seed).fork();
    let n = data.train.x.n_modalities();
    let d = data.train.x.width();
    let fusion = FusionParams::init_with_gain(&mut rng, n, d, cfg.groups, cfg.init_gain)?;
    let head = super::model::HeadParams::init(&mut rng, d, data.train.classes)?;
    Ok(Model { fusion, head })
}

/// Metrics of `model` on `data`, evaluated in batches of `batch_size`.
pub fn evaluate(model: &Model, data: &Dataset, variant: AblationVariant, solver: &SolverConfig, batch_size: usize) -> Result<(f64, Metrics)> {
    let mut logits = Vec::with_capacity(data.len() * model.head.classes());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (l, _) = forward_predict(&data.x.select_rows(chunk), model, variant, solver)?;
        logits.extend_from_slice(l.data());
    }
    let logits = Tensor2::new(data.len(), model.head.classes(), logits)?;
    let (loss, _) = cross_entropy(&logits, &data.labels)?;
    Ok((loss, metrics(&logits, &data.labels)?))
}

/// Hutchinson estimate of the Jacobian penalty at the equilibrium of the
/// first `samples` rows of `data`, with probes drawn from `seed`.
pub fn jacobian_estimate(
    model: &Model,
    data: &Dataset,
    variant: AblationVariant,
    solver: &SolverConfig,
    samples: usize,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let arch = variant
        .arch()
        .ok_or_else(|| DeqError::config(format!("variant '{variant}' has no fusion layer")))?;
    let idx: Vec<usize> = (0..samples.min(data.len())).collect();
    let x = data.x.select_rows(&idx);
    let map = JointMap::new(&x, &model.fusion, arch)?;
    let eq = solve_equilibrium(&map, solver)?;
    jacobian_reg(&map, &eq.state, &mut Rng::new(seed), probes)
}

/// Trains from [`init_model`].
pub fn train(data: &TaskData, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    train_from(init_model(data, cfg)?, data, cfg)
}

/// Minibatch training: forward solve, cross-entropy plus the weighted
/// Jacobian penalty, exact gradients, optimizer step. Test metrics are
/// recorded after every epoch.
pub fn train_from(mut model: Model, data: &TaskData, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let step_cfg = cfg.step_config();
    let mut rng = Rng::new(cfg.seed ^ 0x5EED_0F_7EA1);
    let mut flat = model.flatten();
    let split = model.fusion.n_values();
    let mut fusion_opt = Optimizer::new(cfg.optimizer, cfg.fusion_lr.unwrap_or(cfg.lr), split);
    let mut head_opt = Optimizer::new(cfg.optimizer, cfg.lr, flat.len() - split);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.train.subset(chunk);
            let abort = |reason: String| DeqError::TrainingAborted { epoch, step, reason };
            let out = loss_and_grads(&batch.x, &batch.labels, &model, cfg.variant, &step_cfg, &mut rng)
                .map_err(|e| abort(e.to_string()))?;
            if !out.loss.is_finite() {
                return Err(abort(format!(
                    "non-finite loss {} (cross-entropy {}, penalty {:?})",
                    out.loss, out.cross_entropy, out.jacobian_penalty
                )));
            }
            let grads = out.grads.flatten();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(abort("non-finite gradient".into()));
            }
            let (fusion_part, head_part) = flat.split_at_mut(split);
            fusion_opt.step(fusion_part, &grads[..split])?;
            head_opt.step(head_part, &grads[split..])?;
            model.assign_flat(&flat)?;
            loss_sum += out.loss;
            batches += 1;
        }
        let (_, test) = evaluate(&model, &data.test, cfg.variant, &cfg.solver, cfg.batch_size.max(256))
            .map_err(|e| DeqError::TrainingAborted {
                epoch,
                step: batches,
                reason: format!("evaluation failed: {e}"),
            })?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            test,
        });
    }
    Ok(TrainResult { model, history })
}

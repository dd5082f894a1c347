use super::model::{cross_entropy, Model};
use crate::equilibrium::{solve_equilibrium, EquilibriumState, JointMap, SolverConfig, SolverTrace};
use crate::error::{DeqError, Result};
use crate::implicit_grad::{
    accumulate_params, backward_unrolled, default_backward_config, draw_probes, implicit_backward,
    jacobian_reg_grad,
};
use crate::layers::{injected_fusion, FuseMode, FusionArch, FusionParams, ModalityBundle, ModalityMode};
use crate::numcore::{Rng, Tensor2};

/// The full model and the ablations of its components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    /// Equilibrium of residual modality blocks and gated fusion.
    Full,
    /// `head(Σ w_i x_i)` with no fusion layer.
    WeightedSumOnly,
    /// One sweep from the zero state instead of the equilibrium.
    NoDeq,
    /// `z_fuse* = Σ z_i*`.
    NoFuse,
    /// `z_i* = x_i`.
    NoTheta,
    /// `z_i′ = z_i` in place of the gated purification.
    NoGate,
}

impl AblationVariant {
    /// Ablations first, the full model last.
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::WeightedSumOnly,
        AblationVariant::NoDeq,
        AblationVariant::NoFuse,
        AblationVariant::NoTheta,
        AblationVariant::NoGate,
        AblationVariant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::WeightedSumOnly => "weighted-sum",
            AblationVariant::NoDeq => "no-deq",
            AblationVariant::NoFuse => "no-fuse",
            AblationVariant::NoTheta => "no-theta",
            AblationVariant::NoGate => "no-gate",
        }
    }

    /// Layer configuration of the fusion system, if the variant has one.
    pub fn arch(self) -> Option<FusionArch> {
        let (modality, fuse) = match self {
            AblationVariant::Full | AblationVariant::NoDeq => (ModalityMode::Residual, FuseMode::Gated),
            AblationVariant::NoFuse => (ModalityMode::Residual, FuseMode::Sum),
            AblationVariant::NoTheta => (ModalityMode::Identity, FuseMode::Gated),
            AblationVariant::NoGate => (ModalityMode::Residual, FuseMode::Ungated),
            AblationVariant::WeightedSumOnly => return None,
        };
        Some(FusionArch { modality, fuse })
    }

    /// Whether the variant solves for an equilibrium.
    pub fn is_equilibrium(self) -> bool {
        !matches!(self, AblationVariant::WeightedSumOnly | AblationVariant::NoDeq)
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = DeqError;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| DeqError::config(format!("unknown variant '{s}'")))
    }
}

/// Fused representation the head sees, plus the equilibrium when one was
/// solved.
fn fused(
    x: &ModalityBundle,
    params: &FusionParams,
    variant: AblationVariant,
    cfg: &SolverConfig,
) -> Result<(Tensor2, Option<EquilibriumState>)> {
    match variant.arch() {
        None => Ok((injected_fusion(x, params.modality_weights.data())?, None)),
        Some(arch) => {
            let map = JointMap::new(x, params, arch)?;
            if variant.is_equilibrium() {
                let eq = solve_equilibrium(&map, cfg)?;
                Ok((eq.state.z_fuse.clone(), Some(eq)))
            } else {
                Ok((map.apply(&map.zero_state())?.z_fuse, None))
            }
        }
    }
}

/// Logits of the variant's pipeline followed by the head.
pub fn forward_predict(
    x: &ModalityBundle,
    model: &Model,
    variant: AblationVariant,
    cfg: &SolverConfig,
) -> Result<(Tensor2, Option<EquilibriumState>)> {
    let (z, eq) = fused(x, &model.fusion, variant, cfg)?;
    Ok((model.head.logits(&z)?, eq))
}

/// Solver settings and regularization for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub solver: SolverConfig,
    pub backward: SolverConfig,
    /// Weight of the Jacobian penalty; 0 disables it.
    pub gamma: f64,
    pub jac_probes: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            backward: default_backward_config(),
            gamma: 0.0,
            jac_probes: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Cross-entropy plus the weighted Jacobian penalty.
    pub loss: f64,
    pub cross_entropy: f64,
    pub jacobian_penalty: Option<f64>,
    pub logits: Tensor2,
    pub grads: Model,
    pub trace: Option<SolverTrace>,
}

/// Loss and exact gradients of one minibatch for the given variant.
///
/// Equilibrium variants differentiate implicitly, `NoDeq` by reverse-mode
/// through its single sweep. The Jacobian penalty applies to equilibrium
/// variants only.
pub fn loss_and_grads(
    x: &ModalityBundle,
    labels: &[usize],
    model: &Model,
    variant: AblationVariant,
    cfg: &StepConfig,
    rng: &mut Rng,
) -> Result<StepOutput> {
    let (z, eq) = fused(x, &model.fusion, variant, &cfg.solver)?;
    let logits = model.head.logits(&z)?;
    let (ce, d_logits) = cross_entropy(&logits, labels)?;
    let (dz, head_grads) = model.head.vjp(&z, &d_logits)?;
    let mut grads = Model {
        fusion: model.fusion.zeros_like(),
        head: head_grads,
    };
    let mut penalty = None;
    match variant.arch() {
        None => {
            for i in 0..x.n_modalities() {
                grads.fusion.modality_weights.data_mut()[i] = dz.dot(x.get(i))?;
            }
        }
        Some(arch) => {
            let map = JointMap::new(x, &model.fusion, arch)?;
            match &eq {
                Some(eq) => {
                    let (g, _) = implicit_backward(&map, &eq.state, &dz, &cfg.backward)?;
                    grads.fusion = g.params;
                    if cfg.gamma > 0.0 {
                        let probes = draw_probes(&map, rng, cfg.jac_probes.max(1));
                        let (value, g_jac) = jacobian_reg_grad(&map, &eq.state, &probes)?;
                        let mut scaled = g_jac;
                        scaled.visit_mut(|_, t| *t = t.scale(cfg.gamma));
                        accumulate_params(&mut grads.fusion, &scaled)?;
                        penalty = Some(value);
                    }
                }
                None => grads.fusion = backward_unrolled(&map, &dz, 1)?.params,
            }
        }
    }
    Ok(StepOutput {
        loss: ce + cfg.gamma * penalty.unwrap_or(0.0),
        cross_entropy: ce,
        jacobian_penalty: penalty,
        logits,
        grads,
        trace: eq.map(|e| e.trace),
    })
}

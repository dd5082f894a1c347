use super::block::CacheMode;
use super::params::{FusionParams, GateActivation, ModalityBundle};
use super::primitives::GroupNormAffine;
use super::primitives::{
    affine, affine_vjp, group_norm, group_norm_vjp, relu, relu_vjp, sigmoid, sigmoid_vjp, sum_all,
    GroupNormCache,
};
use crate::error::{DeqError, Result};
use crate::numcore::Tensor2;

/// How the fused state is recomputed from the modality states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseMode {
    /// Purify the fused state with per-modality gates, then combine.
    Gated,
    /// Gates disabled: the purified features are the modality states.
    Ungated,
    /// No fusion block at all: `z_fuse = Σ z_i`.
    Sum,
}

/// Gate logits `θ_α(z_fuse + z_i) + b_α`, optionally squashed.
///
/// The gate parameters are shared by every modality.
pub fn gate(z_fuse: &Tensor2, z_i: &Tensor2, params: &FusionParams) -> Result<Tensor2> {
    let logits = affine(&z_fuse.add(z_i)?, &params.gate_weight, &params.gate_bias)?;
    Ok(match params.gate_activation {
        GateActivation::Identity => logits,
        GateActivation::Sigmoid => sigmoid(&logits),
    })
}

/// `x_fuse = Σ w_i x_i`.
pub fn injected_fusion(x: &ModalityBundle, weights: &[f64]) -> Result<Tensor2> {
    if weights.len() != x.n_modalities() {
        return Err(DeqError::config(format!(
            "{} modality weights for {} modalities",
            weights.len(),
            x.n_modalities()
        )));
    }
    let mut acc = Tensor2::zeros(x.batch(), x.width());
    for (xi, &w) in x.features().iter().zip(weights) {
        acc.axpy(w, xi)?;
    }
    Ok(acc)
}

/// Intermediates of one fusion-step evaluation.
#[derive(Debug, Clone)]
pub struct FuseCache {
    pub mode: FuseMode,
    pub z_fuse: Tensor2,
    /// `z_fuse + z_i` per modality (gated mode only).
    pub gate_inputs: Vec<Tensor2>,
    /// `α_i` per modality (gated mode only).
    pub alphas: Vec<Tensor2>,
    /// `z_i′` per modality.
    pub purified: Vec<Tensor2>,
    /// `ẑ_fuse`
    pub z_hat_fuse: Tensor2,
    /// `ẑ_fuse + x_fuse`
    pub pre_act: Tensor2,
    pub gn: Option<GroupNormCache>,
}

#[derive(Debug, Clone)]
pub struct FuseEval {
    pub output: Tensor2,
    pub cache: Option<FuseCache>,
}

/// Cotangents produced by [`FuseEval::vjp`].
#[derive(Debug, Clone)]
pub struct FuseGrads {
    pub dz_fuse: Tensor2,
    pub dz: Vec<Tensor2>,
    pub dx_fuse: Tensor2,
    pub gate_weight: Tensor2,
    pub gate_bias: Tensor2,
    pub fuse_weight: Tensor2,
    pub fuse_bias: Tensor2,
    pub gn_fuse: GroupNormAffine,
}

/// `f_fuse(z_fuse; x)` in the gated purify-then-combine form:
///
/// ```text
/// α_i    = θ_α(z_fuse + z_i) + b_α
/// z_i′   = α_i ⊙ z_fuse
/// ẑ_fuse = θ_fuse Σ z_i′ + b_fuse
/// out    = GN(ReLU(ẑ_fuse + x_fuse))
/// ```
pub fn fuse_step(
    z_fuse: &Tensor2,
    z_all: &[Tensor2],
    x_fuse: &Tensor2,
    params: &FusionParams,
    cache: CacheMode,
) -> Result<FuseEval> {
    fuse_step_with(FuseMode::Gated, z_fuse, z_all, x_fuse, params, cache)
}

pub fn fuse_step_with(
    mode: FuseMode,
    z_fuse: &Tensor2,
    z_all: &[Tensor2],
    x_fuse: &Tensor2,
    params: &FusionParams,
    cache: CacheMode,
) -> Result<FuseEval> {
    if z_all.is_empty() {
        return Err(DeqError::config("fusion step needs at least one modality"));
    }
    for t in z_all.iter().chain([x_fuse]) {
        if t.shape() != z_fuse.shape() {
            return Err(DeqError::shape("fuse_step", z_fuse.shape(), t.shape()));
        }
    }
    if z_fuse.cols() != params.width {
        return Err(DeqError::shape("fuse_step", z_fuse.shape(), (z_fuse.rows(), params.width)));
    }

    if mode == FuseMode::Sum {
        let output = sum_all(z_all)?;
        let cache = (cache == CacheMode::Keep).then(|| FuseCache {
            mode,
            z_fuse: z_fuse.clone(),
            gate_inputs: Vec::new(),
            alphas: Vec::new(),
            purified: z_all.to_vec(),
            z_hat_fuse: output.clone(),
            pre_act: output.clone(),
            gn: None,
        });
        return Ok(FuseEval { output, cache });
    }

    let mut gate_inputs = Vec::new();
    let mut alphas = Vec::new();
    let purified: Vec<Tensor2> = match mode {
        FuseMode::Gated => {
            let mut out = Vec::with_capacity(z_all.len());
            for z_i in z_all {
                let gin = z_fuse.add(z_i)?;
                let logits = affine(&gin, &params.gate_weight, &params.gate_bias)?;
                let alpha = match params.gate_activation {
                    GateActivation::Identity => logits,
                    GateActivation::Sigmoid => sigmoid(&logits),
                };
                out.push(alpha.hadamard(z_fuse)?);
                gate_inputs.push(gin);
                alphas.push(alpha);
            }
            out
        }
        _ => z_all.to_vec(),
    };
    let summed = sum_all(&purified)?;
    let z_hat_fuse = affine(&summed, &params.fuse_weight, &params.fuse_bias)?;
    let pre_act = z_hat_fuse.add(x_fuse)?;
    let (output, gn) = group_norm(&relu(&pre_act), params.groups, params.eps, &params.gn_fuse)?;

    let cache = (cache == CacheMode::Keep).then(|| FuseCache {
        mode,
        z_fuse: z_fuse.clone(),
        gate_inputs,
        alphas,
        purified,
        z_hat_fuse,
        pre_act,
        gn: Some(gn),
    });
    Ok(FuseEval { output, cache })
}

impl FuseEval {
    pub fn vjp(&self, params: &FusionParams, upstream: &Tensor2) -> Result<FuseGrads> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| DeqError::State("fusion step VJP needs a cached forward".into()))?;
        let d = params.width;
        let (rows, cols) = upstream.shape();
        let n = c.purified.len();
        let mut grads = FuseGrads {
            dz_fuse: Tensor2::zeros(rows, cols),
            dz: Vec::with_capacity(n),
            dx_fuse: Tensor2::zeros(rows, cols),
            gate_weight: Tensor2::zeros(d, d),
            gate_bias: Tensor2::zeros(1, d),
            fuse_weight: Tensor2::zeros(d, d),
            fuse_bias: Tensor2::zeros(1, d),
            gn_fuse: GroupNormAffine::zeros(d),
        };

        if c.mode == FuseMode::Sum {
            grads.dz = vec![upstream.clone(); n];
            return Ok(grads);
        }

        let gn = c.gn.as_ref().expect("group norm cache present outside sum mode");
        let (d_relu, d_gn) = group_norm_vjp(gn, &params.gn_fuse, upstream)?;
        let d_pre = relu_vjp(&c.pre_act, &d_relu)?;
        grads.dx_fuse = d_pre.clone();
        grads.gn_fuse = d_gn;
        let summed = sum_all(&c.purified)?;
        let (d_sum, d_wf, d_bf) = affine_vjp(&summed, &params.fuse_weight, &d_pre)?;
        grads.fuse_weight = d_wf;
        grads.fuse_bias = d_bf;

        match c.mode {
            FuseMode::Gated => {
                for (gin, alpha) in c.gate_inputs.iter().zip(&c.alphas) {
                    let d_alpha = d_sum.hadamard(&c.z_fuse)?;
                    grads.dz_fuse.add_assign(&d_sum.hadamard(alpha)?)?;
                    let d_logits = match params.gate_activation {
                        GateActivation::Identity => d_alpha,
                        GateActivation::Sigmoid => sigmoid_vjp(alpha, &d_alpha)?,
                    };
                    let (d_gin, d_wa, d_ba) = affine_vjp(gin, &params.gate_weight, &d_logits)?;
                    grads.dz_fuse.add_assign(&d_gin)?;
                    grads.gate_weight.add_assign(&d_wa)?;
                    grads.gate_bias.add_assign(&d_ba)?;
                    grads.dz.push(d_gin);
                }
            }
            FuseMode::Ungated => {
                grads.dz = vec![d_sum; n];
            }
            FuseMode::Sum => unreachable!(),
        }
        Ok(grads)
    }
}

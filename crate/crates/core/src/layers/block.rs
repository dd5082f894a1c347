use super::params::{BlockParams, FusionParams};
use super::primitives::GroupNormAffine;
use super::primitives::{affine, affine_vjp, group_norm, group_norm_vjp, relu, relu_vjp, GroupNormCache};
use crate::error::{DeqError, Result};
use crate::numcore::Tensor2;

/// Whether a forward evaluation keeps its intermediates for a later VJP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    Keep,
    Discard,
}

/// Intermediates of one modality-block evaluation.
#[derive(Debug, Clone)]
pub struct BlockCache {
    pub z: Tensor2,
    pub pre_hat: Tensor2,
    pub gn_hat: GroupNormCache,
    pub norm_hat: Tensor2,
    /// `ẑ_i`
    pub z_hat: Tensor2,
    pub pre_tilde: Tensor2,
    pub gn_tilde: GroupNormCache,
    /// `z̃_i`
    pub z_tilde: Tensor2,
    pub relu_tilde: Tensor2,
    pub gn_out: GroupNormCache,
}

#[derive(Debug, Clone)]
pub struct BlockEval {
    pub output: Tensor2,
    pub cache: Option<BlockCache>,
}

/// Cotangents produced by [`BlockEval::vjp`].
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub dz: Tensor2,
    pub dx: Tensor2,
    pub params: BlockParams,
}

/// `f_θi(z_i; x_i)`:
///
/// ```text
/// ẑ   = ReLU(GN(Ŵ z + b̂))
/// z̃   = GN(W̃ ẑ + x + b̃)
/// out = GN(ReLU(z̃))
/// ```
pub fn modality_block(
    z: &Tensor2,
    x: &Tensor2,
    params: &FusionParams,
    i: usize,
    mode: CacheMode,
) -> Result<BlockEval> {
    if z.shape() != x.shape() {
        return Err(DeqError::shape("modality_block", z.shape(), x.shape()));
    }
    if z.cols() != params.width {
        return Err(DeqError::shape("modality_block", z.shape(), (z.rows(), params.width)));
    }
    let bp = params
        .blocks
        .get(i)
        .ok_or_else(|| DeqError::config(format!("no modality block {i}")))?;
    let (g, eps) = (params.groups, params.eps);

    let pre_hat = affine(z, &bp.w_hat, &bp.b_hat)?;
    let (norm_hat, gn_hat) = group_norm(&pre_hat, g, eps, &bp.gn_hat)?;
    let z_hat = relu(&norm_hat);
    let pre_tilde = affine(&z_hat, &bp.w_tilde, &bp.b_tilde)?.add(x)?;
    let (z_tilde, gn_tilde) = group_norm(&pre_tilde, g, eps, &bp.gn_tilde)?;
    let relu_tilde = relu(&z_tilde);
    let (output, gn_out) = group_norm(&relu_tilde, g, eps, &bp.gn_out)?;

    let cache = match mode {
        CacheMode::Discard => None,
        CacheMode::Keep => Some(BlockCache {
            z: z.clone(),
            pre_hat,
            gn_hat,
            norm_hat,
            z_hat,
            pre_tilde,
            gn_tilde,
            z_tilde,
            relu_tilde,
            gn_out,
        }),
    };
    Ok(BlockEval { output, cache })
}

impl BlockEval {
    pub fn vjp(&self, params: &FusionParams, i: usize, upstream: &Tensor2) -> Result<BlockGrads> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| DeqError::State("modality block VJP needs a cached forward".into()))?;
        let bp = &params.blocks[i];

        let (d_relu_tilde, d_gn_out) = group_norm_vjp(&c.gn_out, &bp.gn_out, upstream)?;
        let d_z_tilde = relu_vjp(&c.z_tilde, &d_relu_tilde)?;
        let (d_pre_tilde, d_gn_tilde) = group_norm_vjp(&c.gn_tilde, &bp.gn_tilde, &d_z_tilde)?;
        // pre_tilde = W̃ ẑ + b̃ + x
        let dx = d_pre_tilde.clone();
        let (d_z_hat, d_w_tilde, d_b_tilde) = affine_vjp(&c.z_hat, &bp.w_tilde, &d_pre_tilde)?;
        let d_norm_hat = relu_vjp(&c.norm_hat, &d_z_hat)?;
        let (d_pre_hat, d_gn_hat) = group_norm_vjp(&c.gn_hat, &bp.gn_hat, &d_norm_hat)?;
        let (dz, d_w_hat, d_b_hat) = affine_vjp(&c.z, &bp.w_hat, &d_pre_hat)?;

        Ok(BlockGrads {
            dz,
            dx,
            params: BlockParams {
                w_hat: d_w_hat,
                b_hat: d_b_hat,
                gn_hat: d_gn_hat,
                w_tilde: d_w_tilde,
                b_tilde: d_b_tilde,
                gn_tilde: d_gn_tilde,
                gn_out: d_gn_out,
            },
        })
    }
}

impl BlockParams {
    pub(crate) fn accumulate(&mut self, other: &BlockParams) -> Result<()> {
        self.w_hat.add_assign(&other.w_hat)?;
        self.b_hat.add_assign(&other.b_hat)?;
        add_affine(&mut self.gn_hat, &other.gn_hat)?;
        self.w_tilde.add_assign(&other.w_tilde)?;
        self.b_tilde.add_assign(&other.b_tilde)?;
        add_affine(&mut self.gn_tilde, &other.gn_tilde)?;
        add_affine(&mut self.gn_out, &other.gn_out)
    }
}

pub(crate) fn add_affine(a: &mut GroupNormAffine, b: &GroupNormAffine) -> Result<()> {
    a.scale.add_assign(&b.scale)?;
    a.shift.add_assign(&b.shift)
}

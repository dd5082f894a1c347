//! Differentiable building blocks of the fusion system.
//!
//! Primitives (affine, ReLU, group norm, sigmoid, Hadamard product, sums) come
//! with exact VJPs; [`modality_block`] and [`fuse_step`] chain them and expose
//! composite VJPs through their cached evaluations.

mod block;
mod fuse;
mod params;
pub mod primitives;

pub use block::{modality_block, BlockCache, BlockEval, BlockGrads, CacheMode};
pub use fuse::{
    fuse_step, fuse_step_with, gate, injected_fusion, FuseCache, FuseEval, FuseGrads, FuseMode,
};
pub use params::{
    BlockParams, FusionParams, GateActivation, ModalityBundle, DEFAULT_EPS, DEFAULT_INIT_GAIN,
};
pub use primitives::{group_norm, GroupNormAffine, GroupNormCache};

pub(crate) use block::add_affine;

/// How each modality state is updated inside the joint map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityMode {
    /// `z_i ← f_θi(z_i; x_i)`
    Residual,
    /// `z_i ← x_i`, i.e. the modality projections are switched off.
    Identity,
}

/// Which parts of the fusion system are active. The full model is
/// [`FusionArch::FULL`]; the other combinations back the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionArch {
    pub modality: ModalityMode,
    pub fuse: FuseMode,
}

impl FusionArch {
    pub const FULL: FusionArch = FusionArch {
        modality: ModalityMode::Residual,
        fuse: FuseMode::Gated,
    };
}

impl Default for FusionArch {
    fn default() -> Self {
        Self::FULL
    }
}

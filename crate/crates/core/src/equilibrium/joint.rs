use super::solver::{solve_fixed_point, FixedPointMap, SolverConfig, SolverMethod, SolverTrace};
use crate::error::{DeqError, Result};
use crate::layers::{
    fuse_step_with, injected_fusion, modality_block, BlockEval, CacheMode, FuseEval, FusionArch,
    FusionParams, ModalityBundle, ModalityMode,
};
use crate::numcore::{Rng, Tensor2};

/// Modality states `z_1..z_N` and the fused state `z_fuse`.
///
/// Packed order is `[z_1, …, z_N, z_fuse]`, each block row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub z: Vec<Tensor2>,
    pub z_fuse: Tensor2,
}

impl JointState {
    pub fn zeros(n_modalities: usize, batch: usize, width: usize) -> Self {
        Self {
            z: vec![Tensor2::zeros(batch, width); n_modalities],
            z_fuse: Tensor2::zeros(batch, width),
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.z.len()
    }

    pub fn batch(&self) -> usize {
        self.z_fuse.rows()
    }

    pub fn width(&self) -> usize {
        self.z_fuse.cols()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.z.len() + 1) * self.z_fuse.len());
        for t in self.z.iter().chain([&self.z_fuse]) {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn unpack(n_modalities: usize, batch: usize, width: usize, packed: &[f64]) -> Result<Self> {
        let block = batch * width;
        if packed.len() != (n_modalities + 1) * block {
            return Err(DeqError::shape(
                "JointState::unpack",
                (packed.len(), 1),
                ((n_modalities + 1) * block, 1),
            ));
        }
        let mut chunks = packed.chunks_exact(block);
        let mut z = Vec::with_capacity(n_modalities);
        for _ in 0..n_modalities {
            z.push(Tensor2::new(batch, width, chunks.next().unwrap().to_vec())?);
        }
        let z_fuse = Tensor2::new(batch, width, chunks.next().unwrap().to_vec())?;
        Ok(Self { z, z_fuse })
    }

    pub fn sub(&self, other: &JointState) -> Result<JointState> {
        if self.z.len() != other.z.len() {
            return Err(DeqError::config("joint states with different modality counts"));
        }
        Ok(JointState {
            z: self
                .z
                .iter()
                .zip(&other.z)
                .map(|(a, b)| a.sub(b))
                .collect::<Result<_>>()?,
            z_fuse: self.z_fuse.sub(&other.z_fuse)?,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.z
            .iter()
            .chain([&self.z_fuse])
            .fold(0.0, |m, t| m.max(t.max_abs()))
    }
}

/// Batch-mean relative difference of packed joint states: the relative
/// difference is taken per sample over all `blocks` blocks, then averaged.
pub fn batch_mean_rel_diff(blocks: usize, batch: usize, width: usize, new: &[f64], old: &[f64]) -> f64 {
    let block = batch * width;
    let mut total = 0.0;
    for b in 0..batch {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..blocks {
            let off = k * block + b * width;
            for c in off..off + width {
                let d = new[c] - old[c];
                num += d * d;
                den += old[c] * old[c];
            }
        }
        total += if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };
    }
    total / batch as f64
}

/// When the fusion update within one sweep sees the modality states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    /// Gates use the freshly updated `z_i^{[j+1]}`.
    #[default]
    PostSweep,
    /// Gates use `z_i^{[j]}` from before the sweep.
    PreSweep,
}

/// One synchronous sweep of evaluations, with caches when requested.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub state: JointState,
    /// `None` for modalities in identity mode.
    pub blocks: Vec<Option<BlockEval>>,
    pub fuse: FuseEval,
    /// Modality states the fusion step consumed.
    pub fuse_inputs: Vec<Tensor2>,
}

/// The joint layer map `(z, z_fuse) ↦ (f_θi(z_i; x_i), f_fuse(z_fuse; x))`
/// for one bundle and parameter set.
#[derive(Debug, Clone)]
pub struct JointMap<'a> {
    x: &'a ModalityBundle,
    params: &'a FusionParams,
    arch: FusionArch,
    order: SweepOrder,
    x_fuse: Tensor2,
}

impl<'a> JointMap<'a> {
    pub fn new(x: &'a ModalityBundle, params: &'a FusionParams, arch: FusionArch) -> Result<Self> {
        params.check_bundle(x)?;
        let x_fuse = injected_fusion(x, params.modality_weights.data())?;
        Ok(Self {
            x,
            params,
            arch,
            order: SweepOrder::PostSweep,
            x_fuse,
        })
    }

    pub fn with_order(mut self, order: SweepOrder) -> Self {
        self.order = order;
        self
    }

    pub fn x(&self) -> &ModalityBundle {
        self.x
    }

    pub fn params(&self) -> &FusionParams {
        self.params
    }

    pub fn arch(&self) -> FusionArch {
        self.arch
    }

    pub fn order(&self) -> SweepOrder {
        self.order
    }

    pub fn x_fuse(&self) -> &Tensor2 {
        &self.x_fuse
    }

    pub fn zero_state(&self) -> JointState {
        JointState::zeros(self.x.n_modalities(), self.x.batch(), self.x.width())
    }

    fn check_state(&self, s: &JointState) -> Result<()> {
        if s.n_modalities() != self.x.n_modalities() {
            return Err(DeqError::config("state and bundle disagree on modality count"));
        }
        let want = (self.x.batch(), self.x.width());
        for t in s.z.iter().chain([&s.z_fuse]) {
            if t.shape() != want {
                return Err(DeqError::shape("joint_map", t.shape(), want));
            }
        }
        Ok(())
    }

    /// Modality update `i` on its own.
    pub fn modality_update(&self, i: usize, z_i: &Tensor2, mode: CacheMode) -> Result<Option<BlockEval>> {
        match self.arch.modality {
            ModalityMode::Residual => {
                Ok(Some(modality_block(z_i, self.x.get(i), self.params, i, mode)?))
            }
            ModalityMode::Identity => Ok(None),
        }
    }

    /// Fusion update with the given modality states.
    pub fn fuse_update(&self, z_fuse: &Tensor2, z_all: &[Tensor2], mode: CacheMode) -> Result<FuseEval> {
        fuse_step_with(self.arch.fuse, z_fuse, z_all, &self.x_fuse, self.params, mode)
    }

    pub fn sweep(&self, s: &JointState, mode: CacheMode) -> Result<Sweep> {
        self.check_state(s)?;
        let mut blocks = Vec::with_capacity(s.n_modalities());
        let mut z_new = Vec::with_capacity(s.n_modalities());
        for (i, z_i) in s.z.iter().enumerate() {
            let eval = self.modality_update(i, z_i, mode)?;
            z_new.push(match &eval {
                Some(e) => e.output.clone(),
                None => self.x.get(i).clone(),
            });
            blocks.push(eval);
        }
        let fuse_inputs = match self.order {
            SweepOrder::PostSweep => z_new.clone(),
            SweepOrder::PreSweep => s.z.clone(),
        };
        let fuse = self.fuse_update(&s.z_fuse, &fuse_inputs, mode)?;
        Ok(Sweep {
            state: JointState {
                z: z_new,
                z_fuse: fuse.output.clone(),
            },
            blocks,
            fuse,
            fuse_inputs,
        })
    }

    pub fn apply(&self, s: &JointState) -> Result<JointState> {
        Ok(self.sweep(s, CacheMode::Discard)?.state)
    }

    fn unpack(&self, packed: &[f64]) -> Result<JointState> {
        JointState::unpack(self.x.n_modalities(), self.x.batch(), self.x.width(), packed)
    }
}

impl FixedPointMap for JointMap<'_> {
    fn dim(&self) -> usize {
        (self.x.n_modalities() + 1) * self.x.batch() * self.x.width()
    }

    fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        let s = self.unpack(state)?;
        Ok(JointMap::apply(self, &s)?.pack())
    }

    fn distance(&self, new: &[f64], old: &[f64]) -> f64 {
        batch_mean_rel_diff(
            self.x.n_modalities() + 1,
            self.x.batch(),
            self.x.width(),
            new,
            old,
        )
    }
}

/// A solved equilibrium and how the solver got there.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    pub state: JointState,
    pub trace: SolverTrace,
    /// Iterates the solver evaluated the map at, when the config asked for them.
    pub iterates: Vec<JointState>,
}

impl EquilibriumState {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// One sweep of the full fusion system: `z_i ← f_θi(z_i; x_i)`, then
/// `z_fuse ← f_fuse(z_fuse; x)` with the updated `z_i`.
pub fn joint_map(s: &JointState, x: &ModalityBundle, params: &FusionParams) -> Result<JointState> {
    JointMap::new(x, params, FusionArch::FULL)?.apply(s)
}

/// `joint_map(s) − s`, blockwise.
pub fn residual(s: &JointState, x: &ModalityBundle, params: &FusionParams) -> Result<JointState> {
    joint_map(s, x, params)?.sub(s)
}

/// Solves from the zero state with whichever method `cfg` names.
pub fn solve_equilibrium(map: &JointMap<'_>, cfg: &SolverConfig) -> Result<EquilibriumState> {
    solve_from(map, map.zero_state(), cfg)
}

pub fn solve_from(map: &JointMap<'_>, init: JointState, cfg: &SolverConfig) -> Result<EquilibriumState> {
    let sol = solve_fixed_point(map, init.pack(), cfg, "forward solve")?;
    let iterates = sol
        .iterates
        .iter()
        .map(|s| map.unpack(s))
        .collect::<Result<_>>()?;
    Ok(EquilibriumState {
        state: map.unpack(&sol.state)?,
        trace: sol.trace,
        iterates,
    })
}

/// Plain fixed-point iteration of the full fusion system from zero.
pub fn solve_naive(x: &ModalityBundle, params: &FusionParams, cfg: &SolverConfig) -> Result<EquilibriumState> {
    let cfg = SolverConfig {
        method: SolverMethod::Naive,
        ..cfg.clone()
    };
    solve_equilibrium(&JointMap::new(x, params, FusionArch::FULL)?, &cfg)
}

/// Anderson-accelerated solve of the full fusion system from zero.
pub fn solve_anderson(x: &ModalityBundle, params: &FusionParams, cfg: &SolverConfig) -> Result<EquilibriumState> {
    let cfg = SolverConfig {
        method: SolverMethod::Anderson,
        ..cfg.clone()
    };
    solve_equilibrium(&JointMap::new(x, params, FusionArch::FULL)?, &cfg)
}

struct BlockMap<'m, 'a> {
    map: &'m JointMap<'a>,
    i: usize,
}

impl FixedPointMap for BlockMap<'_, '_> {
    fn dim(&self) -> usize {
        self.map.x.batch() * self.map.x.width()
    }

    fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        let z = Tensor2::new(self.map.x.batch(), self.map.x.width(), state.to_vec())?;
        Ok(match self.map.modality_update(self.i, &z, CacheMode::Discard)? {
            Some(e) => e.output.into_data(),
            None => self.map.x.get(self.i).data().to_vec(),
        })
    }

    fn distance(&self, new: &[f64], old: &[f64]) -> f64 {
        batch_mean_rel_diff(1, self.map.x.batch(), self.map.x.width(), new, old)
    }
}

struct FuseOnlyMap<'m, 'a> {
    map: &'m JointMap<'a>,
    z: &'m [Tensor2],
}

impl FixedPointMap for FuseOnlyMap<'_, '_> {
    fn dim(&self) -> usize {
        self.map.x.batch() * self.map.x.width()
    }

    fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        let zf = Tensor2::new(self.map.x.batch(), self.map.x.width(), state.to_vec())?;
        Ok(self.map.fuse_update(&zf, self.z, CacheMode::Discard)?.output.into_data())
    }

    fn distance(&self, new: &[f64], old: &[f64]) -> f64 {
        batch_mean_rel_diff(1, self.map.x.batch(), self.map.x.width(), new, old)
    }
}

/// Exploits the block-triangular structure: each `z_i*` is solved on its
/// own, then `z_fuse*` with the modality states frozen. The returned trace
/// concatenates the phase traces; it converged only if every phase did.
pub fn solve_two_phase(map: &JointMap<'_>, cfg: &SolverConfig) -> Result<EquilibriumState> {
    let (batch, width) = (map.x.batch(), map.x.width());
    let mut trace = SolverTrace {
        converged: true,
        ..SolverTrace::default()
    };
    let mut absorb = |t: SolverTrace| {
        trace.rel_diffs.extend_from_slice(&t.rel_diffs);
        trace.steps_taken += t.steps_taken;
        trace.converged &= t.converged;
        trace.final_residual = t.final_residual;
    };
    let mut z = Vec::with_capacity(map.x.n_modalities());
    for i in 0..map.x.n_modalities() {
        let sol = solve_fixed_point(&BlockMap { map, i }, vec![0.0; batch * width], cfg, "modality solve")?;
        absorb(sol.trace);
        z.push(Tensor2::new(batch, width, sol.state)?);
    }
    let sol = solve_fixed_point(
        &FuseOnlyMap { map, z: &z },
        vec![0.0; batch * width],
        cfg,
        "fusion solve",
    )?;
    absorb(sol.trace);
    Ok(EquilibriumState {
        state: JointState {
            z,
            z_fuse: Tensor2::new(batch, width, sol.state)?,
        },
        trace,
        iterates: Vec::new(),
    })
}

/// Seeded instance with parameters from [`FusionParams::init`] and `N(0, 1)`
/// inputs, drawn in that order from `Rng::new(seed)`.
pub fn random_instance(
    seed: u64,
    n_modalities: usize,
    width: usize,
    batch: usize,
    groups: usize,
) -> Result<(ModalityBundle, FusionParams)> {
    let mut rng = Rng::new(seed);
    let params = FusionParams::init(&mut rng, n_modalities, width, groups)?;
    let x = ModalityBundle::new((0..n_modalities).map(|_| rng.randn(batch, width, 1.0)).collect())?;
    Ok((x, params))
}

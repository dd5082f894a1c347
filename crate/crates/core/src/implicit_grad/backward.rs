use super::adjoint::{default_backward_config, solve_adjoint};
use crate::equilibrium::{EquilibriumState, JointMap, JointState, SolverConfig, SolverTrace, Sweep, SweepOrder};
use crate::error::{DeqError, Result};
use crate::layers::{
    add_affine, modality_block, CacheMode, FuseGrads, FusionArch, FusionParams, ModalityBundle,
    ModalityMode,
};
use crate::numcore::Tensor2;

/// Loss cotangents for every learnable tensor and every input feature.
///
/// `params` has the layout of [`FusionParams`]; the `w_i` gradients sit in
/// `params.modality_weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub params: FusionParams,
    pub inputs: Vec<Tensor2>,
}

impl GradientBundle {
    pub fn zeros(params: &FusionParams, x: &ModalityBundle) -> Self {
        Self {
            params: params.zeros_like(),
            inputs: vec![Tensor2::zeros(x.batch(), x.width()); x.n_modalities()],
        }
    }

    /// Named groups in parameter order followed by `x{i}` inputs.
    pub fn groups(&self) -> Vec<(String, &Tensor2)> {
        let mut out = self.params.named();
        for (i, t) in self.inputs.iter().enumerate() {
            out.push((format!("x{i}"), t));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.groups().iter().fold(0.0, |m, (_, t)| m.max(t.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, t)| t.is_finite())
    }
}

/// Adjoint vectors found by the implicit backward pass.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub u_fuse: Tensor2,
    pub u: Vec<Tensor2>,
    pub fuse_trace: SolverTrace,
    pub modality_traces: Vec<SolverTrace>,
}

pub(crate) fn add_fuse_grads(target: &mut FusionParams, g: &FuseGrads) -> Result<()> {
    target.gate_weight.add_assign(&g.gate_weight)?;
    target.gate_bias.add_assign(&g.gate_bias)?;
    target.fuse_weight.add_assign(&g.fuse_weight)?;
    target.fuse_bias.add_assign(&g.fuse_bias)?;
    add_affine(&mut target.gn_fuse, &g.gn_fuse)
}

/// Routes a cotangent on `x_fuse = Σ w_i x_i` to `w` and to the inputs.
fn distribute_x_fuse(grads: &mut GradientBundle, x: &ModalityBundle, w: &[f64], dx_fuse: &Tensor2) -> Result<()> {
    for i in 0..x.n_modalities() {
        grads.params.modality_weights.data_mut()[i] += dx_fuse.dot(x.get(i))?;
        grads.inputs[i].axpy(w[i], dx_fuse)?;
    }
    Ok(())
}

fn check_cotangent(map: &JointMap<'_>, dl: &Tensor2) -> Result<()> {
    let want = (map.x().batch(), map.x().width());
    if dl.shape() != want {
        return Err(DeqError::shape("backward", dl.shape(), want));
    }
    Ok(())
}

/// Implicit backward pass through the equilibrium.
///
/// `u_fuse` solves `u = u·∂f_fuse/∂z_fuse + ∂ℓ/∂z_fuse*`. Each modality
/// adjoint `u_i` then solves `u = u·∂f_θi/∂z_i + u_fuse·∂f_fuse/∂z_i*`.
/// Parameter and input cotangents are VJPs of the layer maps against these
/// adjoints, including the direct path through `x_fuse = Σ w_i x_i`.
pub fn implicit_backward(
    map: &JointMap<'_>,
    state: &JointState,
    dl_dzfuse: &Tensor2,
    cfg: &SolverConfig,
) -> Result<(GradientBundle, AdjointState)> {
    check_cotangent(map, dl_dzfuse)?;
    let (x, params) = (map.x(), map.params());
    let (batch, width) = (x.batch(), x.width());
    let n = x.n_modalities();
    let mut grads = GradientBundle::zeros(params, x);

    let fuse = map.fuse_update(&state.z_fuse, &state.z, CacheMode::Keep)?;
    let fuse_vjp = |u: &[f64]| -> Result<Vec<f64>> {
        let u = Tensor2::new(batch, width, u.to_vec())?;
        Ok(fuse.vjp(params, &u)?.dz_fuse.into_data())
    };
    let (u_fuse, fuse_trace) = solve_adjoint(&fuse_vjp, dl_dzfuse.data(), cfg)?;
    let u_fuse = Tensor2::new(batch, width, u_fuse)?;
    let gf = fuse.vjp(params, &u_fuse)?;
    add_fuse_grads(&mut grads.params, &gf)?;

    let mut u_all = Vec::with_capacity(n);
    let mut modality_traces = Vec::with_capacity(n);
    for i in 0..n {
        let v_i = &gf.dz[i];
        match map.arch().modality {
            ModalityMode::Residual => {
                let block = modality_block(&state.z[i], x.get(i), params, i, CacheMode::Keep)?;
                let block_vjp = |u: &[f64]| -> Result<Vec<f64>> {
                    let u = Tensor2::new(batch, width, u.to_vec())?;
                    Ok(block.vjp(params, i, &u)?.dz.into_data())
                };
                let (u_i, trace) = solve_adjoint(&block_vjp, v_i.data(), cfg)?;
                let u_i = Tensor2::new(batch, width, u_i)?;
                let gb = block.vjp(params, i, &u_i)?;
                grads.params.blocks[i].accumulate(&gb.params)?;
                grads.inputs[i].add_assign(&gb.dx)?;
                u_all.push(u_i);
                modality_traces.push(trace);
            }
            ModalityMode::Identity => {
                grads.inputs[i].add_assign(v_i)?;
                u_all.push(v_i.clone());
                modality_traces.push(SolverTrace {
                    converged: true,
                    ..SolverTrace::default()
                });
            }
        }
    }
    distribute_x_fuse(&mut grads, x, params.modality_weights.data(), &gf.dx_fuse)?;

    Ok((
        grads,
        AdjointState {
            u_fuse,
            u: u_all,
            fuse_trace,
            modality_traces,
        },
    ))
}

/// Implicit gradients of a loss on `z_fuse*` for the full fusion system,
/// with the default backward solver.
pub fn backward(
    eq: &EquilibriumState,
    x: &ModalityBundle,
    params: &FusionParams,
    dl_dzfuse: &Tensor2,
) -> Result<GradientBundle> {
    let map = JointMap::new(x, params, FusionArch::FULL)?;
    Ok(implicit_backward(&map, &eq.state, dl_dzfuse, &default_backward_config())?.0)
}

/// Cotangents of one cached sweep.
#[derive(Debug, Clone)]
pub struct SweepGrads {
    /// Cotangent on the sweep's input state.
    pub state: JointState,
    /// Parameter cotangents, `w_i` included.
    pub params: FusionParams,
    pub inputs: Vec<Tensor2>,
}

/// Reverse-mode through one [`Sweep`] recorded with [`CacheMode::Keep`].
pub fn sweep_vjp(map: &JointMap<'_>, sweep: &Sweep, upstream: &JointState) -> Result<SweepGrads> {
    let (x, params) = (map.x(), map.params());
    let n = x.n_modalities();
    let mut grads = GradientBundle::zeros(params, x);
    let mut d_in = JointState::zeros(n, x.batch(), x.width());

    let gf = sweep.fuse.vjp(params, &upstream.z_fuse)?;
    add_fuse_grads(&mut grads.params, &gf)?;
    d_in.z_fuse = gf.dz_fuse.clone();

    let mut d_out = upstream.z.clone();
    match map.order() {
        SweepOrder::PostSweep => {
            for (d, g) in d_out.iter_mut().zip(&gf.dz) {
                d.add_assign(g)?;
            }
        }
        SweepOrder::PreSweep => {
            for (d, g) in d_in.z.iter_mut().zip(&gf.dz) {
                d.add_assign(g)?;
            }
        }
    }
    for (i, d) in d_out.iter().enumerate() {
        match &sweep.blocks[i] {
            Some(block) => {
                let gb = block.vjp(params, i, d)?;
                grads.params.blocks[i].accumulate(&gb.params)?;
                grads.inputs[i].add_assign(&gb.dx)?;
                d_in.z[i].add_assign(&gb.dz)?;
            }
            None => grads.inputs[i].add_assign(d)?,
        }
    }
    distribute_x_fuse(&mut grads, x, params.modality_weights.data(), &gf.dx_fuse)?;
    Ok(SweepGrads {
        state: d_in,
        params: grads.params,
        inputs: grads.inputs,
    })
}

/// Gradients of `k_steps` explicit sweeps from the zero state, obtained by
/// ordinary reverse-mode through every sweep.
pub fn backward_unrolled(map: &JointMap<'_>, dl_dzfuse: &Tensor2, k_steps: usize) -> Result<GradientBundle> {
    if k_steps == 0 {
        return Err(DeqError::config("unrolled backward needs k_steps >= 1"));
    }
    check_cotangent(map, dl_dzfuse)?;
    let (x, params) = (map.x(), map.params());
    let mut sweeps = Vec::with_capacity(k_steps);
    let mut s = map.zero_state();
    for _ in 0..k_steps {
        let sw = map.sweep(&s, CacheMode::Keep)?;
        s = sw.state.clone();
        sweeps.push(sw);
    }
    let mut grads = GradientBundle::zeros(params, x);
    let mut upstream = JointState::zeros(x.n_modalities(), x.batch(), x.width());
    upstream.z_fuse = dl_dzfuse.clone();
    for sw in sweeps.iter().rev() {
        let g = sweep_vjp(map, sw, &upstream)?;
        accumulate_params(&mut grads.params, &g.params)?;
        for (a, b) in grads.inputs.iter_mut().zip(&g.inputs) {
            a.add_assign(b)?;
        }
        upstream = g.state;
    }
    Ok(grads)
}

pub(crate) fn accumulate_params(target: &mut FusionParams, other: &FusionParams) -> Result<()> {
    let mut src = other.named().into_iter();
    for (_, t) in target.named_mut() {
        let (_, o) = src.next().expect("parameter layouts match");
        t.add_assign(o)?;
    }
    Ok(())
}

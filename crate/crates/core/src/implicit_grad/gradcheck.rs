use std::fmt;

use super::adjoint::default_backward_config;
use super::backward::{backward_unrolled, implicit_backward, GradientBundle};
use crate::equilibrium::{solve_equilibrium, JointMap, SolverConfig};
use crate::error::{DeqError, Result};
use crate::layers::{FusionArch, FusionParams, ModalityBundle};
use crate::numcore::Tensor2;

/// Group-level relative error `max|a − b| / max(‖a‖∞, ‖b‖∞)`; zero when both
/// are exactly zero.
pub fn group_rel_error(a: &Tensor2, b: &Tensor2) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.max_abs().max(b.max_abs());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// The scalar `⟨g, z_fuse*⟩` after a forward solve from zero.
pub fn probe_loss(
    x: &ModalityBundle,
    params: &FusionParams,
    arch: FusionArch,
    g: &Tensor2,
    cfg: &SolverConfig,
) -> Result<f64> {
    let map = JointMap::new(x, params, arch)?;
    let eq = solve_equilibrium(&map, cfg)?;
    if !eq.converged() {
        return Err(DeqError::Numeric(format!(
            "forward solve did not reach tol {:e} in {} steps",
            cfg.tol, cfg.max_steps
        )));
    }
    eq.state.z_fuse.dot(g)
}

/// Central finite differences of [`probe_loss`] with respect to every
/// parameter value and every input value.
pub fn finite_difference_grads(
    x: &ModalityBundle,
    params: &FusionParams,
    arch: FusionArch,
    g: &Tensor2,
    cfg: &SolverConfig,
    h: f64,
) -> Result<GradientBundle> {
    let mut out = GradientBundle::zeros(params, x);
    let base = params.flatten();
    let mut fd = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut q = params.clone();
            let mut flat = base.clone();
            flat[k] += delta;
            q.assign_flat(&flat)?;
            probe_loss(x, &q, arch, g, cfg)
        };
        fd.push((eval(h)? - eval(-h)?) / (2.0 * h));
    }
    out.params.assign_flat(&fd)?;
    for i in 0..x.n_modalities() {
        for k in 0..x.get(i).len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut y = x.clone();
                y.features_mut()[i].data_mut()[k] += delta;
                probe_loss(&y, params, arch, g, cfg)
            };
            out.inputs[i].data_mut()[k] = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub h: f64,
    pub forward_tol: f64,
    pub forward_max_steps: usize,
    /// Steps of the unrolled comparison; 0 skips it.
    pub unrolled_steps: usize,
    pub tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-4,
            forward_tol: 1e-10,
            forward_max_steps: 500,
            unrolled_steps: 100,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    /// Implicit vs finite differences.
    pub fd_error: f64,
    /// Implicit vs unrolled, when that comparison ran.
    pub unrolled_error: Option<f64>,
}

impl GroupCheck {
    pub fn worst(&self) -> f64 {
        self.fd_error.max(self.unrolled_error.unwrap_or(0.0))
    }
}

/// Per-group comparison of the implicit gradient against its oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.worst() < self.tol)
    }

    pub fn max_error(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.worst()))
    }

    /// Merges another report group by group, keeping the worst errors.
    pub fn merge_worst(&mut self, other: &GradcheckReport) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            a.fd_error = a.fd_error.max(b.fd_error);
            a.unrolled_error = match (a.unrolled_error, b.unrolled_error) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            };
        }
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>12}  {:>12}  status", "group", "fd_rel_err", "unroll_err")?;
        for g in &self.groups {
            let unrolled = g
                .unrolled_error
                .map_or_else(|| "-".to_string(), |e| format!("{e:.3e}"));
            let status = if g.worst() < self.tol { "pass" } else { "FAIL" };
            writeln!(f, "{:<width$}  {:>12.3e}  {:>12}  {status}", g.name, g.fd_error, unrolled)?;
        }
        write!(
            f,
            "max error {:.3e} vs tol {:.1e}: {}",
            self.max_error(),
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Checks the implicit gradient of `⟨g, z_fuse*⟩` against central finite
/// differences and, optionally, against unrolled reverse-mode.
pub fn gradcheck(
    x: &ModalityBundle,
    params: &FusionParams,
    arch: FusionArch,
    g: &Tensor2,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let fwd = SolverConfig::anderson()
        .with_tol(cfg.forward_tol)
        .with_max_steps(cfg.forward_max_steps);
    let map = JointMap::new(x, params, arch)?;
    let eq = solve_equilibrium(&map, &fwd)?;
    let bwd = default_backward_config().with_tol(1e-10).with_max_steps(500);
    let (implicit, _) = implicit_backward(&map, &eq.state, g, &bwd)?;
    let fd = finite_difference_grads(x, params, arch, g, &fwd, cfg.h)?;
    let unrolled = if cfg.unrolled_steps > 0 {
        Some(backward_unrolled(&map, g, cfg.unrolled_steps)?)
    } else {
        None
    };
    let imp = implicit.groups();
    let fdg = fd.groups();
    let unr = unrolled.as_ref().map(|u| u.groups());
    let groups = imp
        .iter()
        .enumerate()
        .map(|(k, (name, a))| GroupCheck {
            name: name.clone(),
            fd_error: group_rel_error(a, fdg[k].1),
            unrolled_error: unr.as_ref().map(|u| group_rel_error(a, u[k].1)),
        })
        .collect();
    Ok(GradcheckReport { groups, tol: cfg.tol })
}

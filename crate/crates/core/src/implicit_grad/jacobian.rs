use super::backward::sweep_vjp;
use crate::equilibrium::{JointMap, JointState};
use crate::error::{DeqError, Result};
use crate::layers::{CacheMode, FusionParams};
use crate::numcore::Rng;

/// Hutchinson estimate of `‖J‖²_F / dim` from VJPs: the mean over Gaussian
/// probes `ε` of `‖εᵀJ‖² / dim`.
pub fn hutchinson_frobenius(
    vjp: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    rng: &mut Rng,
    probes: usize,
) -> Result<f64> {
    if probes == 0 {
        return Err(DeqError::config("hutchinson estimate needs at least one probe"));
    }
    let mut total = 0.0;
    let mut eps = vec![0.0; dim];
    for _ in 0..probes {
        eps.iter_mut().for_each(|e| *e = rng.normal());
        let v = vjp(&eps)?;
        total += v.iter().map(|a| a * a).sum::<f64>();
    }
    Ok(total / (probes as f64 * dim as f64))
}

/// Draws `probes` standard Gaussian probe vectors for the joint state.
pub fn draw_probes(map: &JointMap<'_>, rng: &mut Rng, probes: usize) -> Vec<JointState> {
    let x = map.x();
    (0..probes)
        .map(|_| JointState {
            z: (0..x.n_modalities())
                .map(|_| rng.randn(x.batch(), x.width(), 1.0))
                .collect(),
            z_fuse: rng.randn(x.batch(), x.width(), 1.0),
        })
        .collect()
}

fn state_dim(map: &JointMap<'_>) -> usize {
    let x = map.x();
    (x.n_modalities() + 1) * x.batch() * x.width()
}

/// Jacobian penalty `mean_p ‖ε_pᵀ J‖² / dim` of the joint map at `state`,
/// for given probes.
pub fn jacobian_reg_with_probes(map: &JointMap<'_>, state: &JointState, probes: &[JointState]) -> Result<f64> {
    if probes.is_empty() {
        return Err(DeqError::config("jacobian_reg needs at least one probe"));
    }
    let sweep = map.sweep(state, CacheMode::Keep)?;
    let mut total = 0.0;
    for eps in probes {
        let v = sweep_vjp(map, &sweep, eps)?.state.pack();
        total += v.iter().map(|a| a * a).sum::<f64>();
    }
    Ok(total / (probes.len() as f64 * state_dim(map) as f64))
}

/// Hutchinson estimate of `‖J_f‖²_F / dim` for the joint map at `state`.
pub fn jacobian_reg(map: &JointMap<'_>, state: &JointState, rng: &mut Rng, probes: usize) -> Result<f64> {
    if probes == 0 {
        return Err(DeqError::config("jacobian_reg needs at least one probe"));
    }
    jacobian_reg_with_probes(map, state, &draw_probes(map, rng, probes))
}

/// Value and parameter gradient of [`jacobian_reg_with_probes`], with the
/// evaluation state held fixed.
///
/// For `v = εᵀJ`, `∇_θ ‖v‖² = 2·∂/∂h [∇_θ εᵀf(s + h·v)]` at `h = 0`, which is
/// taken by central differences of parameter VJPs.
pub fn jacobian_reg_grad(
    map: &JointMap<'_>,
    state: &JointState,
    probes: &[JointState],
) -> Result<(f64, FusionParams)> {
    if probes.is_empty() {
        return Err(DeqError::config("jacobian_reg needs at least one probe"));
    }
    let dim = state_dim(map) as f64;
    let scale = 1.0 / (probes.len() as f64 * dim);
    let sweep = map.sweep(state, CacheMode::Keep)?;
    let mut value = 0.0;
    let mut flat = vec![0.0; map.params().n_values()];
    let (nm, b, d) = (map.x().n_modalities(), map.x().batch(), map.x().width());
    for eps in probes {
        let v = sweep_vjp(map, &sweep, eps)?.state.pack();
        let vmax = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        value += v.iter().map(|a| a * a).sum::<f64>();
        if vmax == 0.0 {
            continue;
        }
        let h = 1e-5 / vmax;
        let base = state.pack();
        let shifted = |sign: f64| -> Result<Vec<f64>> {
            let s: Vec<f64> = base.iter().zip(&v).map(|(z, vi)| z + sign * h * vi).collect();
            let s = JointState::unpack(nm, b, d, &s)?;
            let sw = map.sweep(&s, CacheMode::Keep)?;
            Ok(sweep_vjp(map, &sw, eps)?.params.flatten())
        };
        let plus = shifted(1.0)?;
        let minus = shifted(-1.0)?;
        for ((g, p), m) in flat.iter_mut().zip(&plus).zip(&minus) {
            *g += 2.0 * (p - m) / (2.0 * h) * scale;
        }
    }
    let mut grad = map.params().zeros_like();
    grad.assign_flat(&flat)?;
    Ok((value * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, SolverConfig};
    use crate::layers::{FusionArch, ModalityBundle};

    #[test]
    fn zero_jacobian_estimates_zero() {
        let vjp = |u: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0; u.len()]) };
        assert_eq!(hutchinson_frobenius(&vjp, 5, &mut Rng::new(0), 10).unwrap(), 0.0);
    }

    #[test]
    fn scaled_identity_estimates_c_squared() {
        let c = 0.6;
        let vjp = |u: &[f64]| -> Result<Vec<f64>> { Ok(u.iter().map(|a| c * a).collect()) };
        let est = hutchinson_frobenius(&vjp, 8, &mut Rng::new(1), 20_000).unwrap();
        // each probe gives c²·χ²_8/8, standard deviation c²·0.5
        assert!((est - c * c).abs() < 4.0 * c * c * 0.5 / (20_000f64).sqrt());
    }

    #[test]
    fn structural_params_have_zero_penalty() {
        let mut rng = Rng::new(2);
        let p = FusionParams::structural(2, 4, 1).unwrap();
        let x = ModalityBundle::new(vec![rng.randn(2, 4, 1.0), rng.randn(2, 4, 1.0)]).unwrap();
        let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
        let eq = solve_equilibrium(&map, &SolverConfig::anderson()).unwrap();
        assert_eq!(jacobian_reg(&map, &eq.state, &mut rng, 3).unwrap(), 0.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let p = FusionParams::init(&mut rng, 2, 4, 1).unwrap();
        let x = ModalityBundle::new(vec![rng.randn(2, 4, 1.0), rng.randn(2, 4, 1.0)]).unwrap();
        let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
        let state = solve_equilibrium(&map, &SolverConfig::anderson()).unwrap().state;
        let probes = draw_probes(&map, &mut rng, 2);
        let (value, grad) = jacobian_reg_grad(&map, &state, &probes).unwrap();
        assert!((value - jacobian_reg_with_probes(&map, &state, &probes).unwrap()).abs() < 1e-15);

        let flat = p.flatten();
        let g = grad.flatten();
        let h = 1e-5;
        let scale = g.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        for k in (0..flat.len()).step_by(7) {
            let eval = |delta: f64| {
                let mut q = p.clone();
                let mut f = flat.clone();
                f[k] += delta;
                q.assign_flat(&f).unwrap();
                let m = JointMap::new(&x, &q, FusionArch::FULL).unwrap();
                jacobian_reg_with_probes(&m, &state, &probes).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-4 * scale.max(1e-8), "param {k}: {fd} vs {}", g[k]);
        }
    }
}

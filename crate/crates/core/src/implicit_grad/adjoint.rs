use crate::equilibrium::{solve_fixed_point, FixedPointMap, SolverConfig, SolverTrace};
use crate::error::Result;
use crate::numcore::norm;

/// Backward solver defaults: Anderson, tolerance 1e-6, at most 100 steps.
pub fn default_backward_config() -> SolverConfig {
    SolverConfig::anderson().with_tol(1e-6).with_max_steps(100)
}

struct AdjointMap<'a> {
    vjp: &'a dyn Fn(&[f64]) -> Result<Vec<f64>>,
    rhs: &'a [f64],
    rhs_norm: f64,
}

impl FixedPointMap for AdjointMap<'_> {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = (self.vjp)(u)?;
        for (o, r) in out.iter_mut().zip(self.rhs) {
            *o += r;
        }
        Ok(out)
    }

    fn distance(&self, new: &[f64], old: &[f64]) -> f64 {
        let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
        norm(&diff) / self.rhs_norm
    }
}

/// Solves `u = u·J + rhs` for the row vector `u`, with `J` available only
/// through `vjp(u) = u·J`.
///
/// The stopping metric is `‖u_new − u‖ / ‖rhs‖`. A zero right-hand side
/// returns zeros without calling `vjp`.
pub fn solve_adjoint(
    vjp: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverTrace)> {
    cfg.validate()?;
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        let trace = SolverTrace {
            rel_diffs: Vec::new(),
            steps_taken: 0,
            converged: true,
            final_residual: 0.0,
        };
        return Ok((vec![0.0; rhs.len()], trace));
    }
    let map = AdjointMap { vjp, rhs, rhs_norm };
    let sol = solve_fixed_point(&map, vec![0.0; rhs.len()], cfg, "adjoint solve")?;
    Ok((sol.state, sol.trace))
}

/// `‖u·J + rhs − u‖ / ‖rhs‖`.
pub fn adjoint_residual(vjp: &dyn Fn(&[f64]) -> Result<Vec<f64>>, rhs: &[f64], u: &[f64]) -> Result<f64> {
    let mut next = vjp(u)?;
    for (n, r) in next.iter_mut().zip(rhs) {
        *n += r;
    }
    let diff: Vec<f64> = next.iter().zip(u).map(|(a, b)| a - b).collect();
    let rhs_norm = norm(rhs);
    Ok(if rhs_norm == 0.0 { norm(&diff) } else { norm(&diff) / rhs_norm })
}

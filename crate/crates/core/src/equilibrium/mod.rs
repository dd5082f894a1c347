//! Fixed-point solvers and the joint equilibrium of the fusion system.

mod joint;
mod solver;

pub use joint::{
    batch_mean_rel_diff, joint_map, random_instance, residual, solve_anderson, solve_equilibrium, solve_from,
    solve_naive, solve_two_phase, EquilibriumState, JointMap, JointState, Sweep, SweepOrder,
};
pub use solver::{
    solve_fixed_point, FixedPointMap, FixedPointSolution, SolverConfig, SolverMethod, SolverTrace,
    DIVERGENCE_THRESHOLD,
};

//! Gradients through the equilibrium: adjoint solves, the implicit backward
//! pass, its unrolled and finite-difference oracles, and the Jacobian
//! penalty.

mod adjoint;
mod backward;
mod gradcheck;
mod jacobian;

pub use adjoint::{adjoint_residual, default_backward_config, solve_adjoint};
pub use backward::{
    backward, backward_unrolled, implicit_backward, sweep_vjp, AdjointState, GradientBundle,
    SweepGrads,
};
pub use gradcheck::{
    finite_difference_grads, gradcheck, group_rel_error, probe_loss, GradcheckConfig,
    GradcheckReport, GroupCheck,
};
pub use jacobian::{
    draw_probes, hutchinson_frobenius, jacobian_reg, jacobian_reg_grad, jacobian_reg_with_probes,
};

pub(crate) use backward::accumulate_params;

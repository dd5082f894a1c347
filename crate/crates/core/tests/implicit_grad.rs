use deqfuse_core::equilibrium::{random_instance, solve_equilibrium, JointMap, JointState, SolverConfig};
use deqfuse_core::implicit_grad::{
    backward_unrolled, default_backward_config, gradcheck, group_rel_error, hutchinson_frobenius,
    implicit_backward, jacobian_reg, solve_adjoint, GradcheckConfig, GradientBundle,
};
use deqfuse_core::layers::FusionArch;
use deqfuse_core::numcore::{solve_dense, Rng, Tensor2};

fn row_times(u: &[f64], m: &Tensor2) -> Vec<f64> {
    (0..m.cols())
        .map(|j| (0..m.rows()).map(|i| u[i] * m.get(i, j)).sum())
        .collect()
}

#[test]
fn hutchinson_matches_dense_frobenius_norm() {
    for seed in 0..3 {
        let j = Rng::new(seed).randn(6, 6, 1.0);
        let dense = j.data().iter().map(|v| v * v).sum::<f64>() / 6.0;
        let vjp = |u: &[f64]| Ok(row_times(u, &j));
        let est = hutchinson_frobenius(&vjp, 6, &mut Rng::new(100 + seed), 10_000).unwrap();
        assert!((est - dense).abs() < 0.02 * dense, "seed {seed}: {est} vs {dense}");
    }
}

/// Dense Jacobian of the joint map by central differences, one column per
/// packed coordinate.
fn dense_jacobian(map: &JointMap<'_>, at: &[f64]) -> Vec<Vec<f64>> {
    let h = 1e-6;
    (0..at.len())
        .map(|k| {
            let eval = |delta: f64| {
                let mut s = at.to_vec();
                s[k] += delta;
                map.apply(&JointState::unpack(2, 1, 4, &s).unwrap()).unwrap().pack()
            };
            eval(h).iter().zip(eval(-h)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect()
}

#[test]
fn jacobian_penalty_matches_dense_jacobian_of_the_joint_map() {
    let (x, p) = random_instance(7, 2, 4, 1, 1).unwrap();
    let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
    let eq = solve_equilibrium(&map, &SolverConfig::default().with_tol(1e-10).with_max_steps(300)).unwrap();
    let at = eq.state.pack();
    let cols = dense_jacobian(&map, &at);
    let dense = cols.iter().flatten().map(|v| v * v).sum::<f64>() / at.len() as f64;
    let est = jacobian_reg(&map, &eq.state, &mut Rng::new(1), 10_000).unwrap();
    assert!((est - dense).abs() < 0.03 * dense, "{est} vs {dense}");
}

#[test]
fn adjoint_solve_matches_dense_linear_solve() {
    let mut rng = Rng::new(9);
    let n = 7;
    let raw = rng.randn(n, n, 1.0);
    let j = raw.scale(0.8 / raw.frob_norm());
    let rhs = rng.randn(1, n, 1.0).into_data();
    let vjp = |u: &[f64]| Ok(row_times(u, &j));
    let cfg = SolverConfig::default().with_tol(1e-13).with_max_steps(200);
    let (u, trace) = solve_adjoint(&vjp, &rhs, &cfg).unwrap();
    assert!(trace.converged);
    // u (I − J) = rhs  ⇔  (I − J)ᵀ uᵀ = rhsᵀ
    let system = Tensor2::identity(n).sub(&j).unwrap().transpose();
    let want = solve_dense(&system, &Tensor2::new(n, 1, rhs.clone()).unwrap()).unwrap();
    for (a, b) in u.iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

fn worst_group_error(a: &GradientBundle, b: &GradientBundle) -> f64 {
    a.groups()
        .iter()
        .zip(b.groups())
        .map(|((_, x), (_, y))| group_rel_error(x, y))
        .fold(0.0, f64::max)
}

#[test]
fn unrolled_gradients_approach_the_implicit_gradient() {
    for seed in 0..3 {
        let (x, p) = random_instance(seed, 2, 6, 2, 1).unwrap();
        let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
        let eq = solve_equilibrium(&map, &SolverConfig::default().with_tol(1e-12).with_max_steps(500)).unwrap();
        let g = Rng::new(seed).fork().randn(2, 6, 1.0);
        let (imp, _) = implicit_backward(&map, &eq.state, &g, &default_backward_config().with_tol(1e-12).with_max_steps(500))
            .unwrap();
        let errs: Vec<f64> = [2, 10, 40, 100]
            .iter()
            .map(|&k| worst_group_error(&imp, &backward_unrolled(&map, &g, k).unwrap()))
            .collect();
        assert!(errs[0] > errs[3], "seed {seed}: {errs:?}");
        assert!(errs[1] > errs[3] || errs[3] < 1e-10, "seed {seed}: {errs:?}");
        assert!(errs[3] < 1e-3, "seed {seed}: {errs:?}");
    }
}

#[test]
fn implicit_gradient_passes_gradcheck_on_five_seeds() {
    let cfg = GradcheckConfig::default();
    for seed in 0..5 {
        let (x, p) = random_instance(seed, 2, 6, 2, 1).unwrap();
        let g = Rng::new(seed).fork().randn(2, 6, 1.0);
        let report = gradcheck(&x, &p, FusionArch::FULL, &g, &cfg).unwrap();
        assert!(report.passed(), "seed {seed}\n{report}");
        assert!(report.groups.iter().all(|c| c.unrolled_error.is_some()));
    }
}

#[test]
fn zero_cotangent_gives_zero_gradients() {
    let (x, p) = random_instance(1, 2, 6, 2, 1).unwrap();
    let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
    let eq = solve_equilibrium(&map, &SolverConfig::default()).unwrap();
    let (g, adj) = implicit_backward(&map, &eq.state, &Tensor2::zeros(2, 6), &default_backward_config()).unwrap();
    assert_eq!(g.max_abs(), 0.0);
    assert_eq!(adj.u_fuse.max_abs(), 0.0);
}

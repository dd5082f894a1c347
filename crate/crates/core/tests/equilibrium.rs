use deqfuse_core::equilibrium::{
    random_instance, solve_anderson, solve_equilibrium, solve_fixed_point, solve_naive, FixedPointMap, JointMap,
    JointState, SolverConfig, SolverMethod,
};
use deqfuse_core::layers::FusionArch;
use deqfuse_core::numcore::{Rng, Tensor2};
use deqfuse_core::Result;

/// Per-sample `‖f − s‖ / ‖s‖` over all blocks, averaged over the batch.
fn oracle_rel_diff(new: &JointState, old: &JointState) -> f64 {
    let blocks: Vec<(&Tensor2, &Tensor2)> = new
        .z
        .iter()
        .zip(&old.z)
        .chain(std::iter::once((&new.z_fuse, &old.z_fuse)))
        .collect();
    let batch = new.z_fuse.rows();
    let mut total = 0.0;
    for r in 0..batch {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in &blocks {
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                num += (x - y).powi(2);
                den += y * y;
            }
        }
        total += if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };
    }
    total / batch as f64
}

fn fixed_steps(method: SolverMethod, steps: usize) -> SolverConfig {
    SolverConfig {
        method,
        max_steps: steps,
        early_stop: false,
        ..SolverConfig::default()
    }
}

#[test]
fn anderson_meets_convergence_targets_on_random_instances() {
    let mut ok = 0;
    for seed in 0..10 {
        let (x, p) = random_instance(seed, 3, 64, 8, 1).unwrap();
        let eq = solve_anderson(&x, &p, &fixed_steps(SolverMethod::Anderson, 100)).unwrap();
        let t = &eq.trace;
        if t.at_step(20).unwrap() < 1e-2 && t.at_step(100).unwrap() < 1e-3 {
            ok += 1;
        }
    }
    assert!(ok >= 9, "{ok}/10 seeds");
}

#[test]
fn naive_trace_decreases_after_the_transient() {
    let mut monotone = 0;
    for seed in 0..10 {
        let (x, p) = random_instance(seed, 3, 64, 8, 1).unwrap();
        let eq = solve_naive(&x, &p, &fixed_steps(SolverMethod::Naive, 60)).unwrap();
        let r = &eq.trace.rel_diffs;
        if r[2..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)) {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "{monotone}/10 seeds");
}

#[test]
fn anderson_and_naive_reach_the_same_fixed_point() {
    for seed in 0..5 {
        let (x, p) = random_instance(seed, 2, 8, 1, 1).unwrap();
        let cfg = SolverConfig::default().with_tol(1e-8).with_max_steps(2000);
        let a = solve_anderson(&x, &p, &cfg).unwrap();
        let n = solve_naive(&x, &p, &cfg).unwrap();
        assert!(a.converged() && n.converged());
        let diff = a.state.sub(&n.state).unwrap().max_abs();
        assert!(diff < 1e-5, "seed {seed}: {diff}");
    }
}

#[test]
fn trace_entries_are_the_rel_diff_at_each_iterate() {
    let (x, p) = random_instance(3, 3, 16, 4, 1).unwrap();
    let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
    for method in [SolverMethod::Naive, SolverMethod::Anderson] {
        let cfg = SolverConfig {
            keep_iterates: true,
            ..fixed_steps(method, 15)
        };
        let eq = solve_equilibrium(&map, &cfg).unwrap();
        assert_eq!(eq.iterates.len(), 15);
        for (k, s) in eq.iterates.iter().enumerate() {
            let want = oracle_rel_diff(&map.apply(s).unwrap(), s);
            assert!((eq.trace.rel_diffs[k] - want).abs() <= 1e-12 * want.max(1e-300), "{method:?} step {k}");
        }
        if method == SolverMethod::Naive {
            for w in eq.iterates.windows(2) {
                assert_eq!(map.apply(&w[0]).unwrap(), w[1]);
            }
        }
    }
}

#[test]
fn memory_one_anderson_is_naive_iteration() {
    let (x, p) = random_instance(4, 2, 8, 3, 1).unwrap();
    let map = JointMap::new(&x, &p, FusionArch::FULL).unwrap();
    let naive = solve_equilibrium(
        &map,
        &SolverConfig {
            keep_iterates: true,
            ..fixed_steps(SolverMethod::Naive, 30)
        },
    )
    .unwrap();
    let m1 = solve_equilibrium(
        &map,
        &SolverConfig {
            keep_iterates: true,
            memory: 1,
            beta: 1.0,
            ..fixed_steps(SolverMethod::Anderson, 30)
        },
    )
    .unwrap();
    for (a, b) in naive.iterates.iter().zip(&m1.iterates) {
        assert!(a.sub(b).unwrap().max_abs() <= 1e-14 * a.max_abs().max(1.0));
    }
    assert_eq!(naive.trace.rel_diffs.len(), m1.trace.rel_diffs.len());
}

#[test]
fn solves_are_deterministic() {
    let (x, p) = random_instance(5, 3, 32, 4, 2).unwrap();
    let cfg = fixed_steps(SolverMethod::Anderson, 40);
    assert_eq!(solve_anderson(&x, &p, &cfg).unwrap(), solve_anderson(&x, &p, &cfg).unwrap());
}

#[test]
fn every_architecture_lands_on_a_fixed_point() {
    let (x, p) = random_instance(6, 2, 8, 3, 1).unwrap();
    for arch in [
        FusionArch::FULL,
        FusionArch {
            fuse: deqfuse_core::layers::FuseMode::Ungated,
            ..FusionArch::FULL
        },
        FusionArch {
            modality: deqfuse_core::layers::ModalityMode::Identity,
            ..FusionArch::FULL
        },
    ] {
        let map = JointMap::new(&x, &p, arch).unwrap();
        let eq = solve_equilibrium(&map, &SolverConfig::default().with_tol(1e-10).with_max_steps(300)).unwrap();
        let again = map.apply(&eq.state).unwrap();
        assert!(again.sub(&eq.state).unwrap().max_abs() < 1e-8, "{arch:?}");
    }
}

/// `s ↦ A s + c` with a seeded contraction `A`.
struct Affine {
    a: Tensor2,
    c: Vec<f64>,
}

impl Affine {
    fn seeded(seed: u64, n: usize) -> Self {
        let mut rng = Rng::new(seed);
        let raw = rng.randn(n, n, 1.0);
        // scale to spectral norm at most 0.9 via the Frobenius bound
        let a = raw.scale(0.9 / raw.frob_norm());
        Self {
            a,
            c: rng.randn(1, n, 1.0).into_data(),
        }
    }
}

impl FixedPointMap for Affine {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.c.len())
            .map(|i| self.a.row(i).iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + self.c[i])
            .collect())
    }
}

#[test]
fn anderson_is_exact_on_affine_maps() {
    for seed in 0..5 {
        let map = Affine::seeded(seed, 4);
        let cfg = SolverConfig {
            memory: 5,
            lambda: 1e-15,
            tol: 1e-300,
            max_steps: 6,
            early_stop: false,
            ..SolverConfig::default()
        };
        let sol = solve_fixed_point(&map, vec![0.0; 4], &cfg, "affine").unwrap();
        assert!(sol.trace.final_residual < 1e-12, "seed {seed}: {:e}", sol.trace.final_residual);
        let naive = solve_fixed_point(
            &map,
            vec![0.0; 4],
            &SolverConfig {
                method: SolverMethod::Naive,
                ..cfg.clone()
            },
            "affine",
        )
        .unwrap();
        assert!(naive.trace.final_residual > 1e-6);
    }
}

use std::process::ExitCode;
use std::time::{Duration, Instant};

use deqfuse_cli::checkpoint::Checkpoint;
use deqfuse_cli::commands::ablate::{summarize, sweep, thread_cap};
use deqfuse_cli::commands::{converge, gradcheck, solvebench, train};
use deqfuse_cli::config::{ConvergeConfig, GradcheckSettings, SolvebenchConfig, TrainSettings};
use deqfuse_core::equilibrium::{
    random_instance, solve_anderson, solve_fixed_point, solve_naive, FixedPointMap, SolverConfig,
};
use deqfuse_core::implicit_grad::hutchinson_frobenius;
use deqfuse_core::numcore::{Rng, Tensor2};
use deqfuse_core::training::AblationVariant;
use tempfile::TempDir;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn fixed_point_convergence() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig {
        max_steps: 100,
        early_stop: false,
        ..SolverConfig::anderson()
    };
    let mut ok = 0;
    let mut worst20 = 0.0f64;
    for seed in 0..10 {
        let (x, p) = random_instance(seed, 3, 64, 8, 1).unwrap();
        let t = solve_anderson(&x, &p, &cfg).unwrap().trace;
        let (at20, at100) = (t.at_step(20).unwrap(), t.at_step(100).unwrap());
        worst20 = worst20.max(at20);
        if at20 < 1e-2 && at100 < 1e-3 {
            ok += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        ok >= 9 && within(el, 10.0),
        format!("{ok}/10 seeds, worst step-20 rel diff {worst20:.2e}, {:.1}s", el.as_secs_f64()),
    )
}

fn solver_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = SolverConfig::default().with_tol(1e-8).with_max_steps(2000);
    let mut worst = 0.0f64;
    let mut all_converged = true;
    for seed in 0..5 {
        let (x, p) = random_instance(seed, 2, 8, 1, 1).unwrap();
        let a = solve_anderson(&x, &p, &cfg).unwrap();
        let n = solve_naive(&x, &p, &cfg).unwrap();
        all_converged &= a.converged() && n.converged();
        worst = worst.max(a.state.sub(&n.state).unwrap().max_abs());
    }
    let el = start.elapsed();
    outcome(
        all_converged && worst < 1e-5 && within(el, 5.0),
        format!("max-abs difference {worst:.2e} over 5 seeds, {:.2}s", el.as_secs_f64()),
    )
}

fn gradient_correctness(dir: &TempDir) -> Outcome {
    let start = Instant::now();
    let cfg = GradcheckSettings {
        out: dir.path().join("gradcheck"),
        ..GradcheckSettings::default()
    };
    let result = gradcheck::run(&cfg, &mut Vec::new());
    let el = start.elapsed();
    match result {
        Ok(report) => {
            let fd = report.groups.iter().fold(0.0f64, |m, g| m.max(g.fd_error));
            let unrolled = report.groups.iter().fold(0.0f64, |m, g| m.max(g.unrolled_error.unwrap_or(f64::INFINITY)));
            outcome(
                within(el, 60.0),
                format!("fd {fd:.2e}, unrolled {unrolled:.2e} over {} groups, {:.1}s", report.groups.len(), el.as_secs_f64()),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

struct Affine {
    a: Tensor2,
    c: Vec<f64>,
}

impl FixedPointMap for Affine {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn apply(&self, s: &[f64]) -> deqfuse_core::Result<Vec<f64>> {
        Ok((0..self.c.len())
            .map(|i| self.a.row(i).iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + self.c[i])
            .collect())
    }
}

fn affine_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(0);
    let raw = rng.randn(4, 4, 1.0);
    let map = Affine {
        a: raw.scale(0.9 / raw.frob_norm()),
        c: rng.randn(1, 4, 1.0).into_data(),
    };
    let cfg = SolverConfig {
        memory: 5,
        lambda: 1e-15,
        tol: 1e-12,
        max_steps: 6,
        ..SolverConfig::anderson()
    };
    let sol = solve_fixed_point(&map, vec![0.0; 4], &cfg, "affine").unwrap();
    let residual = sol.trace.final_residual;
    let el = start.elapsed();
    outcome(
        residual < 1e-12 && within(el, 1.0),
        format!("residual {residual:.2e} after {} steps", sol.trace.steps_taken),
    )
}

fn synthetic_task(dir: &TempDir) -> Outcome {
    let start = Instant::now();
    let cfg = TrainSettings {
        out: dir.path().join("train"),
        ..TrainSettings::default()
    };
    let full = train::train_once(&cfg, AblationVariant::Full, cfg.seed);
    let base = train::train_once(&cfg, AblationVariant::WeightedSumOnly, cfg.seed);
    let el = start.elapsed();
    match (full, base) {
        (Ok(f), Ok(b)) => {
            let (fa, ba) = (f.final_metrics().accuracy, b.final_metrics().accuracy);
            outcome(
                fa >= 0.90 && ba <= 0.60 && within(el, 300.0),
                format!("full {:.1}%, weighted-sum {:.1}%, {:.0}s", 100.0 * fa, 100.0 * ba, el.as_secs_f64()),
            )
        }
        (f, b) => outcome(false, format!("training failed: {:?} / {:?}", f.err(), b.err())),
    }
}

fn ablation_direction() -> Outcome {
    let start = Instant::now();
    let cfg = TrainSettings::default();
    let runs = match thread_cap().and_then(|t| sweep(&cfg, t)) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let rows = summarize(&runs);
    let el = start.elapsed();
    let full = rows.iter().find(|r| r.variant == AblationVariant::Full).unwrap();
    let mut ok = full.completed > 0 && within(el, 1200.0);
    let mut parts = vec![format!("full {:.2}", full.accuracy.0)];
    for r in rows.iter().filter(|r| r.variant != AblationVariant::Full) {
        let strict = matches!(r.variant, AblationVariant::WeightedSumOnly | AblationVariant::NoDeq);
        let holds = if r.completed == 0 {
            true
        } else if strict {
            full.accuracy.0 > r.accuracy.0
        } else {
            full.accuracy.0 >= r.accuracy.0 - 1.0
        };
        ok &= holds;
        parts.push(format!(
            "{} {:.2}{}",
            r.variant,
            r.accuracy.0,
            if holds { "" } else { " (violates)" }
        ));
    }
    ok &= full.failed == 0;
    outcome(ok, format!("mean accuracy %: {}, {:.0}s", parts.join(", "), el.as_secs_f64()))
}

fn determinism(dir: &TempDir) -> Outcome {
    let mut problems = Vec::new();
    let run_twice = |name: &str, f: &dyn Fn(&std::path::Path)| {
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        f(&a);
        f(&b);
        (a, b)
    };
    let (a, b) = run_twice("converge", &|p| {
        let cfg = ConvergeConfig {
            out: p.to_path_buf(),
            ..ConvergeConfig::default()
        };
        converge::run(&cfg, &mut Vec::new()).unwrap();
    });
    let (sa, sb) = run_twice("solvebench", &|p| {
        let cfg = SolvebenchConfig {
            out: p.to_path_buf(),
            seeds: 3,
            ..SolvebenchConfig::default()
        };
        solvebench::run(&cfg, &mut Vec::new()).unwrap();
    });
    let (ta, tb) = run_twice("train", &|p| {
        let cfg = TrainSettings {
            out: p.to_path_buf(),
            epochs: 2,
            n_train: 128,
            n_test: 64,
            ..TrainSettings::default()
        };
        train::run(&cfg, &mut Vec::new()).unwrap();
    });
    let pairs = [
        ("converge.csv", &a, &b),
        ("solvebench.csv", &sa, &sb),
        ("solvebench_trace.csv", &sa, &sb),
        ("history.csv", &ta, &tb),
        ("checkpoint.json", &ta, &tb),
    ];
    for (name, a, b) in pairs {
        if std::fs::read(a.join(name)).ok() != std::fs::read(b.join(name)).ok() {
            problems.push(format!("{name} differs"));
        }
    }
    let path = ta.join("checkpoint.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let model = ckpt.to_model().unwrap();
    let again = Checkpoint::from_model(&model, ckpt.seed, &ckpt.seed_source);
    let bits_equal = model
        .flatten()
        .iter()
        .zip(Checkpoint::from_json(&again.to_json().unwrap()).unwrap().to_model().unwrap().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    if !bits_equal || again.to_json().unwrap() != text {
        problems.push("checkpoint round trip is not bit-exact".into());
    }
    if problems.is_empty() {
        outcome(true, "converge, solvebench and train outputs byte-identical; checkpoint round trip bit-exact".into())
    } else {
        outcome(false, problems.join("; "))
    }
}

fn hutchinson_estimator() -> Outcome {
    let start = Instant::now();
    let j = Rng::new(0).randn(6, 6, 1.0);
    let dense = j.data().iter().map(|v| v * v).sum::<f64>() / 6.0;
    let vjp = |u: &[f64]| -> deqfuse_core::Result<Vec<f64>> {
        Ok((0..6).map(|c| (0..6).map(|r| u[r] * j.get(r, c)).sum()).collect())
    };
    let est = hutchinson_frobenius(&vjp, 6, &mut Rng::new(1), 10_000).unwrap();
    let rel = (est - dense).abs() / dense;
    let el = start.elapsed();
    outcome(
        rel < 0.02 && within(el, 5.0),
        format!("estimate {est:.4} vs dense {dense:.4} (rel err {:.2}%)", 100.0 * rel),
    )
}

fn main() -> ExitCode {
    let dir = TempDir::new().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("fixed-point convergence", Box::new(fixed_point_convergence)),
        ("solver oracle equivalence", Box::new(solver_oracle_equivalence)),
        ("gradient correctness", Box::new(|| gradient_correctness(&dir))),
        ("anderson affine exactness", Box::new(affine_exactness)),
        ("synthetic task", Box::new(|| synthetic_task(&dir))),
        ("ablation direction", Box::new(ablation_direction)),
        ("determinism and serialization", Box::new(|| determinism(&dir))),
        ("jacobian estimator", Box::new(hutchinson_estimator)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!("criterion {} {name}: {} ({})", k + 1, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{DeqError, Result};
use crate::numcore::{norm, rel_diff_slices, ridge_lstsq, Tensor2};

/// Residual norm above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Naive,
    Anderson,
}

impl SolverMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverMethod::Naive => "naive",
            SolverMethod::Anderson => "anderson",
        }
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = DeqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SolverMethod::Naive),
            "anderson" => Ok(SolverMethod::Anderson),
            other => Err(DeqError::config(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Stop once the convergence metric drops to this value.
    pub tol: f64,
    pub max_steps: usize,
    /// Number of most recent residuals Anderson combines.
    pub memory: usize,
    /// Damping: `s ← (1−β)·Σγs + β·Σγf`.
    pub beta: f64,
    /// Ridge strength, relative to the mean squared column norm of the
    /// residual-difference matrix.
    pub lambda: f64,
    /// When false, always run `max_steps` steps.
    pub early_stop: bool,
    /// Keep every iterate the solver evaluated the map at.
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Anderson,
            tol: 1e-4,
            max_steps: 100,
            memory: 5,
            beta: 1.0,
            lambda: 1e-4,
            early_stop: true,
            keep_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn naive() -> Self {
        Self {
            method: SolverMethod::Naive,
            ..Self::default()
        }
    }

    pub fn anderson() -> Self {
        Self::default()
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(DeqError::config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_steps == 0 {
            return Err(DeqError::config("max_steps must be >= 1"));
        }
        if self.memory == 0 {
            return Err(DeqError::config("anderson memory must be >= 1"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(DeqError::config(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(DeqError::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Per-step convergence record of one solver run.
///
/// `rel_diffs[k]` is the convergence metric between the map output at the
/// k-th iterate and that iterate, i.e. how much one more layer application
/// moves the state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub rel_diffs: Vec<f64>,
    pub steps_taken: usize,
    pub converged: bool,
    /// Absolute `‖f(s) − s‖` at the last evaluated iterate.
    pub final_residual: f64,
}

impl SolverTrace {
    /// Metric recorded at 1-based step `step`, if the run got that far.
    pub fn at_step(&self, step: usize) -> Option<f64> {
        step.checked_sub(1).and_then(|k| self.rel_diffs.get(k).copied())
    }

    pub fn last(&self) -> Option<f64> {
        self.rel_diffs.last().copied()
    }

    /// First 1-based step whose metric is at or below `target`.
    pub fn steps_to(&self, target: f64) -> Option<usize> {
        self.rel_diffs.iter().position(|&r| r <= target).map(|k| k + 1)
    }

    /// `step,rel_diff` CSV, one row per step, 7 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,rel_diff\n");
        for (k, r) in self.rel_diffs.iter().enumerate() {
            let _ = writeln!(out, "{},{:.6e}", k + 1, r);
        }
        out
    }
}

/// A map whose fixed point a solver looks for, acting on a flat state.
pub trait FixedPointMap {
    fn dim(&self) -> usize;

    fn apply(&self, state: &[f64]) -> Result<Vec<f64>>;

    /// Convergence metric between the map output and its input.
    fn distance(&self, new: &[f64], old: &[f64]) -> f64 {
        rel_diff_slices(new, old)
    }
}

impl<F> FixedPointMap for (usize, F)
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        (self.1)(state)
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    /// The last map output, `f(s_k)` at the final iterate `s_k`.
    pub state: Vec<f64>,
    pub trace: SolverTrace,
    /// Iterates `s_0, s_1, …` the map was evaluated at (when requested).
    pub iterates: Vec<Vec<f64>>,
}

struct HistoryEntry {
    state: Vec<f64>,
    output: Vec<f64>,
    residual: Vec<f64>,
}

/// Runs naive iteration or Anderson acceleration from `init`.
///
/// Hitting `max_steps` is not an error; the returned trace says whether the
/// tolerance was met. Non-finite or exploding residuals are.
pub fn solve_fixed_point(
    map: &dyn FixedPointMap,
    init: Vec<f64>,
    cfg: &SolverConfig,
    what: &'static str,
) -> Result<FixedPointSolution> {
    cfg.validate()?;
    if init.len() != map.dim() {
        return Err(DeqError::shape("solve_fixed_point", (init.len(), 1), (map.dim(), 1)));
    }
    let memory = match cfg.method {
        SolverMethod::Naive => 1,
        SolverMethod::Anderson => cfg.memory,
    };
    let mut trace = SolverTrace::default();
    let mut iterates = Vec::new();
    let mut history: VecDeque<HistoryEntry> = VecDeque::with_capacity(memory);
    let mut s = init;
    let mut last_output = Vec::new();

    for _ in 0..cfg.max_steps {
        let f = map.apply(&s)?;
        let g: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - b).collect();
        let residual = norm(&g);
        let rel = map.distance(&f, &s);
        trace.rel_diffs.push(rel);
        trace.steps_taken += 1;
        trace.final_residual = residual;
        if cfg.keep_iterates {
            iterates.push(s.clone());
        }
        if !residual.is_finite() || !rel.is_finite() || residual > DIVERGENCE_THRESHOLD {
            return Err(DeqError::Divergence {
                what,
                residual,
                trace,
            });
        }
        if rel <= cfg.tol {
            trace.converged = true;
            if cfg.early_stop {
                return Ok(FixedPointSolution {
                    state: f,
                    trace,
                    iterates,
                });
            }
        } else {
            trace.converged = false;
        }

        if history.len() == memory {
            history.pop_front();
        }
        history.push_back(HistoryEntry {
            state: s,
            output: f.clone(),
            residual: g,
        });
        s = next_iterate(&history, cfg.beta, cfg.lambda)?;
        last_output = f;
    }

    Ok(FixedPointSolution {
        state: last_output,
        trace,
        iterates,
    })
}

fn damped(state: &[f64], output: &[f64], beta: f64) -> Vec<f64> {
    if beta == 1.0 {
        return output.to_vec();
    }
    state
        .iter()
        .zip(output)
        .map(|(s, f)| (1.0 - beta) * s + beta * f)
        .collect()
}

/// Anderson step in difference form.
///
/// With residuals `g_0..g_k` in the window, solve
/// `min_θ ‖g_k − ΔG θ‖² + λ̃‖θ‖²` where `ΔG` stacks consecutive residual
/// differences; this is the affine-constrained problem over mixing weights
/// `γ` (`Σγ = 1`) after eliminating the constraint. Then
/// `s ← (1−β)(s_k − ΔS θ) + β(f_k − ΔF θ)`.
fn next_iterate(history: &VecDeque<HistoryEntry>, beta: f64, lambda: f64) -> Result<Vec<f64>> {
    let latest = history.back().expect("history is never empty here");
    let cols = history.len() - 1;
    if cols == 0 {
        return Ok(damped(&latest.state, &latest.output, beta));
    }
    let n = latest.state.len();
    let mut dg = Tensor2::zeros(n, cols);
    for j in 0..cols {
        let (a, b) = (&history[j].residual, &history[j + 1].residual);
        for r in 0..n {
            dg.set(r, j, b[r] - a[r]);
        }
    }
    let mean_sq = dg.data().iter().map(|v| v * v).sum::<f64>() / cols as f64;
    if mean_sq == 0.0 {
        return Ok(damped(&latest.state, &latest.output, beta));
    }
    let rhs = Tensor2::new(n, 1, latest.residual.clone())?;
    let theta = ridge_lstsq(&dg, &rhs, lambda * mean_sq)?;

    let mut s_mix = latest.state.clone();
    let mut f_mix = latest.output.clone();
    for j in 0..cols {
        let t = theta.get(j, 0);
        let (a, b) = (&history[j], &history[j + 1]);
        for r in 0..n {
            s_mix[r] -= t * (b.state[r] - a.state[r]);
            f_mix[r] -= t * (b.output[r] - a.output[r]);
        }
    }
    Ok(damped(&s_mix, &f_mix, beta))
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "deqfuse", version, about = "Deep-equilibrium multimodal fusion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace the relative difference norm of a fixed-length solver run.
    Converge(ConvergeArgs),
    /// Compare implicit gradients with finite differences and unrolling.
    Gradcheck(GradcheckArgs),
    /// Train on the synthetic sign-product task.
    Train(TrainArgs),
    /// Train every ablation variant over a set of seeds.
    Ablate(AblateArgs),
    /// Steps to a target residual, naive iteration vs Anderson.
    Solvebench(SolvebenchArgs),
}

/// Flags shared by every command. Flags beat `--config`, which beats the
/// built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON file of settings for this command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_modalities: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// naive or anderson.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub memory: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fusion parameters to trace instead of a random instance.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_modalities: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub forward_tol: Option<f64>,
    #[arg(long)]
    pub unrolled_steps: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning rate of the fusion parameters; --lr then applies to the head.
    #[arg(long)]
    pub fusion_lr: Option<f64>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Jacobian-penalty weight.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub jac_probes: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// sign-product or sign-pair.
    #[arg(long)]
    pub label_rule: Option<String>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub init_gain: Option<f64>,
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub solver_tol: Option<f64>,
    #[arg(long)]
    pub solver_max_steps: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// full, weighted-sum, no-deq, no-fuse, no-theta or no-gate.
    #[arg(long)]
    pub variant: Option<String>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SolvebenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_modalities: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Relative difference norm counted as solved.
    #[arg(long)]
    pub target_resid: Option<f64>,
    /// Runs still above target after this many steps are censored.
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub memory: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub trace_steps: Option<usize>,
}

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "momentstein", version, about = "Stein kernels from moment maps")]
pub struct Cli {
    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true, env = "MOMENTSTEIN_THREADS")]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

/// A fully resolved subcommand; this is what manifests record.
#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Solve for the moment map of a measure and write it as JSON.
    SolveMomentMap(SolveArgs),
    /// Evaluate the Stein kernel of a moment map on a grid of points.
    SteinKernel(KernelArgs),
    /// Print the Stein discrepancy upper bound of a moment map.
    Discrepancy(DiscrepancyArgs),
    /// Wasserstein distance between two measures or clouds.
    Wp(WpArgs),
    /// Run the inequality suites and kernel invariant checks.
    VerifyInequalities(VerifyArgs),
    /// CLT experiment: empirical W_p of normalized sums against certified bounds.
    CltRates(CltArgs),
    /// Repeat a run recorded in a manifest.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    /// Measure description (JSON).
    #[arg(long)]
    pub measure: PathBuf,
    /// auto, closed_form, grid1d or max_affine.
    #[arg(long, default_value = "auto")]
    pub backend: String,
    /// Grid nodes for the 1D solver.
    #[arg(long, default_value_t = 4096)]
    pub grid_nodes: usize,
    /// Fixed-point tolerance of the 1D solver.
    #[arg(long, default_value_t = 1e-6)]
    pub grid_tol: f64,
    /// Gradient tolerance of the semi-discrete solver.
    #[arg(long, default_value_t = 1e-3)]
    pub semidiscrete_tol: f64,
    /// Monte Carlo samples for semi-discrete cells in dimension >= 2.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Log-sum-exp temperature applied to max-affine solutions.
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct KernelArgs {
    /// Moment map (JSON written by solve-moment-map).
    #[arg(long)]
    pub map: PathBuf,
    /// Evaluation points, CSV with header x1,...,xd.
    #[arg(long)]
    pub eval_grid: PathBuf,
    /// Output CSV with columns y1..yd, t11..tdd.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DiscrepancyArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WpArgs {
    /// First law: a measure description (JSON) or a point cloud (CSV).
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// auto, quantile, lp or entropic.
    #[arg(long, default_value = "auto")]
    pub method: String,
    /// Entropic regularization; defaults to 1% of the median cost.
    #[arg(long)]
    pub reg: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    /// Points drawn from analytic measures in dimension >= 2.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub measure: PathBuf,
    /// all, poincare, brascamp-lieb, klartag or kernel.
    #[arg(long, default_value = "all")]
    pub suite: String,
    /// Tabulated kernel (CSV from stein-kernel) to check instead of the map's own kernel.
    #[arg(long)]
    pub kernel: Option<PathBuf>,
    /// Random directions for the moment check.
    #[arg(long, default_value_t = 16)]
    pub directions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CltArgs {
    /// One-dimensional factor (JSON measure description).
    #[arg(long)]
    pub factor: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Cap on max(d) * max(n) * samples.
    #[arg(long, default_value_t = momentstein::clt_bench::DEFAULT_BUDGET)]
    pub budget: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Log-log SVG chart of estimates and bounds.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the primary output here instead of the recorded path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the plot here instead of the recorded path (clt-rates only).
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

impl Command {
    /// Primary output path, which names the manifest.
    pub fn out(&self) -> Option<&Path> {
        match self {
            Command::SolveMomentMap(a) => Some(&a.out),
            Command::SteinKernel(a) => Some(&a.out),
            Command::Discrepancy(a) => a.out.as_deref(),
            Command::Wp(a) => a.out.as_deref(),
            Command::VerifyInequalities(a) => Some(&a.out),
            Command::CltRates(a) => Some(&a.out),
            Command::Rerun(_) => None,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::SolveMomentMap(a) => a.out = out,
            Command::SteinKernel(a) => a.out = out,
            Command::Discrepancy(a) => a.out = Some(out),
            Command::Wp(a) => a.out = Some(out),
            Command::VerifyInequalities(a) => a.out = out,
            Command::CltRates(a) => a.out = out,
            Command::Rerun(_) => {}
        }
    }
}

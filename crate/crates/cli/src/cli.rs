//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "lcgf",
    version,
    about = "Experiments on log-correlated Gaussian fields",
    long_about = "Experiments on log-correlated Gaussian fields.\n\n\
        Every subcommand accepts --config FILE with `key = value` lines (keys are long flag \
        names); flags given on the command line override the file. Tabular output starts with \
        `#! key = value` header lines recording the tool version and the resolved configuration, \
        so an output file can be passed back as --config to reproduce it.\n\n\
        Exit codes: 0 success, 1 input error, 2 numerical error, 3 insufficient data.",
    propagate_version = true,
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Query covariance entries or export a covariance matrix
    Cov(CovArgs),
    /// Draw one field and write it as CSV or binary
    Sample(SampleArgs),
    /// Check the log-correlation assumptions against the exact covariance
    CheckAssumptions(CheckArgs),
    /// Maxima of independent replicas, raw and centered by m_N
    MaxStats(ReplicaFieldArgs),
    /// Right tail of the centered maximum and its fitted exponent
    Tail(TailArgs),
    /// Restricted-pair maxima at mesoscopic separation
    Pairs(PairsArgs),
    /// Pairs of near-maxima at mesoscopic distance
    Loc(LocArgs),
    /// Derivative martingale of independent replicas
    Dmart(ReplicaFieldArgs),
    /// Build the approximation field, export its components or tabulate the fine-field tail
    Xi(XiArgs),
    /// Barrier-event counts on approximation-field replicas
    Barrier(BarrierArgs),
    /// Draws of G* or their comparison with the Gumbel mixture
    Gstar(GstarArgs),
    /// Compare a sample with the Gumbel mixture limit
    LimitCompare(LimitCompareArgs),
    /// Smallest CLREM diagonal offset W that keeps the matrix positive definite
    ClremW(ClremWArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyArg {
    Brw,
    Mbrw,
    Clrem,
}

#[derive(Args, Debug, Clone)]
pub struct FieldArgs {
    /// Field family
    #[arg(long, value_enum, default_value_t = FamilyArg::Mbrw)]
    pub family: FamilyArg,
    /// Lattice dimension d (brw, mbrw)
    #[arg(short = 'd', long = "dim", default_value_t = 2)]
    pub dim: usize,
    /// Side exponent n, N = 2^n (brw, mbrw)
    #[arg(short = 'n', long = "n", default_value_t = 6)]
    pub n: u32,
    /// Number of circle points N (clrem)
    #[arg(short = 'N', long = "points", default_value_t = 128)]
    pub points: usize,
    /// Diagonal offset W (clrem)
    #[arg(short = 'W', long = "w", default_value_t = 0.0, allow_negative_numbers = true)]
    pub w: f64,
}

#[derive(Args, Debug, Clone)]
pub struct IoArgs {
    /// Output file (standard output when absent)
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    /// Configuration file of `key = value` lines; command-line flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Master seed
    #[arg(long, env = "LCGF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores); output does not depend on it
    #[arg(long, env = "LCGF_WORKERS", default_value_t = 0)]
    pub workers: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Bin,
    Csv,
}

#[derive(Args, Debug)]
pub struct CovArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    /// First lattice point, comma-separated coordinates (brw, mbrw)
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<usize>>,
    /// Second lattice point, comma-separated coordinates (brw, mbrw)
    #[arg(long, value_delimiter = ',')]
    pub y: Option<Vec<usize>>,
    /// First circle index (clrem)
    #[arg(long)]
    pub k: Option<usize>,
    /// Second circle index (clrem)
    #[arg(long)]
    pub l: Option<usize>,
    /// Export the full covariance matrix to this file instead of querying one entry
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Format of the exported matrix
    #[arg(long, value_enum, default_value_t = MatrixFormat::Bin)]
    pub format: MatrixFormat,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Output format; binary output needs --output
    #[arg(long, value_enum, default_value_t = MatrixFormat::Csv)]
    pub format: MatrixFormat,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    /// Maximum number of probed pairs per check; exhaustive below it
    #[arg(long, default_value_t = 10_000)]
    pub pair_budget: usize,
    /// Interior fractions for the correlation check, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub delta: Vec<f64>,
    /// Side exponents for the near/off-diagonal fits, ascending (brw, mbrw); skipped when absent
    #[arg(long, value_delimiter = ',')]
    pub fgh_n: Option<Vec<u32>>,
    /// Macroscopic grid coordinates t in [0, 1); each gives the point (t, .., t)
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.375,0.625")]
    pub x_grid: Vec<f64>,
    /// Microscopic offsets range over [0, L]^d
    #[arg(long = "micro", default_value_t = 2)]
    pub micro: usize,
    /// Report format
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Args, Debug)]
pub struct ReplicaFieldArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of independent replicas
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Args, Debug)]
pub struct TailArgs {
    #[command(flatten)]
    pub base: ReplicaFieldArgs,
    /// Lower end of the fit window in z
    #[arg(long, default_value_t = 1.0)]
    pub z_lo: f64,
    /// Upper end of the fit window in z
    #[arg(long, default_value_t = 3.5)]
    pub z_hi: f64,
}

#[derive(Args, Debug)]
pub struct PairsArgs {
    #[command(flatten)]
    pub base: ReplicaFieldArgs,
    /// Mesoscopic scale r: pairs with r <= |u - v| <= N / r
    #[arg(short = 'r', long = "r", default_value_t = 2)]
    pub r: usize,
}

#[derive(Args, Debug)]
pub struct LocArgs {
    #[command(flatten)]
    pub base: ReplicaFieldArgs,
    /// Mesoscopic scale r >= 3: pairs with r < |u - v| < N / r
    #[arg(short = 'r', long = "r", default_value_t = 4)]
    pub r: usize,
    /// Threshold depth c: both values at least m_N - c log log r
    #[arg(short = 'c', long = "c", default_value_t = 1.0, allow_negative_numbers = true)]
    pub c: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceArg {
    Mbrw,
    Brw,
}

#[derive(Args, Debug, Clone)]
pub struct XiParamArgs {
    /// Lattice dimension d
    #[arg(short = 'd', long = "dim", default_value_t = 2)]
    pub dim: usize,
    /// Side exponent n, N = 2^n
    #[arg(short = 'n', long = "n", default_value_t = 9)]
    pub n: u32,
    /// Coarse scale exponent k, K = 2^k
    #[arg(long, default_value_t = 1)]
    pub k: u32,
    /// Coarse scale exponent l, L = 2^l
    #[arg(long, default_value_t = 1)]
    pub l: u32,
    /// Bottom scale exponent k', K' = 2^k'
    #[arg(long, default_value_t = 2)]
    pub kp: u32,
    /// Bottom scale exponent l', L' = 2^l'
    #[arg(long, default_value_t = 2)]
    pub lp: u32,
    /// Assumption constant alpha in the correction variance
    #[arg(long, default_value_t = lcgf::approx::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Reference field for the coarse and bottom components
    #[arg(long, value_enum, default_value_t = ReferenceArg::Mbrw)]
    pub reference: ReferenceArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiMode {
    /// Write the selected components of one field as binary records
    Export,
    /// Tabulate the fine-field right tail over replicas
    Tail,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentArg {
    Total,
    Coarse,
    Bottom,
    Mbrw,
    Correction,
    Fine,
}

#[derive(Args, Debug)]
pub struct XiArgs {
    #[command(flatten)]
    pub params: XiParamArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// What to produce
    #[arg(long, value_enum, default_value_t = XiMode::Export)]
    pub mode: XiMode,
    /// Components to export, comma-separated
    #[arg(long, value_enum, value_delimiter = ',', default_value = "total,coarse,bottom,mbrw,correction,fine")]
    pub components: Vec<ComponentArg>,
    /// Tail levels z, comma-separated (tail mode)
    #[arg(long, value_delimiter = ',', default_value = "2,2.5,3,3.5,4")]
    pub z_grid: Vec<f64>,
    /// Number of replicas (tail mode)
    #[arg(long, default_value_t = 100)]
    pub replicas: usize,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Args, Debug)]
pub struct BarrierArgs {
    #[command(flatten)]
    pub params: XiParamArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Barrier levels z >= 1, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub z: Vec<f64>,
    /// Number of replicas
    #[arg(long, default_value_t = 100)]
    pub replicas: usize,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum GstarMode {
    /// One CSV row per draw
    Draws,
    /// Compare the draws with the mixture built from their coarse derivative martingales
    Compare,
}

#[derive(Args, Debug)]
pub struct GstarArgs {
    /// Lattice dimension d
    #[arg(short = 'd', long = "dim", default_value_t = 2)]
    pub dim: usize,
    /// Coarse scale exponent k
    #[arg(long, default_value_t = 2)]
    pub k: u32,
    /// Coarse scale exponent l
    #[arg(long, default_value_t = 1)]
    pub l: u32,
    /// Tail constant beta*
    #[arg(long, default_value_t = 1.0)]
    pub beta_star: f64,
    /// Barrier offset gamma > 1/sqrt(2d); defaults to max(1/sqrt(2d) + 0.1, log log log KL)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of draws
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    /// What to produce
    #[arg(long, value_enum, default_value_t = GstarMode::Draws)]
    pub mode: GstarMode,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Args, Debug)]
pub struct LimitCompareArgs {
    /// Sample to compare: one value per line, or a CSV read through --column
    #[arg(long)]
    pub samples: PathBuf,
    /// Samples of the random shift Z, same file conventions
    #[arg(long)]
    pub z_samples: PathBuf,
    /// CSV column of --samples holding the values (default: last column)
    #[arg(long)]
    pub column: Option<String>,
    /// CSV column of --z-samples holding the values (default: last column)
    #[arg(long)]
    pub z_column: Option<String>,
    /// Tail constant beta*; alternatively fit it with --tail-table
    #[arg(long)]
    pub beta_star: Option<f64>,
    /// Fine-field tail table (output of `xi --mode tail`) to fit beta* from
    #[arg(long)]
    pub tail_table: Option<PathBuf>,
    /// Fit window in z for --tail-table, as lo,hi
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    pub window: Vec<f64>,
    /// Lattice dimension d
    #[arg(short = 'd', long = "dim", default_value_t = 2)]
    pub dim: usize,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Args, Debug)]
pub struct ClremWArgs {
    /// Number of circle points N
    #[arg(short = 'N', long = "points", default_value_t = 128)]
    pub points: usize,
    /// Bisection tolerance on W
    #[arg(long, default_value_t = lcgf::covariance::DEFAULT_W_TOLERANCE)]
    pub tol: f64,
    #[command(flatten)]
    pub io: IoArgs,
}

//! `flexisaga` command-line tool.

mod commands;
mod failure;
mod oracle;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flexisaga::formats::FormatKind;
use flexisaga::sim::Dataflow;

use crate::oracle::OracleArg;

#[derive(Parser, Debug)]
#[command(name = "flexisaga", version, about = "Sparse and dense systolic-array GEMM simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Storage footprint of a matrix under each encoding
    Footprint(FootprintArgs),
    /// Encode a matrix into an FSEN file
    Encode(EncodeArgs),
    /// Decode an FSEN file back to FSMX
    Decode(DecodeArgs),
    /// Lower a CONV or FC operator to GEMM operands
    Lower(LowerArgs),
    /// Structured vector pruning under an accuracy oracle
    Prune(PruneArgs),
    /// Simulate one GEMM or operator on the array
    Sim(SimArgs),
    /// Design-space exploration over array shapes, pruning and dataflows
    Dse(DseArgs),
    /// Generate synthetic matrices and workloads
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args, Debug)]
pub struct OutDir {
    /// Directory for outputs and manifest.json
    #[arg(short = 'o', long = "out-dir", default_value = "flexisaga-out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct FootprintArgs {
    /// Input matrix (FSMX)
    #[arg(long)]
    pub matrix: PathBuf,
    /// Comma-separated format names, or "all"
    #[arg(long, default_value = "all", value_parser = parse_formats)]
    pub formats: FormatList,
    /// Zero-column detection height for two-stage-bitmap and csb
    #[arg(long)]
    pub column_height: Option<usize>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Input matrix (FSMX)
    #[arg(long)]
    pub matrix: PathBuf,
    /// Target format
    #[arg(long, value_parser = parse_format)]
    pub format: FormatKind,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Encoded matrix (FSEN)
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct LowerArgs {
    /// Operator description (JSON)
    #[arg(long)]
    pub op: PathBuf,
    /// Weight matrix (FSMX), already flattened to C_out x C_in*k_h*k_w for CONV
    #[arg(long)]
    pub weights: PathBuf,
    /// Raw inputs (FSMX): C_in x H*W for CONV, in_features x batch for FC
    #[arg(long)]
    pub inputs: PathBuf,
    /// Also report the zero-padded tile grid for tiles of ROWSxCOLS
    #[arg(long, value_parser = parse_shape)]
    pub tile: Option<(usize, usize)>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    /// Weight matrices (FSMX) pruned together as one group
    #[arg(long, required = true, num_args = 1..)]
    pub weights: Vec<PathBuf>,
    /// Pruning schedule (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Pruning tile as ROWSxCOLS
    #[arg(long, value_parser = parse_shape)]
    pub tile: (usize, usize),
    /// threshold:MAX, energy:BASE,EXP or cmd:PROGRAM [ARGS...]
    #[arg(long, value_parser = OracleArg::from_str_arg)]
    pub oracle: OracleArg,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DataflowArg {
    Best,
    One(Dataflow),
}

#[derive(Args, Debug)]
pub struct SimArgs {
    /// Array configuration (JSON)
    #[arg(long)]
    pub arch: PathBuf,
    /// dOS, dWS, dIS, sOS, sWS, sIS, csOS or best
    #[arg(long, value_parser = parse_dataflow)]
    pub dataflow: DataflowArg,
    /// Weight matrix (FSMX)
    #[arg(long)]
    pub weights: PathBuf,
    /// Input matrix (FSMX)
    #[arg(long)]
    pub inputs: PathBuf,
    /// Operator description (JSON); without it the operands are used as a plain GEMM
    #[arg(long)]
    pub op: Option<PathBuf>,
    /// Write the memory-interface trace to trace.csv
    #[arg(long)]
    pub trace: bool,
    /// Write the computed output matrix to output.fsmx
    #[arg(long)]
    pub output: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Args, Debug)]
pub struct DseArgs {
    /// Exploration config (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads (0 uses all cores)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Subcommand, Debug)]
pub enum GenCommand {
    /// Random matrix with a given element sparsity
    Matrix(GenMatrixArgs),
    /// Operator matrices plus a matching dse config
    Workload(GenWorkloadArgs),
}

#[derive(Args, Debug)]
pub struct GenMatrixArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Probability that an element is zero
    #[arg(long, default_value_t = 0.0)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file name inside the output directory
    #[arg(long, default_value = "matrix.fsmx")]
    pub name: String,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two CONV and two FC layers
    Mixed,
    /// Three FC layers of very different shapes
    Skewed,
}

#[derive(Args, Debug)]
pub struct GenWorkloadArgs {
    #[arg(long, value_enum, default_value_t = Preset::Mixed)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// PE budget written into dse.json
    #[arg(long, default_value_t = 64)]
    pub pe_budget: usize,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Clone, Debug)]
pub struct FormatList(pub Vec<FormatKind>);

fn parse_format(s: &str) -> Result<FormatKind, String> {
    s.parse().map_err(|e: flexisaga::Error| e.to_string())
}

fn parse_formats(s: &str) -> Result<FormatList, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(FormatList(FormatKind::ALL.to_vec()));
    }
    s.split(',').map(|f| parse_format(f.trim())).collect::<Result<_, _>>().map(FormatList)
}

fn parse_dataflow(s: &str) -> Result<DataflowArg, String> {
    if s.eq_ignore_ascii_case("best") {
        return Ok(DataflowArg::Best);
    }
    s.parse().map(DataflowArg::One).map_err(|e: flexisaga::Error| format!("{e}, or best"))
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("invalid dimension {v:?} in {s:?}")),
        Ok(n) => Ok(n),
    };
    Ok((dim(r)?, dim(c)?))
}

impl OracleArg {
    fn from_str_arg(s: &str) -> Result<Self, String> {
        s.parse()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

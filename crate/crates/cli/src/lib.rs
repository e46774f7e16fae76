//! The `exdos` command line: one subcommand per pipeline stage, exchanging
//! data only through JSON and CSV files.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use exdos::patterns::Vulnerability;
use serde::Serialize;

mod commands;
pub mod error;
mod io;

pub use error::{Failure, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

/// Environment variable that overrides every other seed source.
pub const SEED_ENV: &str = "EXDOS_SEED";

#[derive(Debug, Parser, Serialize)]
#[command(name = "exdos", version, about = "Cross-modal distillation detector for EVM bytecode")]
pub struct Cli {
    /// Seed for every randomised step; EXDOS_SEED takes precedence.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for outputs; relative --out paths resolve against it.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(
        long,
        global = true,
        default_value = "warn",
        value_parser = ["off", "error", "warn", "info", "debug", "trace"]
    )]
    pub log_level: String,
    /// Worker threads for per-contract stages and concurrent runs.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Decode bytecode into instructions.
    Disasm(DisasmArgs),
    /// Build the control flow graph of bytecode.
    Cfg(CfgArgs),
    /// Build the code semantic graph of a compact-AST JSON file.
    Csg(CsgArgs),
    /// Match the nine sub-patterns on a graph.
    Patterns(PatternsArgs),
    /// Pair source and bytecode key nodes.
    Align(AlignArgs),
    /// Compute node features for a graph.
    Featurize(FeaturizeArgs),
    /// Write a synthetic labelled corpus and its manifest.
    GenCorpus(GenCorpusArgs),
    /// Stratified train/val/test split of a manifest.
    Split(SplitArgs),
    /// Pretrain the source-graph teacher.
    TrainTeacher(TrainArgs),
    /// Distil a frozen teacher into a bytecode student.
    Distill(DistillArgs),
    /// Supervised fine-tuning of a student on bytecode.
    Finetune(FinetuneArgs),
    /// Score bytecode with a trained student.
    Detect(DetectArgs),
    /// Repeated split/train/test evaluation with CSV reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BytecodeInput {
    /// Bytecode file or literal hex string.
    pub input: String,
    /// Keep a trailing compiler metadata section instead of stripping it.
    #[arg(long)]
    pub keep_metadata: bool,
    /// Opcode override file applied on top of the Shanghai table.
    #[arg(long)]
    pub opcodes: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DisasmArgs {
    #[command(flatten)]
    pub bytecode: BytecodeInput,
    /// Emit a JSON array of {offset, mnemonic, push_data_hex}.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CfgArgs {
    #[command(flatten)]
    pub bytecode: BytecodeInput,
    /// Defaults to the input file stem.
    #[arg(long)]
    pub contract_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the basic blocks, needed by `patterns` and `featurize`.
    #[arg(long)]
    pub blocks_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CsgArgs {
    pub ast: PathBuf,
    /// One function; all implemented functions when omitted.
    #[arg(long)]
    pub function: Option<String>,
    #[arg(long)]
    pub contract_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PatternsArgs {
    pub graph: PathBuf,
    /// Blocks of a bytecode graph.
    #[arg(long, conflicts_with = "ast")]
    pub blocks: Option<PathBuf>,
    /// AST of a source graph.
    #[arg(long)]
    pub ast: Option<PathBuf>,
    /// Hop radius for successor and predecessor blocks.
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    pub source_annotations: PathBuf,
    pub bytecode_annotations: PathBuf,
    /// Source graph, to check that pairs reference real nodes.
    #[arg(long, requires = "bytecode_graph")]
    pub source_graph: Option<PathBuf>,
    #[arg(long, requires = "source_graph")]
    pub bytecode_graph: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    pub graph: PathBuf,
    #[arg(long, conflicts_with_all = ["ast", "embeddings"])]
    pub blocks: Option<PathBuf>,
    #[arg(long, conflicts_with = "embeddings")]
    pub ast: Option<PathBuf>,
    /// Externally computed embeddings to validate and re-emit.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 60)]
    pub per_vulnerability: usize,
    /// Vulnerable contracts per vulnerability; the rest are safe.
    #[arg(long, default_value_t = 30)]
    pub vulnerable: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    pub manifest: PathBuf,
    #[arg(long, default_value = "7:1:2")]
    pub ratios: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// TOML or JSON training config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file: train on its train ids and select epochs on its val ids.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Restrict the manifest to one vulnerability.
    #[arg(long)]
    pub vulnerability: Option<Vulnerability>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub teacher: PathBuf,
    /// Student initialisation; a fresh seeded init when omitted.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Distilled student; a fresh seeded init (no distillation) when omitted.
    #[arg(long)]
    pub student: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub bytecode: BytecodeInput,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub contract_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Evaluate one vulnerability; every one in the manifest when omitted.
    #[arg(long)]
    pub vulnerability: Option<Vulnerability>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

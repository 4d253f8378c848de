mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "flowvo",
    version,
    about = "Synthetic rigid-flow scenes and pixel-wise visual odometry"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate seeded scenes, one directory per scene.
    Generate(GenerateArgs),
    /// Estimate camera motion for one scene.
    Estimate(EstimateArgs),
    /// Compare predictions against ground-truth scenes.
    Evaluate(EvaluateArgs),
    /// Render flow and uncertainty panels as PNG.
    Visualize(VisualizeArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inclusive object count range, e.g. `0..5`.
    #[arg(long, default_value = "0..5", value_parser = parse_range)]
    pub objects: (usize, usize),
    /// Per-axis bound on camera rotation (rad).
    #[arg(long)]
    pub max_rotation: Option<f64>,
    /// Per-axis bound on camera translation (scene units).
    #[arg(long)]
    pub max_translation: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    Negated,
    AsPrinted,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RefineTarget {
    /// Total flow, residuals weighted by translation uncertainty.
    Total,
    /// The scene's ground-truth ego flow.
    Ego,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Scene manifest or scene directory.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = SignArg::Negated)]
    pub weight_sign: SignArg,
    /// Refine the selected pose by minimising the flow reprojection error.
    #[arg(long)]
    pub refine: bool,
    #[arg(long, value_enum, default_value_t = RefineTarget::Total)]
    pub refine_target: RefineTarget,
    /// Prediction JSON; array sidecars are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReduceArg {
    Mean,
    Sum,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of prediction JSON files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of scene directories (or a single scene directory).
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = ReduceArg::Mean)]
    pub l1_reduce: ReduceArg,
    #[arg(long, value_enum, default_value_t = NormArg::L1)]
    pub epe: NormArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Use the uncertainty maps of this prediction instead of re-estimating.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad minimum {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad maximum {b:?}"))?;
    if a > b {
        return Err(format!("minimum {a} exceeds maximum {b}"));
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let run = || match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Visualize(a) => commands::visualize(a),
    };
    let result = match cli.threads {
        Some(0) => Err(commands::CliError::Validation(
            "--threads must be >= 1".into(),
        )),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(commands::CliError::Io(e.to_string())),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("0..5"), Ok((0, 5)));
        assert_eq!(parse_range(" 2 .. 2 "), Ok((2, 2)));
        assert!(parse_range("5..1").is_err());
        assert!(parse_range("3").is_err());
        assert!(parse_range("a..b").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

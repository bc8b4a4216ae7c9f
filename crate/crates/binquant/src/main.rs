use std::path::PathBuf;
use std::process::ExitCode;

use binquant::config::{CalibConfig, RunConfig};
use binquant::run::{self, Parallelism};
use binquant::RunResult;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "binquant", version, about = "1-bit weight quantization with output alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random weight and calibration pair as BQT1 files
    Synth(SynthArgs),
    /// Quantize one weight matrix
    Quantize(RunArgs),
    /// Quantize a model and emit error metrics
    Analyze(RunArgs),
    /// Summarize one or more run directories
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    d_in: usize,
    #[arg(long)]
    d_out: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Overrides for config keys; flags win over the file.
#[derive(Args)]
struct RunArgs {
    /// JSON run config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    amp: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    b_rows: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale_bits: Option<usize>,
    #[arg(long)]
    row_select: Option<String>,
    /// Directory holding weight.bqt, x.bqt and x_hat.bqt
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> RunResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(mode, amp, iters, k, b_rows, block_size, rel_tol, seed, scale_bits, row_select, out_dir);
        if let Some(d) = self.calib {
            c.calib = Some(CalibConfig::Dir(d));
        }
        Ok(c)
    }
}

fn execute(cli: Cli) -> RunResult<()> {
    match cli.command {
        Command::Synth(a) => {
            for p in run::synth(a.seed, a.d_in, a.d_out, a.n, a.noise, &a.out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Quantize(a) => {
            let cfg = a.resolve()?;
            let out = run::quantize(&cfg, &Parallelism::from_env()?)?;
            println!(
                "{}: objective {:.6e}, {:.4} bits/weight",
                out.out_dir.display(),
                out.summary.final_objective(),
                out.summary.bits_per_weight
            );
        }
        Command::Analyze(a) => {
            let cfg = a.resolve()?;
            let out = run::analyze(&cfg, &Parallelism::from_env()?)?;
            println!(
                "{}: {} layers, end-to-end mse {:.6e}",
                out.out_dir.display(),
                out.summary.layers.len(),
                out.summary.end_to_end_mse.unwrap_or(f64::NAN)
            );
        }
        Command::Report { runs } => print!("{}", run::report(&runs)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(2),
    }
}

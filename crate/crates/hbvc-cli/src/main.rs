//! `hbvc`: encode, decode, evaluate, calibrate.

mod commands;
mod curves;

use clap::{Args, Parser, Subcommand};
use hbvc_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hbvc", version, about = "Hierarchical B-frame video codec")]
struct Cli {
    /// Cap the worker thread count (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

/// Raw YUV geometry; raw files carry no header of their own.
#[derive(Args, Clone)]
struct Geometry {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    bit_depth: u8,
    #[arg(long, default_value_t = 30)]
    fps: u32,
}

#[derive(Args, Clone)]
struct OperatingPoint {
    /// Operating point 0..=3 binding lambda and quantization step
    /// (0 = highest quality).
    #[arg(long, default_value_t = 2)]
    op: usize,
    /// Explicit lambda; requires --lambda-free.
    #[arg(long)]
    lambda: Option<f64>,
    /// Allow lambdas outside the four standard points.
    #[arg(long, default_value_t = false)]
    lambda_free: bool,
    /// Explicit quantization step overriding the operating point's.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a raw YUV420 file into an HBVC stream.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        geometry: Geometry,
        /// Frames to encode (default: as many as the file holds).
        #[arg(long)]
        frames: Option<usize>,
        /// GoP size (power of two); defaults to the fps rule
        /// (32 at 30 fps, else 64).
        #[arg(long)]
        gop: Option<usize>,
        #[command(flatten)]
        point: OperatingPoint,
        /// Gain table JSON produced by `calibrate`.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Drop trailing frames that do not fill a GoP.
        #[arg(long, default_value_t = false)]
        truncate: bool,
        /// Enable encoder-side content adaptation.
        #[arg(long, default_value_t = false)]
        adapt: bool,
        /// Adaptation passes per frame.
        #[arg(long, default_value_t = 1)]
        adapt_budget: usize,
        /// Write the per-frame adaptation log here (CSV).
        #[arg(long)]
        adapt_log: Option<PathBuf>,
        /// Skip-threshold override.
        #[arg(long)]
        tau: Option<f64>,
        /// Motion search range override.
        #[arg(long)]
        search_range: Option<usize>,
    },
    /// Decode an HBVC stream to raw YUV420.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a decoded sequence against its source.
    Eval {
        /// Source raw YUV.
        #[arg(long)]
        orig: PathBuf,
        /// Decoded raw YUV.
        #[arg(long)]
        decoded: PathBuf,
        /// The stream the decode came from (for bitrate).
        #[arg(long)]
        stream: PathBuf,
        #[command(flatten)]
        geometry: Geometry,
        /// Row label in the report.
        #[arg(long, default_value = "sequence")]
        label: String,
        /// Optional per-frame VMAF scores (CSV `frame,score`) from an
        /// external tool.
        #[arg(long)]
        vmaf: Option<PathBuf>,
        /// Append one CSV row here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the full JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Append a gnuplot-style `bitrate quality` line here.
        #[arg(long)]
        rd_data: Option<PathBuf>,
    },
    /// Bjøntegaard delta rate between two RD-curve CSVs.
    Bdrate {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Use the classic cubic polynomial fit instead of PCHIP.
        #[arg(long, default_value_t = false)]
        cubic: bool,
    },
    /// Calibrate per-level gains on training clips.
    Calibrate {
        /// Raw YUV clips (same geometry).
        #[arg(long, required = true, num_args = 1..)]
        clips: Vec<PathBuf>,
        #[command(flatten)]
        geometry: Geometry,
        #[arg(long)]
        gop: Option<usize>,
        #[command(flatten)]
        point: OperatingPoint,
        /// Coordinate-descent passes.
        #[arg(long, default_value_t = 2)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output gain table (JSON; a .bin twin is written next to it).
        #[arg(long)]
        output: PathBuf,
    },
    /// Dump the coding schedule as JSON.
    Schedule {
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        gop: usize,
        #[arg(long, default_value_t = false)]
        truncate: bool,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_)) | Some(Error::TruncatedInput(_)) => 3,
        Some(Error::Format(_))
        | Some(Error::Corruption(_))
        | Some(Error::UnsupportedFormat(_))
        | Some(Error::InconsistentInput(_)) => 4,
        Some(_) => 5,
        None => {
            if err.downcast_ref::<std::io::Error>().is_some() {
                3
            } else {
                5
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("hbvc: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

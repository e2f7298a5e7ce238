use anyhow::{bail, Context};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use hbvc_core::codec::{decode_stream_tolerant, encode_stream, CodecConfig, EncodeOutcome};
use hbvc_core::frame::{read_yuv420, write_yuv420, Frame, VideoMeta};
use hbvc_core::gop::{build_schedule, gop_size_for_fps};
use hbvc_core::metrics::{
    bd_rate_with, evaluate_sequence, frame_psnr, weighted_yuv_psnr, BdInterpolation,
};
use hbvc_core::motion::MotionParams;
use hbvc_core::rate::{
    calibrate_gains, content_adapt, operating_point, LossWeights, STANDARD_LAMBDAS,
};
use hbvc_core::transform::GainTable;

use crate::{Command, Geometry, OperatingPoint};

pub fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Encode {
            input,
            output,
            geometry,
            frames,
            gop,
            point,
            gains,
            truncate,
            adapt,
            adapt_budget,
            adapt_log,
            tau,
            search_range,
        } => cmd_encode(
            &input, &output, &geometry, frames, gop, &point, gains.as_deref(), truncate, adapt,
            adapt_budget, adapt_log.as_deref(), tau, search_range,
        ),
        Command::Decode { input, output } => cmd_decode(&input, &output),
        Command::Eval { orig, decoded, stream, geometry, label, vmaf, csv, json, rd_data } => {
            cmd_eval(
                &orig, &decoded, &stream, &geometry, &label,
                vmaf.as_deref(), csv.as_deref(), json.as_deref(), rd_data.as_deref(),
            )
        }
        Command::Bdrate { anchor, test, cubic } => cmd_bdrate(&anchor, &test, cubic),
        Command::Calibrate { clips, geometry, gop, point, budget, seed, output } => {
            cmd_calibrate(&clips, &geometry, gop, &point, budget, seed, &output)
        }
        Command::Schedule { frames, gop, truncate } => {
            let schedule = build_schedule(frames, gop, truncate)?;
            println!("{}", serde_json::to_string_pretty(&schedule)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn resolve_point(point: &OperatingPoint) -> anyhow::Result<(f64, f64)> {
    if point.op > 3 {
        bail!(hbvc_core::Error::InvalidInput(format!("operating point {} not in 0..=3", point.op)));
    }
    let (mut lambda, mut step) = operating_point(point.op);
    if let Some(l) = point.lambda {
        let standard = STANDARD_LAMBDAS.iter().any(|&s| (s - l).abs() < 1e-12);
        if !standard && !point.lambda_free {
            bail!(hbvc_core::Error::InvalidInput(format!(
                "lambda {l} is not a standard operating point; pass --lambda-free to use it"
            )));
        }
        lambda = l;
        if let Some(op) = STANDARD_LAMBDAS.iter().position(|&s| (s - l).abs() < 1e-12) {
            step = operating_point(op).1;
        }
    }
    if let Some(s) = point.step {
        step = s;
    }
    Ok((lambda, step))
}

fn meta_for(geometry: &Geometry, path: &Path, frames: Option<usize>) -> anyhow::Result<VideoMeta> {
    let mut meta = VideoMeta {
        width: geometry.width,
        height: geometry.height,
        bit_depth: geometry.bit_depth,
        fps: geometry.fps,
        frame_count: 1,
    };
    meta.validate()?;
    let file_len = fs::metadata(path)
        .with_context(|| format!("stat {}", path.display()))?
        .len();
    let available = (file_len / meta.frame_byte_size() as u64) as usize;
    meta.frame_count = match frames {
        Some(n) => n,
        None => available,
    };
    if meta.frame_count == 0 || meta.frame_count > available {
        bail!(hbvc_core::Error::TruncatedInput(format!(
            "{} holds {} frames, requested {}", path.display(), available, meta.frame_count
        )));
    }
    Ok(meta)
}

fn load_gains(path: Option<&Path>, gop: usize) -> anyhow::Result<GainTable> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => Ok(GainTable::identity(gop.trailing_zeros() as u8)),
    }
}

fn build_config(
    gop: usize,
    lambda: f64,
    step: f64,
    gains: GainTable,
    truncate: bool,
    tau: Option<f64>,
    search_range: Option<usize>,
) -> CodecConfig {
    let mut cfg = CodecConfig::with_gop(gop);
    cfg.lambda = lambda;
    cfg.base_step = step;
    cfg.gains = gains;
    cfg.truncate = truncate;
    if let Some(t) = tau {
        cfg.tau = t;
    }
    if let Some(r) = search_range {
        cfg.motion = MotionParams { search_range: r, ..cfg.motion };
    }
    cfg
}

#[allow(clippy::too_many_arguments)]
fn cmd_encode(
    input: &Path,
    output: &Path,
    geometry: &Geometry,
    frames: Option<usize>,
    gop: Option<usize>,
    point: &OperatingPoint,
    gains_path: Option<&Path>,
    truncate: bool,
    adapt: bool,
    adapt_budget: usize,
    adapt_log: Option<&Path>,
    tau: Option<f64>,
    search_range: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let meta = meta_for(geometry, input, frames)?;
    let gop = gop.unwrap_or_else(|| gop_size_for_fps(meta.fps));
    let (lambda, step) = resolve_point(point)?;
    let gains = load_gains(gains_path, gop)?;
    let cfg = build_config(gop, lambda, step, gains, truncate, tau, search_range);

    let source = read_yuv420(input, &meta, 0..meta.frame_count)?;
    let outcome: EncodeOutcome = if adapt && adapt_budget > 0 {
        let w = LossWeights::new(lambda);
        let result = content_adapt(&source, meta.fps, &cfg, &w, adapt_budget)?;
        if let Some(log_path) = adapt_log {
            fs::write(log_path, result.to_csv())?;
        }
        result.outcome
    } else {
        encode_stream(&source, meta.fps, &cfg)?
    };

    fs::write(output, &outcome.bytes)?;
    for stats in &outcome.stats {
        let orig = &source[stats.t];
        let (py, pu, pv) = frame_psnr(orig, &outcome.recons[stats.t])?;
        println!(
            "frame {:4}  {}  level {}  {:7} bits  psnr {:6.2} dB",
            stats.t,
            if stats.intra { "I" } else { "B" },
            stats.level,
            stats.payload_bits,
            weighted_yuv_psnr(py, pu, pv),
        );
    }
    println!(
        "encoded {} frames, {} bytes total ({:.1} kbps at {} fps)",
        outcome.recons.len(),
        outcome.bytes.len(),
        hbvc_core::metrics::bitrate_kbps(outcome.bytes.len(), meta.fps, outcome.recons.len()),
        meta.fps,
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_decode(input: &Path, output: &Path) -> anyhow::Result<ExitCode> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let outcome = decode_stream_tolerant(&bytes)?;
    // write the display-order prefix that decoded cleanly
    let mut frames: Vec<Frame> = Vec::new();
    for t in 0..outcome.header.n_frames {
        match outcome.frames.get(&t) {
            Some(f) => frames.push(f.clone()),
            None => break,
        }
    }
    write_yuv420(output, &frames)?;
    println!(
        "decoded {} of {} frames to {}",
        frames.len(),
        outcome.header.n_frames,
        output.display()
    );
    if let Some(reason) = &outcome.corruption {
        eprintln!("hbvc: stream damaged: {reason}");
        return Ok(ExitCode::from(4));
    }
    if frames.len() != outcome.header.n_frames {
        eprintln!("hbvc: {} frames missing from stream", outcome.header.n_frames - frames.len());
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn read_vmaf_csv(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.split(',').next_back().unwrap().trim();
        match last.parse::<f64>() {
            Ok(v) => scores.push(v),
            Err(_) if lineno == 0 => continue, // header
            Err(_) => bail!("{}:{}: non-numeric vmaf score", path.display(), lineno + 1),
        }
    }
    Ok(scores)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    orig: &Path,
    decoded: &Path,
    stream: &Path,
    geometry: &Geometry,
    label: &str,
    vmaf: Option<&Path>,
    csv: Option<&Path>,
    json: Option<&Path>,
    rd_data: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let orig_meta = meta_for(geometry, orig, None)?;
    let dec_meta = meta_for(geometry, decoded, None)?;
    if orig_meta.frame_count != dec_meta.frame_count {
        bail!(hbvc_core::Error::InvalidPairing(format!(
            "{} source frames vs {} decoded",
            orig_meta.frame_count, dec_meta.frame_count
        )));
    }
    let source = read_yuv420(orig, &orig_meta, 0..orig_meta.frame_count)?;
    let recon = read_yuv420(decoded, &dec_meta, 0..dec_meta.frame_count)?;
    let stream_len = fs::metadata(stream)
        .with_context(|| format!("stat {}", stream.display()))?
        .len() as usize;
    let vmaf_scores = match vmaf {
        Some(p) if p.exists() => Some(read_vmaf_csv(p)?),
        _ => None,
    };
    let report = evaluate_sequence(
        &source,
        &recon,
        stream_len,
        orig_meta.fps,
        vmaf_scores.as_deref(),
    )?;

    println!(
        "{label}: {} frames, {:.2} kbps, Y {:.3} dB, U {:.3} dB, V {:.3} dB, YUV {:.3} dB{}",
        report.frames,
        report.bitrate_kbps,
        report.psnr_y,
        report.psnr_u,
        report.psnr_v,
        report.psnr_yuv,
        report.vmaf.map(|v| format!(", VMAF {v:.2}")).unwrap_or_default(),
    );
    if let Some(path) = csv {
        let mut line = format!(
            "{label},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            report.frames,
            report.bitrate_kbps,
            report.psnr_y,
            report.psnr_u,
            report.psnr_v,
            report.psnr_yuv,
            report.vmaf.map(|v| format!("{v:.6}")).unwrap_or_default(),
        );
        if !path.exists() {
            line = format!("label,frames,bitrate_kbps,psnr_y,psnr_u,psnr_v,psnr_yuv,vmaf\n{line}");
        }
        append(path, &line)?;
    }
    if let Some(path) = json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(path) = rd_data {
        append(path, &format!("{:.6} {:.6}\n", report.bitrate_kbps, report.psnr_yuv))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn append(path: &Path, text: &str) -> std::io::Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(text.as_bytes())
}

fn cmd_bdrate(anchor: &Path, test: &Path, cubic: bool) -> anyhow::Result<ExitCode> {
    let anchor = crate::curves::read_curve(anchor)?;
    let test = crate::curves::read_curve(test)?;
    let interp = if cubic { BdInterpolation::CubicFit } else { BdInterpolation::Pchip };
    let bd = bd_rate_with(&anchor, &test, interp)?;
    println!("{bd:.4}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(
    clips: &[PathBuf],
    geometry: &Geometry,
    gop: Option<usize>,
    point: &OperatingPoint,
    budget: usize,
    seed: u64,
    output: &Path,
) -> anyhow::Result<ExitCode> {
    let gop = gop.unwrap_or_else(|| gop_size_for_fps(geometry.fps));
    let (lambda, step) = resolve_point(point)?;
    let mut sequences = Vec::with_capacity(clips.len());
    for clip in clips {
        let meta = meta_for(geometry, clip, None)?;
        sequences.push(read_yuv420(clip, &meta, 0..meta.frame_count)?);
    }
    let cfg = build_config(gop, lambda, step, GainTable::identity(gop.trailing_zeros() as u8), false, None, None);
    let w = LossWeights::new(lambda);
    let result = calibrate_gains(&sequences, gop, &cfg, &w, budget, seed)?;

    fs::write(output, serde_json::to_string_pretty(&result.table)?)?;
    let mut bin = Vec::new();
    result.table.serialize(&mut bin)?;
    fs::write(output.with_extension("bin"), &bin)?;
    println!(
        "objective {:.6} -> {:.6} over {} accepted steps; table written to {}",
        result.initial_objective(),
        result.final_objective(),
        result.objective_log.len() - 1,
        output.display(),
    );
    Ok(ExitCode::SUCCESS)
}

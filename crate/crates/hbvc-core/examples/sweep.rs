use hbvc_core::codec::{encode_stream, CodecConfig};
use hbvc_core::metrics::{bitrate_kbps, evaluate_sequence};
use hbvc_core::rate::OPERATING_POINTS;
use hbvc_core::synth;

fn main() {
    let clips: Vec<(&str, Vec<hbvc_core::frame::Frame>)> = vec![
        ("static", synth::static_clip(128, 128, 65, 7)),
        ("pan", synth::pan_clip(128, 128, 65)),
        ("noise", synth::noise_clip(128, 128, 65, 3)),
    ];
    let steps: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let steps = if steps.is_empty() {
        OPERATING_POINTS.iter().map(|p| p.1).collect()
    } else {
        steps
    };
    for (name, frames) in &clips {
        println!("== {name}");
        for (op, &step) in steps.iter().enumerate() {
            let lambda = OPERATING_POINTS[op.min(3)].0;
            let mut cfg = CodecConfig::with_gop(8);
            cfg.lambda = lambda;
            cfg.base_step = step;
            let t0 = std::time::Instant::now();
            let out = encode_stream(frames, 30, &cfg).unwrap();
            let report =
                evaluate_sequence(frames, &out.recons, out.bytes.len(), 30, None).unwrap();
            println!(
                "  lambda {lambda:<6} step {step:<5} -> {:9.1} kbps  yuv {:6.3} dB   ({:.2?})",
                bitrate_kbps(out.bytes.len(), 30, frames.len()),
                report.psnr_yuv,
                t0.elapsed(),
            );
        }
    }
}

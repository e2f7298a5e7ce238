//! Quality metrics, RD-curve assembly, and Bjøntegaard delta-rate.
//!
//! PSNR is computed per plane per frame and averaged over frames; the
//! sequence metric is the 6:1:1 weighted mean of the Y/U/V averages.
//! BD-rate interpolates `ln(rate)` against quality with a monotone
//! piecewise-cubic Hermite by default (a classic cubic polynomial fit is
//! available behind a flag) and averages the log-rate gap over the
//! overlapping quality interval.

use serde::{Deserialize, Serialize};

use crate::frame::{Frame, Plane};
use crate::{Error, Result};

/// PSNR cap for identical planes, keeping lossless points integrable.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse_plane(a: &Plane, b: &Plane) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidInput(format!(
            "plane shapes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height
        )));
    }
    let sum: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = (x as i64 - y as i64).unsigned_abs();
            d * d
        })
        .sum();
    Ok(sum as f64 / a.data.len() as f64)
}

/// `10 log10(MAX^2 / MSE)` with MAX = `2^bit_depth - 1`, capped at 100 dB.
pub fn psnr_plane(orig: &Plane, recon: &Plane, bit_depth: u8) -> Result<f64> {
    let mse = mse_plane(orig, recon)?;
    Ok(psnr_from_mse(mse, bit_depth))
}

pub fn psnr_from_mse(mse: f64, bit_depth: u8) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    let max = ((1u32 << bit_depth) - 1) as f64;
    (10.0 * (max * max / mse).log10()).min(PSNR_CAP)
}

/// The paper-standard 6:1:1 combination.
pub fn weighted_yuv_psnr(psnr_y: f64, psnr_u: f64, psnr_v: f64) -> f64 {
    (6.0 * psnr_y + psnr_u + psnr_v) / 8.0
}

/// Per-frame Y/U/V PSNR triple.
pub fn frame_psnr(orig: &Frame, recon: &Frame) -> Result<(f64, f64, f64)> {
    if orig.bit_depth != recon.bit_depth {
        return Err(Error::InvalidInput("bit depth mismatch".into()));
    }
    Ok((
        psnr_plane(&orig.y, &recon.y, orig.bit_depth)?,
        psnr_plane(&orig.u, &recon.u, orig.bit_depth)?,
        psnr_plane(&orig.v, &recon.v, orig.bit_depth)?,
    ))
}

/// One operating point on an RD curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RdPoint {
    /// Kilobits per second.
    pub bitrate: f64,
    /// Quality in dB for the chosen metric.
    pub quality: f64,
    pub label: String,
}

/// Ordered RD samples for one codec.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RdCurve {
    pub codec: String,
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(codec: impl Into<String>) -> RdCurve {
        RdCurve { codec: codec.into(), points: Vec::new() }
    }

    pub fn push(&mut self, bitrate: f64, quality: f64, label: impl Into<String>) {
        self.points.push(RdPoint { bitrate, quality, label: label.into() });
    }
}

/// Stream bitrate in kbps given total size and timing.
pub fn bitrate_kbps(stream_bytes: usize, fps: u32, frame_count: usize) -> f64 {
    stream_bytes as f64 * 8.0 * fps as f64 / frame_count as f64 / 1000.0
}

/// Interpolation backend for [`bd_rate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdInterpolation {
    /// Monotone piecewise-cubic Hermite (default).
    Pchip,
    /// Classic least-squares cubic polynomial in quality.
    CubicFit,
}

struct PreparedCurve {
    /// Quality ascending, strictly.
    quality: Vec<f64>,
    ln_rate: Vec<f64>,
}

fn prepare(curve: &RdCurve) -> Result<PreparedCurve> {
    if curve.points.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "curve '{}' has {} points, BD-rate needs 4", curve.codec, curve.points.len()
        )));
    }
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.quality, p.bitrate))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for w in pts.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::InvalidInput(format!(
                "curve '{}' has duplicate quality {}", curve.codec, w[0].0
            )));
        }
    }
    for p in &pts {
        if p.1 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "curve '{}' has nonpositive bitrate {}", curve.codec, p.1
            )));
        }
    }
    Ok(PreparedCurve {
        quality: pts.iter().map(|p| p.0).collect(),
        ln_rate: pts.iter().map(|p| p.1.ln()).collect(),
    })
}

/// Fritsch–Carlson monotone slopes for tabulated (x, y).
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            // weighted harmonic mean keeps the interpolant monotone
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m
}

/// Integral of the Hermite segment on `[x0, x1]` clipped to `[a, b]`.
fn hermite_segment_integral(
    x0: f64, x1: f64, y0: f64, y1: f64, m0: f64, m1: f64, a: f64, b: f64,
) -> f64 {
    let h = x1 - x0;
    // cubic in local coordinate s = (x - x0) / h:
    // y(s) = y0 + c1 s + c2 s^2 + c3 s^3
    let c1 = h * m0;
    let c2 = 3.0 * (y1 - y0) - h * (2.0 * m0 + m1);
    let c3 = -2.0 * (y1 - y0) + h * (m0 + m1);
    let antiderivative = |s: f64| {
        h * (y0 * s + c1 * s * s / 2.0 + c2 * s * s * s / 3.0 + c3 * s * s * s * s / 4.0)
    };
    let sa = ((a - x0) / h).clamp(0.0, 1.0);
    let sb = ((b - x0) / h).clamp(0.0, 1.0);
    antiderivative(sb) - antiderivative(sa)
}

fn pchip_integral(curve: &PreparedCurve, lo: f64, hi: f64) -> f64 {
    let x = &curve.quality;
    let y = &curve.ln_rate;
    let m = pchip_slopes(x, y);
    let mut total = 0.0;
    for i in 0..x.len() - 1 {
        if x[i + 1] <= lo || x[i] >= hi {
            continue;
        }
        total += hermite_segment_integral(x[i], x[i + 1], y[i], y[i + 1], m[i], m[i + 1], lo, hi);
    }
    total
}

/// Least-squares cubic `ln r = a + b q + c q^2 + d q^3`; with four points
/// this is the exact interpolating polynomial of the classic method.
fn cubic_fit(x: &[f64], y: &[f64]) -> [f64; 4] {
    // normal equations on powers 0..3
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let powers = [1.0, xi, xi * xi, xi * xi * xi];
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += powers[i] * powers[j];
            }
            atb[i] += powers[i] * yi;
        }
    }
    // gaussian elimination with partial pivoting
    let mut aug = [[0.0f64; 5]; 4];
    for i in 0..4 {
        aug[i][..4].copy_from_slice(&ata[i]);
        aug[i][4] = atb[i];
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        for row in 0..4 {
            if row != col {
                let factor = aug[row][col] / p;
                for k in col..5 {
                    aug[row][k] -= factor * aug[col][k];
                }
            }
        }
    }
    let mut coeffs = [0.0f64; 4];
    for i in 0..4 {
        coeffs[i] = aug[i][4] / aug[i][i];
    }
    coeffs
}

fn cubic_integral(curve: &PreparedCurve, lo: f64, hi: f64) -> f64 {
    let c = cubic_fit(&curve.quality, &curve.ln_rate);
    let anti = |q: f64| {
        c[0] * q + c[1] * q * q / 2.0 + c[2] * q * q * q / 3.0 + c[3] * q * q * q * q / 4.0
    };
    anti(hi) - anti(lo)
}

/// Bjøntegaard delta rate of `test` against `anchor`, percent. Positive
/// means the test codec spends more bits at equal quality.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    bd_rate_with(anchor, test, BdInterpolation::Pchip)
}

pub fn bd_rate_with(anchor: &RdCurve, test: &RdCurve, interp: BdInterpolation) -> Result<f64> {
    let a = prepare(anchor)?;
    let t = prepare(test)?;
    let lo = a.quality[0].max(t.quality[0]);
    let hi = a.quality[a.quality.len() - 1].min(t.quality[t.quality.len() - 1]);
    if hi <= lo {
        return Err(Error::NoOverlap);
    }
    let (int_a, int_t) = match interp {
        BdInterpolation::Pchip => (pchip_integral(&a, lo, hi), pchip_integral(&t, lo, hi)),
        BdInterpolation::CubicFit => (cubic_integral(&a, lo, hi), cubic_integral(&t, lo, hi)),
    };
    let mean_diff = (int_t - int_a) / (hi - lo);
    Ok((mean_diff.exp() - 1.0) * 100.0)
}

/// Per-class BD-rate: arithmetic mean over per-sequence values.
pub fn mean_bd_rate(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Evaluation record for one sequence at one operating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub bitrate_kbps: f64,
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub psnr_yuv: f64,
    /// Mean of externally computed VMAF scores, when supplied.
    pub vmaf: Option<f64>,
    pub per_frame: Vec<FrameScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub vmaf: Option<f64>,
}

/// Score a decoded sequence against its source. `vmaf` optionally carries
/// per-frame scores from an external tool (never computed here).
pub fn evaluate_sequence(
    orig: &[Frame],
    decoded: &[Frame],
    stream_bytes: usize,
    fps: u32,
    vmaf: Option<&[f64]>,
) -> Result<EvalReport> {
    if orig.len() != decoded.len() {
        return Err(Error::InvalidPairing(format!(
            "{} source frames vs {} decoded", orig.len(), decoded.len()
        )));
    }
    if orig.is_empty() {
        return Err(Error::InvalidPairing("empty sequence".into()));
    }
    if let Some(scores) = vmaf {
        if scores.len() != orig.len() {
            return Err(Error::InvalidPairing(format!(
                "{} vmaf scores vs {} frames", scores.len(), orig.len()
            )));
        }
    }
    let mut per_frame = Vec::with_capacity(orig.len());
    let (mut sum_y, mut sum_u, mut sum_v) = (0.0, 0.0, 0.0);
    for (i, (o, d)) in orig.iter().zip(decoded).enumerate() {
        let (py, pu, pv) = frame_psnr(o, d)?;
        sum_y += py;
        sum_u += pu;
        sum_v += pv;
        per_frame.push(FrameScore {
            frame: i,
            psnr_y: py,
            psnr_u: pu,
            psnr_v: pv,
            vmaf: vmaf.map(|s| s[i]),
        });
    }
    let n = orig.len() as f64;
    let (py, pu, pv) = (sum_y / n, sum_u / n, sum_v / n);
    Ok(EvalReport {
        frames: orig.len(),
        bitrate_kbps: bitrate_kbps(stream_bytes, fps, orig.len()),
        psnr_y: py,
        psnr_u: pu,
        psnr_v: pv,
        psnr_yuv: weighted_yuv_psnr(py, pu, pv),
        vmaf: vmaf.map(|s| s.iter().sum::<f64>() / n),
        per_frame,
    })
}

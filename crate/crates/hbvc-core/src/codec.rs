//! Frame encoding, decoding, and the bitstream container.
//!
//! I-frames are transform coded with DC prediction; B-frames code two
//! motion fields, a per-block confidence plan, and a transform-coded
//! residual against the confidence-blended prediction. The encoder
//! reconstructs every frame through the identical routine the decoder
//! runs, on the post-skip symbol streams, so encoder-side references are
//! bit-exact decoder output by construction.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::entropy::{encode_symbols, fit_scale_index, SkipPolicy, SymbolModel};
use crate::frame::{pad_to_block_grid, Frame, Plane};
use crate::gop::{build_schedule, CodingUnit, FrameKind, GopSchedule};
use crate::motion::{code_motion, compensate, decode_motion, estimate_bidir, MotionParams};
use crate::transform::{
    coeff_band, dct8_forward, dct8_inverse, dequantize_value, quantize_value, snap_q16, GainTable,
    Stream, BAND_COUNT,
};
use crate::{Error, Result};

/// Luma block size of the coding grid; also the padding granularity.
pub const CODING_BLOCK: usize = 16;
const TRANSFORM_BLOCK: usize = 8;

/// Motion residual symbols are quantized against a fixed quarter-pel step;
/// per-level motion gains carry the operating-point dependence.
const MOTION_STEP: f64 = 1.0;

/// Candidate confidence pairs in quarter units, stored as a 3-bit index.
/// Index 0 doubles as the skip substitution (most probable symbol).
pub const CONFIDENCE_CANDIDATES: [(u8, u8); 6] = [(4, 0), (0, 4), (2, 2), (3, 1), (1, 3), (0, 0)];

/// Encoder configuration; everything the decoder needs rides the header.
#[derive(Debug, Clone)]
pub struct CodecConfig {
    pub gop_size: usize,
    /// Quantization step of the residual/intra stream.
    pub base_step: f64,
    /// RD multiplier weighting distortion against rate.
    pub lambda: f64,
    /// Entropy-skip threshold.
    pub tau: f64,
    pub gains: GainTable,
    pub motion: MotionParams,
    /// Chroma weight in the distortion term.
    pub c_uv: f64,
    /// Per-level distortion coefficients, level 1 first; missing levels
    /// default to 1.
    pub c_t: Vec<f64>,
    /// Scale factor from the rate weight `10 / (lambda * c_t)` to the
    /// motion-search lambda.
    pub me_rate_factor: f64,
    pub truncate: bool,
}

impl CodecConfig {
    pub fn with_gop(gop_size: usize) -> CodecConfig {
        let levels = gop_size.trailing_zeros().max(1) as u8;
        CodecConfig {
            gop_size,
            base_step: 8.0,
            lambda: 0.005,
            tau: 0.95,
            gains: GainTable::identity(levels),
            motion: MotionParams::default(),
            c_uv: 1.0,
            c_t: Vec::new(),
            me_rate_factor: 0.02,
            truncate: false,
        }
    }

    /// Mirror of the header round trip: the values encode and decode agree
    /// on.
    pub fn snapped(&self) -> CodecConfig {
        CodecConfig {
            gains: self.gains.snapped(),
            base_step: snap_q16(self.base_step),
            tau: snap_q16(self.tau),
            ..self.clone()
        }
    }

    fn c_t_for(&self, level: u8) -> f64 {
        if level == 0 {
            return 1.0;
        }
        self.c_t.get(level as usize - 1).copied().unwrap_or(1.0)
    }

    /// Distortion weight applied to the weighted block SSE in RD decisions.
    fn lambda_dist(&self, level: u8, lambda_mult: f64) -> f64 {
        self.lambda * lambda_mult * self.c_t_for(level) / 10.0
    }

    fn lambda_me(&self, level: u8, lambda_mult: f64) -> f64 {
        self.me_rate_factor / self.lambda_dist(level, lambda_mult)
    }
}

/// Encoder-side per-frame parameter offsets; the decoder never sees these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOffsets {
    pub lambda_mult: f64,
    pub motion_gain_mult: f64,
    pub rc_gain_mult: f64,
    /// Multiplier on the intra quantization divisor.
    pub step_mult: f64,
    pub search_range_delta: usize,
}

impl Default for FrameOffsets {
    fn default() -> Self {
        FrameOffsets {
            lambda_mult: 1.0,
            motion_gain_mult: 1.0,
            rc_gain_mult: 1.0,
            step_mult: 1.0,
            search_range_delta: 0,
        }
    }
}

/// Block-constant confidence assignments for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidencePlan {
    pub cols: usize,
    pub rows: usize,
    /// Candidate indices, row-major.
    pub indices: Vec<u8>,
}

impl ConfidencePlan {
    pub fn weights(&self, bx: usize, by: usize) -> (u8, u8) {
        CONFIDENCE_CANDIDATES[self.indices[by * self.cols + bx] as usize]
    }
}

/// Real-valued residual planes, frame shaped.
#[derive(Debug, Clone)]
pub struct ResidualPlanes {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ResidualPlanes {
    pub fn zeros(width: usize, height: usize) -> ResidualPlanes {
        ResidualPlanes {
            y: vec![0.0; width * height],
            u: vec![0.0; width * height / 4],
            v: vec![0.0; width * height / 4],
        }
    }
}

/// Confidence-blended reconstruction:
/// `clamp(cp * pred_p + cf * pred_f + residual)` with block-constant
/// weights in quarter units.
pub fn cfr_reconstruct(
    pred_p: &Frame,
    pred_f: &Frame,
    plan: &ConfidencePlan,
    residual: &ResidualPlanes,
) -> Result<Frame> {
    if pred_p.width() != pred_f.width() || pred_p.height() != pred_f.height() {
        return Err(Error::InvalidInput("prediction shapes differ".into()));
    }
    let (width, height) = (pred_p.width(), pred_p.height());
    if plan.cols != width.div_ceil(CODING_BLOCK) || plan.rows != height.div_ceil(CODING_BLOCK) {
        return Err(Error::InvalidInput("plan grid does not cover the frame".into()));
    }
    if residual.y.len() != width * height {
        return Err(Error::InvalidInput("residual shape mismatch".into()));
    }
    let mut out = Frame::new(width, height, pred_p.bit_depth, pred_p.frame_index)?;
    let max = out.max_value() as f64;
    let blend_plane = |p: &Plane, f: &Plane, res: &[f64], o: &mut Plane, block: usize| {
        for y in 0..o.height {
            for x in 0..o.width {
                let (cp, cf) = plan.weights(x / block, y / block);
                let value = 0.25 * (cp as f64 * p.get(x, y) as f64 + cf as f64 * f.get(x, y) as f64)
                    + res[y * o.width + x];
                o.set(x, y, value.round().clamp(0.0, max) as u16);
            }
        }
    };
    blend_plane(&pred_p.y, &pred_f.y, &residual.y, &mut out.y, CODING_BLOCK);
    blend_plane(&pred_p.u, &pred_f.u, &residual.u, &mut out.u, CODING_BLOCK / 2);
    blend_plane(&pred_p.v, &pred_f.v, &residual.v, &mut out.v, CODING_BLOCK / 2);
    Ok(out)
}

// ---------------------------------------------------------------------------
// block plumbing

/// Band id per raster position of an 8x8 block.
fn band_lut() -> [u8; 64] {
    let mut lut = [0u8; 64];
    for r in 0..8 {
        for c in 0..8 {
            lut[r * 8 + c] = coeff_band(r, c);
        }
    }
    lut
}

fn extract_block(plane: &Plane, x0: usize, y0: usize) -> [f64; 64] {
    let mut block = [0.0f64; 64];
    for r in 0..TRANSFORM_BLOCK {
        for c in 0..TRANSFORM_BLOCK {
            block[r * 8 + c] = plane.get(x0 + c, y0 + r) as f64;
        }
    }
    block
}

/// Golomb-style bit-length proxy used by RD decisions.
#[inline]
fn proxy_bits(v: i32) -> u32 {
    let mapped = if v <= 0 { (-2 * v) as u32 } else { (2 * v - 1) as u32 };
    2 * (mapped + 1).ilog2() + 1
}

// ---------------------------------------------------------------------------
// intra path

fn intra_dc_pred_symbol(bit_depth: u8, step: f64) -> i32 {
    // DC of a mid-gray block under the decoder's step
    let mid_dc = 8.0 * (1 << (bit_depth - 1)) as f64;
    (mid_dc / step).round() as i32
}

/// Transform-code one plane: DC is DPCM-predicted from the previous block
/// in raster order, AC coded directly. `enc_step` is the encoder divisor
/// for AC coefficients (it may carry an adaptation offset); DC always uses
/// the header step `dec_step`, since a biased DC propagates through the
/// whole DPCM chain.
fn intra_encode_plane(plane: &Plane, enc_step: f64, dec_step: f64, bit_depth: u8) -> Vec<i32> {
    let mut symbols = Vec::with_capacity(plane.width * plane.height);
    let mut prev_dc = intra_dc_pred_symbol(bit_depth, dec_step);
    for y0 in (0..plane.height).step_by(TRANSFORM_BLOCK) {
        for x0 in (0..plane.width).step_by(TRANSFORM_BLOCK) {
            let coeffs = dct8_forward(&extract_block(plane, x0, y0));
            let dc_sym = quantize_value(coeffs[0], 1.0, dec_step);
            symbols.push(dc_sym - prev_dc);
            prev_dc = dc_sym;
            for &c in &coeffs[1..] {
                symbols.push(quantize_value(c, 1.0, enc_step));
            }
        }
    }
    symbols
}

/// Rebuild one plane from its symbol stream; shared by encoder and
/// decoder.
fn intra_reconstruct_plane(
    symbols: &[i32],
    width: usize,
    height: usize,
    step: f64,
    bit_depth: u8,
) -> Plane {
    let mut plane = Plane::new(width, height);
    let max = ((1u32 << bit_depth) - 1) as f64;
    let mut prev_dc = intra_dc_pred_symbol(bit_depth, step);
    let mut pos = 0usize;
    for y0 in (0..height).step_by(TRANSFORM_BLOCK) {
        for x0 in (0..width).step_by(TRANSFORM_BLOCK) {
            let mut coeffs = [0.0f64; 64];
            let dc_sym = prev_dc + symbols[pos];
            prev_dc = dc_sym;
            coeffs[0] = dequantize_value(dc_sym, 1.0, step);
            for k in 1..64 {
                coeffs[k] = dequantize_value(symbols[pos + k], 1.0, step);
            }
            pos += 64;
            let samples = dct8_inverse(&coeffs);
            for r in 0..TRANSFORM_BLOCK {
                for c in 0..TRANSFORM_BLOCK {
                    plane.set(x0 + c, y0 + r, samples[r * 8 + c].round().clamp(0.0, max) as u16);
                }
            }
        }
    }
    plane
}

fn plane_band_ids(plane_w: usize, plane_h: usize) -> Vec<u8> {
    let lut = band_lut();
    let blocks = (plane_w / TRANSFORM_BLOCK) * (plane_h / TRANSFORM_BLOCK);
    let mut bands = Vec::with_capacity(blocks * 64);
    for _ in 0..blocks {
        bands.extend_from_slice(&lut);
    }
    bands
}

fn fit_band_models(symbols: &[i32], bands: &[u8], n_bands: usize) -> (Vec<u8>, Vec<SymbolModel>) {
    let mut scale_indices = Vec::with_capacity(n_bands);
    for band in 0..n_bands as u8 {
        let it = symbols
            .iter()
            .zip(bands)
            .filter(|(_, &b)| b == band)
            .map(|(&s, _)| s);
        scale_indices.push(fit_scale_index(it));
    }
    let models = scale_indices.iter().map(|&i| SymbolModel::from_scale_index(i)).collect();
    (scale_indices, models)
}

/// Segment wire format: band-scale indices, symbol payload length, bytes.
fn write_segment(scales: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(scales.len() + 4 + payload.len());
    out.extend_from_slice(scales);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn read_segment(bytes: &[u8], n_scales: usize) -> Result<(Vec<SymbolModel>, &[u8])> {
    if bytes.len() < n_scales + 4 {
        return Err(Error::Corruption("segment header truncated".into()));
    }
    let models = bytes[..n_scales]
        .iter()
        .map(|&i| SymbolModel::from_scale_index(i))
        .collect();
    let len = u32::from_le_bytes(bytes[n_scales..n_scales + 4].try_into().unwrap()) as usize;
    let start = n_scales + 4;
    if bytes.len() < start + len {
        return Err(Error::Corruption("segment payload truncated".into()));
    }
    Ok((models, &bytes[start..start + len]))
}

/// Encode one intra frame; returns the residual segment and the
/// decoder-exact reconstruction.
pub fn encode_intra(
    frame: &Frame,
    cfg: &CodecConfig,
    offsets: &FrameOffsets,
) -> Result<(Vec<u8>, Frame)> {
    let dec_step = cfg.base_step;
    let enc_step = dec_step * offsets.step_mult;
    let mut symbols = Vec::new();
    let mut bands = Vec::new();
    for plane in frame.planes() {
        symbols.extend(intra_encode_plane(plane, enc_step, dec_step, frame.bit_depth));
        bands.extend(plane_band_ids(plane.width, plane.height));
    }
    let policy = SkipPolicy::new(cfg.tau)?;
    let (scales, models) = fit_band_models(&symbols, &bands, BAND_COUNT);
    let enc = encode_symbols(&symbols, &bands, &models, policy)?;
    let segment = write_segment(&scales, &enc.bytes);
    let recon = intra_frame_from_symbols(&enc.post_skip, frame.width(), frame.height(), frame.bit_depth, frame.frame_index, dec_step);
    Ok((segment, recon))
}

fn intra_frame_from_symbols(
    symbols: &[i32],
    width: usize,
    height: usize,
    bit_depth: u8,
    frame_index: usize,
    step: f64,
) -> Frame {
    let y_len = width * height;
    let c_len = y_len / 4;
    let (cw, ch) = (width / 2, height / 2);
    Frame {
        y: intra_reconstruct_plane(&symbols[..y_len], width, height, step, bit_depth),
        u: intra_reconstruct_plane(&symbols[y_len..y_len + c_len], cw, ch, step, bit_depth),
        v: intra_reconstruct_plane(&symbols[y_len + c_len..], cw, ch, step, bit_depth),
        bit_depth,
        frame_index,
    }
}

fn decode_intra(segment: &[u8], width: usize, height: usize, bit_depth: u8, frame_index: usize, cfg: &CodecConfig) -> Result<Frame> {
    let policy = SkipPolicy::new(cfg.tau)?;
    let (models, payload) = read_segment(segment, BAND_COUNT)?;
    let mut bands = Vec::new();
    for (w, h) in [(width, height), (width / 2, height / 2), (width / 2, height / 2)] {
        bands.extend(plane_band_ids(w, h));
    }
    let symbols = crate::entropy::decode_symbols(payload, &bands, &models, policy, bands.len())?;
    Ok(intra_frame_from_symbols(&symbols, width, height, bit_depth, frame_index, cfg.base_step))
}

// ---------------------------------------------------------------------------
// bidirectional path

/// Per-candidate RD trial of one coding block, limited to encode-side
/// decisions; the final reconstruction is re-derived from the coded
/// symbols.
struct BlockTrial {
    symbols: Vec<i32>,
    cost: f64,
}

/// One 8x8 tile of a coding block with its two predictions.
pub struct SubBlock {
    pub target: [f64; 64],
    pub pred_p: [f64; 64],
    pub pred_f: [f64; 64],
    /// 8 for luma, `4 * c_uv` for chroma (per-plane MSE weighting).
    pub weight: f64,
}

/// The six 8x8 tiles (4 luma, U, V) of coding block `(bx, by)`.
pub fn gather_sub_blocks(
    target: &Frame,
    pred_p: &Frame,
    pred_f: &Frame,
    bx: usize,
    by: usize,
    c_uv: f64,
) -> Vec<SubBlock> {
    let mut subs = Vec::with_capacity(6);
    let (lx, ly) = (bx * CODING_BLOCK, by * CODING_BLOCK);
    for (ox, oy) in [(0, 0), (8, 0), (0, 8), (8, 8)] {
        subs.push(SubBlock {
            target: extract_block(&target.y, lx + ox, ly + oy),
            pred_p: extract_block(&pred_p.y, lx + ox, ly + oy),
            pred_f: extract_block(&pred_f.y, lx + ox, ly + oy),
            weight: 8.0,
        });
    }
    let (cx, cy) = (bx * CODING_BLOCK / 2, by * CODING_BLOCK / 2);
    for (t, p, f) in [
        (&target.u, &pred_p.u, &pred_f.u),
        (&target.v, &pred_p.v, &pred_f.v),
    ] {
        subs.push(SubBlock {
            target: extract_block(t, cx, cy),
            pred_p: extract_block(p, cx, cy),
            pred_f: extract_block(f, cx, cy),
            weight: 4.0 * c_uv,
        });
    }
    subs
}

fn trial_candidate(
    subs: &[SubBlock],
    candidate: (u8, u8),
    q_enc: f64,
    q_dec: f64,
    step: f64,
    lambda_dist: f64,
    max_value: f64,
) -> BlockTrial {
    let (cp, cf) = (candidate.0 as f64, candidate.1 as f64);
    let mut symbols = Vec::with_capacity(subs.len() * 64);
    let mut bits = 0u64;
    let mut weighted_sse = 0.0f64;
    for sub in subs {
        let mut residual = [0.0f64; 64];
        let mut blend = [0.0f64; 64];
        for k in 0..64 {
            blend[k] = 0.25 * (cp * sub.pred_p[k] + cf * sub.pred_f[k]);
            residual[k] = sub.target[k] - blend[k];
        }
        let coeffs = dct8_forward(&residual);
        let mut quantized = [0.0f64; 64];
        for (k, &c) in coeffs.iter().enumerate() {
            let sym = quantize_value(c, q_enc, step);
            symbols.push(sym);
            bits += proxy_bits(sym) as u64;
            quantized[k] = dequantize_value(sym, q_dec, step);
        }
        let recon_res = dct8_inverse(&quantized);
        let mut sse = 0.0f64;
        for k in 0..64 {
            let recon = (blend[k] + recon_res[k]).round().clamp(0.0, max_value);
            let err = sub.target[k] - recon;
            sse += err * err;
        }
        weighted_sse += sub.weight * sse;
    }
    BlockTrial { symbols, cost: bits as f64 + lambda_dist * weighted_sse }
}

/// Pick the confidence candidate minimizing `rate + lambda * weighted SSE`
/// for one coding block; returns the index and its residual symbols.
pub fn rd_select_confidence(
    subs: &[SubBlock],
    lambda_dist: f64,
    q_enc: f64,
    q_dec: f64,
    step: f64,
    max_value: f64,
) -> (u8, Vec<i32>) {
    let mut best_index = 0u8;
    let mut best: Option<BlockTrial> = None;
    for (index, &candidate) in CONFIDENCE_CANDIDATES.iter().enumerate() {
        let trial = trial_candidate(subs, candidate, q_enc, q_dec, step, lambda_dist, max_value);
        if best.as_ref().map_or(true, |b| trial.cost < b.cost) {
            best_index = index as u8;
            best = Some(trial);
        }
    }
    (best_index, best.unwrap().symbols)
}

/// Measured segment sizes of one encoded frame.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrameStats {
    pub t: usize,
    pub level: u8,
    pub intra: bool,
    pub motion_bits: u64,
    pub conf_bits: u64,
    pub resid_bits: u64,
    /// Whole serialized payload including framing.
    pub payload_bits: u64,
}

/// Encoded frame before it is committed to the stream.
#[derive(Debug, Clone)]
pub struct EncodedFrame {
    pub payload: FramePayload,
    pub recon: Frame,
    pub stats: FrameStats,
}

/// One frame's wire payload.
#[derive(Debug, Clone)]
pub struct FramePayload {
    pub t: usize,
    pub kind: FrameKind,
    pub level: u8,
    pub motion: Vec<u8>,
    pub confidence: Vec<u8>,
    pub residual: Vec<u8>,
}

impl FramePayload {
    pub fn body_len(&self) -> usize {
        4 + 1 + 1 + 12 + self.motion.len() + self.confidence.len() + self.residual.len()
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.body_len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.t as u32).to_le_bytes());
        out.push(match self.kind {
            FrameKind::Intra => 0,
            FrameKind::Bidir => 1,
        });
        out.push(self.level);
        out.extend_from_slice(&(self.motion.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.confidence.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.residual.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.motion);
        out.extend_from_slice(&self.confidence);
        out.extend_from_slice(&self.residual);
    }

    fn parse(body: &[u8]) -> Result<FramePayload> {
        if body.len() < 18 {
            return Err(Error::Corruption("payload body truncated".into()));
        }
        let t = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
        let kind = match body[4] {
            0 => FrameKind::Intra,
            1 => FrameKind::Bidir,
            k => return Err(Error::Corruption(format!("unknown frame kind {k}"))),
        };
        let level = body[5];
        let m_len = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
        let c_len = u32::from_le_bytes(body[10..14].try_into().unwrap()) as usize;
        let r_len = u32::from_le_bytes(body[14..18].try_into().unwrap()) as usize;
        if body.len() != 18 + m_len + c_len + r_len {
            return Err(Error::Corruption(format!(
                "payload for frame {t} declares {} bytes, body has {}",
                18 + m_len + c_len + r_len,
                body.len()
            )));
        }
        Ok(FramePayload {
            t,
            kind,
            level,
            motion: body[18..18 + m_len].to_vec(),
            confidence: body[18 + m_len..18 + m_len + c_len].to_vec(),
            residual: body[18 + m_len + c_len..].to_vec(),
        })
    }
}

const MOTION_BANDS: usize = 4;

/// Encode one B-frame against reconstructed references.
pub fn encode_bframe(
    unit: &CodingUnit,
    frame: &Frame,
    ref_p: &Frame,
    ref_f: &Frame,
    cfg: &CodecConfig,
    offsets: &FrameOffsets,
) -> Result<(FramePayload, Frame)> {
    let level = unit.level;
    let policy = SkipPolicy::new(cfg.tau)?;
    let (qm_enc_base, qm_dec) = cfg.gains.get_or_extrapolate(Stream::Motion, level)?;
    let (qr_enc_base, qr_dec) = cfg.gains.get_or_extrapolate(Stream::Rc, level)?;
    let qm_enc = qm_enc_base * offsets.motion_gain_mult;
    let qr_enc = qr_enc_base * offsets.rc_gain_mult;
    let lambda_dist = cfg.lambda_dist(level, offsets.lambda_mult);

    // motion estimation and closed-loop coding
    let params = MotionParams {
        search_range: cfg.motion.search_range + offsets.search_range_delta,
        lambda_me: cfg.lambda_me(level, offsets.lambda_mult),
        ..cfg.motion
    };
    let (field_p, field_f) = estimate_bidir(frame, ref_p, ref_f, &params)?;
    let code_p = code_motion(&field_p, qm_enc, qm_dec, MOTION_STEP)?;
    let code_f = code_motion(&field_f, qm_enc, qm_dec, MOTION_STEP)?;

    // motion entropy: dx/dy of each direction get their own band
    let half = code_p.symbols.len();
    let mut m_symbols = Vec::with_capacity(2 * half);
    m_symbols.extend_from_slice(&code_p.symbols);
    m_symbols.extend_from_slice(&code_f.symbols);
    let mut m_bands = Vec::with_capacity(2 * half);
    for dir in 0..2u8 {
        for i in 0..half {
            m_bands.push(2 * dir + (i % 2) as u8);
        }
    }
    let (m_scales, m_models) = fit_band_models(&m_symbols, &m_bands, MOTION_BANDS);
    let m_enc = encode_symbols(&m_symbols, &m_bands, &m_models, policy)?;
    let motion_segment = write_segment(&m_scales, &m_enc.bytes);

    // final fields come from the post-skip stream, exactly as decoded
    let (final_p, final_f) = if m_enc.skipped == 0 {
        (code_p.reconstructed, code_f.reconstructed)
    } else {
        (
            decode_motion(&m_enc.post_skip[..half], frame.width(), frame.height(), params.block_size, qm_dec, MOTION_STEP)?,
            decode_motion(&m_enc.post_skip[half..], frame.width(), frame.height(), params.block_size, qm_dec, MOTION_STEP)?,
        )
    };
    let pred_p = compensate(ref_p, &final_p)?;
    let pred_f = compensate(ref_f, &final_f)?;

    // per-block confidence + residual decisions
    let cols = frame.width() / CODING_BLOCK;
    let rows = frame.height() / CODING_BLOCK;
    let max_value = frame.max_value() as f64;
    let step = cfg.base_step;
    let mut conf_syms = vec![0i32; cols * rows];
    let mut resid_syms: Vec<Vec<i32>> = vec![Vec::new(); cols * rows];
    for by in 0..rows {
        for bx in 0..cols {
            let subs = gather_sub_blocks(frame, &pred_p, &pred_f, bx, by, cfg.c_uv);
            let (index, symbols) =
                rd_select_confidence(&subs, lambda_dist, qr_enc, qr_dec, step, max_value);
            conf_syms[by * cols + bx] = index as i32;
            resid_syms[by * cols + bx] = symbols;
        }
    }

    // confidence skip stabilization: if the fitted model already skips,
    // force every block to the substituted candidate and re-code residuals
    let conf_bands = vec![0u8; conf_syms.len()];
    let (_, model) = fit_band_models(&conf_syms, &conf_bands, 1);
    if policy.skips(&model[0]) {
        let forced = model[0].most_probable();
        for by in 0..rows {
            for bx in 0..cols {
                let i = by * cols + bx;
                if conf_syms[i] != forced {
                    conf_syms[i] = forced;
                    let subs = gather_sub_blocks(frame, &pred_p, &pred_f, bx, by, cfg.c_uv);
                    let trial = trial_candidate(
                        &subs,
                        CONFIDENCE_CANDIDATES[forced as usize],
                        qr_enc,
                        qr_dec,
                        step,
                        lambda_dist,
                        max_value,
                    );
                    resid_syms[i] = trial.symbols;
                }
            }
        }
    }
    let (c_scales, c_models) = fit_band_models(&conf_syms, &conf_bands, 1);
    let c_enc = encode_symbols(&conf_syms, &conf_bands, &c_models, policy)?;
    let conf_segment = write_segment(&c_scales, &c_enc.bytes);

    // residual entropy over all blocks
    let lut = band_lut();
    let mut r_symbols = Vec::with_capacity(cols * rows * 6 * 64);
    let mut r_bands = Vec::with_capacity(r_symbols.capacity());
    for syms in &resid_syms {
        r_symbols.extend_from_slice(syms);
        for _ in 0..6 {
            r_bands.extend_from_slice(&lut);
        }
    }
    let (r_scales, r_models) = fit_band_models(&r_symbols, &r_bands, BAND_COUNT);
    let r_enc = encode_symbols(&r_symbols, &r_bands, &r_models, policy)?;
    let resid_segment = write_segment(&r_scales, &r_enc.bytes);

    // decoder-identical reconstruction from the post-skip streams
    let recon = reconstruct_bframe(
        &pred_p,
        &pred_f,
        &c_enc.post_skip,
        &r_enc.post_skip,
        qr_dec,
        step,
        frame.frame_index,
    )?;

    let payload = FramePayload {
        t: unit.t,
        kind: FrameKind::Bidir,
        level,
        motion: motion_segment,
        confidence: conf_segment,
        residual: resid_segment,
    };
    Ok((payload, recon))
}

/// Shared B-frame reconstruction: confidence plan plus dequantized
/// residual, blended over the two predictions.
fn reconstruct_bframe(
    pred_p: &Frame,
    pred_f: &Frame,
    conf_syms: &[i32],
    resid_syms: &[i32],
    q_dec: f64,
    step: f64,
    frame_index: usize,
) -> Result<Frame> {
    let (width, height) = (pred_p.width(), pred_p.height());
    let cols = width / CODING_BLOCK;
    let rows = height / CODING_BLOCK;
    let indices: Vec<u8> = conf_syms
        .iter()
        .map(|&s| {
            if (0..CONFIDENCE_CANDIDATES.len() as i32).contains(&s) {
                Ok(s as u8)
            } else {
                Err(Error::Corruption(format!("confidence index {s} out of range")))
            }
        })
        .collect::<Result<_>>()?;
    let plan = ConfidencePlan { cols, rows, indices };

    let mut residual = ResidualPlanes::zeros(width, height);
    let mut pos = 0usize;
    for by in 0..rows {
        for bx in 0..cols {
            let (lx, ly) = (bx * CODING_BLOCK, by * CODING_BLOCK);
            for (ox, oy) in [(0, 0), (8, 0), (0, 8), (8, 8)] {
                write_residual_block(&mut residual.y, width, lx + ox, ly + oy, &resid_syms[pos..pos + 64], q_dec, step);
                pos += 64;
            }
            let (cx, cy) = (bx * CODING_BLOCK / 2, by * CODING_BLOCK / 2);
            write_residual_block(&mut residual.u, width / 2, cx, cy, &resid_syms[pos..pos + 64], q_dec, step);
            pos += 64;
            write_residual_block(&mut residual.v, width / 2, cx, cy, &resid_syms[pos..pos + 64], q_dec, step);
            pos += 64;
        }
    }
    let mut recon = cfr_reconstruct(pred_p, pred_f, &plan, &residual)?;
    recon.frame_index = frame_index;
    Ok(recon)
}

fn write_residual_block(
    plane: &mut [f64],
    stride: usize,
    x0: usize,
    y0: usize,
    symbols: &[i32],
    q_dec: f64,
    step: f64,
) {
    let mut coeffs = [0.0f64; 64];
    for (k, &s) in symbols.iter().enumerate() {
        coeffs[k] = dequantize_value(s, q_dec, step);
    }
    let values = dct8_inverse(&coeffs);
    for r in 0..TRANSFORM_BLOCK {
        for c in 0..TRANSFORM_BLOCK {
            plane[(y0 + r) * stride + x0 + c] = values[r * 8 + c];
        }
    }
}

fn decode_bframe(
    payload: &FramePayload,
    ref_p: &Frame,
    ref_f: &Frame,
    cfg: &CodecConfig,
) -> Result<Frame> {
    let policy = SkipPolicy::new(cfg.tau)?;
    let (width, height) = (ref_p.width(), ref_p.height());
    let level = payload.level;
    let (_, qm_dec) = cfg
        .gains
        .get(Stream::Motion, level)
        .ok_or(Error::MissingLevel(level))?;
    let (_, qr_dec) = cfg
        .gains
        .get(Stream::Rc, level)
        .ok_or(Error::MissingLevel(level))?;

    let block = CODING_BLOCK;
    let grid = width.div_ceil(block) * height.div_ceil(block);
    let half = 2 * grid;
    let mut m_bands = Vec::with_capacity(2 * half);
    for dir in 0..2u8 {
        for i in 0..half {
            m_bands.push(2 * dir + (i % 2) as u8);
        }
    }
    let (m_models, m_payload) = read_segment(&payload.motion, MOTION_BANDS)?;
    let m_syms =
        crate::entropy::decode_symbols(m_payload, &m_bands, &m_models, policy, m_bands.len())?;
    let field_p = decode_motion(&m_syms[..half], width, height, block, qm_dec, MOTION_STEP)?;
    let field_f = decode_motion(&m_syms[half..], width, height, block, qm_dec, MOTION_STEP)?;
    let pred_p = compensate(ref_p, &field_p)?;
    let pred_f = compensate(ref_f, &field_f)?;

    let cols = width / CODING_BLOCK;
    let rows = height / CODING_BLOCK;
    let conf_bands = vec![0u8; cols * rows];
    let (c_models, c_payload) = read_segment(&payload.confidence, 1)?;
    let conf_syms =
        crate::entropy::decode_symbols(c_payload, &conf_bands, &c_models, policy, conf_bands.len())?;

    let lut = band_lut();
    let mut r_bands = Vec::with_capacity(cols * rows * 6 * 64);
    for _ in 0..cols * rows * 6 {
        r_bands.extend_from_slice(&lut);
    }
    let (r_models, r_payload) = read_segment(&payload.residual, BAND_COUNT)?;
    let resid_syms =
        crate::entropy::decode_symbols(r_payload, &r_bands, &r_models, policy, r_bands.len())?;

    reconstruct_bframe(&pred_p, &pred_f, &conf_syms, &resid_syms, qr_dec, cfg.base_step, payload.t)
}

// ---------------------------------------------------------------------------
// container

const MAGIC: &[u8; 4] = b"HBVC";
const VERSION: u16 = 1;

/// Everything a decoder needs before the first payload.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub fps: u32,
    pub gop_size: usize,
    pub n_frames: usize,
    pub base_step: f64,
    pub tau: f64,
    pub gains: GainTable,
}

impl StreamHeader {
    pub fn write(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [
            self.width as u32,
            self.height as u32,
            self.bit_depth as u32,
            self.fps,
            self.gop_size as u32,
            self.n_frames as u32,
            (self.base_step * 65536.0).round() as u32,
            (self.tau * 65536.0).round() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        self.gains.serialize(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<(StreamHeader, usize)> {
        if bytes.len() < 6 + 32 {
            return Err(Error::Format("stream shorter than header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut words = [0u32; 8];
        for (i, w) in words.iter_mut().enumerate() {
            *w = u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap());
        }
        let (gains, gains_len) = GainTable::deserialize(&bytes[38..])?;
        let header = StreamHeader {
            width: words[0] as usize,
            height: words[1] as usize,
            bit_depth: words[2] as u8,
            fps: words[3],
            gop_size: words[4] as usize,
            n_frames: words[5] as usize,
            base_step: words[6] as f64 / 65536.0,
            tau: words[7] as f64 / 65536.0,
            gains,
        };
        if header.bit_depth != 8 && header.bit_depth != 10 {
            return Err(Error::Format(format!("bit depth {}", header.bit_depth)));
        }
        Ok((header, 38 + gains_len))
    }

    fn config(&self, motion: MotionParams) -> CodecConfig {
        CodecConfig {
            gop_size: self.gop_size,
            base_step: self.base_step,
            lambda: 0.0, // decode side never uses RD weights
            tau: self.tau,
            gains: self.gains.clone(),
            motion,
            c_uv: 1.0,
            c_t: Vec::new(),
            me_rate_factor: 1.0,
            truncate: false,
        }
    }

    fn padded_dims(&self) -> (usize, usize) {
        (
            self.width.next_multiple_of(CODING_BLOCK),
            self.height.next_multiple_of(CODING_BLOCK),
        )
    }
}

/// Split a stream into its header and payload records. Returns a
/// corruption note instead of failing when the payload area is truncated.
pub fn parse_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<FramePayload>, Option<String>)> {
    let (header, mut pos) = StreamHeader::parse(bytes)?;
    let mut payloads = Vec::new();
    let mut corruption = None;
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            corruption = Some(format!("{} trailing bytes after last payload", bytes.len() - pos));
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if bytes.len() - pos < len {
            corruption = Some(format!(
                "payload {} truncated: {} of {} bytes", payloads.len(), bytes.len() - pos, len
            ));
            break;
        }
        match FramePayload::parse(&bytes[pos..pos + len]) {
            Ok(p) => payloads.push(p),
            Err(e) => {
                corruption = Some(e.to_string());
                break;
            }
        }
        pos += len;
    }
    Ok((header, payloads, corruption))
}

/// Rebuild a stream from a header and payload subset (stream surgery).
pub fn assemble_stream(header: &StreamHeader, payloads: &[FramePayload]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header.write(&mut out)?;
    for p in payloads {
        p.write(&mut out);
    }
    Ok(out)
}

/// Stateful encoder: frames are pushed in decode order, references held
/// as padded reconstructions.
pub struct Encoder {
    cfg: CodecConfig,
    header: StreamHeader,
    schedule: GopSchedule,
    recons: HashMap<usize, Frame>,
    payloads: Vec<FramePayload>,
    stats: Vec<FrameStats>,
}

impl Encoder {
    pub fn new(
        cfg: &CodecConfig,
        width: usize,
        height: usize,
        bit_depth: u8,
        fps: u32,
        n_frames: usize,
    ) -> Result<Encoder> {
        let cfg = cfg.snapped();
        if cfg.motion.block_size != CODING_BLOCK {
            return Err(Error::InvalidInput(format!(
                "stream coding uses {CODING_BLOCK}-pel motion blocks, got {}",
                cfg.motion.block_size
            )));
        }
        let schedule = build_schedule(n_frames, cfg.gop_size, cfg.truncate)?;
        let max_level = cfg.gop_size.trailing_zeros() as u8;
        for stream in [Stream::Motion, Stream::Rc] {
            for level in 1..=max_level {
                // fail early if a level can neither be read nor extrapolated
                cfg.gains.get_or_extrapolate(stream, level)?;
            }
        }
        let header = StreamHeader {
            width,
            height,
            bit_depth,
            fps,
            gop_size: cfg.gop_size,
            n_frames: schedule.n_frames(),
            base_step: cfg.base_step,
            tau: cfg.tau,
            gains: cfg.gains.clone(),
        };
        Ok(Encoder {
            cfg,
            header,
            schedule,
            recons: HashMap::new(),
            payloads: Vec::new(),
            stats: Vec::new(),
        })
    }

    pub fn schedule(&self) -> &GopSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    /// Encode `unit` without committing it; `frame` is the original
    /// display frame (padding handled here).
    pub fn try_encode(
        &self,
        unit: &CodingUnit,
        frame: &Frame,
        offsets: &FrameOffsets,
    ) -> Result<EncodedFrame> {
        if frame.width() != self.header.width || frame.height() != self.header.height {
            return Err(Error::InvalidInput(format!(
                "frame {} is {}x{}, stream is {}x{}",
                frame.frame_index,
                frame.width(),
                frame.height(),
                self.header.width,
                self.header.height
            )));
        }
        let padded = pad_to_block_grid(frame, CODING_BLOCK)?;
        let (payload, recon) = match unit.kind {
            FrameKind::Intra => {
                let (segment, recon) = encode_intra(&padded, &self.cfg, offsets)?;
                (
                    FramePayload {
                        t: unit.t,
                        kind: FrameKind::Intra,
                        level: 0,
                        motion: Vec::new(),
                        confidence: Vec::new(),
                        residual: segment,
                    },
                    recon,
                )
            }
            FrameKind::Bidir => {
                let ref_p = self.recons.get(&unit.p.unwrap()).ok_or_else(|| {
                    Error::ScheduleViolation(format!(
                        "frame {} coded before its past reference {}", unit.t, unit.p.unwrap()
                    ))
                })?;
                let ref_f = self.recons.get(&unit.f.unwrap()).ok_or_else(|| {
                    Error::ScheduleViolation(format!(
                        "frame {} coded before its future reference {}", unit.t, unit.f.unwrap()
                    ))
                })?;
                encode_bframe(unit, &padded, ref_p, ref_f, &self.cfg, offsets)?
            }
        };
        let stats = FrameStats {
            t: unit.t,
            level: unit.level,
            intra: unit.kind == FrameKind::Intra,
            motion_bits: payload.motion.len() as u64 * 8,
            conf_bits: payload.confidence.len() as u64 * 8,
            resid_bits: payload.residual.len() as u64 * 8,
            payload_bits: (payload.body_len() as u64 + 4) * 8,
        };
        Ok(EncodedFrame { payload, recon, stats })
    }

    pub fn commit(&mut self, encoded: EncodedFrame) {
        self.recons.insert(encoded.payload.t, encoded.recon);
        self.payloads.push(encoded.payload);
        self.stats.push(encoded.stats);
    }

    /// Reconstruction of an already-committed frame, cropped to display
    /// size.
    pub fn reconstruction(&self, t: usize) -> Option<Frame> {
        self.recons
            .get(&t)
            .map(|r| r.crop(self.header.width, self.header.height).expect("crop within padded"))
    }

    pub fn finish(self) -> Result<EncodeOutcome> {
        let bytes = assemble_stream(&self.header, &self.payloads)?;
        let mut recons: Vec<Frame> = Vec::with_capacity(self.recons.len());
        for t in 0..self.header.n_frames {
            let padded = self.recons.get(&t).ok_or_else(|| {
                Error::ScheduleViolation(format!("frame {t} was never committed"))
            })?;
            recons.push(padded.crop(self.header.width, self.header.height)?);
        }
        Ok(EncodeOutcome { bytes, recons, stats: self.stats })
    }
}

/// Result of encoding a whole sequence.
pub struct EncodeOutcome {
    pub bytes: Vec<u8>,
    /// Decoder-exact reconstructions in display order, display size.
    pub recons: Vec<Frame>,
    pub stats: Vec<FrameStats>,
}

/// Encode a display-order frame sequence into one stream.
pub fn encode_stream(frames: &[Frame], fps: u32, cfg: &CodecConfig) -> Result<EncodeOutcome> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("empty sequence".into()))?;
    let mut encoder = Encoder::new(
        cfg,
        first.width(),
        first.height(),
        first.bit_depth,
        fps,
        frames.len(),
    )?;
    let units: Vec<CodingUnit> = encoder.schedule().units.clone();
    let offsets = FrameOffsets::default();
    for unit in units {
        let encoded = encoder.try_encode(&unit, &frames[unit.t], &offsets)?;
        encoder.commit(encoded);
    }
    encoder.finish()
}

/// Decoded stream with per-frame availability.
pub struct DecodeOutcome {
    pub header: StreamHeader,
    /// Display-order reconstructions keyed by frame index.
    pub frames: BTreeMap<usize, Frame>,
    /// Frames whose payload or references were unavailable.
    pub missing: Vec<usize>,
    pub corruption: Option<String>,
}

/// Decode whatever is decodable: payloads may be missing (stream surgery)
/// or the tail truncated.
pub fn decode_stream_tolerant(bytes: &[u8]) -> Result<DecodeOutcome> {
    let (header, payloads, corruption) = parse_stream(bytes)?;
    let schedule = build_schedule(header.n_frames, header.gop_size, false)
        .map_err(|e| Error::Format(format!("header describes no valid schedule: {e}")))?;
    let cfg = header.config(MotionParams::default());
    let (pw, ph) = header.padded_dims();

    let by_t: HashMap<usize, &FramePayload> = payloads.iter().map(|p| (p.t, p)).collect();
    let mut recons: HashMap<usize, Frame> = HashMap::new();
    let mut missing = Vec::new();
    let mut corruption = corruption;
    for unit in &schedule.units {
        let Some(payload) = by_t.get(&unit.t) else {
            missing.push(unit.t);
            continue;
        };
        if payload.kind != unit.kind || payload.level != unit.level {
            corruption.get_or_insert(format!(
                "frame {}: payload kind/level disagree with schedule", unit.t
            ));
            missing.push(unit.t);
            continue;
        }
        let decoded = match unit.kind {
            FrameKind::Intra => decode_intra(&payload.residual, pw, ph, header.bit_depth, unit.t, &cfg),
            FrameKind::Bidir => {
                let (Some(rp), Some(rf)) = (
                    unit.p.and_then(|p| recons.get(&p)),
                    unit.f.and_then(|f| recons.get(&f)),
                ) else {
                    missing.push(unit.t);
                    continue;
                };
                decode_bframe(payload, rp, rf, &cfg)
            }
        };
        match decoded {
            Ok(frame) => {
                recons.insert(unit.t, frame);
            }
            Err(e) => {
                corruption.get_or_insert(e.to_string());
                missing.push(unit.t);
            }
        }
    }
    let mut frames = BTreeMap::new();
    for (t, padded) in recons {
        frames.insert(t, padded.crop(header.width, header.height)?);
    }
    missing.sort_unstable();
    Ok(DecodeOutcome { header, frames, missing, corruption })
}

/// Strict decode: every frame present, no corruption.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Frame>> {
    let outcome = decode_stream_tolerant(bytes)?;
    if let Some(c) = outcome.corruption {
        return Err(Error::Corruption(c));
    }
    if !outcome.missing.is_empty() {
        return Err(Error::Corruption(format!(
            "{} frames missing from stream (first: {})",
            outcome.missing.len(),
            outcome.missing[0]
        )));
    }
    Ok(outcome.frames.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn quick_cfg(gop: usize) -> CodecConfig {
        CodecConfig {
            motion: MotionParams { search_range: 8, ..MotionParams::default() },
            ..CodecConfig::with_gop(gop)
        }
    }

    #[test]
    fn cfr_identity_and_formula() {
        let mut pred_p = Frame::new(16, 16, 8, 0).unwrap();
        let mut pred_f = Frame::new(16, 16, 8, 0).unwrap();
        for plane in [&mut pred_p.y, &mut pred_p.u, &mut pred_p.v] {
            plane.data.fill(100);
        }
        for plane in [&mut pred_f.y, &mut pred_f.u, &mut pred_f.v] {
            plane.data.fill(200);
        }
        let plan = ConfidencePlan { cols: 1, rows: 1, indices: vec![0] };
        let zero = ResidualPlanes::zeros(16, 16);
        let out = cfr_reconstruct(&pred_p, &pred_f, &plan, &zero).unwrap();
        assert_eq!(out.y, pred_p.y);

        // half/half blend with residual -22: (100+200)/2 - 22 = 128
        let plan = ConfidencePlan { cols: 1, rows: 1, indices: vec![2] };
        let mut res = ResidualPlanes::zeros(16, 16);
        res.y.fill(-22.0);
        res.u.fill(-22.0);
        res.v.fill(-22.0);
        let out = cfr_reconstruct(&pred_p, &pred_f, &plan, &res).unwrap();
        assert!(out.y.data.iter().all(|&v| v == 128));
        assert!(out.u.data.iter().all(|&v| v == 128));
    }

    #[test]
    fn cfr_intra_like_passes_residual() {
        let pred_p = Frame::new(16, 16, 8, 0).unwrap();
        let pred_f = Frame::new(16, 16, 8, 0).unwrap();
        let plan = ConfidencePlan { cols: 1, rows: 1, indices: vec![5] };
        let mut res = ResidualPlanes::zeros(16, 16);
        for (i, v) in res.y.iter_mut().enumerate() {
            *v = (i % 251) as f64;
        }
        let out = cfr_reconstruct(&pred_p, &pred_f, &plan, &res).unwrap();
        for (i, &v) in out.y.data.iter().enumerate() {
            assert_eq!(v as f64, res.y[i]);
        }
    }

    #[test]
    fn intra_round_trip_noise_error_bound() {
        // step 1, gain 1: transform-domain quantization error <= 0.5 per
        // coefficient caps per-block sample MSE at 0.25 (Parseval)
        let frame = synth::noise_frame(64, 64, 8, 0, 77);
        let cfg = CodecConfig { base_step: 1.0, ..quick_cfg(2) };
        let offsets = FrameOffsets::default();
        let (_, recon) = encode_intra(&frame, &cfg.snapped(), &offsets).unwrap();
        let mse = crate::metrics::mse_plane(&frame.y, &recon.y).unwrap();
        assert!(mse <= 0.25 + 1e-6, "{mse}");
    }

    #[test]
    fn intra_flat_frame_costs_little() {
        let mut frame = Frame::new(64, 64, 8, 0).unwrap();
        for plane in [&mut frame.y, &mut frame.u, &mut frame.v] {
            plane.data.fill(128);
        }
        let cfg = quick_cfg(2).snapped();
        let (segment, recon) = encode_intra(&frame, &cfg, &FrameOffsets::default()).unwrap();
        assert_eq!(recon.y, frame.y);
        // mid-gray DC is fully predicted; everything skips
        assert!(segment.len() < 64, "{}", segment.len());
    }

    #[test]
    fn intra_large_step_collapses_to_dc() {
        let frame = synth::gradient_frame(64, 64, 8, 0);
        let cfg = CodecConfig { base_step: 512.0, ..quick_cfg(2) }.snapped();
        let (segment, _) = encode_intra(&frame, &cfg, &FrameOffsets::default()).unwrap();
        let fine = CodecConfig { base_step: 1.0, ..quick_cfg(2) }.snapped();
        let (segment_fine, _) = encode_intra(&frame, &fine, &FrameOffsets::default()).unwrap();
        assert!(segment.len() * 4 < segment_fine.len());
    }

    #[test]
    fn header_round_trip() {
        let mut gains = GainTable::identity(3);
        gains.set_tied(Stream::Motion, 2, 1.25).unwrap();
        let header = StreamHeader {
            width: 128,
            height: 72,
            bit_depth: 10,
            fps: 30,
            gop_size: 8,
            n_frames: 9,
            base_step: 2.5,
            tau: 0.95,
            gains: gains.snapped(),
        };
        let mut bytes = Vec::new();
        header.write(&mut bytes).unwrap();
        let (parsed, used) = StreamHeader::parse(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(parsed.width, 128);
        assert_eq!(parsed.bit_depth, 10);
        assert_eq!(parsed.gains, header.gains);
        assert!((parsed.base_step - 2.5).abs() < 1e-9);
        // and writing the parsed header reproduces the bytes
        let mut bytes2 = Vec::new();
        parsed.write(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn bad_magic_rejected() {
        let err = StreamHeader::parse(b"XXXX0123456789012345678901234567890123").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn closed_loop_small_clip() {
        let frames = synth::pan_clip(64, 48, 9);
        let cfg = quick_cfg(8);
        let out = encode_stream(&frames, 30, &cfg).unwrap();
        let decoded = decode_stream(&out.bytes).unwrap();
        assert_eq!(decoded.len(), 9);
        for (d, r) in decoded.iter().zip(&out.recons) {
            assert_eq!(d, r, "frame {}", d.frame_index);
        }
    }

    #[test]
    fn closed_loop_10bit() {
        let frames = synth::pan_clip(48, 48, 3)
            .into_iter()
            .map(|f| {
                let mut f10 = Frame::new(f.width(), f.height(), 10, f.frame_index).unwrap();
                for (d, s) in f10.y.data.iter_mut().zip(&f.y.data) {
                    *d = s * 4;
                }
                for (d, s) in f10.u.data.iter_mut().zip(&f.u.data) {
                    *d = s * 4;
                }
                for (d, s) in f10.v.data.iter_mut().zip(&f.v.data) {
                    *d = s * 4;
                }
                f10
            })
            .collect::<Vec<_>>();
        let out = encode_stream(&frames, 30, &quick_cfg(2)).unwrap();
        let decoded = decode_stream(&out.bytes).unwrap();
        for (d, r) in decoded.iter().zip(&out.recons) {
            assert_eq!(d, r);
        }
    }

    #[test]
    fn padding_crops_back() {
        // 72x40 pads to 80x48 internally; output must crop to 72x40
        let frames = synth::pan_clip(72, 40, 3);
        let out = encode_stream(&frames, 30, &quick_cfg(2)).unwrap();
        let decoded = decode_stream(&out.bytes).unwrap();
        assert_eq!(decoded[0].width(), 72);
        assert_eq!(decoded[0].height(), 40);
        for (d, r) in decoded.iter().zip(&out.recons) {
            assert_eq!(d, r);
        }
    }

    #[test]
    fn truncated_stream_keeps_prefix() {
        let frames = synth::pan_clip(64, 48, 5);
        let out = encode_stream(&frames, 30, &quick_cfg(4)).unwrap();
        // cut into the middle of the last payload
        let cut = out.bytes.len() - 7;
        let outcome = decode_stream_tolerant(&out.bytes[..cut]).unwrap();
        assert!(outcome.corruption.is_some());
        assert!(!outcome.missing.is_empty());
        for (t, frame) in &outcome.frames {
            assert_eq!(frame, &out.recons[*t], "frame {t}");
        }
        assert!(matches!(decode_stream(&out.bytes[..cut]), Err(Error::Corruption(_))));
    }

    #[test]
    fn surgery_keeps_segment_decodable() {
        let frames = synth::pan_clip(64, 48, 9);
        let out = encode_stream(&frames, 30, &quick_cfg(4)).unwrap();
        let (header, payloads, none) = parse_stream(&out.bytes).unwrap();
        assert!(none.is_none());
        // keep the second gop [4..8] plus its bounding I-frames
        let kept: Vec<FramePayload> = payloads
            .into_iter()
            .filter(|p| p.t >= 4 || p.t == 0)
            .collect();
        let surgical = assemble_stream(&header, &kept).unwrap();
        let outcome = decode_stream_tolerant(&surgical).unwrap();
        assert!(outcome.corruption.is_none());
        for t in 4..=8 {
            assert_eq!(outcome.frames[&t], out.recons[t], "frame {t}");
        }
        for t in 1..4 {
            assert!(outcome.missing.contains(&t));
        }
    }

    #[test]
    fn header_only_stream_decodes_empty() {
        let frames = synth::pan_clip(64, 48, 3);
        let out = encode_stream(&frames, 30, &quick_cfg(2)).unwrap();
        let (header, _, _) = parse_stream(&out.bytes).unwrap();
        let only_header = assemble_stream(&header, &[]).unwrap();
        let outcome = decode_stream_tolerant(&only_header).unwrap();
        assert!(outcome.frames.is_empty());
        assert_eq!(outcome.missing.len(), 3);
    }

    #[test]
    fn level_routing_recorded_in_payloads() {
        let frames = synth::pan_clip(64, 48, 9);
        let out = encode_stream(&frames, 30, &quick_cfg(8)).unwrap();
        let (_, payloads, _) = parse_stream(&out.bytes).unwrap();
        let schedule = build_schedule(9, 8, false).unwrap();
        for (payload, unit) in payloads.iter().zip(&schedule.units) {
            assert_eq!(payload.t, unit.t);
            assert_eq!(payload.level, unit.level);
            assert_eq!(payload.kind, unit.kind);
        }
    }

    #[test]
    fn perfect_past_prediction_prefers_past() {
        // frame identical to ref_p: confidence picks (1,0) everywhere and
        // the residual payload stays near the floor
        let base = synth::textured_frame(64, 48, 8, 0, 5);
        let frames = vec![base.clone(), base.clone(), synth::textured_frame(64, 48, 8, 2, 9)];
        let out = encode_stream(&frames, 30, &quick_cfg(2)).unwrap();
        let b_stats = out.stats.iter().find(|s| !s.intra).unwrap();
        assert!(b_stats.resid_bits + b_stats.conf_bits < 2000, "{b_stats:?}");
        // the B-frame inherits its reference's quality
        let (b_psnr, _, _) = crate::metrics::frame_psnr(&frames[1], &out.recons[1]).unwrap();
        let (i_psnr, _, _) = crate::metrics::frame_psnr(&frames[0], &out.recons[0]).unwrap();
        assert!(b_psnr >= i_psnr - 0.5, "B {b_psnr} vs I {i_psnr}");
    }

    #[test]
    fn occluded_region_uses_future_reference() {
        // a patch visible only in the future reference: (0,1) wins there
        let width = 96;
        let height = 48;
        let mut ref_p = synth::gradient_frame(width, height, 8, 0);
        // past reference corrupted in a 16-aligned patch
        for y in 16..32 {
            for x in 32..48 {
                ref_p.y.set(x, y, 255 - ref_p.y.get(x, y));
            }
        }
        let target = synth::gradient_frame(width, height, 8, 1);
        let ref_f = synth::gradient_frame(width, height, 8, 2);

        let cfg = quick_cfg(2).snapped();
        let unit = CodingUnit {
            t: 1,
            kind: FrameKind::Bidir,
            p: Some(0),
            f: Some(2),
            delta: 1,
            level: 1,
            decode_rank: 2,
        };
        let (payload, _) = encode_bframe(&unit, &target, &ref_p, &ref_f, &cfg, &FrameOffsets::default()).unwrap();
        // decode the confidence plan back out of the payload
        let policy = SkipPolicy::new(cfg.tau).unwrap();
        let cols = width / CODING_BLOCK;
        let rows = height / CODING_BLOCK;
        let (c_models, c_payload) = read_segment(&payload.confidence, 1).unwrap();
        let conf = crate::entropy::decode_symbols(
            c_payload,
            &vec![0u8; cols * rows],
            &c_models,
            policy,
            cols * rows,
        )
        .unwrap();
        // block (2,1) holds the corrupted patch
        let idx = conf[cols + 2];
        assert_eq!(CONFIDENCE_CANDIDATES[idx as usize].0, 0, "candidate {idx} uses past");
    }
}

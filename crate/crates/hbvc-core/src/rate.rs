//! Rate-distortion loss, random-path gain calibration, and encoder-side
//! content adaptation.
//!
//! The sequence loss is `R_I + lambda D_I` for intra frames plus
//! `(R_m + R_res + lambda D) * 2^level` for every B-frame; a random path
//! (one non-reference frame and its ancestor chain) estimates the full-GoP
//! sum because a level-k frame lies on `2^(n-k)` of the `2^(n-1)` paths,
//! making the weighted path sum an unbiased 2x estimator. Calibration
//! exploits that: it measures path losses instead of whole GoPs while
//! coordinate-descending the gain table.

use std::collections::HashMap;

use serde::Serialize;

use crate::codec::{
    encode_bframe, encode_intra, CodecConfig, Encoder, EncodeOutcome, FrameOffsets, FrameStats,
};
use crate::frame::{pad_to_block_grid, Frame};
use crate::gop::{build_schedule, sample_random_path, CodingUnit, FrameKind, RandomPath};
use crate::metrics::mse_plane;
use crate::transform::{GainTable, Stream};
use crate::{Error, Result};

/// The four standard operating points, highest quality first.
pub const STANDARD_LAMBDAS: [f64; 4] = [0.05, 0.015, 0.005, 0.001];

/// `(lambda, base_step)` per operating point. Steps were calibrated on the
/// synthetic clip set for a roughly 4x bitrate spread across the ladder.
pub const OPERATING_POINTS: [(f64, f64); 4] = [
    (0.05, 2.0),
    (0.015, 4.0),
    (0.005, 8.0),
    (0.001, 20.0),
];

pub fn operating_point(index: usize) -> (f64, f64) {
    OPERATING_POINTS[index]
}

/// Distortion weighting of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    /// Per-level coefficients (level 1 first); absent levels are 1.
    pub c_t: Vec<f64>,
    /// Chroma coefficient.
    pub c_uv: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> LossWeights {
        LossWeights { lambda, c_t: Vec::new(), c_uv: 1.0 }
    }

    pub fn c_t_for(&self, level: u8) -> f64 {
        if level == 0 {
            return 1.0;
        }
        self.c_t.get(level as usize - 1).copied().unwrap_or(1.0)
    }
}

/// Weighted MSE distortion from per-plane values:
/// `(8 MSE_Y + c_uv (MSE_U + MSE_V)) / 10 * c_t`.
pub fn weighted_distortion_from_mse(
    mse_y: f64,
    mse_u: f64,
    mse_v: f64,
    w: &LossWeights,
    level: u8,
) -> f64 {
    (8.0 * mse_y + w.c_uv * (mse_u + mse_v)) / 10.0 * w.c_t_for(level)
}

/// Frame distortion in loss units.
pub fn distortion_yuv(orig: &Frame, recon: &Frame, w: &LossWeights, level: u8) -> Result<f64> {
    if orig.bit_depth != recon.bit_depth {
        return Err(Error::InvalidInput("bit depth mismatch".into()));
    }
    let mse_y = mse_plane(&orig.y, &recon.y)?;
    let mse_u = mse_plane(&orig.u, &recon.u)?;
    let mse_v = mse_plane(&orig.v, &recon.v)?;
    Ok(weighted_distortion_from_mse(mse_y, mse_u, mse_v, w, level))
}

/// Measured rate/distortion of one coded frame. Rates are bits per luma
/// pixel so they share a scale with `lambda * D`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrameLossStats {
    pub t: usize,
    pub level: u8,
    pub rate_motion: f64,
    pub rate_resid: f64,
    pub dist: f64,
}

/// One weighted B-frame term of a path loss.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PathUnitLoss {
    pub stats: FrameLossStats,
    /// `2^level`.
    pub weight: f64,
}

/// Decomposed loss of one random path.
#[derive(Debug, Clone, Serialize)]
pub struct PathLossReport {
    pub lambda: f64,
    pub i_rate: f64,
    pub i_dist: f64,
    pub units: Vec<PathUnitLoss>,
    pub total: f64,
}

impl PathLossReport {
    /// Rebuild the total from the parts; the stored value must agree.
    pub fn recompute(&self) -> f64 {
        let mut total = self.i_rate + self.lambda * self.i_dist;
        for u in &self.units {
            total += (u.stats.rate_motion + u.stats.rate_resid + self.lambda * u.stats.dist)
                * u.weight;
        }
        total
    }
}

/// Assemble the path loss from measured stats. `i_stats` carries the
/// summed rate/distortion of the bounding I-frames.
pub fn path_loss(i_rate: f64, i_dist: f64, units: &[FrameLossStats], w: &LossWeights) -> PathLossReport {
    let units: Vec<PathUnitLoss> = units
        .iter()
        .map(|&stats| PathUnitLoss { stats, weight: (1u64 << stats.level) as f64 })
        .collect();
    let mut report = PathLossReport { lambda: w.lambda, i_rate, i_dist, units, total: 0.0 };
    report.total = report.recompute();
    report
}

// ---------------------------------------------------------------------------
// path evaluation against real encodes

fn loss_config(base: &CodecConfig, w: &LossWeights, gains: &GainTable) -> CodecConfig {
    CodecConfig {
        lambda: w.lambda,
        c_t: w.c_t.clone(),
        c_uv: w.c_uv,
        gains: gains.clone(),
        ..base.clone()
    }
    .snapped()
}

/// Encoded I-frame cache: intra coding ignores the gain table, so the
/// boundary frames are shared across every candidate evaluation.
struct IntraCache {
    recons: HashMap<usize, Frame>,
    stats: HashMap<usize, FrameLossStats>,
}

impl IntraCache {
    fn build(frames: &[Frame], ts: &[usize], cfg: &CodecConfig, w: &LossWeights) -> Result<IntraCache> {
        let mut cache = IntraCache { recons: HashMap::new(), stats: HashMap::new() };
        let offsets = FrameOffsets::default();
        for &t in ts {
            let padded = pad_to_block_grid(&frames[t], crate::codec::CODING_BLOCK)?;
            let (segment, recon) = encode_intra(&padded, cfg, &offsets)?;
            let pixels = (frames[t].width() * frames[t].height()) as f64;
            let cropped = recon.crop(frames[t].width(), frames[t].height())?;
            let dist = distortion_yuv(&frames[t], &cropped, w, 0)?;
            // match FrameStats payload accounting: framing + segment
            let bits = (22 + segment.len()) as u64 * 8;
            cache.stats.insert(
                t,
                FrameLossStats {
                    t,
                    level: 0,
                    rate_motion: 0.0,
                    rate_resid: bits as f64 / pixels,
                    dist,
                },
            );
            cache.recons.insert(t, recon);
        }
        Ok(cache)
    }
}

fn eval_path(
    frames: &[Frame],
    path: &RandomPath,
    cfg: &CodecConfig,
    w: &LossWeights,
    intra: &IntraCache,
) -> Result<PathLossReport> {
    let offsets = FrameOffsets::default();
    let mut recons: HashMap<usize, Frame> = intra.recons.clone();
    let mut unit_stats = Vec::with_capacity(path.units.len());
    for unit in &path.units {
        let padded = pad_to_block_grid(&frames[unit.t], crate::codec::CODING_BLOCK)?;
        let ref_p = recons
            .get(&unit.p.unwrap())
            .ok_or_else(|| Error::ScheduleViolation(format!("path misses ref {}", unit.p.unwrap())))?;
        let ref_f = recons
            .get(&unit.f.unwrap())
            .ok_or_else(|| Error::ScheduleViolation(format!("path misses ref {}", unit.f.unwrap())))?;
        let (payload, recon) = encode_bframe(unit, &padded, ref_p, ref_f, cfg, &offsets)?;
        let pixels = (frames[unit.t].width() * frames[unit.t].height()) as f64;
        let cropped = recon.crop(frames[unit.t].width(), frames[unit.t].height())?;
        let dist = distortion_yuv(&frames[unit.t], &cropped, w, unit.level)?;
        let motion_bits = payload.motion.len() as u64 * 8;
        let resid_bits = (payload.confidence.len() + payload.residual.len()) as u64 * 8;
        unit_stats.push(FrameLossStats {
            t: unit.t,
            level: unit.level,
            rate_motion: motion_bits as f64 / pixels,
            rate_resid: resid_bits as f64 / pixels,
            dist,
        });
        recons.insert(unit.t, recon);
    }
    let (mut i_rate, mut i_dist) = (0.0, 0.0);
    for stats in intra.stats.values() {
        i_rate += stats.rate_resid;
        i_dist += stats.dist;
    }
    Ok(path_loss(i_rate, i_dist, &unit_stats, w))
}

/// Exact path-loss expectation by enumerating every leaf of the first
/// GoP. Exposes both sides of the estimator identity.
#[derive(Debug, Clone)]
pub struct ExactPathLoss {
    pub i_rate: f64,
    pub i_dist: f64,
    /// Leaf-average of the weighted B-frame sums.
    pub mean_weighted_b: f64,
    /// Plain sum of `R + lambda D` over all B-frames of the GoP.
    pub full_b_sum: f64,
    /// `i_rate + lambda i_dist + mean_weighted_b`.
    pub total: f64,
}

/// Enumerate all leaves of the first GoP of `frames` and average the
/// weighted path losses; I-frame terms are counted once.
pub fn expected_path_loss_exact(
    frames: &[Frame],
    gop_size: usize,
    base: &CodecConfig,
    w: &LossWeights,
) -> Result<ExactPathLoss> {
    if gop_size > 16 {
        return Err(Error::InvalidInput(format!(
            "gop {gop_size} too large for exact enumeration"
        )));
    }
    if frames.len() < gop_size + 1 {
        return Err(Error::InsufficientData(format!(
            "{} frames, exact enumeration needs {}", frames.len(), gop_size + 1
        )));
    }
    let cfg = loss_config(base, w, &base.gains);
    let intra = IntraCache::build(frames, &[0, gop_size], &cfg, w)?;

    // every path shares its ancestor encodes, so encode the full GoP once
    let schedule = build_schedule(gop_size + 1, gop_size, false)?;
    let offsets = FrameOffsets::default();
    let mut recons: HashMap<usize, Frame> = intra.recons.clone();
    let mut stats_by_t: HashMap<usize, FrameLossStats> = HashMap::new();
    for unit in &schedule.units {
        if unit.kind != FrameKind::Bidir {
            continue;
        }
        let padded = pad_to_block_grid(&frames[unit.t], crate::codec::CODING_BLOCK)?;
        let (payload, recon) = encode_bframe(
            unit,
            &padded,
            &recons[&unit.p.unwrap()],
            &recons[&unit.f.unwrap()],
            &cfg,
            &offsets,
        )?;
        let pixels = (frames[unit.t].width() * frames[unit.t].height()) as f64;
        let cropped = recon.crop(frames[unit.t].width(), frames[unit.t].height())?;
        let dist = distortion_yuv(&frames[unit.t], &cropped, w, unit.level)?;
        stats_by_t.insert(
            unit.t,
            FrameLossStats {
                t: unit.t,
                level: unit.level,
                rate_motion: payload.motion.len() as f64 * 8.0 / pixels,
                rate_resid: (payload.confidence.len() + payload.residual.len()) as f64 * 8.0 / pixels,
                dist,
            },
        );
        recons.insert(unit.t, recon);
    }

    let leaves = crate::gop::enumerate_leaves(gop_size)?;
    let mut weighted_sum = 0.0f64;
    for path in &leaves {
        for unit in &path.units {
            let s = &stats_by_t[&unit.t];
            weighted_sum += (s.rate_motion + s.rate_resid + w.lambda * s.dist)
                * (1u64 << unit.level) as f64;
        }
    }
    let mean_weighted_b = weighted_sum / leaves.len() as f64;
    let full_b_sum: f64 = stats_by_t
        .values()
        .map(|s| s.rate_motion + s.rate_resid + w.lambda * s.dist)
        .sum();
    let (mut i_rate, mut i_dist) = (0.0, 0.0);
    for s in intra.stats.values() {
        i_rate += s.rate_resid;
        i_dist += s.dist;
    }
    Ok(ExactPathLoss {
        i_rate,
        i_dist,
        mean_weighted_b,
        full_b_sum,
        total: i_rate + w.lambda * i_dist + mean_weighted_b,
    })
}

// ---------------------------------------------------------------------------
// gain calibration

/// Candidate multipliers tried per coordinate per pass.
const GAIN_CANDIDATES: [f64; 2] = [0.8, 1.25];

/// Sampled paths per clip per objective evaluation.
const PATHS_PER_CLIP: usize = 8;

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub table: GainTable,
    /// Objective after initialization and after every accepted step.
    pub objective_log: Vec<f64>,
}

impl CalibrationResult {
    pub fn initial_objective(&self) -> f64 {
        self.objective_log[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_log.last().unwrap()
    }
}

/// Coordinate descent over per-level gains of both streams. The objective
/// is the mean path loss over `PATHS_PER_CLIP` seeded random paths per
/// clip; I-frame encodes are cached since gains do not touch them.
pub fn calibrate_gains(
    clips: &[Vec<Frame>],
    gop_size: usize,
    base: &CodecConfig,
    w: &LossWeights,
    budget: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    if clips.is_empty() {
        return Err(Error::InsufficientData("no clips".into()));
    }
    for (i, clip) in clips.iter().enumerate() {
        if clip.len() < gop_size + 1 {
            return Err(Error::InsufficientData(format!(
                "clip {i} has {} frames, needs {}", clip.len(), gop_size + 1
            )));
        }
    }
    let levels = gop_size.trailing_zeros() as u8;
    let mut table = GainTable::identity(levels).snapped();
    if budget == 0 {
        return Ok(CalibrationResult { table, objective_log: vec![f64::NAN] });
    }

    // fixed paths: same leaves in every objective evaluation
    let mut paths: Vec<Vec<RandomPath>> = Vec::with_capacity(clips.len());
    for clip_idx in 0..clips.len() {
        let per_clip: Result<Vec<RandomPath>> = (0..PATHS_PER_CLIP)
            .map(|k| {
                sample_random_path(gop_size, seed ^ (clip_idx as u64) << 32 ^ k as u64)
            })
            .collect();
        paths.push(per_clip?);
    }

    let intra_cfg = loss_config(base, w, &table);
    let mut intra_caches = Vec::with_capacity(clips.len());
    for clip in clips {
        intra_caches.push(IntraCache::build(clip, &[0, gop_size], &intra_cfg, w)?);
    }

    let objective = |table: &GainTable| -> Result<f64> {
        let cfg = loss_config(base, w, table);
        let mut total = 0.0f64;
        let mut count = 0usize;
        for ((clip, clip_paths), intra) in clips.iter().zip(&paths).zip(&intra_caches) {
            // paths repeat leaves; reuse evaluations within one call
            let mut memo: HashMap<usize, f64> = HashMap::new();
            for path in clip_paths {
                let loss = match memo.get(&path.leaf) {
                    Some(&l) => l,
                    None => {
                        let l = eval_path(clip, path, &cfg, w, intra)?.total;
                        memo.insert(path.leaf, l);
                        l
                    }
                };
                total += loss;
                count += 1;
            }
        }
        Ok(total / count as f64)
    };

    let mut best_obj = objective(&table)?;
    let mut log = vec![best_obj];
    for _pass in 0..budget {
        for stream in [Stream::Motion, Stream::Rc] {
            for level in 1..=levels {
                let (current, _) = table.get(stream, level).unwrap();
                for mult in GAIN_CANDIDATES {
                    let mut candidate = table.clone();
                    candidate.set_tied(stream, level, current * mult)?;
                    let candidate = candidate.snapped();
                    let obj = objective(&candidate)?;
                    if obj < best_obj {
                        best_obj = obj;
                        table = candidate;
                        log.push(obj);
                    }
                }
            }
        }
    }
    Ok(CalibrationResult { table, objective_log: log })
}

// ---------------------------------------------------------------------------
// content adaptation

/// Chosen offsets and cost movement for one frame.
#[derive(Debug, Clone, Serialize)]
pub struct AdaptationEntry {
    pub t: usize,
    pub intra: bool,
    pub lambda_mult: f64,
    pub motion_gain_mult: f64,
    pub rc_gain_mult: f64,
    pub step_mult: f64,
    pub search_range_delta: usize,
    pub cost_before: f64,
    pub cost_after: f64,
}

/// Outcome of adapting a whole sequence.
pub struct AdaptationResult {
    pub entries: Vec<AdaptationEntry>,
    pub outcome: EncodeOutcome,
}

impl AdaptationResult {
    /// Per-frame CSV log: frame, offsets, cost before/after.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "frame,intra,lambda_mult,motion_gain_mult,rc_gain_mult,step_mult,search_range_delta,cost_before,cost_after\n",
        );
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.t,
                e.intra,
                e.lambda_mult,
                e.motion_gain_mult,
                e.rc_gain_mult,
                e.step_mult,
                e.search_range_delta,
                e.cost_before,
                e.cost_after
            ));
        }
        out
    }
}

/// Per-frame cost driving the adaptation search: rate plus
/// `lambda * c_t * D` for the current frame only.
fn frame_cost(
    stats: &FrameStats,
    orig: &Frame,
    recon_padded: &Frame,
    w: &LossWeights,
) -> Result<f64> {
    let pixels = (orig.width() * orig.height()) as f64;
    let cropped = recon_padded.crop(orig.width(), orig.height())?;
    let dist = distortion_yuv(orig, &cropped, w, stats.level)?;
    Ok(stats.payload_bits as f64 / pixels + w.lambda * dist)
}

/// Greedy per-frame search over encoder-side offsets, in decode order.
/// The identity offset is always a candidate, so no frame gets worse; the
/// bitstream header is untouched by construction.
pub fn content_adapt(
    frames: &[Frame],
    fps: u32,
    base: &CodecConfig,
    w: &LossWeights,
    budget: usize,
) -> Result<AdaptationResult> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("empty sequence".into()))?;
    let cfg = loss_config(base, w, &base.gains);
    let mut encoder = Encoder::new(&cfg, first.width(), first.height(), first.bit_depth, fps, frames.len())?;
    let units: Vec<CodingUnit> = encoder.schedule().units.clone();
    let mut entries = Vec::with_capacity(units.len());

    for unit in units {
        let orig = &frames[unit.t];
        let mut offsets = FrameOffsets::default();
        let mut best = encoder.try_encode(&unit, orig, &offsets)?;
        let cost_before = frame_cost(&best.stats, orig, &best.recon, w)?;
        let mut best_cost = cost_before;

        for _pass in 0..budget {
            let knobs: &[(&str, &[f64])] = if unit.kind == FrameKind::Intra {
                &[("step", &[0.8, 1.25])]
            } else if unit.t % 2 == 1 {
                &[
                    ("lambda", &[0.75, 1.33]),
                    ("motion_gain", &[0.8, 1.25]),
                    ("rc_gain", &[0.8, 1.25]),
                    ("search_range", &[8.0]),
                ]
            } else {
                &[
                    ("lambda", &[0.75, 1.33]),
                    ("motion_gain", &[0.8, 1.25]),
                    ("search_range", &[8.0]),
                ]
            };
            for (knob, values) in knobs {
                for &value in *values {
                    let mut cand = offsets;
                    match *knob {
                        "lambda" => cand.lambda_mult = value,
                        "motion_gain" => cand.motion_gain_mult = value,
                        "rc_gain" => cand.rc_gain_mult = value,
                        "step" => cand.step_mult = value,
                        _ => cand.search_range_delta = value as usize,
                    }
                    if cand == offsets {
                        continue;
                    }
                    let encoded = encoder.try_encode(&unit, orig, &cand)?;
                    let cost = frame_cost(&encoded.stats, orig, &encoded.recon, w)?;
                    if cost < best_cost {
                        best_cost = cost;
                        best = encoded;
                        offsets = cand;
                        break; // first improvement moves to the next knob
                    }
                }
            }
        }

        entries.push(AdaptationEntry {
            t: unit.t,
            intra: unit.kind == FrameKind::Intra,
            lambda_mult: offsets.lambda_mult,
            motion_gain_mult: offsets.motion_gain_mult,
            rc_gain_mult: offsets.rc_gain_mult,
            step_mult: offsets.step_mult,
            search_range_delta: offsets.search_range_delta,
            cost_before,
            cost_after: best_cost,
        });
        encoder.commit(best);
    }
    Ok(AdaptationResult { entries, outcome: encoder.finish()? })
}

/// Sequence loss with the hierarchy weighting, for before/after
/// comparisons of whole runs.
pub fn sequence_weighted_loss(
    origs: &[Frame],
    recons: &[Frame],
    stats: &[FrameStats],
    w: &LossWeights,
) -> Result<f64> {
    let mut total = 0.0f64;
    for s in stats {
        let orig = &origs[s.t];
        let pixels = (orig.width() * orig.height()) as f64;
        let rate = s.payload_bits as f64 / pixels;
        let dist = distortion_yuv(orig, &recons[s.t], w, s.level)?;
        if s.intra {
            total += rate + w.lambda * dist;
        } else {
            total += (rate + w.lambda * dist) * (1u64 << s.level) as f64;
        }
    }
    Ok(total)
}

//! Hierarchical GoP structure: frame types, references, levels, decode
//! order, and the random-path sampler used by gain calibration.
//!
//! A GoP of size `2^n` codes frames at multiples of the GoP size as
//! I-frames. Every other frame `t` is a B-frame predicted from the nearest
//! already-coded frames `p = t - dt` and `f = t + dt`, where `dt` is the
//! largest power of two dividing `t`. Its hierarchy level is
//! `log2(gop / dt)`, so level 1 is the GoP midpoint and the top level holds
//! the odd (non-reference) frames.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Frame kind within a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    Intra,
    Bidir,
}

/// Per-frame coding metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingUnit {
    /// Frame index in display order.
    pub t: usize,
    pub kind: FrameKind,
    /// Past reference (absent for intra frames).
    pub p: Option<usize>,
    /// Future reference (absent for intra frames).
    pub f: Option<usize>,
    /// Distance to each reference, `t - p = f - t`.
    pub delta: usize,
    /// Hierarchy level; 0 for intra frames.
    pub level: u8,
    /// Position in decode order.
    pub decode_rank: usize,
}

/// Complete coding schedule for a sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GopSchedule {
    pub gop_size: usize,
    /// Units in decode order: intra frames by ascending `t`, then B-frames
    /// by ascending level, ties by ascending `t`.
    pub units: Vec<CodingUnit>,
}

impl GopSchedule {
    pub fn n_frames(&self) -> usize {
        self.units.len()
    }

    /// Units of the frames in `[first, last]` display range.
    pub fn units_in_range(&self, first: usize, last: usize) -> Vec<&CodingUnit> {
        self.units.iter().filter(|u| u.t >= first && u.t <= last).collect()
    }

    pub fn unit_for_frame(&self, t: usize) -> Option<&CodingUnit> {
        self.units.iter().find(|u| u.t == t)
    }
}

/// The chain of B-frames needed to reconstruct one non-reference frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomPath {
    /// Odd offset within the GoP.
    pub leaf: usize,
    /// Units in decode order; levels run 1..=log2(gop), one per level.
    pub units: Vec<CodingUnit>,
}

fn check_gop_size(gop_size: usize) -> Result<u32> {
    if gop_size < 2 || !gop_size.is_power_of_two() {
        return Err(Error::InvalidGop(gop_size));
    }
    Ok(gop_size.trailing_zeros())
}

/// Hierarchy level of offset `t` within a GoP: 0 at the boundaries, else
/// `log2(gop / dt)` with `dt` the distance to the references.
pub fn hierarchy_level(gop_size: usize, t: usize) -> Result<u8> {
    let n = check_gop_size(gop_size)?;
    if t > gop_size {
        return Err(Error::InvalidInput(format!("offset {t} outside gop {gop_size}")));
    }
    if t == 0 || t == gop_size {
        return Ok(0);
    }
    Ok((n - t.trailing_zeros()) as u8)
}

/// Reference distance of offset `t` within a GoP (B-frames only).
fn ref_delta(t: usize) -> usize {
    1 << t.trailing_zeros()
}

fn bidir_unit(gop_size: usize, gop_start: usize, offset: usize) -> Result<CodingUnit> {
    let delta = ref_delta(offset);
    Ok(CodingUnit {
        t: gop_start + offset,
        kind: FrameKind::Bidir,
        p: Some(gop_start + offset - delta),
        f: Some(gop_start + offset + delta),
        delta,
        level: hierarchy_level(gop_size, offset)?,
        decode_rank: 0,
    })
}

/// Build the schedule for `n_frames` frames. Requires
/// `(n_frames - 1) % gop_size == 0` unless `truncate` drops the tail.
pub fn build_schedule(n_frames: usize, gop_size: usize, truncate: bool) -> Result<GopSchedule> {
    check_gop_size(gop_size)?;
    if n_frames == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let n_frames = if (n_frames - 1) % gop_size == 0 {
        n_frames
    } else if truncate {
        (n_frames - 1) / gop_size * gop_size + 1
    } else {
        return Err(Error::ScheduleAlignment(format!(
            "{n_frames} frames do not align to gop {gop_size} (need n = k*{gop_size} + 1); \
             enable truncation to drop the tail"
        )));
    };

    let mut units = Vec::with_capacity(n_frames);
    for t in (0..n_frames).step_by(gop_size) {
        units.push(CodingUnit {
            t,
            kind: FrameKind::Intra,
            p: None,
            f: None,
            delta: 0,
            level: 0,
            decode_rank: 0,
        });
    }
    let mut bidir: Vec<CodingUnit> = Vec::with_capacity(n_frames.saturating_sub(units.len()));
    for gop_start in (0..n_frames - 1).step_by(gop_size) {
        for offset in 1..gop_size {
            bidir.push(bidir_unit(gop_size, gop_start, offset)?);
        }
    }
    bidir.sort_by_key(|u| (u.level, u.t));
    units.extend(bidir);
    for (rank, unit) in units.iter_mut().enumerate() {
        unit.decode_rank = rank;
    }
    Ok(GopSchedule { gop_size, units })
}

fn path_for_leaf(gop_size: usize, leaf: usize) -> Result<RandomPath> {
    check_gop_size(gop_size)?;
    if leaf % 2 == 0 || leaf >= gop_size {
        return Err(Error::InvalidInput(format!("leaf {leaf} is not an odd offset in gop {gop_size}")));
    }
    let mut units = Vec::new();
    let (mut lo, mut hi) = (0usize, gop_size);
    loop {
        let mid = (lo + hi) / 2;
        let delta = (hi - lo) / 2;
        units.push(CodingUnit {
            t: mid,
            kind: FrameKind::Bidir,
            p: Some(lo),
            f: Some(hi),
            delta,
            level: hierarchy_level(gop_size, mid)?,
            decode_rank: units.len(),
        });
        if mid == leaf {
            break;
        }
        if leaf < mid {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(RandomPath { leaf, units })
}

/// Pick one non-reference frame uniformly and return the minimal set of
/// units that reconstructs it. Deterministic for a fixed seed.
pub fn sample_random_path(gop_size: usize, seed: u64) -> Result<RandomPath> {
    check_gop_size(gop_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaf = 2 * rng.gen_range(0..gop_size / 2) + 1;
    path_for_leaf(gop_size, leaf)
}

/// All random paths of a GoP, one per odd offset.
pub fn enumerate_leaves(gop_size: usize) -> Result<Vec<RandomPath>> {
    check_gop_size(gop_size)?;
    if gop_size > 64 {
        return Err(Error::InvalidInput(format!("gop {gop_size} too large to enumerate")));
    }
    (1..gop_size).step_by(2).map(|leaf| path_for_leaf(gop_size, leaf)).collect()
}

/// CTC-style rule mapping frame rate to GoP size: 32 at 30 fps, else 64.
pub fn gop_size_for_fps(fps: u32) -> usize {
    if fps == 30 {
        32
    } else {
        64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn level_formula() {
        assert_eq!(hierarchy_level(8, 4).unwrap(), 1);
        assert_eq!(hierarchy_level(8, 6).unwrap(), 2);
        assert_eq!(hierarchy_level(32, 1).unwrap(), 5);
        assert_eq!(hierarchy_level(8, 0).unwrap(), 0);
        assert_eq!(hierarchy_level(8, 8).unwrap(), 0);
    }

    #[test]
    fn level_rejects_bad_gop() {
        assert!(matches!(hierarchy_level(12, 3), Err(Error::InvalidGop(12))));
    }

    #[test]
    fn canonical_decode_order_gop8() {
        let schedule = build_schedule(9, 8, false).unwrap();
        let order: Vec<(usize, FrameKind, u8)> =
            schedule.units.iter().map(|u| (u.t, u.kind, u.level)).collect();
        assert_eq!(
            order,
            vec![
                (0, FrameKind::Intra, 0),
                (8, FrameKind::Intra, 0),
                (4, FrameKind::Bidir, 1),
                (2, FrameKind::Bidir, 2),
                (6, FrameKind::Bidir, 2),
                (1, FrameKind::Bidir, 3),
                (3, FrameKind::Bidir, 3),
                (5, FrameKind::Bidir, 3),
                (7, FrameKind::Bidir, 3),
            ]
        );
    }

    #[test]
    fn ctc_like_schedule() {
        let schedule = build_schedule(129, 32, false).unwrap();
        let intra: Vec<usize> = schedule
            .units
            .iter()
            .filter(|u| u.kind == FrameKind::Intra)
            .map(|u| u.t)
            .collect();
        assert_eq!(intra, vec![0, 32, 64, 96, 128]);
        assert_eq!(schedule.units.iter().filter(|u| u.kind == FrameKind::Bidir).count(), 124);
    }

    #[test]
    fn misaligned_without_truncate_errors() {
        assert!(matches!(build_schedule(10, 8, false), Err(Error::ScheduleAlignment(_))));
        let truncated = build_schedule(10, 8, true).unwrap();
        assert_eq!(truncated.n_frames(), 9);
    }

    #[test]
    fn bidir_invariants_hold() {
        let schedule = build_schedule(33, 16, false).unwrap();
        for unit in &schedule.units {
            if unit.kind == FrameKind::Bidir {
                let (p, f) = (unit.p.unwrap(), unit.f.unwrap());
                assert_eq!(f - p, 2 * unit.delta);
                assert_eq!(unit.t, p + unit.delta);
                assert_eq!(unit.level as u32, (16usize / unit.delta).trailing_zeros());
            }
        }
    }

    #[test]
    fn path_for_fig_leaf() {
        let path = path_for_leaf(8, 5).unwrap();
        let got: Vec<(usize, usize, usize)> =
            path.units.iter().map(|u| (u.t, u.p.unwrap(), u.f.unwrap())).collect();
        assert_eq!(got, vec![(4, 0, 8), (6, 4, 8), (5, 4, 6)]);
    }

    #[test]
    fn gop2_single_leaf() {
        let paths = enumerate_leaves(2).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].leaf, 1);
        assert_eq!(paths[0].units.len(), 1);
        assert_eq!(paths[0].units[0].t, 1);
    }

    #[test]
    fn path_lengths_and_levels() {
        for gop in [2usize, 4, 8, 16, 32] {
            let n = gop.trailing_zeros() as usize;
            for path in enumerate_leaves(gop).unwrap() {
                assert_eq!(path.units.len(), n);
                let levels: Vec<u8> = path.units.iter().map(|u| u.level).collect();
                assert_eq!(levels, (1..=n as u8).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn gop4_leaves() {
        let paths = enumerate_leaves(4).unwrap();
        let leaves: Vec<usize> = paths.iter().map(|p| p.leaf).collect();
        assert_eq!(leaves, vec![1, 3]);
        let ts: Vec<Vec<usize>> =
            paths.iter().map(|p| p.units.iter().map(|u| u.t).collect()).collect();
        assert_eq!(ts, vec![vec![2, 1], vec![2, 3]]);
    }

    #[test]
    fn path_membership_counts() {
        // frame at level k lies on 2^(n-k) of the 2^(n-1) paths
        let gop = 8usize;
        let n = 3u32;
        let mut membership: HashMap<usize, usize> = HashMap::new();
        for path in enumerate_leaves(gop).unwrap() {
            for unit in &path.units {
                *membership.entry(unit.t).or_default() += 1;
            }
        }
        for offset in 1..gop {
            let level = hierarchy_level(gop, offset).unwrap() as u32;
            assert_eq!(membership[&offset], 1 << (n - level), "offset {offset}");
        }
        assert_eq!(membership[&4], 4);
    }

    #[test]
    fn sampling_is_deterministic_and_uniform_support() {
        let a = sample_random_path(16, 42).unwrap();
        let b = sample_random_path(16, 42).unwrap();
        assert_eq!(a, b);
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200 {
            let path = sample_random_path(8, seed).unwrap();
            assert_eq!(path.leaf % 2, 1);
            seen.insert(path.leaf);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn fps_rule() {
        assert_eq!(gop_size_for_fps(30), 32);
        assert_eq!(gop_size_for_fps(60), 64);
        assert_eq!(gop_size_for_fps(24), 64);
    }

    proptest! {
        #[test]
        fn parent_before_child(gops in 1usize..6, n in 1u32..6) {
            let gop_size = 1usize << n;
            let n_frames = gops * gop_size + 1;
            let schedule = build_schedule(n_frames, gop_size, false).unwrap();
            let rank: HashMap<usize, usize> =
                schedule.units.iter().map(|u| (u.t, u.decode_rank)).collect();
            // coverage: each frame exactly once
            prop_assert_eq!(rank.len(), n_frames);
            for unit in &schedule.units {
                if let (Some(p), Some(f)) = (unit.p, unit.f) {
                    prop_assert!(rank[&p] < rank[&unit.t]);
                    prop_assert!(rank[&f] < rank[&unit.t]);
                }
            }
        }

        #[test]
        fn truncation_matches_alignment(n_frames in 2usize..200, n in 1u32..6) {
            let gop_size = 1usize << n;
            let schedule = build_schedule(n_frames, gop_size, true).unwrap();
            let kept = schedule.n_frames();
            prop_assert_eq!((kept - 1) % gop_size, 0);
            prop_assert!(kept <= n_frames);
            prop_assert!(n_frames - kept < gop_size);
        }
    }
}

//! Deterministic synthetic clips for calibration and testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::Frame;

/// Smooth diagonal gradient with a mild ripple; `index` only tags the
/// frame.
pub fn gradient_frame(width: usize, height: usize, bit_depth: u8, index: usize) -> Frame {
    let mut frame = Frame::new(width, height, bit_depth, index).unwrap();
    let max = frame.max_value() as usize;
    for y in 0..height {
        for x in 0..width {
            let v = (x * max / width + y * max / height) / 2 + (x / 7 + y / 5) % 9;
            frame.y.set(x, y, v.min(max) as u16);
        }
    }
    for (plane, phase) in [(&mut frame.u, 0usize), (&mut frame.v, 3)] {
        for y in 0..plane.height {
            for x in 0..plane.width {
                let v = max / 2 + (x + 2 * y + phase) % (max / 4 + 1);
                plane.set(x, y, v.min(max) as u16);
            }
        }
    }
    frame
}

/// Textured frame: ramps plus seeded noise, matchable by block search.
pub fn textured_frame(width: usize, height: usize, bit_depth: u8, index: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = Frame::new(width, height, bit_depth, index).unwrap();
    let max = frame.max_value() as u32;
    let span = max * 3 / 4;
    for y in 0..height {
        for x in 0..width {
            let base = ((x * 2 + y) as u32 * span / (2 * width + height) as u32) + max / 8;
            let noise = rng.gen_range(0..=max / 6);
            frame.y.set(x, y, (base + noise).min(max) as u16);
        }
    }
    for plane in [&mut frame.u, &mut frame.v] {
        for y in 0..plane.height {
            for x in 0..plane.width {
                let base = ((x + 2 * y) as u32 * span / (3 * width / 2) as u32) + max / 4;
                plane.set(x, y, (base + rng.gen_range(0..=max / 8)).min(max) as u16);
            }
        }
    }
    frame
}

/// Uniform random samples; incompressible by design.
pub fn noise_frame(width: usize, height: usize, bit_depth: u8, index: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = Frame::new(width, height, bit_depth, index).unwrap();
    let max = frame.max_value();
    for plane in [&mut frame.y, &mut frame.u, &mut frame.v] {
        for s in &mut plane.data {
            *s = rng.gen_range(0..=max);
        }
    }
    frame
}

/// Static clip: one textured frame repeated.
pub fn static_clip(width: usize, height: usize, n_frames: usize, seed: u64) -> Vec<Frame> {
    let base = textured_frame(width, height, 8, 0, seed);
    (0..n_frames)
        .map(|i| {
            let mut f = base.clone();
            f.frame_index = i;
            f
        })
        .collect()
}

/// Horizontal pan at `speed` luma pixels per frame over a wide textured
/// canvas, so motion search sees consistent content.
pub fn pan_clip_with(
    width: usize,
    height: usize,
    n_frames: usize,
    speed: usize,
    seed: u64,
) -> Vec<Frame> {
    let canvas_w = width + 2 * speed * n_frames;
    let canvas = textured_frame(canvas_w, height, 8, 0, seed);
    (0..n_frames)
        .map(|i| {
            let x0 = (speed * i) & !1; // even offset keeps chroma aligned
            let mut f = canvas.crop_patch(x0, 0, width, height).unwrap();
            f.frame_index = i;
            f
        })
        .collect()
}

/// Pan clip at the default 2 px/frame speed.
pub fn pan_clip(width: usize, height: usize, n_frames: usize) -> Vec<Frame> {
    pan_clip_with(width, height, n_frames, 2, 42)
}

/// Independent noise each frame; the worst case for prediction.
pub fn noise_clip(width: usize, height: usize, n_frames: usize, seed: u64) -> Vec<Frame> {
    (0..n_frames)
        .map(|i| noise_frame(width, height, 8, i, seed.wrapping_add(i as u64)))
        .collect()
}

/// Static clip of mid-gray plus low-amplitude noise; coefficients land
/// near the quantization threshold.
pub fn flat_noise_clip(
    width: usize,
    height: usize,
    n_frames: usize,
    amplitude: i32,
    seed: u64,
) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = Frame::new(width, height, 8, 0).unwrap();
    for plane in [&mut base.y, &mut base.u, &mut base.v] {
        for s in &mut plane.data {
            *s = (128 + rng.gen_range(-amplitude..=amplitude)) as u16;
        }
    }
    (0..n_frames)
        .map(|i| {
            let mut f = base.clone();
            f.frame_index = i;
            f
        })
        .collect()
}

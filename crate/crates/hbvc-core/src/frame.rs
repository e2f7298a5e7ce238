//! Raw planar YUV 4:2:0 frames and file I/O.
//!
//! Raw files carry no header; geometry comes from [`VideoMeta`]. 8-bit
//! samples are single bytes, 10-bit samples are little-endian 16-bit
//! containers. Plane order within a frame is Y, U, V.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::Path;

use crate::{Error, Result};

/// One sample plane. Samples are stored row-major without padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane { width, height, data: vec![0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.data[y * self.width + x] = v;
    }

    /// Read with coordinates clamped to the plane edges.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u16 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[u16] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// One YUV 4:2:0 picture, the unit of coding and measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
    pub bit_depth: u8,
    pub frame_index: usize,
}

impl Frame {
    /// Zero-filled frame. `width` and `height` are luma dimensions and must
    /// be even (4:2:0 chroma is half size in both directions).
    pub fn new(width: usize, height: usize, bit_depth: u8, frame_index: usize) -> Result<Self> {
        if width % 2 != 0 || height % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "frame dimensions must be even, got {width}x{height}"
            )));
        }
        if bit_depth != 8 && bit_depth != 10 {
            return Err(Error::UnsupportedFormat(format!("bit depth {bit_depth}")));
        }
        Ok(Frame {
            y: Plane::new(width, height),
            u: Plane::new(width / 2, height / 2),
            v: Plane::new(width / 2, height / 2),
            bit_depth,
            frame_index,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.y.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y.height
    }

    /// Largest legal sample value, `2^bit_depth - 1`.
    #[inline]
    pub fn max_value(&self) -> u16 {
        (1u16 << self.bit_depth) - 1
    }

    pub fn planes(&self) -> [&Plane; 3] {
        [&self.y, &self.u, &self.v]
    }

    fn check_samples(&self) -> Result<()> {
        let max = self.max_value();
        for plane in self.planes() {
            if plane.data.iter().any(|&s| s > max) {
                return Err(Error::InvalidInput(format!(
                    "sample exceeds {}-bit range", self.bit_depth
                )));
            }
        }
        Ok(())
    }

    /// Crop to the top-left `width`x`height` region (undoes padding).
    pub fn crop(&self, width: usize, height: usize) -> Result<Frame> {
        self.crop_patch(0, 0, width, height)
    }

    /// Extract the patch at `(x, y)` of size `width`x`height`. Offsets and
    /// sizes are luma-grid values and must be even.
    pub fn crop_patch(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Frame> {
        if x % 2 != 0 || y % 2 != 0 {
            return Err(Error::InvalidInput("patch offset must be even".into()));
        }
        if x + width > self.width() || y + height > self.height() {
            return Err(Error::InvalidInput(format!(
                "patch {width}x{height}+{x}+{y} exceeds frame {}x{}",
                self.width(),
                self.height()
            )));
        }
        let mut out = Frame::new(width, height, self.bit_depth, self.frame_index)?;
        copy_region(&self.y, &mut out.y, x, y);
        copy_region(&self.u, &mut out.u, x / 2, y / 2);
        copy_region(&self.v, &mut out.v, x / 2, y / 2);
        Ok(out)
    }
}

fn copy_region(src: &Plane, dst: &mut Plane, x0: usize, y0: usize) {
    for y in 0..dst.height {
        let src_row = &src.data[(y0 + y) * src.width + x0..(y0 + y) * src.width + x0 + dst.width];
        dst.data[y * dst.width..(y + 1) * dst.width].copy_from_slice(src_row);
    }
}

/// Geometry and length of a raw YUV file; raw files have no header of
/// their own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoMeta {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub fps: u32,
    pub frame_count: usize,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.bit_depth != 8 && self.bit_depth != 10 {
            return Err(Error::UnsupportedFormat(format!("bit depth {}", self.bit_depth)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidInput(format!(
                "geometry {}x{} below 16x16 minimum", self.width, self.height
            )));
        }
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "4:2:0 requires even dimensions, got {}x{}", self.width, self.height
            )));
        }
        if self.frame_count < 1 {
            return Err(Error::InvalidInput("frame_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Bytes occupied by one frame on disk.
    pub fn frame_byte_size(&self) -> usize {
        let samples = self.width * self.height * 3 / 2;
        match self.bit_depth {
            8 => samples,
            _ => samples * 2,
        }
    }
}

/// Read frames `range` (display order) from a raw YUV420 file.
pub fn read_yuv420(path: &Path, meta: &VideoMeta, range: Range<usize>) -> Result<Vec<Frame>> {
    meta.validate()?;
    if range.end > meta.frame_count {
        return Err(Error::InvalidInput(format!(
            "frame range {}..{} outside frame_count {}", range.start, range.end, meta.frame_count
        )));
    }
    let frame_size = meta.frame_byte_size() as u64;
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    if file_len < meta.frame_count as u64 * frame_size {
        return Err(Error::TruncatedInput(format!(
            "{} holds {} bytes, need {} for {} frames",
            path.display(),
            file_len,
            meta.frame_count as u64 * frame_size,
            meta.frame_count
        )));
    }
    let mut reader = BufReader::new(file);
    reader.seek(SeekFrom::Start(range.start as u64 * frame_size))?;

    let mut frames = Vec::with_capacity(range.len());
    for index in range {
        let mut frame = Frame::new(meta.width, meta.height, meta.bit_depth, index)?;
        for plane in [&mut frame.y, &mut frame.u, &mut frame.v] {
            read_plane(&mut reader, plane, meta.bit_depth)?;
        }
        frames.push(frame);
    }
    Ok(frames)
}

fn read_plane<R: Read>(reader: &mut R, plane: &mut Plane, bit_depth: u8) -> Result<()> {
    if bit_depth == 8 {
        let mut buf = vec![0u8; plane.data.len()];
        reader.read_exact(&mut buf)?;
        for (dst, src) in plane.data.iter_mut().zip(buf) {
            *dst = src as u16;
        }
    } else {
        let mut buf = vec![0u8; plane.data.len() * 2];
        reader.read_exact(&mut buf)?;
        for (dst, src) in plane.data.iter_mut().zip(buf.chunks_exact(2)) {
            *dst = u16::from_le_bytes([src[0], src[1]]);
        }
    }
    Ok(())
}

/// Write frames to a raw YUV420 file; returns the byte count written.
pub fn write_yuv420(path: &Path, frames: &[Frame]) -> Result<u64> {
    if let Some(first) = frames.first() {
        for frame in frames {
            if frame.width() != first.width()
                || frame.height() != first.height()
                || frame.bit_depth != first.bit_depth
            {
                return Err(Error::InconsistentInput(format!(
                    "frame {} geometry differs from frame {}",
                    frame.frame_index, first.frame_index
                )));
            }
            frame.check_samples()?;
        }
    }
    let mut writer = BufWriter::new(File::create(path)?);
    let mut written = 0u64;
    for frame in frames {
        for plane in frame.planes() {
            written += write_plane(&mut writer, plane, frame.bit_depth)?;
        }
    }
    writer.flush()?;
    Ok(written)
}

fn write_plane<W: Write>(writer: &mut W, plane: &Plane, bit_depth: u8) -> Result<u64> {
    if bit_depth == 8 {
        let buf: Vec<u8> = plane.data.iter().map(|&s| s as u8).collect();
        writer.write_all(&buf)?;
        Ok(buf.len() as u64)
    } else {
        let mut buf = Vec::with_capacity(plane.data.len() * 2);
        for &s in &plane.data {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        writer.write_all(&buf)?;
        Ok(buf.len() as u64)
    }
}

/// Round frame dimensions up to multiples of `block` by edge replication.
/// Already-aligned frames are returned unchanged; crop back with
/// [`Frame::crop`] after decoding.
pub fn pad_to_block_grid(frame: &Frame, block: usize) -> Result<Frame> {
    if !block.is_power_of_two() {
        return Err(Error::InvalidInput(format!("block size {block} is not a power of two")));
    }
    let pad_w = frame.width().next_multiple_of(block);
    let pad_h = frame.height().next_multiple_of(block);
    if pad_w == frame.width() && pad_h == frame.height() {
        return Ok(frame.clone());
    }
    let mut out = Frame::new(pad_w, pad_h, frame.bit_depth, frame.frame_index)?;
    pad_plane(&frame.y, &mut out.y);
    pad_plane(&frame.u, &mut out.u);
    pad_plane(&frame.v, &mut out.v);
    Ok(out)
}

fn pad_plane(src: &Plane, dst: &mut Plane) {
    for y in 0..dst.height {
        let sy = y.min(src.height - 1);
        for x in 0..dst.width {
            let sx = x.min(src.width - 1);
            dst.data[y * dst.width + x] = src.data[sy * src.width + sx];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_frame(width: usize, height: usize, bit_depth: u8, index: usize, seed: u64) -> Frame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut frame = Frame::new(width, height, bit_depth, index).unwrap();
        let max = frame.max_value();
        for plane in [&mut frame.y, &mut frame.u, &mut frame.v] {
            for s in &mut plane.data {
                *s = rng.gen_range(0..=max);
            }
        }
        frame
    }

    #[test]
    fn frame_byte_sizes() {
        let meta8 = VideoMeta { width: 4, height: 2, bit_depth: 8, fps: 30, frame_count: 2 };
        assert_eq!(meta8.frame_byte_size(), 12);
        let meta10 = VideoMeta { width: 4, height: 2, bit_depth: 10, fps: 30, frame_count: 2 };
        assert_eq!(meta10.frame_byte_size(), 24);
        let hd = VideoMeta { width: 1920, height: 1080, bit_depth: 8, fps: 30, frame_count: 1 };
        assert_eq!(hd.frame_byte_size(), 3_110_400);
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.yuv");
        let frames: Vec<Frame> = (0..3).map(|i| random_frame(16, 16, 8, i, i as u64)).collect();
        let written = write_yuv420(&path, &frames).unwrap();
        assert_eq!(written, 3 * 16 * 16 * 3 / 2);

        let meta = VideoMeta { width: 16, height: 16, bit_depth: 8, fps: 30, frame_count: 3 };
        let back = read_yuv420(&path, &meta, 0..3).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn round_trip_10bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip10.yuv");
        let frames: Vec<Frame> = (0..2).map(|i| random_frame(16, 16, 10, i, 7 + i as u64)).collect();
        write_yuv420(&path, &frames).unwrap();
        let meta = VideoMeta { width: 16, height: 16, bit_depth: 10, fps: 30, frame_count: 2 };
        assert_eq!(read_yuv420(&path, &meta, 0..2).unwrap(), frames);
    }

    #[test]
    fn empty_sequence_writes_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.yuv");
        assert_eq!(write_yuv420(&path, &[]).unwrap(), 0);
    }

    #[test]
    fn out_of_range_samples_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut frame = Frame::new(16, 16, 10, 0).unwrap();
        frame.y.data[5] = 1024;
        let err = write_yuv420(&dir.path().join("bad.yuv"), &[frame]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![
            Frame::new(16, 16, 8, 0).unwrap(),
            Frame::new(32, 16, 8, 1).unwrap(),
        ];
        let err = write_yuv420(&dir.path().join("mix.yuv"), &frames).unwrap_err();
        assert!(matches!(err, Error::InconsistentInput(_)));
    }

    #[test]
    fn short_file_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.yuv");
        std::fs::write(&path, vec![0u8; 20]).unwrap();
        let meta = VideoMeta { width: 16, height: 16, bit_depth: 8, fps: 30, frame_count: 2 };
        let err = read_yuv420(&path, &meta, 0..2).unwrap_err();
        assert!(matches!(err, Error::TruncatedInput(_)));
    }

    #[test]
    fn unsupported_bit_depth_rejected() {
        let meta = VideoMeta { width: 16, height: 16, bit_depth: 12, fps: 30, frame_count: 1 };
        assert!(matches!(meta.validate(), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn padding_replicates_edges() {
        let mut frame = Frame::new(6, 6, 8, 0).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                frame.y.set(x, y, (10 * y + x) as u16);
            }
        }
        let padded = pad_to_block_grid(&frame, 8).unwrap();
        assert_eq!(padded.width(), 8);
        assert_eq!(padded.height(), 8);
        // replicated last column and row
        assert_eq!(padded.y.get(7, 2), frame.y.get(5, 2));
        assert_eq!(padded.y.get(3, 7), frame.y.get(3, 5));
        assert_eq!(padded.y.get(7, 7), frame.y.get(5, 5));
        // crop is the inverse on the original region
        assert_eq!(padded.crop(6, 6).unwrap(), frame);
    }

    #[test]
    fn padding_is_identity_when_aligned() {
        let frame = random_frame(32, 16, 8, 0, 3);
        let padded = pad_to_block_grid(&frame, 16).unwrap();
        assert_eq!(padded, frame);
    }

    #[test]
    fn padding_1080p_to_16() {
        let frame = Frame::new(1920, 1080, 8, 0).unwrap();
        let padded = pad_to_block_grid(&frame, 16).unwrap();
        assert_eq!((padded.width(), padded.height()), (1920, 1088));
    }
}

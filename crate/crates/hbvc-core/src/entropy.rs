//! Range coding of quantized symbols under per-band probability models,
//! with probability-based skipping.
//!
//! Models are discretized two-sided geometric distributions over
//! `[-SUPPORT, SUPPORT]` plus an escape symbol, at 16-bit probability
//! resolution. A band whose most-probable mass reaches the skip threshold
//! is never coded at all: both sides derive that from the shared model, so
//! no mask bits ride the stream and the decoder substitutes the
//! most-probable symbol deterministically.

use crate::{Error, Result};

/// Symbols in `[-SUPPORT, SUPPORT]` code directly; anything outside goes
/// through the escape path.
pub const SUPPORT: i32 = 255;

const PROB_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;

/// Number of entries in the fixed scale table frame headers index into.
pub const SCALE_TABLE_SIZE: usize = 256;

/// Fixed table of geometric decay parameters, spaced log-uniformly. Index
/// 0 is the most peaked model (heaviest mass on zero).
pub fn scale_table() -> &'static [f64; SCALE_TABLE_SIZE] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[f64; SCALE_TABLE_SIZE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0.0; SCALE_TABLE_SIZE];
        let (lo, hi) = (1e-4f64, 0.999f64);
        let step = (hi / lo).ln() / (SCALE_TABLE_SIZE - 1) as f64;
        for (i, v) in table.iter_mut().enumerate() {
            *v = lo * (step * i as f64).exp();
        }
        table
    })
}

/// Pick the table scale whose two-sided geometric matches the mean
/// absolute symbol value of `symbols`.
pub fn fit_scale_index(symbols: impl Iterator<Item = i32>) -> u8 {
    let (mut count, mut abs_sum) = (0u64, 0u64);
    for s in symbols {
        count += 1;
        abs_sum += s.unsigned_abs().min(SUPPORT as u32 + 1) as u64;
    }
    if count == 0 || abs_sum == 0 {
        return 0;
    }
    let mean = abs_sum as f64 / count as f64;
    // mean |X| of a two-sided geometric with decay theta is
    // 2 theta / ((1-theta)(1+theta)); invert for theta
    let theta = ((1.0 + mean * mean).sqrt() - 1.0) / mean;
    let table = scale_table();
    let target = theta.clamp(table[0], table[SCALE_TABLE_SIZE - 1]).ln();
    let lo_ln = table[0].ln();
    let step = (table[SCALE_TABLE_SIZE - 1] / table[0]).ln() / (SCALE_TABLE_SIZE - 1) as f64;
    let idx = ((target - lo_ln) / step).round();
    idx.clamp(0.0, (SCALE_TABLE_SIZE - 1) as f64) as u8
}

/// Frozen per-band distribution: integer frequencies summing to 65536 over
/// `2*SUPPORT + 2` entries (the support plus one escape slot at the end).
#[derive(Debug, Clone)]
pub struct SymbolModel {
    /// Cumulative frequencies, length `n_entries + 1`, strictly increasing,
    /// `cdf[0] = 0`, `cdf[n] = 65536`.
    cdf: Vec<u32>,
    most_probable: i32,
    max_freq: u32,
}

impl SymbolModel {
    /// Build from the fixed scale table.
    pub fn from_scale_index(index: u8) -> SymbolModel {
        let theta = scale_table()[index as usize];
        let n = (2 * SUPPORT + 1) as usize;
        let mut weights = Vec::with_capacity(n + 1);
        for value in -SUPPORT..=SUPPORT {
            weights.push(theta.powi(value.abs()));
        }
        // escape gets the tail mass of the geometric beyond the support
        weights.push(2.0 * theta.powi(SUPPORT + 1) / (1.0 - theta));
        SymbolModel::from_weights(&weights)
    }

    /// Build from raw nonnegative weights over `[-SUPPORT, SUPPORT]`
    /// followed by the escape weight. Weights are normalized to 65536 with
    /// every entry at least 1.
    pub fn from_weights(weights: &[f64]) -> SymbolModel {
        let n = weights.len();
        assert_eq!(n, (2 * SUPPORT + 2) as usize, "weights must cover support + escape");
        let total: f64 = weights.iter().sum();
        let budget = PROB_TOTAL - n as u32;
        let mut freqs: Vec<u32> = weights
            .iter()
            .map(|&w| 1 + (w.max(0.0) / total * budget as f64).floor() as u32)
            .collect();
        // deterministic fixup: adjust the largest entry to hit the total
        let sum: i64 = freqs.iter().map(|&f| f as i64).sum();
        let idx_max = (0..n).max_by_key(|&i| (freqs[i], std::cmp::Reverse(i))).unwrap();
        let corrected = freqs[idx_max] as i64 + PROB_TOTAL as i64 - sum;
        assert!(corrected >= 1, "correction drove a frequency below 1");
        freqs[idx_max] = corrected as u32;

        let mut cdf = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &f in &freqs {
            acc += f;
            cdf.push(acc);
        }
        let (mut best_i, mut best_f) = (0usize, 0u32);
        for (i, &f) in freqs.iter().enumerate().take(n - 1) {
            if f > best_f {
                best_f = f;
                best_i = i;
            }
        }
        SymbolModel { cdf, most_probable: best_i as i32 - SUPPORT, max_freq: best_f }
    }

    #[inline]
    fn entry_of(symbol: i32) -> usize {
        if symbol.abs() > SUPPORT {
            (2 * SUPPORT + 1) as usize
        } else {
            (symbol + SUPPORT) as usize
        }
    }

    #[inline]
    fn span(&self, entry: usize) -> (u32, u32) {
        (self.cdf[entry], self.cdf[entry + 1] - self.cdf[entry])
    }

    /// The symbol the decoder substitutes for skipped positions.
    #[inline]
    pub fn most_probable(&self) -> i32 {
        self.most_probable
    }

    /// Probability of the most probable symbol, in 1/65536 units.
    #[inline]
    pub fn max_probability(&self) -> u32 {
        self.max_freq
    }

    /// Information content of `symbol` in bits (escape cost included).
    pub fn bits(&self, symbol: i32) -> f64 {
        let entry = Self::entry_of(symbol);
        let (_, freq) = self.span(entry);
        let mut bits = -(freq as f64 / PROB_TOTAL as f64).log2();
        if entry == (2 * SUPPORT + 1) as usize {
            bits += 32.0;
        }
        bits
    }

    fn find(&self, target: u32) -> usize {
        // cdf is strictly increasing; binary search for the containing span
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Skip rule: a band is dropped from the coded stream when its model's
/// most-probable mass is at least `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipPolicy {
    /// Threshold in [0.5, 1.0]; 1.0 disables skipping.
    pub tau: f64,
}

impl SkipPolicy {
    pub fn new(tau: f64) -> Result<SkipPolicy> {
        if !(0.5..=1.0).contains(&tau) {
            return Err(Error::InvalidInput(format!("tau {tau} outside [0.5, 1.0]")));
        }
        Ok(SkipPolicy { tau })
    }

    pub fn disabled() -> SkipPolicy {
        SkipPolicy { tau: 1.0 }
    }

    /// Integer threshold in 1/65536 units; a band skips when
    /// `max_probability >= threshold`.
    #[inline]
    pub fn threshold(&self) -> u32 {
        (self.tau * PROB_TOTAL as f64).ceil() as u32
    }

    #[inline]
    pub fn skips(&self, model: &SymbolModel) -> bool {
        model.max_probability() >= self.threshold()
    }
}

// LZMA-style carry-tracking byte renormalization.
struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0);
        let r = self.range >> 16;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 5 {
            return Err(Error::Corruption(format!("payload of {} bytes too short", input.len())));
        }
        let mut code = 0u64;
        for &b in &input[..5] {
            code = (code << 8) | b as u64;
        }
        Ok(RangeDecoder { code: code as u32, range: u32::MAX, input, pos: 5 })
    }

    fn decode_target(&mut self) -> u32 {
        self.range >>= 16;
        (self.code / self.range).min(PROB_TOTAL - 1)
    }

    fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        self.code -= cum * self.range;
        self.range *= freq;
        while self.range < TOP {
            let byte = if self.pos < self.input.len() {
                let b = self.input[self.pos];
                self.pos += 1;
                b
            } else {
                return Err(Error::Corruption("payload exhausted mid-decode".into()));
            };
            self.code = (self.code << 8) | byte as u32;
            self.range <<= 8;
        }
        Ok(())
    }
}

/// Outcome of encoding one symbol stream.
#[derive(Debug, Clone)]
pub struct EncodeResult {
    pub bytes: Vec<u8>,
    /// The stream the decoder will reproduce: skipped positions already
    /// carry their substituted values.
    pub post_skip: Vec<i32>,
    pub skipped: usize,
}

fn model_for<'m>(models: &'m [SymbolModel], band: u8) -> Result<&'m SymbolModel> {
    models
        .get(band as usize)
        .ok_or_else(|| Error::InvalidInput(format!("band {band} has no model")))
}

/// Range-encode `symbols` (parallel to `bands`) under per-band models.
/// Bands whose most-probable mass reaches `policy.tau` are skipped.
pub fn encode_symbols(
    symbols: &[i32],
    bands: &[u8],
    models: &[SymbolModel],
    policy: SkipPolicy,
) -> Result<EncodeResult> {
    if symbols.len() != bands.len() {
        return Err(Error::InvalidInput("symbols and bands length mismatch".into()));
    }
    let mut encoder = RangeEncoder::new();
    let mut post_skip = Vec::with_capacity(symbols.len());
    let mut skipped = 0usize;
    let mut coded = 0usize;
    for (&symbol, &band) in symbols.iter().zip(bands) {
        let model = model_for(models, band)?;
        if policy.skips(model) {
            post_skip.push(model.most_probable());
            skipped += 1;
            continue;
        }
        let entry = SymbolModel::entry_of(symbol);
        let (cum, freq) = model.span(entry);
        encoder.encode(cum, freq);
        if entry == (2 * SUPPORT + 1) as usize {
            // escape: raw 32-bit zigzag in two uniform halves
            let zz = zigzag(symbol);
            encoder.encode(zz >> 16, 1);
            encoder.encode(zz & 0xFFFF, 1);
        }
        post_skip.push(symbol);
        coded += 1;
    }
    let bytes = if coded == 0 { Vec::new() } else { encoder.finish() };
    Ok(EncodeResult { bytes, post_skip, skipped })
}

/// Exact inverse of [`encode_symbols`]: returns the post-skip stream.
pub fn decode_symbols(
    bytes: &[u8],
    bands: &[u8],
    models: &[SymbolModel],
    policy: SkipPolicy,
    count: usize,
) -> Result<Vec<i32>> {
    if count != bands.len() {
        return Err(Error::InvalidInput(format!(
            "count {count} does not match {} band ids", bands.len()
        )));
    }
    let mut decoder: Option<RangeDecoder> = None;
    let mut out = Vec::with_capacity(count);
    for &band in bands {
        let model = model_for(models, band)?;
        if policy.skips(model) {
            out.push(model.most_probable());
            continue;
        }
        let dec = match decoder.as_mut() {
            Some(d) => d,
            None => {
                decoder = Some(RangeDecoder::new(bytes)?);
                decoder.as_mut().unwrap()
            }
        };
        let target = dec.decode_target();
        let entry = model.find(target);
        let (cum, freq) = model.span(entry);
        dec.consume(cum, freq)?;
        if entry == (2 * SUPPORT + 1) as usize {
            let hi = {
                let t = dec.decode_target();
                dec.consume(t, 1)?;
                t
            };
            let lo = {
                let t = dec.decode_target();
                dec.consume(t, 1)?;
                t
            };
            out.push(unzigzag((hi << 16) | lo));
        } else {
            out.push(entry as i32 - SUPPORT);
        }
    }
    Ok(out)
}

/// Model cross-entropy of the stream in bits, skipped bands excluded.
/// Tracks the real coded length to within 1% on streams of 10 kB and up.
pub fn estimate_bits(
    symbols: &[i32],
    bands: &[u8],
    models: &[SymbolModel],
    policy: SkipPolicy,
) -> Result<f64> {
    if symbols.len() != bands.len() {
        return Err(Error::InvalidInput("symbols and bands length mismatch".into()));
    }
    let mut bits = 0.0f64;
    for (&symbol, &band) in symbols.iter().zip(bands) {
        let model = model_for(models, band)?;
        if !policy.skips(model) {
            bits += model.bits(symbol);
        }
    }
    Ok(bits)
}

#[inline]
fn zigzag(v: i32) -> u32 {
    ((v << 1) ^ (v >> 31)) as u32
}

#[inline]
fn unzigzag(u: u32) -> i32 {
    ((u >> 1) as i32) ^ -((u & 1) as i32)
}

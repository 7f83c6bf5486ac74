//! The six built-in pixel filters.
//!
//! All arithmetic is integer with round-half-up, and neighbourhood filters
//! replicate edge pixels, so outputs are identical on every platform.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::crypto::{measure_stage, Measurement, Role};
use crate::frame::RawFrame;
use crate::provenance::Fixed;

/// Largest accepted blur/sharpen kernel side.
pub const MAX_KERNEL: i64 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FilterKind {
    Blur,
    Sharpen,
    Brightness,
    Grayscale,
    Denoise,
    WhiteBalance,
}

impl FilterKind {
    pub const ALL: [FilterKind; 6] = [
        FilterKind::Blur,
        FilterKind::Sharpen,
        FilterKind::Brightness,
        FilterKind::Grayscale,
        FilterKind::Denoise,
        FilterKind::WhiteBalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Blur => "blur",
            FilterKind::Sharpen => "sharpen",
            FilterKind::Brightness => "brightness",
            FilterKind::Grayscale => "grayscale",
            FilterKind::Denoise => "denoise",
            FilterKind::WhiteBalance => "white_balance",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            FilterKind::Blur | FilterKind::Sharpen | FilterKind::Brightness => 1,
            _ => 0,
        }
    }

    /// Default parameters: 7x7 kernels and a 0.2 brightness decrease.
    pub fn default_parameters(self) -> Vec<Fixed> {
        match self {
            FilterKind::Blur | FilterKind::Sharpen => vec![Fixed::from_int(7)],
            FilterKind::Brightness => vec![Fixed::from_ratio(-2, 10).expect("nonzero")],
            _ => Vec::new(),
        }
    }

    /// Parameter schema, part of the stage measurement.
    pub fn parameter_schema(self) -> &'static [u8] {
        match self {
            FilterKind::Blur | FilterKind::Sharpen => b"kernel:odd-int[3,63]",
            FilterKind::Brightness => b"delta:fixed16[-1,1]",
            _ => b"",
        }
    }

    pub fn code_identity(self) -> &'static [u8] {
        match self {
            FilterKind::Blur => b"vron-filter/blur/box-v1",
            FilterKind::Sharpen => b"vron-filter/sharpen/unsharp-box-v1",
            FilterKind::Brightness => b"vron-filter/brightness/v1",
            FilterKind::Grayscale => b"vron-filter/grayscale/bt601-v1",
            FilterKind::Denoise => b"vron-filter/denoise/median3-v1",
            FilterKind::WhiteBalance => b"vron-filter/white_balance/grayworld-v1",
        }
    }

    pub fn measurement(self) -> Measurement {
        measure_stage(Role::Filter, self.code_identity(), self.parameter_schema())
            .expect("identity is nonempty")
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("bad parameters for {filter}: {reason}")]
    BadParameters {
        filter: &'static str,
        reason: &'static str,
    },
    #[error("malformed frame")]
    MalformedFrame,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub parameters: Vec<Fixed>,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, parameters: Vec<Fixed>) -> Result<Self, FilterError> {
        let s = Self { kind, parameters };
        s.validate()?;
        Ok(s)
    }

    pub fn with_defaults(kind: FilterKind) -> Self {
        Self {
            kind,
            parameters: kind.default_parameters(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn bad(&self, reason: &'static str) -> FilterError {
        FilterError::BadParameters {
            filter: self.kind.name(),
            reason,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.parameters.len() != self.kind.arity() {
            return Err(self.bad("wrong number of parameters"));
        }
        match self.kind {
            FilterKind::Blur | FilterKind::Sharpen => {
                self.kernel()?;
            }
            FilterKind::Brightness => {
                let d = self.parameters[0];
                if d < Fixed::from_int(-1) || d > Fixed::ONE {
                    return Err(self.bad("delta must lie in [-1, 1]"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn kernel(&self) -> Result<usize, FilterError> {
        match self.parameters[0].to_int() {
            Some(k) if (3..=MAX_KERNEL).contains(&k) && k % 2 == 1 => Ok(k as usize),
            _ => Err(self.bad("kernel size must be an odd integer in [3, 63]")),
        }
    }
}

/// Applies one filter. Output has the input's dimensions.
pub fn apply_pixel_filter(spec: &FilterSpec, frame: &RawFrame) -> Result<RawFrame, FilterError> {
    spec.validate()?;
    if !frame.is_well_formed() {
        return Err(FilterError::MalformedFrame);
    }
    let pixels = match spec.kind {
        FilterKind::Blur => box_blur(frame, spec.kernel()?),
        FilterKind::Sharpen => sharpen(frame, spec.kernel()?),
        FilterKind::Brightness => brightness(frame, spec.parameters[0]),
        FilterKind::Grayscale => grayscale(frame),
        FilterKind::Denoise => median3(frame),
        FilterKind::WhiteBalance => gray_world(frame),
    };
    Ok(RawFrame {
        width: frame.width,
        height: frame.height,
        pixels,
    })
}

/// Applies `chain` in order.
pub fn apply_chain(chain: &[FilterSpec], frame: &RawFrame) -> Result<RawFrame, FilterError> {
    let mut out = frame.clone();
    for spec in chain {
        out = apply_pixel_filter(spec, &out)?;
    }
    Ok(out)
}

/// Windowed sums over a k x k neighbourhood with edge replication, computed
/// separably (rows, then columns).
fn box_sums(frame: &RawFrame, k: usize) -> Vec<u32> {
    let w = frame.width as usize;
    let h = frame.height as usize;
    let r = (k / 2) as isize;
    let src = &frame.pixels;

    let mut rows = vec![0u32; w * h * 3];
    let mut prefix = vec![0u32; w + 2 * r as usize + 1];
    for y in 0..h {
        let line = &src[y * w * 3..(y + 1) * w * 3];
        for c in 0..3 {
            // prefix sums over the edge-padded row
            for i in 0..w + 2 * r as usize {
                let x = (i as isize - r).clamp(0, w as isize - 1) as usize;
                prefix[i + 1] = prefix[i] + line[x * 3 + c] as u32;
            }
            for x in 0..w {
                rows[(y * w + x) * 3 + c] = prefix[x + k] - prefix[x];
            }
        }
    }

    let mut out = vec![0u32; w * h * 3];
    let stride = w * 3;
    let mut col = vec![0u32; h + 2 * r as usize + 1];
    for x in 0..stride {
        for i in 0..h + 2 * r as usize {
            let y = (i as isize - r).clamp(0, h as isize - 1) as usize;
            col[i + 1] = col[i] + rows[y * stride + x];
        }
        for y in 0..h {
            out[y * stride + x] = col[y + k] - col[y];
        }
    }
    out
}

fn box_blur(frame: &RawFrame, k: usize) -> Vec<u8> {
    let area = (k * k) as u32;
    box_sums(frame, k)
        .into_iter()
        .map(|s| ((s + area / 2) / area) as u8)
        .collect()
}

/// Unsharp mask: 2*in - blur(in), clamped.
fn sharpen(frame: &RawFrame, k: usize) -> Vec<u8> {
    let blurred = box_blur(frame, k);
    frame
        .pixels
        .iter()
        .zip(blurred)
        .map(|(&p, b)| (2 * p as i32 - b as i32).clamp(0, 255) as u8)
        .collect()
}

/// Adds round-half-up(delta * 255) to every channel.
fn brightness(frame: &RawFrame, delta: Fixed) -> Vec<u8> {
    let scaled = delta.0 * 255;
    let one = 1i64 << Fixed::FRAC_BITS;
    let offset = (scaled + one / 2).div_euclid(one) as i32;
    frame
        .pixels
        .iter()
        .map(|&p| (p as i32 + offset).clamp(0, 255) as u8)
        .collect()
}

/// BT.601 luma replicated to all channels.
fn grayscale(frame: &RawFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.pixels.len());
    for px in frame.pixels.chunks_exact(3) {
        let y = (299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32 + 500) / 1000;
        let y = y.min(255) as u8;
        out.extend_from_slice(&[y, y, y]);
    }
    out
}

/// Per-channel 3x3 median with edge replication.
fn median3(frame: &RawFrame) -> Vec<u8> {
    let w = frame.width as isize;
    let h = frame.height as isize;
    let src = &frame.pixels;
    let mut out = vec![0u8; src.len()];
    let mut window = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut n = 0;
                for dy in -1..=1 {
                    let yy = (y + dy).clamp(0, h - 1);
                    for dx in -1..=1 {
                        let xx = (x + dx).clamp(0, w - 1);
                        window[n] = src[((yy * w + xx) * 3) as usize + c];
                        n += 1;
                    }
                }
                window.sort_unstable();
                out[((y * w + x) * 3) as usize + c] = window[4];
            }
        }
    }
    out
}

/// Gray-world white balance: channel gain = mean(all) / mean(channel).
/// A channel with zero mean is left unchanged.
fn gray_world(frame: &RawFrame) -> Vec<u8> {
    let mut sums = [0u64; 3];
    for px in frame.pixels.chunks_exact(3) {
        for c in 0..3 {
            sums[c] += px[c] as u64;
        }
    }
    let total: u64 = sums.iter().sum();
    let mut out = Vec::with_capacity(frame.pixels.len());
    for px in frame.pixels.chunks_exact(3) {
        for c in 0..3 {
            let v = px[c] as u64;
            let scaled = if sums[c] == 0 {
                v
            } else {
                // round(v * total / (3 * sums[c])), half up
                (2 * v * total + 3 * sums[c]) / (6 * sums[c])
            };
            out.push(scaled.min(255) as u8);
        }
    }
    out
}

//! Raw RGB frames and the lossless segment container.
//!
//! Container layout (all integers big-endian):
//!
//! ```text
//! "VRNC" | version u8 | width u32 | height u32 | frame_count u32
//!        | fps_num u32 | fps_den u32 | frames (RGB8, row-major)
//!        | audio_len u32 | audio bytes
//! ```

use alloc::vec::Vec;

use crate::codec::{DecodeError, Reader, Writer};
use crate::provenance::FrameRate;

pub const CONTAINER_MAGIC: [u8; 4] = *b"VRNC";
pub const CONTAINER_VERSION: u8 = 1;
pub const CONTAINER_HEADER_LEN: usize = 4 + 1 + 4 * 5;

/// Side of the square block in the top-left corner of synthetic frames that
/// encodes the frame index.
pub const WATERMARK_SIZE: u32 = 16;
const WATERMARK_MARKER: u8 = 0x5a;

#[derive(Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl core::fmt::Debug for RawFrame {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RawFrame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("len", &self.pixels.len())
            .finish()
    }
}

impl RawFrame {
    /// `None` if the buffer length does not match the dimensions.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        let f = Self {
            width,
            height,
            pixels,
        };
        f.is_well_formed().then_some(f)
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn byte_len(width: u32, height: u32) -> Option<usize> {
        (width as usize)
            .checked_mul(height as usize)?
            .checked_mul(3)
    }

    pub fn is_well_formed(&self) -> bool {
        self.width > 0
            && self.height > 0
            && Self::byte_len(self.width, self.height) == Some(self.pixels.len())
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Frame encoding used inside stage messages: width, height, pixels.
    pub fn write(&self, w: &mut Writer) {
        w.u32(self.width).u32(self.height).raw(&self.pixels);
    }

    pub fn header_bytes(&self) -> [u8; 8] {
        let mut h = [0u8; 8];
        h[..4].copy_from_slice(&self.width.to_be_bytes());
        h[4..].copy_from_slice(&self.height.to_be_bytes());
        h
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let width = r.u32()?;
        let height = r.u32()?;
        let len = Self::byte_len(width, height)
            .filter(|_| width > 0 && height > 0)
            .ok_or(DecodeError::new(at, "invalid frame dimensions"))?;
        Ok(Self {
            width,
            height,
            pixels: r.take(len)?.to_vec(),
        })
    }
}

/// Decoded segment container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub width: u32,
    pub height: u32,
    pub frame_rate: FrameRate,
    pub frames: Vec<RawFrame>,
    pub audio: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContainerError {
    #[error("malformed container: {0}")]
    MalformedContainer(DecodeError),
    #[error("container has no frames")]
    EmptySegment,
    #[error("frames have mixed dimensions")]
    MixedDimensions,
    #[error("container field too large")]
    TooLarge,
}

impl From<DecodeError> for ContainerError {
    fn from(e: DecodeError) -> Self {
        ContainerError::MalformedContainer(e)
    }
}

impl Container {
    /// Checks that `frames` is nonempty, uniformly sized and well formed.
    pub fn new(
        frames: Vec<RawFrame>,
        frame_rate: FrameRate,
        audio: Option<Vec<u8>>,
    ) -> Result<Self, ContainerError> {
        let first = frames.first().ok_or(ContainerError::EmptySegment)?;
        let (width, height) = (first.width, first.height);
        if frames
            .iter()
            .any(|f| f.width != width || f.height != height || !f.is_well_formed())
        {
            return Err(ContainerError::MixedDimensions);
        }
        Ok(Self {
            width,
            height,
            frame_rate,
            frames,
            audio: audio.filter(|a| !a.is_empty()),
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>, ContainerError> {
        let frame_len = RawFrame::byte_len(self.width, self.height).ok_or(ContainerError::TooLarge)?;
        let audio = self.audio.as_deref().unwrap_or(&[]);
        let mut w = Writer::with_capacity(
            CONTAINER_HEADER_LEN + frame_len * self.frames.len() + 4 + audio.len(),
        );
        let count = u32::try_from(self.frames.len()).map_err(|_| ContainerError::TooLarge)?;
        w.raw(&CONTAINER_MAGIC)
            .u8(CONTAINER_VERSION)
            .u32(self.width)
            .u32(self.height)
            .u32(count)
            .u32(self.frame_rate.num)
            .u32(self.frame_rate.den);
        for f in &self.frames {
            w.raw(&f.pixels);
        }
        w.bytes("audio", audio).map_err(|_| ContainerError::TooLarge)?;
        Ok(w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ContainerError> {
        let header = ContainerHeader::parse(bytes)?;
        let mut r = Reader::at(&bytes[CONTAINER_HEADER_LEN..], CONTAINER_HEADER_LEN);
        let frame_len = header.frame_len();
        let mut frames = Vec::with_capacity(header.frame_count as usize);
        for _ in 0..header.frame_count {
            frames.push(RawFrame {
                width: header.width,
                height: header.height,
                pixels: r.take(frame_len)?.to_vec(),
            });
        }
        let audio = r.bytes()?;
        r.finish()?;
        Ok(Self {
            width: header.width,
            height: header.height,
            frame_rate: header.frame_rate,
            frames,
            audio: (!audio.is_empty()).then(|| audio.to_vec()),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// The fixed-size prefix of a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContainerHeader {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub frame_rate: FrameRate,
}

impl ContainerHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        if r.take(4).map_err(|_| DecodeError::new(0, "missing container magic"))? != CONTAINER_MAGIC {
            return Err(DecodeError::new(0, "bad container magic"));
        }
        if r.u8()? != CONTAINER_VERSION {
            return Err(DecodeError::new(4, "unsupported container version"));
        }
        let width = r.u32()?;
        let height = r.u32()?;
        if width == 0 || height == 0 || RawFrame::byte_len(width, height).is_none() {
            return Err(DecodeError::new(5, "invalid frame dimensions"));
        }
        let frame_count = r.u32()?;
        if frame_count == 0 {
            return Err(DecodeError::new(13, "container has no frames"));
        }
        let frame_rate = FrameRate::new(r.u32()?, r.u32()?);
        if !frame_rate.is_valid() {
            return Err(DecodeError::new(17, "frame rate terms must be positive"));
        }
        let h = Self {
            width,
            height,
            frame_count,
            frame_rate,
        };
        let body = h
            .frame_len()
            .checked_mul(frame_count as usize)
            .and_then(|b| b.checked_add(CONTAINER_HEADER_LEN + 4));
        if body.is_none_or(|b| b > bytes.len()) {
            return Err(DecodeError::new(13, "frame data exceeds container length"));
        }
        Ok(h)
    }

    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }
}

/// Deterministic synthetic frame: a gradient that moves with `index` plus
/// a watermark block encoding `index`.
pub fn synthetic_frame(width: u32, height: u32, index: u32) -> RawFrame {
    let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
    let t = index as usize;
    for y in 0..height as usize {
        for x in 0..width as usize {
            pixels.push((x + 3 * t) as u8);
            pixels.push((y + 2 * t) as u8);
            pixels.push(((x ^ y) + t) as u8);
        }
    }
    let mut f = RawFrame {
        width,
        height,
        pixels,
    };
    let mark = watermark_color(index);
    for y in 0..height.min(WATERMARK_SIZE) {
        for x in 0..width.min(WATERMARK_SIZE) {
            f.set_pixel(x, y, mark);
        }
    }
    f
}

pub fn synthetic_clip(width: u32, height: u32, count: u32) -> Vec<RawFrame> {
    (0..count).map(|i| synthetic_frame(width, height, i)).collect()
}

fn watermark_color(index: u32) -> [u8; 3] {
    [index as u8, (index >> 8) as u8, WATERMARK_MARKER]
}

/// Frame index recovered from the top-left watermark pixel. Survives every
/// built-in filter whose window stays inside the watermark block, and any
/// filter chain without grayscale or white balance.
pub fn read_watermark(frame: &RawFrame) -> Option<u32> {
    let [lo, hi, marker] = frame.pixel(0, 0);
    (marker == WATERMARK_MARKER).then_some(lo as u32 | (hi as u32) << 8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_with_audio() {
        let c = Container::new(synthetic_clip(4, 3, 5), FrameRate::new(30, 1), Some(alloc::vec![1, 2, 3])).unwrap();
        let bytes = c.encode().unwrap();
        assert_eq!(bytes.len(), CONTAINER_HEADER_LEN + 5 * 36 + 4 + 3);
        assert_eq!(Container::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_bad_containers() {
        assert!(Container::decode(&[]).is_err());
        let c = Container::new(synthetic_clip(4, 3, 2), FrameRate::new(30, 1), None).unwrap();
        let bytes = c.encode().unwrap();
        assert!(Container::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::decode(&extra).is_err());
        let mut huge = bytes;
        huge[13..17].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(Container::decode(&huge).is_err());
    }

    #[test]
    fn container_rules() {
        assert_eq!(
            Container::new(alloc::vec![], FrameRate::new(1, 1), None).unwrap_err(),
            ContainerError::EmptySegment
        );
        let mixed = alloc::vec![synthetic_frame(2, 2, 0), synthetic_frame(3, 2, 1)];
        assert_eq!(
            Container::new(mixed, FrameRate::new(1, 1), None).unwrap_err(),
            ContainerError::MixedDimensions
        );
    }

    #[test]
    fn watermark_roundtrip() {
        for i in [0, 1, 255, 256, 333, 65535] {
            assert_eq!(read_watermark(&synthetic_frame(20, 20, i)), Some(i));
        }
        assert_eq!(read_watermark(&synthetic_frame(1, 1, 7)), Some(7));
    }

    #[test]
    fn frame_shape_checks() {
        assert!(RawFrame::new(2, 2, alloc::vec![0; 12]).is_some());
        assert!(RawFrame::new(2, 2, alloc::vec![0; 11]).is_none());
        assert!(RawFrame::new(0, 2, alloc::vec![]).is_none());
    }
}

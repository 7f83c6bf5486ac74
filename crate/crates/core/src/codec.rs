//! Deterministic length-prefixed binary encoding shared by every signed
//! object.
//!
//! Every top-level object uses the same outer framing:
//!
//! ```text
//! magic "VPRV" | version u8 = 1 | section count u8 | sections...
//! section := tag u8 | length u32 (big-endian) | payload
//! ```
//!
//! Integers are big-endian, strings carry a `u16` length prefix and byte
//! strings a `u32` length prefix. Decoders are strict: trailing bytes,
//! unknown tags and out-of-order sections are all rejected.

use alloc::string::String;
use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"VPRV";
pub const VERSION: u8 = 1;

/// Section tags.
pub mod tag {
    pub const VIDEO_INFO: u8 = 0x01;
    pub const SEGMENT_INFO: u8 = 0x02;
    pub const FILTER_INFO: u8 = 0x03;
    pub const CODEC_INFO: u8 = 0x04;
    pub const CAMERA_DEVICE_INFO: u8 = 0x05;
    pub const FRAME_TAG: u8 = 0x06;

    pub const KEY: u8 = 0x10;
    pub const CERTIFICATE: u8 = 0x11;
    pub const REPORT: u8 = 0x12;
    pub const TRUST_ROOTS: u8 = 0x13;

    pub const VERIFICATION_REPORT: u8 = 0x20;
    pub const VERIFIER_POLICY: u8 = 0x21;

    pub const SIGNED_SEGMENT: u8 = 0x30;
    pub const FRAME_MESSAGE: u8 = 0x31;
    pub const SEGMENT_SIDECAR: u8 = 0x32;
    pub const FINAL_BUNDLE: u8 = 0x33;
    pub const CERT_CHAIN: u8 = 0x34;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("encoding overflow: {what} count {count} exceeds 2^32-1")]
    EncodingOverflow { what: &'static str, count: u64 },
    #[error("string field {what} is {len} bytes, limit {max}")]
    StringTooLong {
        what: &'static str,
        len: usize,
        max: usize,
    },
    #[error("too many sections ({0})")]
    TooManySections(usize),
}

/// Rejection of an encoded object. `offset` is the absolute byte offset of
/// the first violation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed input at byte {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: &'static str,
}

impl DecodeError {
    pub fn new(offset: usize, reason: &'static str) -> Self {
        Self { offset, reason }
    }
}

/// Converts a collection length to its `u32` wire form.
pub fn checked_count(what: &'static str, count: u64) -> Result<u32, EncodeError> {
    u32::try_from(count).map_err(|_| EncodeError::EncodingOverflow { what, count })
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            buf: Vec::with_capacity(n),
        }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    /// Raw bytes with no length prefix (fixed-size fields).
    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// `u32` count.
    pub fn count(&mut self, what: &'static str, n: usize) -> Result<&mut Self, EncodeError> {
        let n = checked_count(what, n as u64)?;
        Ok(self.u32(n))
    }

    /// `u32`-length-prefixed byte string.
    pub fn bytes(&mut self, what: &'static str, v: &[u8]) -> Result<&mut Self, EncodeError> {
        self.count(what, v.len())?;
        Ok(self.raw(v))
    }

    /// `u16`-length-prefixed UTF-8 string.
    pub fn str(&mut self, what: &'static str, v: &str) -> Result<&mut Self, EncodeError> {
        let len = u16::try_from(v.len()).map_err(|_| EncodeError::StringTooLong {
            what,
            len: v.len(),
            max: u16::MAX as usize,
        })?;
        self.u16(len);
        Ok(self.raw(v.as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a byte slice that reports absolute offsets on failure.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self::at(buf, 0)
    }

    /// A reader whose reported offsets start at `base`.
    pub fn at(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn error(&self, reason: &'static str) -> DecodeError {
        DecodeError::new(self.offset(), reason)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(self.error("unexpected end of input"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        let at = self.offset();
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::new(at, "boolean must be 0 or 1")),
        }
    }

    /// A `u32` count that must be plausible given the bytes left, assuming
    /// each element occupies at least `min_elem` bytes.
    pub fn count(&mut self, min_elem: usize) -> Result<usize, DecodeError> {
        let at = self.offset();
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem.max(1)) > self.remaining() {
            return Err(DecodeError::new(at, "count exceeds remaining input"));
        }
        Ok(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.count(1)?;
        self.take(n)
    }

    /// A nested reader over a `u32`-length-prefixed payload.
    pub fn nested(&mut self) -> Result<Reader<'a>, DecodeError> {
        let n = self.count(1)?;
        let base = self.offset();
        Ok(Reader::at(self.take(n)?, base))
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let at = self.offset();
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| DecodeError::new(at, "string is not valid UTF-8"))
    }

    /// Fails unless every byte was consumed.
    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.remaining() != 0 {
            return Err(self.error("trailing bytes"));
        }
        Ok(())
    }
}

/// One framed section borrowed from its enclosing buffer.
#[derive(Debug, Clone)]
pub struct Section<'a> {
    pub tag: u8,
    pub body: Reader<'a>,
    /// Offset of the tag byte.
    pub offset: usize,
}

/// Wraps `sections` in the outer framing.
pub fn frame(sections: &[(u8, &[u8])]) -> Result<Vec<u8>, EncodeError> {
    let count = u8::try_from(sections.len()).map_err(|_| EncodeError::TooManySections(sections.len()))?;
    let total: usize = sections.iter().map(|(_, p)| 5 + p.len()).sum();
    let mut w = Writer::with_capacity(6 + total);
    w.raw(&MAGIC).u8(VERSION).u8(count);
    for (t, payload) in sections {
        w.u8(*t);
        w.bytes("section length", payload)?;
    }
    Ok(w.into_bytes())
}

/// Splits a framed buffer into its sections. Every byte must belong to the
/// header or to a section.
pub fn unframe(bytes: &[u8]) -> Result<Vec<Section<'_>>, DecodeError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| DecodeError::new(0, "missing magic"))? != MAGIC {
        return Err(DecodeError::new(0, "bad magic"));
    }
    let at = r.offset();
    if r.u8()? != VERSION {
        return Err(DecodeError::new(at, "unsupported version"));
    }
    let count = r.u8()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = r.offset();
        let t = r.u8()?;
        let body = r.nested()?;
        out.push(Section { tag: t, body, offset });
    }
    r.finish()?;
    Ok(out)
}

/// Frames a single-section object (key, certificate, bundle, ...).
pub fn frame_single(t: u8, payload: &[u8]) -> Result<Vec<u8>, EncodeError> {
    frame(&[(t, payload)])
}

/// Inverse of [`frame_single`]; checks the section tag.
pub fn unframe_single(bytes: &[u8], expected: u8) -> Result<Reader<'_>, DecodeError> {
    let mut sections = unframe(bytes)?;
    if sections.len() != 1 {
        return Err(DecodeError::new(5, "expected exactly one section"));
    }
    let s = sections.pop().expect("one section");
    if s.tag != expected {
        return Err(DecodeError::new(s.offset, "unexpected section tag"));
    }
    Ok(s.body)
}

/// Lower-case hex for digests in human-readable output.
pub fn hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 0xf) as usize] as char);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let bytes = frame(&[(1, b"abc"), (7, b"")]).unwrap();
        assert_eq!(&bytes[..6], b"VPRV\x01\x02");
        let s = unframe(&bytes).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tag, 1);
        assert_eq!(s[0].body.clone().take(3).unwrap(), b"abc");
        assert_eq!(s[1].offset, 6 + 5 + 3);
    }

    #[test]
    fn unframe_rejects_trailing_and_truncated() {
        let mut bytes = frame(&[(1, b"abc")]).unwrap();
        bytes.push(0);
        assert_eq!(unframe(&bytes).unwrap_err().reason, "trailing bytes");
        bytes.truncate(bytes.len() - 2);
        assert!(unframe(&bytes).is_err());
        assert!(unframe(&[]).is_err());
    }

    #[test]
    fn count_overflow_is_reported() {
        assert_eq!(checked_count("x", u32::MAX as u64).unwrap(), u32::MAX);
        assert_eq!(
            checked_count("x", u32::MAX as u64 + 1),
            Err(EncodeError::EncodingOverflow {
                what: "x",
                count: u32::MAX as u64 + 1
            })
        );
    }

    #[test]
    fn reader_offsets_are_absolute() {
        let mut r = Reader::at(&[0, 0, 0, 9], 100);
        let err = r.bytes().unwrap_err();
        assert_eq!(err.offset, 100);
    }

    #[test]
    fn hex_lowercase() {
        assert_eq!(hex(&[0x00, 0xab, 0x7f]), "00ab7f");
    }
}

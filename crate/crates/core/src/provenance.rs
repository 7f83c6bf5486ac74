//! Provenance records and their canonical encoding.
//!
//! A [`ProvenanceRecord`] travels with a whole segment; a
//! [`PerFrameProvenance`] is the slice that rides along with each decoded
//! frame between stages. Both encode through [`crate::codec`] with a fixed
//! section order, so every signature over them is well defined.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::attest::AttestationReport;
use crate::codec::{self, tag, DecodeError, EncodeError, Reader, Section, Writer};
use crate::crypto::{self, CryptoError, Measurement, VideoId};

/// Longest filter name a [`FilterEntry`] may carry.
pub const MAX_FILTER_NAME: usize = 15;

/// Signed 64-bit fixed point with 16 fractional bits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(pub i64);

impl Fixed {
    pub const FRAC_BITS: u32 = 16;
    pub const ONE: Fixed = Fixed(1 << 16);

    pub const fn from_int(v: i64) -> Self {
        Fixed(v << Self::FRAC_BITS)
    }

    /// `num / den` rounded half up onto the fixed-point grid.
    pub fn from_ratio(num: i64, den: i64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let (num, den) = if den < 0 { (-num as i128, -den as i128) } else { (num as i128, den as i128) };
        let scaled = num << Self::FRAC_BITS;
        let v = (2 * scaled + den).div_euclid(2 * den);
        i64::try_from(v).ok().map(Fixed)
    }

    /// Parses a plain decimal such as `7`, `-0.2` or `+1.25`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let (neg, digits) = match s.as_bytes().first()? {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) || frac.len() > 12 {
            return None;
        }
        let mut num: i64 = 0;
        for b in int.bytes().chain(frac.bytes()) {
            num = num.checked_mul(10)?.checked_add((b - b'0') as i64)?;
        }
        let den = 10i64.checked_pow(frac.len() as u32)?;
        Self::from_ratio(if neg { -num } else { num }, den)
    }

    /// Integer value, if the number has no fractional part.
    pub fn to_int(self) -> Option<i64> {
        (self.0 & ((1 << Self::FRAC_BITS) - 1) == 0).then_some(self.0 >> Self::FRAC_BITS)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / (1u64 << Self::FRAC_BITS) as f64
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_int() {
            Some(i) => write!(f, "{i}"),
            None => write!(f, "{:.4}", self.to_f64()),
        }
    }
}

/// Frames per second as `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn is_valid(&self) -> bool {
        self.num > 0 && self.den > 0
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoInfo {
    pub video_id: VideoId,
    pub timestamp: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentInfo {
    pub segment_id: u32,
    pub total_segments: u32,
    pub frame_rate: FrameRate,
    pub total_frames: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterEntry {
    pub name: String,
    pub measurement: Measurement,
    pub parameters: Vec<Fixed>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodecInfo {
    pub decoder_measurement: Measurement,
    pub encoder_measurement: Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FrameTag {
    pub frame_id: u32,
}

/// Camera attestation material. `camera_certificate` carries the session
/// public key whose hash is the video id. `report_after` is attached when
/// recording finishes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraDeviceInfo {
    pub report_before: AttestationReport,
    pub report_after: Option<AttestationReport>,
    pub camera_certificate: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceRecord {
    pub video: VideoInfo,
    pub segment: SegmentInfo,
    pub filters: Vec<FilterEntry>,
    pub codec: Option<CodecInfo>,
    pub camera: CameraDeviceInfo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerFrameProvenance {
    pub video_id: VideoId,
    pub segment_id: u32,
    pub total_frames: u32,
    pub frame_tag: FrameTag,
    pub filters_so_far: Vec<FilterEntry>,
}

/// Either kind of decoded provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Provenance {
    Record(ProvenanceRecord),
    PerFrame(PerFrameProvenance),
}

pub fn compute_video_id(camera_public_key: &[u8]) -> Result<VideoId, CryptoError> {
    if camera_public_key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    Ok(VideoId(crypto::sha256(camera_public_key)))
}

fn write_filters(filters: &[FilterEntry]) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::new();
    w.count("filters", filters.len())?;
    for f in filters {
        if f.name.is_empty() || f.name.len() > MAX_FILTER_NAME {
            return Err(EncodeError::StringTooLong {
                what: "filter name",
                len: f.name.len(),
                max: MAX_FILTER_NAME,
            });
        }
        w.str("filter name", &f.name)?;
        w.raw(f.measurement.as_bytes());
        w.count("filter parameters", f.parameters.len())?;
        for p in &f.parameters {
            w.i64(p.0);
        }
    }
    Ok(w.into_bytes())
}

fn read_filters(r: &mut Reader<'_>) -> Result<Vec<FilterEntry>, DecodeError> {
    let n = r.count(2 + 32 + 4)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let name = r.str()?;
        if name.is_empty() || name.len() > MAX_FILTER_NAME {
            return Err(DecodeError::new(at, "filter name length out of range"));
        }
        let measurement = Measurement::from_bytes(r.array()?);
        let pn = r.count(8)?;
        let parameters = (0..pn).map(|_| r.i64().map(Fixed)).collect::<Result<_, _>>()?;
        out.push(FilterEntry {
            name,
            measurement,
            parameters,
        });
    }
    Ok(out)
}

impl CameraDeviceInfo {
    fn write(&self, w: &mut Writer) -> Result<(), EncodeError> {
        self.report_before.write(w);
        match &self.report_after {
            Some(r) => {
                w.u8(1);
                r.write(w);
            }
            None => {
                w.u8(0);
            }
        }
        w.bytes("camera certificate", &self.camera_certificate)?;
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let report_before = AttestationReport::read(r)?;
        let report_after = if r.bool()? {
            Some(AttestationReport::read(r)?)
        } else {
            None
        };
        Ok(Self {
            report_before,
            report_after,
            camera_certificate: r.bytes()?.to_vec(),
        })
    }
}

impl ProvenanceRecord {
    pub fn check_invariants(&self) -> Result<(), &'static str> {
        if self.video.width == 0 || self.video.height == 0 {
            return Err("dimensions must be positive");
        }
        if self.segment.segment_id >= self.segment.total_segments {
            return Err("segment_id must be below total_segments");
        }
        if self.segment.total_frames == 0 {
            return Err("total_frames must be at least 1");
        }
        if !self.segment.frame_rate.is_valid() {
            return Err("frame rate terms must be positive");
        }
        Ok(())
    }

    /// Canonical bytes. Section order: video, segment, filters, codec (only
    /// when present), camera.
    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut video = Writer::with_capacity(48);
        video
            .raw(self.video.video_id.as_bytes())
            .u64(self.video.timestamp)
            .u32(self.video.width)
            .u32(self.video.height);
        let mut segment = Writer::with_capacity(20);
        segment
            .u32(self.segment.segment_id)
            .u32(self.segment.total_segments)
            .u32(self.segment.frame_rate.num)
            .u32(self.segment.frame_rate.den)
            .u32(self.segment.total_frames);
        let filters = write_filters(&self.filters)?;
        let mut camera = Writer::new();
        self.camera.write(&mut camera)?;

        let video = video.into_bytes();
        let segment = segment.into_bytes();
        let camera = camera.into_bytes();
        let codec_bytes = self.codec.as_ref().map(|c| {
            let mut w = Writer::with_capacity(64);
            w.raw(c.decoder_measurement.as_bytes())
                .raw(c.encoder_measurement.as_bytes());
            w.into_bytes()
        });
        let mut sections: Vec<(u8, &[u8])> = alloc::vec![
            (tag::VIDEO_INFO, &video[..]),
            (tag::SEGMENT_INFO, &segment[..]),
            (tag::FILTER_INFO, &filters[..]),
        ];
        if let Some(c) = &codec_bytes {
            sections.push((tag::CODEC_INFO, &c[..]));
        }
        sections.push((tag::CAMERA_DEVICE_INFO, &camera[..]));
        codec::frame(&sections)
    }

    /// The bytes the camera signs: the record as it stood when the segment
    /// was captured, i.e. without the closing report.
    pub fn camera_signing_bytes(&self) -> Result<Vec<u8>, EncodeError> {
        let mut view = self.clone();
        view.camera.report_after = None;
        view.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let sections = codec::unframe(bytes)?;
        Self::from_sections(sections, bytes.len())
    }

    fn from_sections(sections: Vec<Section<'_>>, end: usize) -> Result<Self, DecodeError> {
        let mut it = sections.into_iter().peekable();
        let mut next = |want: u8| -> Result<Reader<'_>, DecodeError> {
            match it.next() {
                Some(s) if s.tag == want => Ok(s.body),
                Some(s) => Err(DecodeError::new(s.offset, "unexpected section")),
                None => Err(DecodeError::new(end, "missing section")),
            }
        };

        let mut r = next(tag::VIDEO_INFO)?;
        let video_id = VideoId::from_bytes(r.array()?);
        let timestamp = r.u64()?;
        let dims_at = r.offset();
        let width = r.u32()?;
        let height = r.u32()?;
        r.finish()?;
        if width == 0 || height == 0 {
            return Err(DecodeError::new(dims_at, "dimensions must be positive"));
        }

        let mut r = next(tag::SEGMENT_INFO)?;
        let seg_at = r.offset();
        let segment_id = r.u32()?;
        let total_segments = r.u32()?;
        let fps_at = r.offset();
        let frame_rate = FrameRate::new(r.u32()?, r.u32()?);
        let frames_at = r.offset();
        let total_frames = r.u32()?;
        r.finish()?;
        if segment_id >= total_segments {
            return Err(DecodeError::new(seg_at, "segment_id must be below total_segments"));
        }
        if !frame_rate.is_valid() {
            return Err(DecodeError::new(fps_at, "frame rate terms must be positive"));
        }
        if total_frames == 0 {
            return Err(DecodeError::new(frames_at, "total_frames must be at least 1"));
        }

        let mut r = next(tag::FILTER_INFO)?;
        let filters = read_filters(&mut r)?;
        r.finish()?;

        let codec = match it.peek() {
            Some(s) if s.tag == tag::CODEC_INFO => {
                let mut r = it.next().expect("peeked").body;
                let c = CodecInfo {
                    decoder_measurement: Measurement::from_bytes(r.array()?),
                    encoder_measurement: Measurement::from_bytes(r.array()?),
                };
                r.finish()?;
                Some(c)
            }
            _ => None,
        };

        let mut r = match it.next() {
            Some(s) if s.tag == tag::CAMERA_DEVICE_INFO => s.body,
            Some(s) => return Err(DecodeError::new(s.offset, "unexpected section")),
            None => return Err(DecodeError::new(end, "missing section")),
        };
        let camera = CameraDeviceInfo::read(&mut r)?;
        r.finish()?;
        if let Some(s) = it.next() {
            return Err(DecodeError::new(s.offset, "unexpected section"));
        }

        Ok(Self {
            video: VideoInfo {
                video_id,
                timestamp,
                width,
                height,
            },
            segment: SegmentInfo {
                segment_id,
                total_segments,
                frame_rate,
                total_frames,
            },
            filters,
            codec,
            camera,
        })
    }
}

impl PerFrameProvenance {
    /// Canonical bytes: frame-tag section then filter section.
    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut head = Writer::with_capacity(44);
        head.raw(self.video_id.as_bytes())
            .u32(self.segment_id)
            .u32(self.total_frames)
            .u32(self.frame_tag.frame_id);
        let head = head.into_bytes();
        let filters = write_filters(&self.filters_so_far)?;
        codec::frame(&[(tag::FRAME_TAG, &head), (tag::FILTER_INFO, &filters)])
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let sections = codec::unframe(bytes)?;
        Self::from_sections(sections, bytes.len())
    }

    fn from_sections(sections: Vec<Section<'_>>, end: usize) -> Result<Self, DecodeError> {
        if sections.len() != 2 {
            return Err(DecodeError::new(5, "per-frame provenance has two sections"));
        }
        let mut it = sections.into_iter();
        let s = it.next().ok_or(DecodeError::new(end, "missing section"))?;
        if s.tag != tag::FRAME_TAG {
            return Err(DecodeError::new(s.offset, "unexpected section"));
        }
        let mut r = s.body;
        let video_id = VideoId::from_bytes(r.array()?);
        let segment_id = r.u32()?;
        let total_at = r.offset();
        let total_frames = r.u32()?;
        let tag_at = r.offset();
        let frame_id = r.u32()?;
        r.finish()?;
        if total_frames == 0 {
            return Err(DecodeError::new(total_at, "total_frames must be at least 1"));
        }
        if frame_id >= total_frames {
            return Err(DecodeError::new(tag_at, "frame_id must be below total_frames"));
        }
        let s = it.next().ok_or(DecodeError::new(end, "missing section"))?;
        if s.tag != tag::FILTER_INFO {
            return Err(DecodeError::new(s.offset, "unexpected section"));
        }
        let mut r = s.body;
        let filters_so_far = read_filters(&mut r)?;
        r.finish()?;
        Ok(Self {
            video_id,
            segment_id,
            total_frames,
            frame_tag: FrameTag { frame_id },
            filters_so_far,
        })
    }

    /// Everything except the frame tag, for cross-frame agreement checks.
    pub fn same_common_part(&self, other: &Self) -> bool {
        self.video_id == other.video_id
            && self.segment_id == other.segment_id
            && self.total_frames == other.total_frames
            && self.filters_so_far == other.filters_so_far
    }
}

pub fn canonical_encode(p: &Provenance) -> Result<Vec<u8>, EncodeError> {
    match p {
        Provenance::Record(r) => r.encode(),
        Provenance::PerFrame(f) => f.encode(),
    }
}

/// Decodes either kind, telling them apart by their first section.
pub fn canonical_decode(bytes: &[u8]) -> Result<Provenance, DecodeError> {
    let sections = codec::unframe(bytes)?;
    match sections.first().map(|s| s.tag) {
        Some(tag::VIDEO_INFO) => {
            ProvenanceRecord::from_sections(sections, bytes.len()).map(Provenance::Record)
        }
        Some(tag::FRAME_TAG) => {
            PerFrameProvenance::from_sections(sections, bytes.len()).map(Provenance::PerFrame)
        }
        Some(_) => Err(DecodeError::new(6, "unexpected first section")),
        None => Err(DecodeError::new(5, "no sections")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attest::DeviceState;
    use crate::crypto::{Digest, Signature};

    fn report(t: u64) -> AttestationReport {
        AttestationReport {
            nonce: Digest([1; 32]),
            device_state: DeviceState::Genuine,
            app_identity: Digest([2; 32]),
            issued_at: t,
            authority_signature: Signature([3; 64]),
        }
    }

    pub(crate) fn record() -> ProvenanceRecord {
        ProvenanceRecord {
            video: VideoInfo {
                video_id: VideoId::from_bytes([9; 32]),
                timestamp: 1_600_000_000,
                width: 1280,
                height: 720,
            },
            segment: SegmentInfo {
                segment_id: 0,
                total_segments: 3,
                frame_rate: FrameRate::new(30, 1),
                total_frames: 60,
            },
            filters: alloc::vec![FilterEntry {
                name: "blur".into(),
                measurement: Measurement::from_bytes([5; 32]),
                parameters: alloc::vec![Fixed::from_int(7)],
            }],
            codec: Some(CodecInfo {
                decoder_measurement: Measurement::from_bytes([6; 32]),
                encoder_measurement: Measurement::from_bytes([7; 32]),
            }),
            camera: CameraDeviceInfo {
                report_before: report(10),
                report_after: Some(report(20)),
                camera_certificate: alloc::vec![4; 32],
            },
        }
    }

    #[test]
    fn roundtrip_with_and_without_codec() {
        let mut r = record();
        let bytes = r.encode().unwrap();
        assert_eq!(ProvenanceRecord::decode(&bytes).unwrap(), r);
        r.codec = None;
        r.filters.clear();
        r.camera.report_after = None;
        let bytes = r.encode().unwrap();
        assert_eq!(canonical_decode(&bytes).unwrap(), Provenance::Record(r));
    }

    #[test]
    fn empty_and_truncated_rejected() {
        assert!(canonical_decode(&[]).is_err());
        let bytes = record().encode().unwrap();
        let err = ProvenanceRecord::decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.offset <= bytes.len());
    }

    #[test]
    fn segment_invariant_enforced_at_decode() {
        let r = record();
        let mut bytes = r.encode().unwrap();
        // segment section follows header (6) + video section (5 + 48)
        let seg_payload = 6 + 5 + 48 + 5;
        assert_eq!(&bytes[seg_payload..seg_payload + 4], &0u32.to_be_bytes());
        bytes[seg_payload..seg_payload + 4].copy_from_slice(&3u32.to_be_bytes());
        let err = ProvenanceRecord::decode(&bytes).unwrap_err();
        assert_eq!(err.offset, seg_payload);
        assert_eq!(err.reason, "segment_id must be below total_segments");
    }

    #[test]
    fn filter_name_limits() {
        let mut r = record();
        r.filters[0].name = "x".repeat(16);
        assert!(matches!(r.encode(), Err(EncodeError::StringTooLong { .. })));
        r.filters[0].name.clear();
        assert!(r.encode().is_err());
        r.filters[0].name = "x".repeat(15);
        assert!(r.encode().is_ok());
    }

    #[test]
    fn per_frame_roundtrip_and_tag_bound() {
        let p = PerFrameProvenance {
            video_id: VideoId::from_bytes([1; 32]),
            segment_id: 2,
            total_frames: 60,
            frame_tag: FrameTag { frame_id: 59 },
            filters_so_far: record().filters,
        };
        let bytes = p.encode().unwrap();
        assert_eq!(canonical_decode(&bytes).unwrap(), Provenance::PerFrame(p.clone()));
        let mut bad = p;
        bad.frame_tag.frame_id = 60;
        assert!(PerFrameProvenance::decode(&bad.encode().unwrap()).is_err());
    }

    #[test]
    fn video_id_is_sha256_of_key() {
        assert_eq!(compute_video_id(&[]), Err(CryptoError::EmptyKey));
        let a = compute_video_id(&[0; 32]).unwrap();
        assert_eq!(a, compute_video_id(&[0; 32]).unwrap());
    }

    #[test]
    fn fixed_point_parsing() {
        assert_eq!(Fixed::parse("7"), Some(Fixed::from_int(7)));
        assert_eq!(Fixed::parse("-0.2"), Some(Fixed(-13107)));
        assert_eq!(Fixed::parse("0.5"), Some(Fixed(32768)));
        assert_eq!(Fixed::parse(".5"), Some(Fixed(32768)));
        assert_eq!(Fixed::parse("abc"), None);
        assert_eq!(Fixed::parse("-"), None);
        assert_eq!(Fixed::from_int(7).to_int(), Some(7));
        assert_eq!(Fixed(-13107).to_int(), None);
        assert_eq!(alloc::format!("{}", Fixed::from_int(-3)), "-3");
    }
}

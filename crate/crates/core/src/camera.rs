//! Attested camera: one fresh key per recording, a device report before and
//! after capture, both bound to the hash of the session key.

use alloc::vec::Vec;

use rand_core::{CryptoRng, RngCore};

use crate::attest::{AttestationError, AttestationReport, DeviceState, ReportIssuer};
use crate::codec::{self, tag, DecodeError, EncodeError, Reader, Writer};
use crate::crypto::{self, CryptoError, Digest, KeyPair, Signature, VideoId};
use crate::frame::{Container, ContainerError, RawFrame};
use crate::provenance::{
    compute_video_id, CameraDeviceInfo, FrameRate, ProvenanceRecord, SegmentInfo, VideoInfo,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CameraError {
    #[error("attestation refused: {0}")]
    AttestationRefused(AttestationError),
    #[error("recording session already finished")]
    SessionFinished,
    #[error("frames have mixed dimensions")]
    MixedDimensions,
    #[error("segment has no frames")]
    EmptySegment,
    #[error("invalid segment: {0}")]
    InvalidSegment(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Encoding(#[from] EncodeError),
    #[error(transparent)]
    Container(ContainerError),
}

impl From<ContainerError> for CameraError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::EmptySegment => CameraError::EmptySegment,
            ContainerError::MixedDimensions => CameraError::MixedDimensions,
            other => CameraError::Container(other),
        }
    }
}

/// Camera output for one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedSegment {
    pub container_bytes: Vec<u8>,
    pub provenance: ProvenanceRecord,
    pub sig_f: Signature,
    pub sig_pi: Signature,
}

impl SignedSegment {
    /// The camera certificate bundle, which is part of the provenance.
    pub fn camera_info(&self) -> &CameraDeviceInfo {
        &self.provenance.camera
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let pi = self.provenance.encode()?;
        let mut w = Writer::with_capacity(self.container_bytes.len() + pi.len() + 140);
        w.bytes("container", &self.container_bytes)?
            .bytes("provenance", &pi)?
            .raw(self.sig_f.as_bytes())
            .raw(self.sig_pi.as_bytes());
        codec::frame_single(tag::SIGNED_SEGMENT, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::SIGNED_SEGMENT)?;
        let seg = Self::read(&mut r)?;
        r.finish()?;
        Ok(seg)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let container_bytes = r.bytes()?.to_vec();
        let at = r.offset() + 4;
        let pi = r.bytes()?;
        let provenance = ProvenanceRecord::decode(pi).map_err(|e| DecodeError::new(at + e.offset, e.reason))?;
        Ok(Self {
            container_bytes,
            provenance,
            sig_f: Signature(r.array()?),
            sig_pi: Signature(r.array()?),
        })
    }
}

/// One recording. Single owner; consumed logically by [`finish_recording`].
pub struct RecordingSession {
    keypair: KeyPair,
    video_id: VideoId,
    app_identity: Digest,
    report_before: AttestationReport,
    report_after: Option<AttestationReport>,
    captured_segments: Vec<SignedSegment>,
    finished: bool,
}

impl RecordingSession {
    pub fn public_key(&self) -> crypto::PublicKey {
        self.keypair.public_key()
    }

    pub fn video_id(&self) -> VideoId {
        self.video_id
    }

    pub fn report_before(&self) -> &AttestationReport {
        &self.report_before
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Private key bytes as currently held; zero after finishing.
    pub fn private_key_bytes(&self) -> [u8; 32] {
        self.keypair.private_key_bytes()
    }

    /// Segments captured so far. After finishing, each carries both reports.
    pub fn captured_segments(&self) -> &[SignedSegment] {
        &self.captured_segments
    }

    pub fn into_segments(self) -> Vec<SignedSegment> {
        self.captured_segments
    }
}

/// Generates the session key and obtains the opening device report, using
/// the hash of the public key as nonce.
pub fn begin_recording<R: RngCore + CryptoRng>(
    issuer: &dyn ReportIssuer,
    rng: &mut R,
    device_state: DeviceState,
    app_identity: Digest,
) -> Result<RecordingSession, CameraError> {
    let keypair = crypto::generate_keypair(rng)?;
    let video_id = compute_video_id(keypair.public_key().as_bytes())?;
    let report_before = issuer
        .attest_device(video_id.0, device_state, app_identity)
        .map_err(CameraError::AttestationRefused)?;
    Ok(RecordingSession {
        keypair,
        video_id,
        app_identity,
        report_before,
        report_after: None,
        captured_segments: Vec::new(),
        finished: false,
    })
}

/// Parameters of a captured segment other than its frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentParams {
    pub segment_id: u32,
    pub total_segments: u32,
    pub frame_rate: FrameRate,
    pub timestamp: u64,
}

/// Packs `frames` into a container and signs it together with its
/// provenance. The session keeps a copy so that the closing report can be
/// attached when recording finishes.
pub fn capture_segment(
    session: &mut RecordingSession,
    frames: Vec<RawFrame>,
    params: &SegmentParams,
    audio: Option<Vec<u8>>,
) -> Result<SignedSegment, CameraError> {
    if session.finished {
        return Err(CameraError::SessionFinished);
    }
    if params.segment_id >= params.total_segments {
        return Err(CameraError::InvalidSegment("segment_id must be below total_segments"));
    }
    if !params.frame_rate.is_valid() {
        return Err(CameraError::InvalidSegment("frame rate terms must be positive"));
    }
    let total_frames = u32::try_from(frames.len())
        .map_err(|_| CameraError::InvalidSegment("too many frames"))?;
    let container = Container::new(frames, params.frame_rate, audio)?;
    let container_bytes = container.encode()?;
    let provenance = ProvenanceRecord {
        video: VideoInfo {
            video_id: session.video_id,
            timestamp: params.timestamp,
            width: container.width,
            height: container.height,
        },
        segment: SegmentInfo {
            segment_id: params.segment_id,
            total_segments: params.total_segments,
            frame_rate: params.frame_rate,
            total_frames,
        },
        filters: Vec::new(),
        codec: None,
        camera: CameraDeviceInfo {
            report_before: session.report_before.clone(),
            report_after: None,
            camera_certificate: session.keypair.public_key().as_bytes().to_vec(),
        },
    };
    let sig_f = crypto::sign(&session.keypair, &container_bytes)?;
    let sig_pi = crypto::sign(&session.keypair, &provenance.camera_signing_bytes()?)?;
    let seg = SignedSegment {
        container_bytes,
        provenance,
        sig_f,
        sig_pi,
    };
    session.captured_segments.push(seg.clone());
    Ok(seg)
}

/// Obtains the closing report with the same nonce, attaches both reports
/// to every captured segment and erases the session key.
pub fn finish_recording(
    session: &mut RecordingSession,
    issuer: &dyn ReportIssuer,
    device_state: DeviceState,
) -> Result<AttestationReport, CameraError> {
    if session.finished {
        return Err(CameraError::SessionFinished);
    }
    let report_after = issuer
        .attest_device(session.video_id.0, device_state, session.app_identity)
        .map_err(CameraError::AttestationRefused)?;
    for seg in &mut session.captured_segments {
        seg.provenance.camera.report_after = Some(report_after.clone());
    }
    session.report_after = Some(report_after.clone());
    session.keypair.erase();
    session.finished = true;
    Ok(report_after)
}

/// Splits `frames` into segments of `segment_size` and records them in one
/// session. Timestamps advance by the segment duration (rounded down).
#[allow(clippy::too_many_arguments)]
pub fn record_video<R: RngCore + CryptoRng>(
    issuer: &dyn ReportIssuer,
    rng: &mut R,
    device_state: DeviceState,
    app_identity: Digest,
    frames: Vec<RawFrame>,
    segment_size: usize,
    frame_rate: FrameRate,
    start_timestamp: u64,
    audio: Option<Vec<u8>>,
) -> Result<(Vec<SignedSegment>, AttestationReport), CameraError> {
    if frames.is_empty() {
        return Err(CameraError::EmptySegment);
    }
    let segment_size = segment_size.max(1);
    let total = frames.len().div_ceil(segment_size);
    let total_segments =
        u32::try_from(total).map_err(|_| CameraError::InvalidSegment("too many segments"))?;
    let mut session = begin_recording(issuer, rng, device_state, app_identity)?;
    let mut frames = frames.into_iter();
    for i in 0..total_segments {
        let chunk: Vec<RawFrame> = frames.by_ref().take(segment_size).collect();
        let offset_s = (i as u64 * segment_size as u64 * frame_rate.den as u64) / frame_rate.num as u64;
        let params = SegmentParams {
            segment_id: i,
            total_segments,
            frame_rate,
            timestamp: start_timestamp + offset_s,
        };
        capture_segment(&mut session, chunk, &params, audio.clone())?;
    }
    let after = finish_recording(&mut session, issuer, device_state)?;
    Ok((session.into_segments(), after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attest::{verify_report, AttestationAuthority, ManualClock};
    use crate::frame::synthetic_clip;
    use alloc::boxed::Box;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn authority(clock: u64) -> AttestationAuthority {
        AttestationAuthority::new(KeyPair::from_seed([1; 32]), Box::new(ManualClock::new(clock)))
    }

    fn params() -> SegmentParams {
        SegmentParams {
            segment_id: 0,
            total_segments: 1,
            frame_rate: FrameRate::new(30, 1),
            timestamp: 5,
        }
    }

    #[test]
    fn nonce_is_video_id() {
        let a = authority(100);
        let s = begin_recording(&a, &mut ChaCha20Rng::seed_from_u64(1), DeviceState::Genuine, Digest([2; 32])).unwrap();
        assert_eq!(s.report_before().nonce, s.video_id().0);
        assert!(verify_report(&a.public_key(), s.report_before()));
        let t = begin_recording(&a, &mut ChaCha20Rng::seed_from_u64(2), DeviceState::Genuine, Digest([2; 32])).unwrap();
        assert_ne!(s.video_id(), t.video_id());
        assert_ne!(s.public_key(), t.public_key());
    }

    #[test]
    fn minimal_segment_signatures_verify() {
        let a = authority(100);
        let mut s = begin_recording(&a, &mut ChaCha20Rng::seed_from_u64(1), DeviceState::Genuine, Digest([2; 32])).unwrap();
        let seg = capture_segment(&mut s, synthetic_clip(2, 2, 1), &params(), None).unwrap();
        let pk = s.public_key();
        assert!(pk.verify(&seg.container_bytes, &seg.sig_f));
        assert!(pk.verify(&seg.provenance.camera_signing_bytes().unwrap(), &seg.sig_pi));
        assert_eq!(seg.provenance.segment.total_frames, 1);
        assert!(seg.provenance.filters.is_empty() && seg.provenance.codec.is_none());
        assert_eq!(SignedSegment::decode(&seg.encode().unwrap()).unwrap(), seg);
    }

    #[test]
    fn capture_rejections() {
        let a = authority(100);
        let mut s = begin_recording(&a, &mut ChaCha20Rng::seed_from_u64(1), DeviceState::Genuine, Digest([2; 32])).unwrap();
        let mixed = alloc::vec![crate::frame::synthetic_frame(2, 2, 0), crate::frame::synthetic_frame(4, 2, 1)];
        assert_eq!(capture_segment(&mut s, mixed, &params(), None).unwrap_err(), CameraError::MixedDimensions);
        assert_eq!(capture_segment(&mut s, alloc::vec![], &params(), None).unwrap_err(), CameraError::EmptySegment);
        let mut p = params();
        p.segment_id = 1;
        assert!(matches!(capture_segment(&mut s, synthetic_clip(2, 2, 1), &p, None), Err(CameraError::InvalidSegment(_))));
    }

    #[test]
    fn finish_attaches_reports_and_erases_key() {
        let clock = alloc::sync::Arc::new(ManualClock::new(100));
        struct Shared(alloc::sync::Arc<ManualClock>);
        impl crate::attest::Clock for Shared {
            fn now(&self) -> u64 {
                crate::attest::Clock::now(&*self.0)
            }
        }
        let a = AttestationAuthority::new(KeyPair::from_seed([1; 32]), Box::new(Shared(clock.clone())));
        let mut s = begin_recording(&a, &mut ChaCha20Rng::seed_from_u64(1), DeviceState::Genuine, Digest([2; 32])).unwrap();
        capture_segment(&mut s, synthetic_clip(2, 2, 3), &params(), None).unwrap();
        clock.advance(30);
        let after = finish_recording(&mut s, &a, DeviceState::Genuine).unwrap();
        assert_eq!(after.nonce, s.report_before().nonce);
        assert!(after.issued_at >= s.report_before().issued_at);
        assert_eq!(after.issued_at, 130);
        assert_eq!(s.private_key_bytes(), [0; 32]);
        assert!(s.is_finished());
        let seg = &s.captured_segments()[0];
        assert_eq!(seg.provenance.camera.report_after.as_ref(), Some(&after));
        // closing report is outside the camera signature
        assert!(s.public_key().verify(&seg.provenance.camera_signing_bytes().unwrap(), &seg.sig_pi));
        assert_eq!(capture_segment(&mut s, synthetic_clip(2, 2, 1), &params(), None).unwrap_err(), CameraError::SessionFinished);
        assert_eq!(finish_recording(&mut s, &a, DeviceState::Genuine).unwrap_err(), CameraError::SessionFinished);
    }

    #[test]
    fn refusing_issuer_surfaces() {
        struct No;
        impl ReportIssuer for No {
            fn attest_device(&self, _: Digest, _: DeviceState, _: Digest) -> Result<AttestationReport, AttestationError> {
                Err(AttestationError::Refused("offline"))
            }
        }
        let r = begin_recording(&No, &mut ChaCha20Rng::seed_from_u64(1), DeviceState::Genuine, Digest([2; 32]));
        assert!(matches!(r, Err(CameraError::AttestationRefused(_))));
    }

    #[test]
    fn record_video_segments_share_video_id() {
        let a = authority(100);
        let (segs, _) = record_video(
            &a,
            &mut ChaCha20Rng::seed_from_u64(3),
            DeviceState::Genuine,
            Digest([2; 32]),
            synthetic_clip(4, 4, 7),
            3,
            FrameRate::new(30, 1),
            0,
            None,
        )
        .unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].provenance.segment.total_frames, 1);
        assert!(segs.iter().all(|s| s.provenance.video.video_id == segs[0].provenance.video.video_id));
        assert!(segs.iter().all(|s| s.provenance.camera.report_after.is_some()));
    }
}

//! Fixed-function stages.
//!
//! Each stage checks the signature on its input, does exactly one job and
//! signs what it emits:
//!
//! * the decoder checks the camera signatures and reports, splits the
//!   segment into per-frame messages and sends the segment-level remainder
//!   to the encoder as a sidecar;
//! * a filter stage pins its upstream certificate, then transforms frames
//!   one at a time and appends its own filter entry;
//! * the encoder checks that every frame arrived exactly once with matching
//!   provenance, reassembles the container in tag order and signs the final
//!   bundle.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attest::{verify_report, StageCertificate, TrustRoots};
use crate::camera::SignedSegment;
use crate::codec::{self, tag, DecodeError, EncodeError, Writer};
use crate::crypto::{self, measure_stage, CryptoError, KeyPair, Measurement, PublicKey, Role, Signature};
use crate::filters::{apply_pixel_filter, FilterError, FilterKind, FilterSpec};
use crate::frame::{Container, ContainerError, RawFrame};
use crate::provenance::{
    compute_video_id, CodecInfo, FilterEntry, FrameTag, PerFrameProvenance, ProvenanceRecord,
};

const FRAME_DOMAIN: &[u8] = b"vron/frame-message/v1";
const SIDECAR_DOMAIN: &[u8] = b"vron/segment-sidecar/v1";

const DECODER_IDENTITY: &[u8] = b"vron-decoder/vronc-v1";
const ENCODER_IDENTITY: &[u8] = b"vron-encoder/vronc-v1";

pub fn decoder_measurement() -> Measurement {
    measure_stage(Role::Decoder, DECODER_IDENTITY, b"").expect("identity is nonempty")
}

pub fn encoder_measurement() -> Measurement {
    measure_stage(Role::Encoder, ENCODER_IDENTITY, b"").expect("identity is nonempty")
}

/// Trust roots approving the built-in decoder, encoder and filters.
pub fn builtin_trust_roots(authority: PublicKey) -> TrustRoots {
    let mut t = TrustRoots::new(authority);
    t.approve_stage(decoder_measurement(), Role::Decoder, "decoder");
    t.approve_stage(encoder_measurement(), Role::Encoder, "encoder");
    for k in FilterKind::ALL {
        t.approve_stage(k.measurement(), Role::Filter, k.name());
    }
    t
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StageError {
    #[error("stage certificate has role {actual:?}, expected {expected:?}")]
    WrongRole { expected: Role, actual: Role },
    #[error("camera signature invalid: {0}")]
    CameraSigInvalid(&'static str),
    #[error("attestation report nonce does not match video id")]
    NonceMismatch,
    #[error("camera attestation report missing")]
    MissingReport,
    #[error("camera attestation report signature invalid")]
    CameraReportInvalid,
    #[error("malformed container: {0}")]
    MalformedContainer(DecodeError),
    #[error("container has {container} frames, provenance says {provenance}")]
    FrameCountMismatch { container: u32, provenance: u32 },
    #[error("container disagrees with provenance: {0}")]
    ContainerMismatch(&'static str),
    #[error("upstream signature invalid (frame {frame_id:?})")]
    UpstreamSigInvalid { frame_id: Option<u32> },
    #[error("upstream certificate untrusted: {0}")]
    UpstreamCertUntrusted(&'static str),
    #[error("no upstream certificate pinned")]
    NotPinned,
    #[error(transparent)]
    BadParameters(FilterError),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("missing {missing} frame(s), first missing id {first}")]
    MissingFrames { missing: u32, first: u32 },
    #[error("frame {frame_id} delivered more than once")]
    DuplicateFrame { frame_id: u32 },
    #[error("frame provenance mismatch: {0}")]
    ProvenanceMismatch(&'static str),
    #[error("sidecar signature invalid")]
    AudioSigInvalid,
    #[error("segment sidecar never arrived")]
    MissingSidecar,
    #[error("malformed message: {0}")]
    MalformedMessage(DecodeError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Encoding(#[from] EncodeError),
}

impl StageError {
    /// Every `kind()` name; a kind's position here is its numeric code.
    pub const KINDS: [&'static str; 21] = [
        "WrongRole",
        "CameraSigInvalid",
        "NonceMismatch",
        "MissingReport",
        "CameraReportInvalid",
        "MalformedContainer",
        "FrameCountMismatch",
        "ContainerMismatch",
        "UpstreamSigInvalid",
        "UpstreamCertUntrusted",
        "NotPinned",
        "BadParameters",
        "MalformedFrame",
        "MissingFrames",
        "DuplicateFrame",
        "ProvenanceMismatch",
        "AudioSigInvalid",
        "MissingSidecar",
        "MalformedMessage",
        "Crypto",
        "Encoding",
    ];

    pub fn code(&self) -> u8 {
        let k = self.kind();
        Self::KINDS.iter().position(|n| *n == k).expect("every kind is listed") as u8
    }

    /// Stable short name, used for exit codes and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            StageError::WrongRole { .. } => "WrongRole",
            StageError::CameraSigInvalid(_) => "CameraSigInvalid",
            StageError::NonceMismatch => "NonceMismatch",
            StageError::MissingReport => "MissingReport",
            StageError::CameraReportInvalid => "CameraReportInvalid",
            StageError::MalformedContainer(_) => "MalformedContainer",
            StageError::FrameCountMismatch { .. } => "FrameCountMismatch",
            StageError::ContainerMismatch(_) => "ContainerMismatch",
            StageError::UpstreamSigInvalid { .. } => "UpstreamSigInvalid",
            StageError::UpstreamCertUntrusted(_) => "UpstreamCertUntrusted",
            StageError::NotPinned => "NotPinned",
            StageError::BadParameters(_) => "BadParameters",
            StageError::MalformedFrame(_) => "MalformedFrame",
            StageError::MissingFrames { .. } => "MissingFrames",
            StageError::DuplicateFrame { .. } => "DuplicateFrame",
            StageError::ProvenanceMismatch(_) => "ProvenanceMismatch",
            StageError::AudioSigInvalid => "AudioSigInvalid",
            StageError::MissingSidecar => "MissingSidecar",
            StageError::MalformedMessage(_) => "MalformedMessage",
            StageError::Crypto(_) => "Crypto",
            StageError::Encoding(_) => "Encoding",
        }
    }
}

/// A stage's own key and the certificate binding it to the stage code.
#[derive(Debug, Clone)]
pub struct StageIdentity {
    pub key: KeyPair,
    pub certificate: StageCertificate,
}

impl StageIdentity {
    fn require_role(&self, expected: Role) -> Result<(), StageError> {
        if self.certificate.role != expected {
            return Err(StageError::WrongRole {
                expected,
                actual: self.certificate.role,
            });
        }
        Ok(())
    }
}

fn check_pinnable(cert: &StageCertificate, trust: &TrustRoots, allowed: &[Role]) -> Result<(), StageError> {
    trust
        .certificate_trusted(cert)
        .map_err(StageError::UpstreamCertUntrusted)?;
    if !allowed.contains(&cert.role) {
        return Err(StageError::UpstreamCertUntrusted("unexpected upstream role"));
    }
    Ok(())
}

/// One decoded frame with its provenance slice, signed by the stage that
/// produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMessage {
    pub frame: RawFrame,
    pub per_frame_provenance: PerFrameProvenance,
    pub producer_signature: Signature,
    pub producer_certificate: StageCertificate,
}

fn frame_signing_parts<'a>(frame: &'a RawFrame, header: &'a [u8; 8], pfp: &'a [u8]) -> [&'a [u8]; 4] {
    [FRAME_DOMAIN, header, &frame.pixels, pfp]
}

impl FrameMessage {
    /// Builds and signs a message.
    pub fn sign(
        frame: RawFrame,
        per_frame_provenance: PerFrameProvenance,
        identity: &StageIdentity,
    ) -> Result<Self, StageError> {
        let pfp = per_frame_provenance.encode()?;
        let header = frame.header_bytes();
        let producer_signature =
            crypto::sign_parts(&identity.key, &frame_signing_parts(&frame, &header, &pfp))?;
        Ok(Self {
            frame,
            per_frame_provenance,
            producer_signature,
            producer_certificate: identity.certificate.clone(),
        })
    }

    pub fn verify_under(&self, key: &PublicKey) -> bool {
        let Ok(pfp) = self.per_frame_provenance.encode() else {
            return false;
        };
        let header = self.frame.header_bytes();
        key.verify_parts(&frame_signing_parts(&self.frame, &header, &pfp), &self.producer_signature)
    }

    pub fn frame_id(&self) -> u32 {
        self.per_frame_provenance.frame_tag.frame_id
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let pfp = self.per_frame_provenance.encode()?;
        let mut w = Writer::with_capacity(self.frame.pixels.len() + pfp.len() + 300);
        self.frame.write(&mut w);
        w.bytes("frame provenance", &pfp)?
            .raw(self.producer_signature.as_bytes());
        self.producer_certificate.write(&mut w);
        codec::frame_single(tag::FRAME_MESSAGE, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::FRAME_MESSAGE)?;
        let frame = RawFrame::read(&mut r)?;
        let at = r.offset() + 4;
        let per_frame_provenance = PerFrameProvenance::decode(r.bytes()?)
            .map_err(|e| DecodeError::new(at + e.offset, e.reason))?;
        let producer_signature = Signature(r.array()?);
        let producer_certificate = StageCertificate::read(&mut r)?;
        r.finish()?;
        Ok(Self {
            frame,
            per_frame_provenance,
            producer_signature,
            producer_certificate,
        })
    }
}

/// Segment-level provenance routed straight from decoder to encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSidecar {
    /// The camera provenance (no filters, no codec info).
    pub provenance_remainder: ProvenanceRecord,
    pub decoder_measurement: Measurement,
    pub audio: Option<Vec<u8>>,
    pub decoder_signature: Signature,
    pub decoder_certificate: StageCertificate,
}

impl SegmentSidecar {
    fn signing_bytes(
        remainder: &ProvenanceRecord,
        decoder_measurement: &Measurement,
        audio: Option<&[u8]>,
    ) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        w.raw(SIDECAR_DOMAIN)
            .bytes("provenance", &remainder.encode()?)?
            .raw(decoder_measurement.as_bytes());
        match audio {
            Some(a) => {
                w.u8(1).bytes("audio", a)?;
            }
            None => {
                w.u8(0);
            }
        }
        Ok(w.into_bytes())
    }

    pub fn verify_under(&self, key: &PublicKey) -> bool {
        Self::signing_bytes(&self.provenance_remainder, &self.decoder_measurement, self.audio.as_deref())
            .map(|b| key.verify(&b, &self.decoder_signature))
            .unwrap_or(false)
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        w.bytes("provenance", &self.provenance_remainder.encode()?)?
            .raw(self.decoder_measurement.as_bytes());
        match &self.audio {
            Some(a) => {
                w.u8(1).bytes("audio", a)?;
            }
            None => {
                w.u8(0);
            }
        }
        w.raw(self.decoder_signature.as_bytes());
        self.decoder_certificate.write(&mut w);
        codec::frame_single(tag::SEGMENT_SIDECAR, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::SEGMENT_SIDECAR)?;
        let at = r.offset() + 4;
        let provenance_remainder = ProvenanceRecord::decode(r.bytes()?)
            .map_err(|e| DecodeError::new(at + e.offset, e.reason))?;
        let decoder_measurement = Measurement::from_bytes(r.array()?);
        let audio = if r.bool()? { Some(r.bytes()?.to_vec()) } else { None };
        let decoder_signature = Signature(r.array()?);
        let decoder_certificate = StageCertificate::read(&mut r)?;
        r.finish()?;
        Ok(Self {
            provenance_remainder,
            decoder_measurement,
            audio,
            decoder_signature,
            decoder_certificate,
        })
    }
}

/// What the consumer receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalBundle {
    pub container_bytes: Vec<u8>,
    pub provenance: ProvenanceRecord,
    pub sig_f_prime: Signature,
    pub sig_pi_prime: Signature,
    pub encoder_certificate: StageCertificate,
    /// Decoder certificate first, then one per filter in application order.
    pub stage_certificates: Vec<StageCertificate>,
}

impl FinalBundle {
    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let pi = self.provenance.encode()?;
        let mut w = Writer::with_capacity(self.container_bytes.len() + pi.len() + 1024);
        w.bytes("container", &self.container_bytes)?
            .bytes("provenance", &pi)?
            .raw(self.sig_f_prime.as_bytes())
            .raw(self.sig_pi_prime.as_bytes());
        self.encoder_certificate.write(&mut w);
        w.count("stage certificates", self.stage_certificates.len())?;
        for c in &self.stage_certificates {
            c.write(&mut w);
        }
        codec::frame_single(tag::FINAL_BUNDLE, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::FINAL_BUNDLE)?;
        let container_bytes = r.bytes()?.to_vec();
        let at = r.offset() + 4;
        let provenance =
            ProvenanceRecord::decode(r.bytes()?).map_err(|e| DecodeError::new(at + e.offset, e.reason))?;
        let sig_f_prime = Signature(r.array()?);
        let sig_pi_prime = Signature(r.array()?);
        let encoder_certificate = StageCertificate::read(&mut r)?;
        let n = r.count(32 + 32 + 1 + 8 + 2 + 64)?;
        let stage_certificates = (0..n)
            .map(|_| StageCertificate::read(&mut r))
            .collect::<Result<_, _>>()?;
        r.finish()?;
        Ok(Self {
            container_bytes,
            provenance,
            sig_f_prime,
            sig_pi_prime,
            encoder_certificate,
            stage_certificates,
        })
    }
}

/// Ordered certificate list exchanged at pipeline setup.
pub fn encode_cert_chain(chain: &[StageCertificate]) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::new();
    w.count("certificates", chain.len())?;
    for c in chain {
        c.write(&mut w);
    }
    codec::frame_single(tag::CERT_CHAIN, &w.into_bytes())
}

pub fn decode_cert_chain(bytes: &[u8]) -> Result<Vec<StageCertificate>, DecodeError> {
    let mut r = codec::unframe_single(bytes, tag::CERT_CHAIN)?;
    let n = r.count(32 + 32 + 1 + 8 + 2 + 64)?;
    let chain = (0..n)
        .map(|_| StageCertificate::read(&mut r))
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(chain)
}

/// A verified segment being emitted frame by frame.
pub struct DecodedSegment {
    provenance: ProvenanceRecord,
    frames: alloc::vec::IntoIter<RawFrame>,
    next_id: u32,
    sidecar: Option<SegmentSidecar>,
}

impl DecodedSegment {
    pub fn total_frames(&self) -> u32 {
        self.provenance.segment.total_frames
    }

    /// The sidecar; available once, before or between frames.
    pub fn take_sidecar(&mut self) -> Option<SegmentSidecar> {
        self.sidecar.take()
    }

    /// The remaining frames without per-frame messages, for a design that
    /// filters and encodes in the same process.
    pub fn into_frames(self) -> Vec<RawFrame> {
        self.frames.collect()
    }

    /// Signs and returns the next frame in order.
    pub fn next_frame(&mut self, identity: &StageIdentity) -> Option<Result<FrameMessage, StageError>> {
        let frame = self.frames.next()?;
        let pfp = PerFrameProvenance {
            video_id: self.provenance.video.video_id,
            segment_id: self.provenance.segment.segment_id,
            total_frames: self.provenance.segment.total_frames,
            frame_tag: FrameTag { frame_id: self.next_id },
            filters_so_far: Vec::new(),
        };
        self.next_id += 1;
        Some(FrameMessage::sign(frame, pfp, identity))
    }
}

/// Verifies a camera segment and prepares it for frame-by-frame emission.
/// Works on a private copy of the input taken before any check.
pub fn decoder_open(
    segment: &SignedSegment,
    trust: &TrustRoots,
    identity: &StageIdentity,
) -> Result<DecodedSegment, StageError> {
    identity.require_role(Role::Decoder)?;
    let SignedSegment {
        container_bytes,
        provenance,
        sig_f,
        sig_pi,
    } = segment.clone();

    let camera_key = &provenance.camera.camera_certificate;
    let video_id = compute_video_id(camera_key)
        .map_err(|_| StageError::CameraSigInvalid("empty camera key"))?;
    if video_id != provenance.video.video_id {
        return Err(StageError::CameraSigInvalid("camera key does not hash to the video id"));
    }
    if !crypto::verify(camera_key, &container_bytes, sig_f.as_bytes()) {
        return Err(StageError::CameraSigInvalid("Sig_F"));
    }
    if !crypto::verify(camera_key, &provenance.camera_signing_bytes()?, sig_pi.as_bytes()) {
        return Err(StageError::CameraSigInvalid("Sig_PI"));
    }
    let after = provenance
        .camera
        .report_after
        .as_ref()
        .ok_or(StageError::MissingReport)?;
    for report in [&provenance.camera.report_before, after] {
        if report.nonce != video_id.0 {
            return Err(StageError::NonceMismatch);
        }
        if !verify_report(&trust.attestation_authority_public_key, report) {
            return Err(StageError::CameraReportInvalid);
        }
    }

    let container = Container::decode(&container_bytes).map_err(|e| match e {
        ContainerError::MalformedContainer(d) => StageError::MalformedContainer(d),
        _ => StageError::MalformedContainer(DecodeError::new(0, "invalid container")),
    })?;
    let count = container.frame_count() as u32;
    if count != provenance.segment.total_frames {
        return Err(StageError::FrameCountMismatch {
            container: count,
            provenance: provenance.segment.total_frames,
        });
    }
    if (container.width, container.height) != (provenance.video.width, provenance.video.height) {
        return Err(StageError::ContainerMismatch("dimensions"));
    }
    if container.frame_rate != provenance.segment.frame_rate {
        return Err(StageError::ContainerMismatch("frame rate"));
    }

    let measurement = identity.certificate.measurement;
    let audio = container.audio;
    let signing = SegmentSidecar::signing_bytes(&provenance, &measurement, audio.as_deref())?;
    let sidecar = SegmentSidecar {
        decoder_signature: crypto::sign(&identity.key, &signing)?,
        provenance_remainder: provenance.clone(),
        decoder_measurement: measurement,
        audio,
        decoder_certificate: identity.certificate.clone(),
    };
    Ok(DecodedSegment {
        provenance,
        frames: container.frames.into_iter(),
        next_id: 0,
        sidecar: Some(sidecar),
    })
}

/// Decodes a whole segment at once.
pub fn decoder_run(
    segment: &SignedSegment,
    trust: &TrustRoots,
    identity: &StageIdentity,
) -> Result<(Vec<FrameMessage>, SegmentSidecar), StageError> {
    let mut d = decoder_open(segment, trust, identity)?;
    let sidecar = d.take_sidecar().expect("fresh segment has a sidecar");
    let mut frames = Vec::with_capacity(d.total_frames() as usize);
    while let Some(f) = d.next_frame(identity) {
        frames.push(f?);
    }
    Ok((frames, sidecar))
}

/// A filter stage with its pinned upstream certificate.
pub struct FilterStage {
    spec: FilterSpec,
    identity: StageIdentity,
    upstream: Option<StageCertificate>,
}

impl FilterStage {
    pub fn new(spec: FilterSpec, identity: StageIdentity) -> Result<Self, StageError> {
        identity.require_role(Role::Filter)?;
        spec.validate().map_err(StageError::BadParameters)?;
        if identity.certificate.measurement != spec.kind.measurement() {
            return Err(StageError::UpstreamCertUntrusted("own certificate does not match filter code"));
        }
        Ok(Self {
            spec,
            identity,
            upstream: None,
        })
    }

    pub fn certificate(&self) -> &StageCertificate {
        &self.identity.certificate
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    /// Verifies and stores the certificate of the stage feeding this one.
    pub fn pin_upstream(&mut self, cert: &StageCertificate, trust: &TrustRoots) -> Result<(), StageError> {
        check_pinnable(cert, trust, &[Role::Decoder, Role::Filter])?;
        self.upstream = Some(cert.clone());
        Ok(())
    }

    pub fn process(&self, input: &FrameMessage) -> Result<FrameMessage, StageError> {
        let upstream = self.upstream.as_ref().ok_or(StageError::NotPinned)?;
        if input.producer_certificate != *upstream {
            return Err(StageError::UpstreamCertUntrusted("frame producer is not the pinned upstream"));
        }
        if !input.verify_under(&upstream.stage_public_key) {
            return Err(StageError::UpstreamSigInvalid {
                frame_id: Some(input.frame_id()),
            });
        }
        if !input.frame.is_well_formed() {
            return Err(StageError::MalformedFrame("pixel buffer does not match dimensions"));
        }
        let pfp = &input.per_frame_provenance;
        if pfp.frame_tag.frame_id >= pfp.total_frames {
            return Err(StageError::MalformedFrame("frame id beyond total frames"));
        }
        let frame = apply_pixel_filter(&self.spec, &input.frame).map_err(StageError::BadParameters)?;
        let mut pfp = pfp.clone();
        pfp.filters_so_far.push(FilterEntry {
            name: String::from(self.spec.name()),
            measurement: self.identity.certificate.measurement,
            parameters: self.spec.parameters.clone(),
        });
        FrameMessage::sign(frame, pfp, &self.identity)
    }
}

/// Pins `upstream_cert` and filters one frame.
pub fn filter_stage_run(
    input: &FrameMessage,
    upstream_cert: &StageCertificate,
    trust: &TrustRoots,
    spec: &FilterSpec,
    identity: &StageIdentity,
) -> Result<FrameMessage, StageError> {
    let mut stage = FilterStage::new(spec.clone(), identity.clone())?;
    stage.pin_upstream(upstream_cert, trust)?;
    stage.process(input)
}

/// Collects frames for one segment and produces the final bundle.
pub struct EncoderStage {
    identity: StageIdentity,
    chain: Vec<StageCertificate>,
    slots: Vec<Option<RawFrame>>,
    reference: Option<PerFrameProvenance>,
    sidecar: Option<SegmentSidecar>,
}

impl EncoderStage {
    pub fn new(identity: StageIdentity) -> Result<Self, StageError> {
        identity.require_role(Role::Encoder)?;
        Ok(Self {
            identity,
            chain: Vec::new(),
            slots: Vec::new(),
            reference: None,
            sidecar: None,
        })
    }

    pub fn certificate(&self) -> &StageCertificate {
        &self.identity.certificate
    }

    /// Pins the decoder certificate followed by each filter certificate.
    pub fn pin_chain(&mut self, chain: &[StageCertificate], trust: &TrustRoots) -> Result<(), StageError> {
        let (first, rest) = chain
            .split_first()
            .ok_or(StageError::UpstreamCertUntrusted("empty certificate chain"))?;
        check_pinnable(first, trust, &[Role::Decoder])?;
        for c in rest {
            check_pinnable(c, trust, &[Role::Filter])?;
        }
        self.chain = chain.to_vec();
        Ok(())
    }

    fn last_upstream(&self) -> Result<&StageCertificate, StageError> {
        self.chain.last().ok_or(StageError::NotPinned)
    }

    /// Verifies the decoder's sidecar and keeps it.
    pub fn accept_sidecar(&mut self, sidecar: SegmentSidecar) -> Result<(), StageError> {
        let decoder = self.chain.first().ok_or(StageError::NotPinned)?;
        if sidecar.decoder_certificate != *decoder
            || sidecar.decoder_measurement != decoder.measurement
            || !sidecar.verify_under(&decoder.stage_public_key)
        {
            return Err(StageError::AudioSigInvalid);
        }
        if self.sidecar.is_some() {
            return Err(StageError::ProvenanceMismatch("second sidecar for one segment"));
        }
        self.sidecar = Some(sidecar);
        Ok(())
    }

    /// Verifies one incoming frame and stores it under its tag.
    pub fn accept_frame(&mut self, msg: FrameMessage) -> Result<(), StageError> {
        let upstream = self.last_upstream()?;
        if msg.producer_certificate != *upstream || !msg.verify_under(&upstream.stage_public_key) {
            return Err(StageError::UpstreamSigInvalid {
                frame_id: Some(msg.frame_id()),
            });
        }
        if !msg.frame.is_well_formed() {
            return Err(StageError::MalformedFrame("pixel buffer does not match dimensions"));
        }
        let pfp = msg.per_frame_provenance;
        match &self.reference {
            None => {
                let filters = &pfp.filters_so_far;
                if filters.len() + 1 != self.chain.len()
                    || filters
                        .iter()
                        .zip(&self.chain[1..])
                        .any(|(f, c)| f.measurement != c.measurement)
                {
                    return Err(StageError::ProvenanceMismatch("filter list does not match stage chain"));
                }
                self.slots = vec![None; pfp.total_frames as usize];
            }
            Some(r) if !r.same_common_part(&pfp) => {
                let why = if r.video_id != pfp.video_id {
                    "video id"
                } else if r.segment_id != pfp.segment_id {
                    "segment id"
                } else if r.total_frames != pfp.total_frames {
                    "total frames"
                } else {
                    "filter list"
                };
                return Err(StageError::ProvenanceMismatch(why));
            }
            Some(_) => {}
        }
        let id = pfp.frame_tag.frame_id;
        let slot = self
            .slots
            .get_mut(id as usize)
            .ok_or(StageError::MalformedFrame("frame id beyond total frames"))?;
        if slot.is_some() {
            return Err(StageError::DuplicateFrame { frame_id: id });
        }
        *slot = Some(msg.frame);
        if self.reference.is_none() {
            self.reference = Some(pfp);
        }
        Ok(())
    }

    /// Checks completeness and agreement, then encodes and signs.
    pub fn finish(self) -> Result<FinalBundle, StageError> {
        let sidecar = self.sidecar.ok_or(StageError::MissingSidecar)?;
        let mut record = sidecar.provenance_remainder;
        let reference = self.reference.ok_or(StageError::MissingFrames {
            missing: record.segment.total_frames,
            first: 0,
        })?;
        if reference.video_id != record.video.video_id {
            return Err(StageError::ProvenanceMismatch("video id"));
        }
        if reference.segment_id != record.segment.segment_id {
            return Err(StageError::ProvenanceMismatch("segment id"));
        }
        if reference.total_frames != record.segment.total_frames {
            return Err(StageError::ProvenanceMismatch("total frames"));
        }
        let missing: Vec<u32> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i as u32)
            .collect();
        if let Some(&first) = missing.first() {
            return Err(StageError::MissingFrames {
                missing: missing.len() as u32,
                first,
            });
        }
        let frames: Vec<RawFrame> = self.slots.into_iter().map(|s| s.expect("complete")).collect();
        if frames
            .iter()
            .any(|f| (f.width, f.height) != (record.video.width, record.video.height))
        {
            return Err(StageError::ProvenanceMismatch("frame dimensions"));
        }
        let container = Container::new(frames, record.segment.frame_rate, sidecar.audio)
            .map_err(|_| StageError::MalformedFrame("frames do not form a container"))?;
        let container_bytes = container
            .encode()
            .map_err(|_| StageError::MalformedFrame("container too large"))?;

        record.filters = reference.filters_so_far;
        record.codec = Some(CodecInfo {
            decoder_measurement: sidecar.decoder_measurement,
            encoder_measurement: self.identity.certificate.measurement,
        });
        let sig_f_prime = crypto::sign(&self.identity.key, &container_bytes)?;
        let sig_pi_prime = crypto::sign(&self.identity.key, &record.encode()?)?;
        Ok(FinalBundle {
            container_bytes,
            provenance: record,
            sig_f_prime,
            sig_pi_prime,
            encoder_certificate: self.identity.certificate,
            stage_certificates: self.chain,
        })
    }
}

/// Encodes a segment from already-collected frames. `chain` is the decoder
/// certificate followed by each filter certificate, in order.
pub fn encoder_run(
    frames: Vec<FrameMessage>,
    sidecar: Option<SegmentSidecar>,
    chain: &[StageCertificate],
    trust: &TrustRoots,
    identity: &StageIdentity,
) -> Result<FinalBundle, StageError> {
    let mut enc = EncoderStage::new(identity.clone())?;
    enc.pin_chain(chain, trust)?;
    if let Some(s) = sidecar {
        enc.accept_sidecar(s)?;
    }
    for f in frames {
        enc.accept_frame(f)?;
    }
    enc.finish()
}

/// Reads the frames back out of a bundle's container.
pub fn bundle_frames(bundle: &FinalBundle) -> Result<Vec<RawFrame>, ContainerError> {
    Ok(Container::decode(&bundle.container_bytes)?.frames)
}

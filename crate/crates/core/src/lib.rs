//! Verifiable video provenance.
//!
//! A camera signs raw segments with a per-video key bound to two device
//! attestation reports. Fixed-function stages (decoder, filters, encoder)
//! each verify their input, transform it, extend the provenance and sign
//! the result, so a consumer only has to check the final bundle against a
//! set of trust roots.
//!
//! This crate is `no_std` and needs only `alloc`; file IO, transports,
//! scheduling and the command-line tools live in the `vron` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod attest;
pub mod camera;
pub mod codec;
pub mod crypto;
pub mod filters;
pub mod frame;
pub mod provenance;
pub mod stages;
pub mod tamper;
pub mod verifier;
pub mod wire;

#[cfg(target_has_atomic = "64")]
pub use attest::ManualClock;
pub use attest::{
    AttestationAuthority, AttestationReport, Clock, DeviceState, StageCertificate, TrustRoots,
};
pub use camera::{
    begin_recording, capture_segment, finish_recording, RecordingSession, SegmentParams,
    SignedSegment,
};
pub use crypto::{generate_keypair, measure_stage, sign, verify, KeyPair, Measurement, Role, VideoId};
pub use filters::{apply_pixel_filter, FilterKind, FilterSpec};
pub use frame::{Container, RawFrame};
pub use provenance::{
    canonical_decode, canonical_encode, compute_video_id, Fixed, FrameRate, PerFrameProvenance,
    Provenance, ProvenanceRecord,
};
pub use stages::{
    decoder_run, encoder_run, filter_stage_run, FinalBundle, FrameMessage, SegmentSidecar,
    StageError, StageIdentity,
};
pub use tamper::{AttackKind, Boundary, Interceptor};
pub use verifier::{verify_bundle, verify_video, VerificationReport, VerifierPolicy};
pub use wire::{wire_decode, wire_encode, MsgType, WireMessage};

//! Stage workers driving the core stages over message links.
//!
//! Setup is in-band: the decoder opens its frame link with a
//! `cert_exchange` message carrying its certificate, each filter pins the
//! last certificate of the chain it receives and forwards the chain with
//! its own appended, and the encoder pins the whole chain. A worker keeps
//! draining its input after a rejection so upstream never blocks; it drops
//! what it rejects and reports the first error when its input closes.

use std::sync::Arc;

use rand::rngs::OsRng;
use vron_core::attest::{AttestationError, StageCertifier};
use vron_core::codec::DecodeError;
use vron_core::crypto::{generate_keypair, sha256_parts, KeyPair, Measurement, Role};
use vron_core::stages::{
    decode_cert_chain, decoder_open, encode_cert_chain, EncoderStage, FilterStage, FinalBundle,
    FrameMessage, SegmentSidecar, StageError, StageIdentity,
};
use vron_core::attest::TrustRoots;
use vron_core::wire::{MsgType, WireMessage};
use vron_core::SignedSegment;

use crate::transport::{Sink, Source, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("transport failure: {0}")]
    Transport(#[from] TransportError),
    #[error("certification failed: {0}")]
    Attestation(#[from] AttestationError),
}

/// Where stage keys come from. `Seeded` derives every key from a seed and
/// a label, so runs are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySource {
    Random,
    Seeded(u64),
}

impl KeySource {
    pub fn key(&self, label: &str) -> KeyPair {
        match self {
            KeySource::Random => generate_keypair(&mut OsRng).expect("OS entropy available"),
            KeySource::Seeded(s) => KeyPair::from_seed(sha256_parts(&[&s.to_be_bytes(), label.as_bytes()]).0),
        }
    }
}

/// Generates a key inside the worker and has it certified.
pub fn new_identity(
    certifier: &dyn StageCertifier,
    keys: KeySource,
    label: &str,
    measurement: Measurement,
    role: Role,
) -> Result<StageIdentity, AttestationError> {
    let key = keys.key(label);
    let certificate = certifier.certify_stage(key.public_key(), measurement, role)?;
    Ok(StageIdentity { key, certificate })
}

pub type SharedCertifier = Arc<dyn StageCertifier>;

fn malformed(reason: &'static str) -> StageError {
    StageError::MalformedMessage(DecodeError::new(0, reason))
}

fn keep_first(slot: &mut Option<WorkerError>, e: impl Into<WorkerError>) {
    if slot.is_none() {
        *slot = Some(e.into());
    }
}

fn finish(first: Option<WorkerError>) -> Result<(), WorkerError> {
    first.map_or(Ok(()), Err)
}

/// Verifies the segment arriving on `input`, then emits the certificate,
/// the sidecar (on its own link, closed straight after) and every frame.
pub fn decoder_worker(
    identity: &StageIdentity,
    trust: &TrustRoots,
    mut input: Source,
    mut frames: Sink,
    mut sidecar: Sink,
) -> Result<(), WorkerError> {
    // a large segment arrives as several Segment messages; read to EOF so
    // the sender is never blocked on us
    let mut bytes = Vec::new();
    let (mut chunks, mut unexpected) = (0usize, false);
    while let Some(m) = input.recv()? {
        if m.msg_type == MsgType::Segment {
            bytes.extend_from_slice(&m.payload);
            chunks += 1;
        } else {
            unexpected = true;
        }
    }
    if unexpected {
        return Err(malformed("expected only segment messages").into());
    }
    if chunks == 0 {
        return Err(malformed("no segment arrived").into());
    }
    let segment = SignedSegment::decode(&bytes).map_err(StageError::MalformedMessage)?;
    drop(bytes);
    let mut decoded = decoder_open(&segment, trust, identity)?;
    drop(segment);

    let chain = encode_cert_chain(std::slice::from_ref(&identity.certificate)).map_err(StageError::from)?;
    frames.send(&WireMessage::new(MsgType::CertExchange, chain))?;
    let sc = decoded.take_sidecar().expect("fresh segment has a sidecar");
    sidecar.send(&WireMessage::new(MsgType::Sidecar, sc.encode().map_err(StageError::from)?))?;
    drop(sidecar);
    while let Some(f) = decoded.next_frame(identity) {
        let payload = f?.encode().map_err(StageError::from)?;
        frames.send(&WireMessage::new(MsgType::Frame, payload))?;
    }
    Ok(())
}

/// Pins the upstream certificate from the chain it receives, then filters
/// frames one at a time.
pub fn filter_worker(
    mut stage: FilterStage,
    trust: &TrustRoots,
    mut input: Source,
    mut output: Sink,
) -> Result<(), WorkerError> {
    let mut first: Option<WorkerError> = None;
    let mut pinned = false;
    loop {
        let msg = match input.recv() {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                keep_first(&mut first, e);
                break;
            }
        };
        match msg.msg_type {
            MsgType::CertExchange if !pinned => {
                let pinned_chain = decode_cert_chain(&msg.payload)
                    .map_err(StageError::MalformedMessage)
                    .and_then(|mut chain| {
                        let last = chain.last().ok_or(StageError::UpstreamCertUntrusted("empty certificate chain"))?;
                        stage.pin_upstream(last, trust)?;
                        chain.push(stage.certificate().clone());
                        Ok(chain)
                    });
                match pinned_chain {
                    Ok(chain) => {
                        pinned = true;
                        let bytes = encode_cert_chain(&chain).map_err(StageError::from)?;
                        output.send(&WireMessage::new(MsgType::CertExchange, bytes))?;
                    }
                    Err(e) => keep_first(&mut first, e),
                }
            }
            MsgType::Frame => {
                let out = FrameMessage::decode(&msg.payload)
                    .map_err(StageError::MalformedMessage)
                    .and_then(|f| stage.process(&f));
                match out {
                    Ok(f) => {
                        let payload = f.encode().map_err(StageError::from)?;
                        output.send(&WireMessage::new(MsgType::Frame, payload))?;
                    }
                    Err(e) => keep_first(&mut first, e),
                }
            }
            _ => keep_first(&mut first, malformed("unexpected message on a frame link")),
        }
    }
    finish(first)
}

/// Pins the chain, takes the sidecar, collects frames until the link
/// closes and signs the bundle. Refuses to finish after any rejection.
pub fn encoder_worker(
    mut stage: EncoderStage,
    trust: &TrustRoots,
    mut frames: Source,
    mut sidecar: Source,
) -> Result<FinalBundle, WorkerError> {
    let mut first: Option<WorkerError> = None;
    match frames.recv() {
        Ok(Some(m)) if m.msg_type == MsgType::CertExchange => {
            let pinned = decode_cert_chain(&m.payload)
                .map_err(StageError::MalformedMessage)
                .and_then(|chain| stage.pin_chain(&chain, trust));
            if let Err(e) = pinned {
                keep_first(&mut first, e);
            }
        }
        Ok(Some(_)) => keep_first(&mut first, StageError::NotPinned),
        Ok(None) => keep_first(&mut first, StageError::NotPinned),
        Err(e) => keep_first(&mut first, e),
    }

    loop {
        match sidecar.recv() {
            Ok(Some(m)) if m.msg_type == MsgType::Sidecar => {
                let r = SegmentSidecar::decode(&m.payload)
                    .map_err(StageError::MalformedMessage)
                    .and_then(|s| stage.accept_sidecar(s));
                if let Err(e) = r {
                    keep_first(&mut first, e);
                }
            }
            Ok(Some(_)) => keep_first(&mut first, malformed("unexpected message on the sidecar link")),
            Ok(None) => break,
            Err(e) => {
                keep_first(&mut first, e);
                break;
            }
        }
    }

    loop {
        match frames.recv() {
            Ok(Some(m)) if m.msg_type == MsgType::Frame => {
                let r = FrameMessage::decode(&m.payload)
                    .map_err(StageError::MalformedMessage)
                    .and_then(|f| stage.accept_frame(f));
                if let Err(e) = r {
                    keep_first(&mut first, e);
                }
            }
            Ok(Some(_)) => keep_first(&mut first, malformed("unexpected message on a frame link")),
            Ok(None) => break,
            Err(e) => {
                keep_first(&mut first, e);
                break;
            }
        }
    }
    if let Some(e) = first {
        return Err(e);
    }
    Ok(stage.finish()?)
}

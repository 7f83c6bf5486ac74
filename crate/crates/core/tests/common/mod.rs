#![allow(dead_code)]

use vron_core::attest::{AttestationAuthority, ManualClock, StageCertifier, TrustRoots};
use vron_core::camera::{record_video, SignedSegment};
use vron_core::crypto::{sha256, Digest, KeyPair, Measurement, Role};
use vron_core::filters::FilterSpec;
use vron_core::frame::synthetic_clip;
use vron_core::provenance::FrameRate;
use vron_core::stages::{
    builtin_trust_roots, decoder_measurement, decoder_open, encoder_measurement, EncoderStage,
    FilterStage, FinalBundle, FrameMessage, SegmentSidecar, StageError, StageIdentity,
};
use vron_core::tamper::{Boundary, Interceptor};
use vron_core::verifier::VerifierPolicy;
use vron_core::wire::{MsgType, WireMessage};
use vron_core::DeviceState;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub struct World {
    pub authority: AttestationAuthority,
    pub trust: TrustRoots,
    pub policy: VerifierPolicy,
    pub app: Digest,
}

impl World {
    pub fn new() -> Self {
        let authority = AttestationAuthority::new(
            KeyPair::from_seed([0xA5; 32]),
            Box::new(ManualClock::new(1_700_000_000)),
        );
        let app = sha256(b"test camera app");
        let mut trust = builtin_trust_roots(authority.public_key());
        trust.approve_app(app);
        let policy = VerifierPolicy::new(trust.clone());
        Self {
            authority,
            trust,
            policy,
            app,
        }
    }

    pub fn identity(&self, role: Role, measurement: Measurement, seed: u64) -> StageIdentity {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&seed.to_be_bytes());
        s[8] = role as u8;
        s[9..].copy_from_slice(&measurement.as_bytes()[..23]);
        let key = KeyPair::from_seed(s);
        let certificate = self
            .authority
            .certify_stage(key.public_key(), measurement, role)
            .unwrap();
        StageIdentity { key, certificate }
    }

    pub fn record(&self, w: u32, h: u32, frames: u32, segment_size: usize, seed: u64) -> Vec<SignedSegment> {
        self.record_as(w, h, frames, segment_size, seed, DeviceState::Genuine)
    }

    pub fn record_as(
        &self,
        w: u32,
        h: u32,
        frames: u32,
        segment_size: usize,
        seed: u64,
        state: DeviceState,
    ) -> Vec<SignedSegment> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        record_video(
            &self.authority,
            &mut rng,
            state,
            self.app,
            synthetic_clip(w, h, frames),
            segment_size,
            FrameRate::new(30, 1),
            1_700_000_000,
            Some(b"pcm".to_vec()),
        )
        .unwrap()
        .0
    }
}

/// Which stage rejected, counted from the decoder (0) to the encoder
/// (chain length + 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub stage: usize,
    pub error: StageError,
}

pub struct RunOutput {
    pub result: Result<FinalBundle, Rejection>,
    /// Messages as sent on each hop before any interceptor ran: index 0 is
    /// camera->decoder, 1 the sidecar link, 2.. the frame links in order.
    pub hops: Vec<Vec<WireMessage>>,
}

impl RunOutput {
    pub fn hop(&self, b: Boundary, chain_len: usize) -> &[WireMessage] {
        &self.hops[hop_index(b, chain_len)]
    }
}

/// Index into `RunOutput::hops` for a boundary; filter->filter means the
/// first such link.
pub fn hop_index(b: Boundary, chain_len: usize) -> usize {
    match b {
        Boundary::CameraToDecoder => 0,
        Boundary::DecoderToEncoderSidecar => 1,
        Boundary::DecoderToFilter => 2,
        Boundary::FilterToFilter => 3,
        Boundary::FilterToEncoder => 2 + chain_len,
    }
}

fn relay(msgs: Vec<WireMessage>, icpt: Option<&mut Box<dyn Interceptor>>) -> Vec<WireMessage> {
    match icpt {
        None => msgs,
        Some(i) => {
            let mut out = Vec::new();
            for m in msgs {
                i.on_message(m, &mut out);
            }
            i.on_end(&mut out);
            out
        }
    }
}

fn frames_of(msgs: &[WireMessage]) -> Vec<Result<FrameMessage, StageError>> {
    msgs.iter()
        .filter(|m| m.msg_type == MsgType::Frame)
        .map(|m| FrameMessage::decode(&m.payload).map_err(StageError::MalformedMessage))
        .collect()
}

fn frame_msgs(frames: &[FrameMessage]) -> Vec<WireMessage> {
    frames
        .iter()
        .map(|f| WireMessage::new(MsgType::Frame, f.encode().unwrap()))
        .collect()
}

/// Runs one segment through decoder, filters and encoder sequentially,
/// passing every hop through its wire encoding and optionally through an
/// interceptor at `attack.0`. Stages drop frames they reject and the most
/// upstream rejection is reported.
pub fn run(
    world: &World,
    segment: &SignedSegment,
    chain: &[FilterSpec],
    key_seed: u64,
    mut attack: Option<(Boundary, Box<dyn Interceptor>)>,
) -> RunOutput {
    let n = chain.len();
    let mut hops: Vec<Vec<WireMessage>> = Vec::new();
    let mut first_err: Option<Rejection> = None;
    let note = |stage: usize, e: StageError, first: &mut Option<Rejection>| {
        if first.as_ref().is_none_or(|r| stage < r.stage) {
            *first = Some(Rejection { stage, error: e });
        }
    };
    let boundary_of_link = |i: usize| -> Boundary {
        if i == n {
            Boundary::FilterToEncoder
        } else if i == 0 {
            Boundary::DecoderToFilter
        } else {
            Boundary::FilterToFilter
        }
    };
    let matches = |attack: &Option<(Boundary, Box<dyn Interceptor>)>, b: Boundary, link: Option<usize>| {
        attack.as_ref().is_some_and(|(ab, _)| {
            *ab == b && (b != Boundary::FilterToFilter || link == Some(1))
        })
    };

    // camera -> decoder
    let seg_msgs = vec![WireMessage::new(MsgType::Segment, segment.encode().unwrap())];
    hops.push(seg_msgs.clone());
    let delivered = if matches(&attack, Boundary::CameraToDecoder, None) {
        relay(seg_msgs, attack.as_mut().map(|a| &mut a.1))
    } else {
        seg_msgs
    };

    let dec_id = world.identity(Role::Decoder, decoder_measurement(), key_seed);
    let mut frames: Vec<FrameMessage> = Vec::new();
    let mut sidecar_msgs = Vec::new();
    match delivered
        .iter()
        .find(|m| m.msg_type == MsgType::Segment)
        .map(|m| SignedSegment::decode(&m.payload))
    {
        None => note(0, StageError::MissingFrames { missing: 0, first: 0 }, &mut first_err),
        Some(Err(e)) => note(0, StageError::MalformedMessage(e), &mut first_err),
        Some(Ok(seg)) => match decoder_open(&seg, &world.trust, &dec_id) {
            Err(e) => note(0, e, &mut first_err),
            Ok(mut d) => {
                let sc = d.take_sidecar().unwrap();
                sidecar_msgs.push(WireMessage::new(MsgType::Sidecar, sc.encode().unwrap()));
                while let Some(f) = d.next_frame(&dec_id) {
                    frames.push(f.unwrap());
                }
            }
        },
    }
    hops.push(sidecar_msgs.clone());
    let sidecar_delivered = if matches(&attack, Boundary::DecoderToEncoderSidecar, None) {
        relay(sidecar_msgs, attack.as_mut().map(|a| &mut a.1))
    } else {
        sidecar_msgs
    };

    let mut upstream = dec_id.certificate.clone();
    let mut chain_certs = vec![dec_id.certificate.clone()];
    for (i, spec) in chain.iter().enumerate() {
        let msgs = frame_msgs(&frames);
        hops.push(msgs.clone());
        let delivered = if matches(&attack, boundary_of_link(i), Some(i)) {
            relay(msgs, attack.as_mut().map(|a| &mut a.1))
        } else {
            msgs
        };
        let id = world.identity(Role::Filter, spec.kind.measurement(), key_seed + 1 + i as u64);
        let mut stage = FilterStage::new(spec.clone(), id).unwrap();
        stage.pin_upstream(&upstream, &world.trust).unwrap();
        frames.clear();
        for f in frames_of(&delivered) {
            match f.and_then(|f| stage.process(&f)) {
                Ok(out) => frames.push(out),
                Err(e) => note(i + 1, e, &mut first_err),
            }
        }
        upstream = stage.certificate().clone();
        chain_certs.push(upstream.clone());
    }

    let msgs = frame_msgs(&frames);
    hops.push(msgs.clone());
    let delivered = if matches(&attack, boundary_of_link(n), Some(n)) {
        relay(msgs, attack.as_mut().map(|a| &mut a.1))
    } else {
        msgs
    };
    let enc_id = world.identity(Role::Encoder, encoder_measurement(), key_seed + 100);
    let mut enc = EncoderStage::new(enc_id).unwrap();
    enc.pin_chain(&chain_certs, &world.trust).unwrap();
    for m in sidecar_delivered.iter().filter(|m| m.msg_type == MsgType::Sidecar) {
        match SegmentSidecar::decode(&m.payload) {
            Ok(s) => {
                if let Err(e) = enc.accept_sidecar(s) {
                    note(n + 1, e, &mut first_err);
                }
            }
            Err(e) => note(n + 1, StageError::MalformedMessage(e), &mut first_err),
        }
    }
    for f in frames_of(&delivered) {
        if let Err(e) = f.and_then(|f| enc.accept_frame(f)) {
            note(n + 1, e, &mut first_err);
        }
    }
    let result = match enc.finish() {
        Err(e) => {
            note(n + 1, e, &mut first_err);
            Err(first_err.unwrap())
        }
        Ok(b) => match first_err {
            Some(r) => Err(r),
            None => Ok(b),
        },
    };
    RunOutput { result, hops }
}

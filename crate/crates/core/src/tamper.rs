//! Attacks on bundles, videos and in-flight messages.
//!
//! The attacker controls storage and transport but cannot forge anyone
//! else's signatures. With `resign` set it re-signs under its own key and
//! presents a certificate the authority never issued.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::camera::SignedSegment;
use crate::crypto::{self, KeyPair, Measurement};
use crate::frame::{Container, RawFrame};
use crate::provenance::{compute_video_id, FilterEntry, FrameRate};
use crate::stages::{FinalBundle, FrameMessage, SegmentSidecar};
use crate::wire::{segment_messages, wire_decode, wire_encode, MsgType, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackKind {
    /// Control: no tampering.
    None,
    FrameDelete,
    FrameSubstitute,
    FrameCrop,
    SegmentOmit,
    SegmentSubstitute,
    FpsChange,
    FilterListEdit,
    FilterReorderClaim,
    OriginChange,
    FrameReorderInFlight,
    DimensionLie,
}

impl AttackKind {
    pub const ATTACKS: [AttackKind; 11] = [
        AttackKind::FrameDelete,
        AttackKind::FrameSubstitute,
        AttackKind::FrameCrop,
        AttackKind::SegmentOmit,
        AttackKind::SegmentSubstitute,
        AttackKind::FpsChange,
        AttackKind::FilterListEdit,
        AttackKind::FilterReorderClaim,
        AttackKind::OriginChange,
        AttackKind::FrameReorderInFlight,
        AttackKind::DimensionLie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::FrameDelete => "frame_delete",
            AttackKind::FrameSubstitute => "frame_substitute",
            AttackKind::FrameCrop => "frame_crop",
            AttackKind::SegmentOmit => "segment_omit",
            AttackKind::SegmentSubstitute => "segment_substitute",
            AttackKind::FpsChange => "fps_change",
            AttackKind::FilterListEdit => "filter_list_edit",
            AttackKind::FilterReorderClaim => "filter_reorder_claim",
            AttackKind::OriginChange => "origin_change",
            AttackKind::FrameReorderInFlight => "frame_reorder_in_flight",
            AttackKind::DimensionLie => "dimension_lie",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        core::iter::once(AttackKind::None)
            .chain(Self::ATTACKS)
            .find(|k| k.name() == s)
    }

    pub fn bundle_level(self) -> bool {
        matches!(
            self,
            AttackKind::None
                | AttackKind::FpsChange
                | AttackKind::FilterListEdit
                | AttackKind::FilterReorderClaim
                | AttackKind::OriginChange
                | AttackKind::DimensionLie
                | AttackKind::FrameCrop
        )
    }

    pub fn video_level(self) -> bool {
        matches!(
            self,
            AttackKind::None | AttackKind::SegmentOmit | AttackKind::SegmentSubstitute
        )
    }

    pub fn in_flight_at(self, boundary: Boundary) -> bool {
        use Boundary::*;
        match self {
            AttackKind::None | AttackKind::FrameDelete => true,
            AttackKind::FrameSubstitute => boundary != CameraToDecoder,
            AttackKind::FrameReorderInFlight => {
                matches!(boundary, DecoderToFilter | FilterToFilter | FilterToEncoder)
            }
            AttackKind::FrameCrop => boundary != DecoderToEncoderSidecar,
            _ => false,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A hop between two parties that the untrusted transport carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Boundary {
    CameraToDecoder,
    DecoderToFilter,
    FilterToFilter,
    FilterToEncoder,
    DecoderToEncoderSidecar,
}

impl Boundary {
    pub const ALL: [Boundary; 5] = [
        Boundary::CameraToDecoder,
        Boundary::DecoderToFilter,
        Boundary::FilterToFilter,
        Boundary::FilterToEncoder,
        Boundary::DecoderToEncoderSidecar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Boundary::CameraToDecoder => "camera->decoder",
            Boundary::DecoderToFilter => "decoder->filter",
            Boundary::FilterToFilter => "filter->filter",
            Boundary::FilterToEncoder => "filter->encoder",
            Boundary::DecoderToEncoderSidecar => "decoder->encoder_sidecar",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TamperError {
    #[error("attack {kind} is not applicable {context}")]
    InapplicableKind {
        kind: AttackKind,
        context: &'static str,
    },
}

fn inapplicable(kind: AttackKind, context: &'static str) -> TamperError {
    TamperError::InapplicableKind { kind, context }
}

#[derive(Debug, Clone, Default)]
pub struct TamperOptions<'a> {
    /// Re-sign the result under an attacker key with a forged certificate.
    pub resign: bool,
    /// Another video's bundle to borrow from (origin change).
    pub donor: Option<&'a FinalBundle>,
}

fn attacker_key(rng: &mut ChaCha20Rng) -> KeyPair {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    KeyPair::from_seed(seed)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Cuts the frame rate by 75%, e.g. 30/1 becomes 15/2.
pub fn quarter_rate(r: FrameRate) -> FrameRate {
    let num = r.num as u64;
    let den = r.den as u64 * 4;
    let g = gcd(num, den).max(1);
    FrameRate::new((num / g) as u32, (den / g).min(u32::MAX as u64) as u32)
}

fn crop_frame(f: &RawFrame) -> RawFrame {
    let (w, h) = if f.width > 1 {
        (f.width.div_ceil(2), f.height)
    } else {
        (f.width, f.height.div_ceil(2).min(f.height.saturating_sub(1)).max(1))
    };
    let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h {
        let start = (y * f.width) as usize * 3;
        pixels.extend_from_slice(&f.pixels[start..start + w as usize * 3]);
    }
    RawFrame {
        width: w,
        height: h,
        pixels,
    }
}

/// Tampers with a single final bundle.
pub fn tamper_bundle(
    bundle: &FinalBundle,
    kind: AttackKind,
    seed: u64,
    opts: &TamperOptions<'_>,
) -> Result<FinalBundle, TamperError> {
    if !kind.bundle_level() {
        return Err(inapplicable(kind, "to a single bundle"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = bundle.clone();
    let pi = &mut out.provenance;
    match kind {
        AttackKind::None => return Ok(out),
        AttackKind::FpsChange => {
            pi.segment.frame_rate = quarter_rate(pi.segment.frame_rate);
        }
        AttackKind::FilterListEdit => {
            let mut m = [0u8; 32];
            rng.fill_bytes(&mut m);
            pi.filters.push(FilterEntry {
                name: "undesired".into(),
                measurement: Measurement::from_bytes(m),
                parameters: Vec::new(),
            });
        }
        AttackKind::FilterReorderClaim => {
            let before = pi.filters.clone();
            pi.filters.reverse();
            if pi.filters == before {
                return Err(inapplicable(kind, "to a bundle whose filter order is symmetric"));
            }
        }
        AttackKind::OriginChange => match opts.donor {
            Some(d) => {
                pi.camera = d.provenance.camera.clone();
                pi.video.video_id = d.provenance.video.video_id;
            }
            None => {
                let fake = attacker_key(&mut rng);
                pi.camera.camera_certificate = fake.public_key().as_bytes().to_vec();
                pi.video.video_id = compute_video_id(fake.public_key().as_bytes()).expect("nonempty");
            }
        },
        AttackKind::DimensionLie => {
            pi.video.width = pi.video.width.div_ceil(2);
            pi.video.height = pi.video.height.div_ceil(2);
        }
        AttackKind::FrameCrop => {
            let Ok(c) = Container::decode(&out.container_bytes) else {
                return Err(inapplicable(kind, "to a bundle with an unreadable container"));
            };
            let frames: Vec<RawFrame> = c.frames.iter().map(crop_frame).collect();
            let (w, h) = (frames[0].width, frames[0].height);
            let cropped = Container::new(frames, c.frame_rate, c.audio).expect("uniform crop");
            out.container_bytes = cropped.encode().expect("smaller than input");
            out.provenance.video.width = w;
            out.provenance.video.height = h;
        }
        _ => unreachable!("filtered by bundle_level"),
    }
    if opts.resign {
        let key = attacker_key(&mut rng);
        out.sig_f_prime = crypto::sign(&key, &out.container_bytes).expect("fresh key");
        out.sig_pi_prime =
            crypto::sign(&key, &out.provenance.encode().expect("valid record")).expect("fresh key");
        // copy of the genuine certificate with the attacker's key swapped in
        out.encoder_certificate.stage_public_key = key.public_key();
    }
    Ok(out)
}

/// Tampers with a multi-segment video.
pub fn tamper_video(
    bundles: &[FinalBundle],
    kind: AttackKind,
    seed: u64,
    donor: Option<&[FinalBundle]>,
) -> Result<Vec<FinalBundle>, TamperError> {
    if !kind.video_level() {
        return Err(inapplicable(kind, "to a whole video"));
    }
    let mut out = bundles.to_vec();
    if out.is_empty() || kind == AttackKind::None {
        return Ok(out);
    }
    let i = (ChaCha20Rng::seed_from_u64(seed).next_u64() % out.len() as u64) as usize;
    match kind {
        AttackKind::SegmentOmit => {
            out.remove(i);
        }
        AttackKind::SegmentSubstitute => {
            let id = out[i].provenance.segment.segment_id;
            let repl = donor
                .into_iter()
                .flatten()
                .find(|b| b.provenance.segment.segment_id == id)
                .ok_or(inapplicable(kind, "without a donor segment with the same id"))?;
            out[i] = repl.clone();
        }
        _ => unreachable!("filtered by video_level"),
    }
    Ok(out)
}

/// Transforms the message stream on one hop. Installed into the transport
/// by the scheduler.
pub trait Interceptor: Send {
    fn on_message(&mut self, msg: WireMessage, out: &mut Vec<WireMessage>);

    /// Called once the upstream side closes.
    fn on_end(&mut self, _out: &mut Vec<WireMessage>) {}
}

/// Forwards everything unchanged.
pub struct Passthrough;

impl Interceptor for Passthrough {
    fn on_message(&mut self, msg: WireMessage, out: &mut Vec<WireMessage>) {
        out.push(msg);
    }
}

struct FlightAttack {
    kind: AttackKind,
    boundary: Boundary,
    rng: ChaCha20Rng,
    target: Option<u32>,
    donor: Vec<WireMessage>,
    held: Vec<WireMessage>,
    /// Segment chunks, reassembled before tampering.
    segment: Option<Vec<u8>>,
}

impl FlightAttack {
    fn frame_id(msg: &WireMessage) -> Option<(u32, u32)> {
        let f = FrameMessage::decode(&msg.payload).ok()?;
        Some((f.frame_id(), f.per_frame_provenance.total_frames))
    }

    fn is_target(&mut self, msg: &WireMessage) -> bool {
        let Some((id, total)) = Self::frame_id(msg) else {
            return false;
        };
        let target = *self
            .target
            .get_or_insert_with(|| (self.rng.next_u64() % total.max(1) as u64) as u32);
        id == target
    }

    fn tamper_segment(&mut self, bytes: Vec<u8>) -> Vec<u8> {
        let Ok(mut seg) = SignedSegment::decode(&bytes) else {
            return bytes;
        };
        let Ok(mut c) = Container::decode(&seg.container_bytes) else {
            return bytes;
        };
        match self.kind {
            AttackKind::FrameDelete if c.frames.len() > 1 => {
                let i = (self.rng.next_u64() % c.frames.len() as u64) as usize;
                c.frames.remove(i);
            }
            AttackKind::FrameDelete => {
                // single-frame segment: leave an empty frame list behind
                let mut container = seg.container_bytes.clone();
                container[13..17].copy_from_slice(&0u32.to_be_bytes());
                seg.container_bytes = container;
                return seg.encode().unwrap_or(bytes);
            }
            AttackKind::FrameCrop => {
                c.frames = c.frames.iter().map(crop_frame).collect();
                c.width = c.frames[0].width;
                c.height = c.frames[0].height;
            }
            _ => return bytes,
        }
        let Ok(container) = c.encode() else { return bytes };
        seg.container_bytes = container;
        seg.encode().unwrap_or(bytes)
    }

    fn crop_message(msg: WireMessage) -> WireMessage {
        let Ok(mut f) = FrameMessage::decode(&msg.payload) else {
            return msg;
        };
        f.frame = crop_frame(&f.frame);
        WireMessage::new(msg.msg_type, f.encode().unwrap_or(msg.payload))
    }

    fn substitute(&mut self, msg: WireMessage) -> WireMessage {
        let Some((id, _)) = Self::frame_id(&msg) else {
            return msg;
        };
        self.donor
            .iter()
            .find(|d| d.msg_type == MsgType::Frame && Self::frame_id(d).map(|x| x.0) == Some(id))
            .cloned()
            .unwrap_or(msg)
    }
}

impl Interceptor for FlightAttack {
    fn on_message(&mut self, msg: WireMessage, out: &mut Vec<WireMessage>) {
        use AttackKind::*;
        match (self.boundary, msg.msg_type) {
            (Boundary::CameraToDecoder, MsgType::Segment) => {
                self.segment.get_or_insert_with(Vec::new).extend_from_slice(&msg.payload);
            }
            (Boundary::DecoderToEncoderSidecar, MsgType::Sidecar) => match self.kind {
                FrameDelete => {}
                FrameSubstitute => {
                    let repl = self
                        .donor
                        .iter()
                        .find(|d| d.msg_type == MsgType::Sidecar && SegmentSidecar::decode(&d.payload).is_ok())
                        .cloned()
                        .unwrap_or(msg);
                    out.push(repl);
                }
                _ => out.push(msg),
            },
            (_, MsgType::Frame) => {
                let kind = self.kind;
                if kind == FrameReorderInFlight {
                    self.held.push(msg);
                    return;
                }
                if !self.is_target(&msg) {
                    out.push(msg);
                    return;
                }
                match kind {
                    FrameDelete => {}
                    FrameSubstitute => {
                        let m = self.substitute(msg);
                        out.push(m);
                    }
                    FrameCrop => out.push(Self::crop_message(msg)),
                    _ => out.push(msg),
                }
            }
            _ => out.push(msg),
        }
    }

    fn on_end(&mut self, out: &mut Vec<WireMessage>) {
        if let Some(bytes) = self.segment.take() {
            let bytes = self.tamper_segment(bytes);
            out.extend(segment_messages(&bytes));
        }
        let mut held = core::mem::take(&mut self.held);
        shuffle(&mut held, &mut self.rng);
        out.extend(held);
    }
}

/// Fisher-Yates; for two or more items the result is never the identity.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha20Rng) {
    let n = items.len();
    if n < 2 {
        return;
    }
    loop {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            apply_permutation(items, &perm);
            return;
        }
    }
}

fn apply_permutation<T>(items: &mut [T], perm: &[usize]) {
    // cycle-following in-place permutation: items[i] <- items[perm[i]]
    let mut done = alloc::vec![false; items.len()];
    for start in 0..items.len() {
        if done[start] {
            continue;
        }
        let mut i = start;
        loop {
            done[i] = true;
            let j = perm[i];
            if j == start {
                break;
            }
            items.swap(i, j);
            i = j;
        }
    }
}

/// Builds an interceptor applying `kind` at `boundary`. `donor` supplies
/// messages recorded on the same hop of another pipeline run (needed for
/// substitution).
pub fn tamper_in_flight(
    boundary: Boundary,
    kind: AttackKind,
    seed: u64,
    donor: Vec<WireMessage>,
) -> Result<Box<dyn Interceptor>, TamperError> {
    if !kind.in_flight_at(boundary) {
        return Err(inapplicable(kind, "at this boundary"));
    }
    if kind == AttackKind::None {
        return Ok(Box::new(Passthrough));
    }
    if kind == AttackKind::FrameSubstitute && donor.is_empty() {
        return Err(inapplicable(kind, "without donor messages"));
    }
    Ok(Box::new(FlightAttack {
        kind,
        boundary,
        rng: ChaCha20Rng::seed_from_u64(seed),
        target: None,
        donor,
        held: Vec::new(),
        segment: None,
    }))
}

/// Flips one bit in the `index`-th message on a hop (counting every message
/// type). A message that no longer parses as a frame is dropped, as a
/// receiver would.
pub struct BitFlip {
    pub index: usize,
    pub bit: u64,
    seen: usize,
}

impl BitFlip {
    pub fn new(index: usize, bit: u64) -> Self {
        Self { index, bit, seen: 0 }
    }
}

impl Interceptor for BitFlip {
    fn on_message(&mut self, msg: WireMessage, out: &mut Vec<WireMessage>) {
        let i = self.seen;
        self.seen += 1;
        if i != self.index {
            out.push(msg);
            return;
        }
        let mut bytes = wire_encode(&msg).expect("relayed message fits");
        let bit = (self.bit % (bytes.len() as u64 * 8)) as usize;
        bytes[bit / 8] ^= 1 << (bit % 8);
        if let Ok((m, used)) = wire_decode(&bytes) {
            if used == bytes.len() {
                out.push(m);
            }
        }
    }
}

/// Applies a fixed permutation to the frame messages of a hop, emitting
/// them once the upstream side closes.
pub struct Permute {
    order: Vec<usize>,
    held: Vec<WireMessage>,
}

impl Permute {
    /// `order[i]` is the arrival index of the frame delivered i-th.
    pub fn new(order: Vec<usize>) -> Self {
        Self {
            order,
            held: Vec::new(),
        }
    }
}

impl Interceptor for Permute {
    fn on_message(&mut self, msg: WireMessage, out: &mut Vec<WireMessage>) {
        if msg.msg_type == MsgType::Frame {
            self.held.push(msg);
        } else {
            out.push(msg);
        }
    }

    fn on_end(&mut self, out: &mut Vec<WireMessage>) {
        let mut held: Vec<Option<WireMessage>> = core::mem::take(&mut self.held).into_iter().map(Some).collect();
        for &i in &self.order {
            if let Some(m) = held.get_mut(i).and_then(Option::take) {
                out.push(m);
            }
        }
        out.extend(held.into_iter().flatten());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_rate_examples() {
        assert_eq!(quarter_rate(FrameRate::new(30, 1)), FrameRate::new(15, 2));
        assert_eq!(quarter_rate(FrameRate::new(30000, 1001)), FrameRate::new(7500, 1001));
    }

    #[test]
    fn names_roundtrip() {
        for k in AttackKind::ATTACKS {
            assert_eq!(AttackKind::from_name(k.name()), Some(k));
        }
        assert_eq!(AttackKind::from_name("none"), Some(AttackKind::None));
        for b in Boundary::ALL {
            assert_eq!(Boundary::from_name(b.name()), Some(b));
        }
    }

    #[test]
    fn every_attack_has_a_level() {
        for k in AttackKind::ATTACKS {
            let in_flight = Boundary::ALL.iter().any(|b| k.in_flight_at(*b));
            assert!(k.bundle_level() || k.video_level() || in_flight, "{k}");
        }
    }

    #[test]
    fn shuffle_is_never_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for n in 2..8 {
            for _ in 0..50 {
                let mut v: Vec<usize> = (0..n).collect();
                shuffle(&mut v, &mut rng);
                assert_ne!(v, (0..n).collect::<Vec<_>>());
                let mut s = v.clone();
                s.sort();
                assert_eq!(s, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn permute_applies_order() {
        let mut p = Permute::new(alloc::vec![2, 0, 1]);
        let mut out = Vec::new();
        for i in 0..3u8 {
            p.on_message(WireMessage::new(MsgType::Frame, alloc::vec![i]), &mut out);
        }
        p.on_message(WireMessage::new(MsgType::CertExchange, alloc::vec![9]), &mut out);
        p.on_end(&mut out);
        let got: Vec<u8> = out.iter().map(|m| m.payload[0]).collect();
        assert_eq!(got, alloc::vec![9, 2, 0, 1]);
    }

    #[test]
    fn crop_halves_width() {
        let f = crate::frame::synthetic_frame(5, 3, 0);
        let c = crop_frame(&f);
        assert_eq!((c.width, c.height), (3, 3));
        assert!(c.is_well_formed());
        let thin = crate::frame::synthetic_frame(1, 3, 0);
        let c = crop_frame(&thin);
        assert_eq!((c.width, c.height), (1, 2));
    }
}

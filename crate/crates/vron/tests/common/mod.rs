#![allow(dead_code)]

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vron::camera::record_container;
use vron::io::{default_app_identity, default_trust};
use vron::scheduler::Pipeline;
use vron::workers::KeySource;
use vron_core::attest::{AttestationAuthority, ManualClock, TrustRoots};
use vron_core::camera::SignedSegment;
use vron_core::crypto::KeyPair;
use vron_core::frame::{synthetic_clip, Container};
use vron_core::provenance::FrameRate;
use vron_core::verifier::VerifierPolicy;
use vron_core::DeviceState;

pub const T0: u64 = 1_700_000_000;

pub struct Env {
    pub authority: Arc<AttestationAuthority>,
    pub trust: TrustRoots,
    pub policy: VerifierPolicy,
}

impl Env {
    pub fn new() -> Self {
        let key = KeyPair::from_seed([0x5A; 32]);
        let trust = default_trust(key.public_key());
        let authority = Arc::new(AttestationAuthority::new(key, Box::new(ManualClock::new(T0))));
        let policy = VerifierPolicy::new(trust.clone());
        Self {
            authority,
            trust,
            policy,
        }
    }

    pub fn pipeline(&self, pool_size: usize, keys: KeySource) -> Pipeline {
        Pipeline::new(self.authority.clone(), self.trust.clone(), pool_size, keys)
    }

    pub fn clip(&self, w: u32, h: u32, frames: u32) -> Container {
        Container::new(synthetic_clip(w, h, frames), FrameRate::new(30, 1), Some(b"pcm".to_vec())).unwrap()
    }

    pub fn record(&self, w: u32, h: u32, frames: u32, segment_size: usize, seed: u64) -> Vec<SignedSegment> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        record_container(
            self.authority.as_ref(),
            &mut rng,
            self.clip(w, h, frames),
            segment_size,
            DeviceState::Genuine,
            default_app_identity(),
            T0,
        )
        .unwrap()
    }
}

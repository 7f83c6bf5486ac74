//! Host-side helpers around the camera simulator and the authority.

use std::time::{SystemTime, UNIX_EPOCH};

use rand::{CryptoRng, RngCore};
use vron_core::attest::{AttestationAuthority, Clock, ReportIssuer};
use vron_core::camera::{record_video, CameraError, SignedSegment};
use vron_core::crypto::{Digest, KeyPair};
use vron_core::frame::Container;
use vron_core::DeviceState;

/// Wall-clock seconds since the epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

pub fn authority_with_system_clock(key: KeyPair) -> AttestationAuthority {
    AttestationAuthority::new(key, Box::new(SystemClock))
}

/// Records every frame of `container` in one session, `segment_size`
/// frames per segment, carrying the container's audio on each segment.
pub fn record_container<R: RngCore + CryptoRng>(
    issuer: &dyn ReportIssuer,
    rng: &mut R,
    container: Container,
    segment_size: usize,
    state: DeviceState,
    app_identity: Digest,
    start_timestamp: u64,
) -> Result<Vec<SignedSegment>, CameraError> {
    let Container {
        frame_rate,
        frames,
        audio,
        ..
    } = container;
    Ok(record_video(
        issuer,
        rng,
        state,
        app_identity,
        frames,
        segment_size,
        frame_rate,
        start_timestamp,
        audio,
    )?
    .0)
}

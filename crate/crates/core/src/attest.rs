//! Simulated attestation authority.
//!
//! One authority key plays every trust-anchor role: it certifies stage keys
//! against their code measurement, and it issues nonce-bound device reports
//! for the camera. The `role` field of a certificate keeps the roles apart
//! for the verifier.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
#[cfg(target_has_atomic = "64")]
use core::sync::atomic::{AtomicU64, Ordering};

use crate::codec::{self, tag, DecodeError, EncodeError, Reader, Writer};
use crate::crypto::{
    self, CryptoError, Digest, KeyPair, Measurement, PublicKey, Role, Signature,
};

const CERT_DOMAIN: &[u8] = b"vron/stage-certificate/v1";
const REPORT_DOMAIN: &[u8] = b"vron/attestation-report/v1";

/// Source of `issued_at` timestamps, in seconds since the epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

impl<C: Clock + ?Sized> Clock for alloc::sync::Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

/// A clock under test control.
#[cfg(target_has_atomic = "64")]
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

#[cfg(target_has_atomic = "64")]
impl ManualClock {
    pub fn new(start: u64) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn set(&self, t: u64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, dt: u64) {
        self.0.fetch_add(dt, Ordering::SeqCst);
    }
}

#[cfg(target_has_atomic = "64")]
impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Device integrity verdict carried in a camera report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceState {
    Genuine = 0,
    Rooted = 1,
    UnlockedBootloader = 2,
    CustomOs = 3,
}

impl DeviceState {
    pub const ALL: [DeviceState; 4] = [
        DeviceState::Genuine,
        DeviceState::Rooted,
        DeviceState::UnlockedBootloader,
        DeviceState::CustomOs,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviceState::Genuine => "genuine",
            DeviceState::Rooted => "rooted",
            DeviceState::UnlockedBootloader => "unlocked_bootloader",
            DeviceState::CustomOs => "custom_os",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// Binds a stage public key to its code measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageCertificate {
    pub stage_public_key: PublicKey,
    pub measurement: Measurement,
    pub role: Role,
    pub issued_at: u64,
    /// Anonymous certificates never name the hosting platform.
    pub anonymous: bool,
    pub host_identity: Option<Digest>,
    pub authority_signature: Signature,
}

impl StageCertificate {
    /// Bytes covered by the authority signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(128);
        w.raw(CERT_DOMAIN)
            .raw(self.stage_public_key.as_bytes())
            .raw(self.measurement.as_bytes())
            .u8(self.role as u8)
            .u64(self.issued_at)
            .bool(self.anonymous);
        match &self.host_identity {
            Some(h) => w.u8(1).raw(h.as_bytes()),
            None => w.u8(0),
        };
        w.into_bytes()
    }

    pub fn write(&self, w: &mut Writer) {
        w.raw(self.stage_public_key.as_bytes())
            .raw(self.measurement.as_bytes())
            .u8(self.role as u8)
            .u64(self.issued_at)
            .bool(self.anonymous);
        match &self.host_identity {
            Some(h) => w.u8(1).raw(h.as_bytes()),
            None => w.u8(0),
        };
        w.raw(self.authority_signature.as_bytes());
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let stage_public_key = PublicKey(r.array()?);
        let measurement = Measurement::from_bytes(r.array()?);
        let at = r.offset();
        let role = Role::from_u8(r.u8()?).ok_or(DecodeError::new(at, "unknown role"))?;
        let issued_at = r.u64()?;
        let anonymous = r.bool()?;
        let host_identity = if r.bool()? {
            Some(Digest(r.array()?))
        } else {
            None
        };
        let authority_signature = Signature(r.array()?);
        Ok(Self {
            stage_public_key,
            measurement,
            role,
            issued_at,
            anonymous,
            host_identity,
            authority_signature,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        codec::frame_single(tag::CERTIFICATE, &w.into_bytes()).expect("fixed-size payload")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::CERTIFICATE)?;
        let cert = Self::read(&mut r)?;
        r.finish()?;
        Ok(cert)
    }
}

pub fn issue_stage_certificate(
    authority: &KeyPair,
    stage_public_key: PublicKey,
    measurement: Measurement,
    role: Role,
    issued_at: u64,
    host_identity: Option<Digest>,
) -> Result<StageCertificate, CryptoError> {
    let mut cert = StageCertificate {
        stage_public_key,
        measurement,
        role,
        issued_at,
        anonymous: host_identity.is_none(),
        host_identity,
        authority_signature: Signature([0; 64]),
    };
    cert.authority_signature = crypto::sign(authority, &cert.signing_bytes())?;
    Ok(cert)
}

pub fn verify_certificate(authority_public_key: &PublicKey, cert: &StageCertificate) -> bool {
    if cert.anonymous && cert.host_identity.is_some() {
        return false;
    }
    authority_public_key.verify(&cert.signing_bytes(), &cert.authority_signature)
}

/// Device integrity report bound to a caller-chosen nonce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub nonce: Digest,
    pub device_state: DeviceState,
    pub app_identity: Digest,
    pub issued_at: u64,
    pub authority_signature: Signature,
}

impl AttestationReport {
    pub const ENCODED_LEN: usize = 32 + 1 + 32 + 8 + 64;

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(REPORT_DOMAIN.len() + 73);
        w.raw(REPORT_DOMAIN)
            .raw(self.nonce.as_bytes())
            .u8(self.device_state as u8)
            .raw(self.app_identity.as_bytes())
            .u64(self.issued_at);
        w.into_bytes()
    }

    pub fn write(&self, w: &mut Writer) {
        w.raw(self.nonce.as_bytes())
            .u8(self.device_state as u8)
            .raw(self.app_identity.as_bytes())
            .u64(self.issued_at)
            .raw(self.authority_signature.as_bytes());
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let nonce = Digest(r.array()?);
        let at = r.offset();
        let device_state =
            DeviceState::from_u8(r.u8()?).ok_or(DecodeError::new(at, "unknown device state"))?;
        Ok(Self {
            nonce,
            device_state,
            app_identity: Digest(r.array()?),
            issued_at: r.u64()?,
            authority_signature: Signature(r.array()?),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(Self::ENCODED_LEN);
        self.write(&mut w);
        codec::frame_single(tag::REPORT, &w.into_bytes()).expect("fixed-size payload")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::REPORT)?;
        let rep = Self::read(&mut r)?;
        r.finish()?;
        Ok(rep)
    }
}

pub fn issue_camera_report(
    authority: &KeyPair,
    nonce: Digest,
    device_state: DeviceState,
    app_identity: Digest,
    issued_at: u64,
) -> Result<AttestationReport, CryptoError> {
    let mut rep = AttestationReport {
        nonce,
        device_state,
        app_identity,
        issued_at,
        authority_signature: Signature([0; 64]),
    };
    rep.authority_signature = crypto::sign(authority, &rep.signing_bytes())?;
    Ok(rep)
}

pub fn verify_report(authority_public_key: &PublicKey, report: &AttestationReport) -> bool {
    authority_public_key.verify(&report.signing_bytes(), &report.authority_signature)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttestationError {
    #[error("attestation refused: {0}")]
    Refused(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Anything that can hand the camera a signed device report.
pub trait ReportIssuer {
    fn attest_device(
        &self,
        nonce: Digest,
        device_state: DeviceState,
        app_identity: Digest,
    ) -> Result<AttestationReport, AttestationError>;
}

/// Anything that can certify a freshly generated stage key.
pub trait StageCertifier: Send + Sync {
    fn certify_stage(
        &self,
        stage_public_key: PublicKey,
        measurement: Measurement,
        role: Role,
    ) -> Result<StageCertificate, AttestationError>;
}

/// The local authority: a keypair, a clock and an optional host identity
/// (present models a data-center-identifying attestation flavour, absent an
/// anonymous one).
pub struct AttestationAuthority {
    key: KeyPair,
    clock: alloc::boxed::Box<dyn Clock>,
    host_identity: Option<Digest>,
}

impl AttestationAuthority {
    pub fn new(key: KeyPair, clock: alloc::boxed::Box<dyn Clock>) -> Self {
        Self {
            key,
            clock,
            host_identity: None,
        }
    }

    pub fn with_host_identity(mut self, host: Digest) -> Self {
        self.host_identity = Some(host);
        self
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }
}

impl ReportIssuer for AttestationAuthority {
    fn attest_device(
        &self,
        nonce: Digest,
        device_state: DeviceState,
        app_identity: Digest,
    ) -> Result<AttestationReport, AttestationError> {
        Ok(issue_camera_report(
            &self.key,
            nonce,
            device_state,
            app_identity,
            self.clock.now(),
        )?)
    }
}

impl StageCertifier for AttestationAuthority {
    fn certify_stage(
        &self,
        stage_public_key: PublicKey,
        measurement: Measurement,
        role: Role,
    ) -> Result<StageCertificate, AttestationError> {
        Ok(issue_stage_certificate(
            &self.key,
            stage_public_key,
            measurement,
            role,
            self.clock.now(),
            self.host_identity,
        )?)
    }
}

/// What a relying party trusts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustRoots {
    pub attestation_authority_public_key: PublicKey,
    pub approved_measurements: BTreeMap<Measurement, (Role, String)>,
    pub approved_app_identities: BTreeSet<Digest>,
}

impl TrustRoots {
    pub fn new(authority: PublicKey) -> Self {
        Self {
            attestation_authority_public_key: authority,
            approved_measurements: BTreeMap::new(),
            approved_app_identities: BTreeSet::new(),
        }
    }

    pub fn approve_stage(&mut self, m: Measurement, role: Role, name: impl Into<String>) {
        self.approved_measurements.insert(m, (role, name.into()));
    }

    pub fn approve_app(&mut self, app: Digest) {
        self.approved_app_identities.insert(app);
    }

    /// Certificate is authority-signed and its measurement is approved for
    /// the role it claims.
    pub fn certificate_trusted(&self, cert: &StageCertificate) -> Result<(), &'static str> {
        if !verify_certificate(&self.attestation_authority_public_key, cert) {
            return Err("certificate signature invalid");
        }
        match self.approved_measurements.get(&cert.measurement) {
            Some((role, _)) if *role == cert.role => Ok(()),
            Some(_) => Err("measurement approved for a different role"),
            None => Err("measurement not approved"),
        }
    }

    pub fn write(&self, w: &mut Writer) -> Result<(), EncodeError> {
        w.raw(self.attestation_authority_public_key.as_bytes());
        w.count("approved measurements", self.approved_measurements.len())?;
        for (m, (role, name)) in &self.approved_measurements {
            w.raw(m.as_bytes()).u8(*role as u8).str("stage name", name)?;
        }
        w.count("approved apps", self.approved_app_identities.len())?;
        for a in &self.approved_app_identities {
            w.raw(a.as_bytes());
        }
        Ok(())
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut t = TrustRoots::new(PublicKey(r.array()?));
        let n = r.count(35)?;
        for _ in 0..n {
            let m = Measurement::from_bytes(r.array()?);
            let at = r.offset();
            let role = Role::from_u8(r.u8()?).ok_or(DecodeError::new(at, "unknown role"))?;
            let name = r.str()?;
            t.approved_measurements.insert(m, (role, name));
        }
        let n = r.count(32)?;
        for _ in 0..n {
            t.approved_app_identities.insert(Digest(r.array()?));
        }
        Ok(t)
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        self.write(&mut w)?;
        codec::frame_single(tag::TRUST_ROOTS, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::TRUST_ROOTS)?;
        let t = Self::read(&mut r)?;
        r.finish()?;
        Ok(t)
    }
}

/// Key file: secret seed plus public key.
pub fn encode_key(key: &KeyPair) -> Vec<u8> {
    let mut w = Writer::with_capacity(64);
    w.raw(&key.private_key_bytes()).raw(key.public_key().as_bytes());
    codec::frame_single(tag::KEY, &w.into_bytes()).expect("fixed-size payload")
}

pub fn decode_key(bytes: &[u8]) -> Result<KeyPair, DecodeError> {
    let mut r = codec::unframe_single(bytes, tag::KEY)?;
    let seed: [u8; 32] = r.array()?;
    let at = r.offset();
    let public: [u8; 32] = r.array()?;
    r.finish()?;
    let key = KeyPair::from_seed(seed);
    if key.public_key().0 != public {
        return Err(DecodeError::new(at, "public key does not match secret"));
    }
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;

    fn authority(seed: u8) -> AttestationAuthority {
        AttestationAuthority::new(KeyPair::from_seed([seed; 32]), Box::new(ManualClock::new(1000)))
    }

    fn cert(a: &AttestationAuthority) -> StageCertificate {
        let m = crypto::measure_stage(Role::Filter, b"blur", b"k").unwrap();
        a.certify_stage(KeyPair::from_seed([9; 32]).public_key(), m, Role::Filter)
            .unwrap()
    }

    #[test]
    fn certificate_verifies_under_issuer_only() {
        let a = authority(1);
        let c = cert(&a);
        assert!(verify_certificate(&a.public_key(), &c));
        assert!(!verify_certificate(&authority(2).public_key(), &c));
        let mut bad = c.clone();
        bad.measurement.0 .0[0] ^= 1;
        assert!(!verify_certificate(&a.public_key(), &bad));
        assert!(c.anonymous && c.host_identity.is_none());
    }

    #[test]
    fn host_identity_clears_anonymous() {
        let a = authority(1).with_host_identity(Digest([7; 32]));
        let c = cert(&a);
        assert!(!c.anonymous);
        assert!(verify_certificate(&a.public_key(), &c));
        let mut leak = c.clone();
        leak.anonymous = true;
        assert!(!verify_certificate(&a.public_key(), &leak));
    }

    #[test]
    fn certificate_roundtrip() {
        let c = cert(&authority(1));
        assert_eq!(StageCertificate::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn reports_verify_and_carry_policy_state() {
        let a = authority(1);
        let r = a
            .attest_device(Digest([3; 32]), DeviceState::Rooted, Digest([4; 32]))
            .unwrap();
        // rooted devices still get a valid report; policy is the verifier's job
        assert!(verify_report(&a.public_key(), &r));
        assert_eq!(r.issued_at, 1000);
        assert_eq!(AttestationReport::decode(&r.encode()).unwrap(), r);
        let mut bad = r.clone();
        bad.device_state = DeviceState::Genuine;
        assert!(!verify_report(&a.public_key(), &bad));
    }

    #[test]
    fn trust_roots_check_role() {
        let a = authority(1);
        let c = cert(&a);
        let mut t = TrustRoots::new(a.public_key());
        assert_eq!(t.certificate_trusted(&c), Err("measurement not approved"));
        t.approve_stage(c.measurement, Role::Decoder, "oops");
        assert!(t.certificate_trusted(&c).is_err());
        t.approve_stage(c.measurement, Role::Filter, "blur");
        assert_eq!(t.certificate_trusted(&c), Ok(()));
        t.approve_app(Digest([1; 32]));
        assert_eq!(TrustRoots::decode(&t.encode().unwrap()).unwrap(), t);
    }

    #[test]
    fn key_file_roundtrip() {
        let k = KeyPair::from_seed([5; 32]);
        let back = decode_key(&encode_key(&k)).unwrap();
        assert_eq!(back.public_key(), k.public_key());
        let mut bytes = encode_key(&k);
        let n = bytes.len();
        bytes[n - 1] ^= 1;
        assert!(decode_key(&bytes).is_err());
    }

    #[test]
    fn device_state_names() {
        for d in DeviceState::ALL {
            assert_eq!(DeviceState::from_name(d.name()), Some(d));
        }
    }
}

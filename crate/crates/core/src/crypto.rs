//! Keys, signatures, hashing and stage measurements.
//!
//! Signatures are Ed25519 over the SHA-256 digest of the message, which
//! keeps them deterministic (same key and message give the same bytes) and
//! lets large payloads be hashed incrementally with [`sign_parts`].

use core::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand_core::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use zeroize::Zeroize;

use crate::codec::hex;

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("entropy source unavailable")]
    EntropyUnavailable,
    #[error("invalid or erased key")]
    InvalidKey,
    #[error("stage code identity must not be empty")]
    EmptyIdentity,
    #[error("key bytes must not be empty")]
    EmptyKey,
}

/// A SHA-256 value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex(&self.0))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex(&self.0))
    }
}

macro_rules! digest_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub Digest);

        impl $name {
            pub fn from_bytes(b: [u8; 32]) -> Self {
                Self(Digest(b))
            }

            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0 .0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }
    };
}

digest_newtype!(
    /// Hash of a camera session's public key; identifies one video.
    VideoId
);
digest_newtype!(
    /// Hash of a stage's role, code identity and build configuration.
    Measurement
);

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn sha256_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn from_slice(b: &[u8]) -> Option<Self> {
        b.try_into().ok().map(Self)
    }

    pub fn verify(&self, message: &[u8], sig: &Signature) -> bool {
        verify(&self.0, message, &sig.0)
    }

    pub fn verify_parts(&self, parts: &[&[u8]], sig: &Signature) -> bool {
        verify_digest(&self.0, &sha256_parts(parts), &sig.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex(&self.0))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn from_slice(b: &[u8]) -> Option<Self> {
        b.try_into().ok().map(Self)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex(&self.0[..8]))
    }
}

/// A signing key pair. The secret can be erased in place; an erased pair
/// refuses to sign.
pub struct KeyPair {
    secret: [u8; 32],
    public: PublicKey,
    erased: bool,
}

impl KeyPair {
    /// Deterministically derives a pair from a 32-byte seed.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let public = PublicKey(SigningKey::from_bytes(&seed).verifying_key().to_bytes());
        Self {
            secret: seed,
            public,
            erased: false,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    /// Secret seed bytes; all zero once erased.
    pub fn private_key_bytes(&self) -> [u8; 32] {
        self.secret
    }

    pub fn is_erased(&self) -> bool {
        self.erased
    }

    pub fn erase(&mut self) {
        self.secret.zeroize();
        self.erased = true;
    }

    fn signing_key(&self) -> Result<SigningKey, CryptoError> {
        if self.erased {
            return Err(CryptoError::InvalidKey);
        }
        Ok(SigningKey::from_bytes(&self.secret))
    }
}

impl Drop for KeyPair {
    fn drop(&mut self) {
        self.secret.zeroize();
    }
}

impl Clone for KeyPair {
    fn clone(&self) -> Self {
        Self {
            secret: self.secret,
            public: self.public,
            erased: self.erased,
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .field("erased", &self.erased)
            .finish_non_exhaustive()
    }
}

pub fn generate_keypair<R: RngCore + CryptoRng>(rng: &mut R) -> Result<KeyPair, CryptoError> {
    let mut seed = [0u8; 32];
    rng.try_fill_bytes(&mut seed)
        .map_err(|_| CryptoError::EntropyUnavailable)?;
    let pair = KeyPair::from_seed(seed);
    seed.zeroize();
    Ok(pair)
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Result<Signature, CryptoError> {
    sign_digest(key, &sha256(message))
}

/// Signs the concatenation of `parts` without materializing it.
pub fn sign_parts(key: &KeyPair, parts: &[&[u8]]) -> Result<Signature, CryptoError> {
    sign_digest(key, &sha256_parts(parts))
}

fn sign_digest(key: &KeyPair, digest: &Digest) -> Result<Signature, CryptoError> {
    Ok(Signature(key.signing_key()?.sign(&digest.0).to_bytes()))
}

/// Total verification over untrusted byte strings: malformed keys or
/// signatures of the wrong length simply fail.
pub fn verify(public_key: &[u8], message: &[u8], sig: &[u8]) -> bool {
    verify_digest(public_key, &sha256(message), sig)
}

fn verify_digest(public_key: &[u8], digest: &Digest, sig: &[u8]) -> bool {
    let Ok(pk) = <[u8; PUBLIC_KEY_LEN]>::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(sig) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    vk.verify(&digest.0, &ed25519_dalek::Signature::from_bytes(&sig))
        .is_ok()
}

/// Role a stage plays in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Decoder = 1,
    Filter = 2,
    Encoder = 3,
}

impl Role {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Role::Decoder),
            2 => Some(Role::Filter),
            3 => Some(Role::Encoder),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Decoder => "decoder",
            Role::Filter => "filter",
            Role::Encoder => "encoder",
        }
    }
}

/// Measurement of a stage: SHA-256 over the role byte, the length-prefixed
/// code identity and the build configuration.
pub fn measure_stage(
    role: Role,
    code_identity: &[u8],
    build_config: &[u8],
) -> Result<Measurement, CryptoError> {
    if code_identity.is_empty() {
        return Err(CryptoError::EmptyIdentity);
    }
    let len = (code_identity.len() as u32).to_be_bytes();
    Ok(Measurement(sha256_parts(&[
        &[role as u8],
        &len,
        code_identity,
        build_config,
    ])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pair(seed: u64) -> KeyPair {
        generate_keypair(&mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn distinct_keys() {
        assert_ne!(pair(1).public_key(), pair(2).public_key());
    }

    #[test]
    fn sign_verify_roundtrip() {
        let k = pair(1);
        let sig = sign(&k, b"abc").unwrap();
        assert!(k.public_key().verify(b"abc", &sig));
        assert!(!pair(2).public_key().verify(b"abc", &sig));
        assert!(!k.public_key().verify(b"abc\0", &sig));
    }

    #[test]
    fn deterministic_signatures() {
        let k = pair(3);
        assert_eq!(sign(&k, b"m").unwrap(), sign(&k, b"m").unwrap());
    }

    #[test]
    fn empty_message_signs() {
        let k = pair(4);
        let sig = sign(&k, b"").unwrap();
        assert!(verify(k.public_key().as_bytes(), b"", sig.as_bytes()));
    }

    #[test]
    fn truncated_signature_is_false() {
        let k = pair(5);
        let sig = sign(&k, b"abc").unwrap();
        assert!(!verify(k.public_key().as_bytes(), b"abc", &sig.0[..63]));
        assert!(!verify(&k.public_key().0[..31], b"abc", &sig.0));
        assert!(!verify(&[], b"abc", &[]));
    }

    #[test]
    fn parts_equal_concatenation() {
        let k = pair(6);
        let a = sign(&k, b"hello world").unwrap();
        let b = sign_parts(&k, &[b"hello", b" ", b"world"]).unwrap();
        assert_eq!(a, b);
        assert!(k.public_key().verify_parts(&[b"hello wor", b"ld"], &a));
    }

    #[test]
    fn erased_key_refuses() {
        let mut k = pair(7);
        k.erase();
        assert_eq!(k.private_key_bytes(), [0; 32]);
        assert_eq!(sign(&k, b"x"), Err(CryptoError::InvalidKey));
    }

    #[test]
    fn failing_rng_reports_entropy() {
        struct Dead;
        impl RngCore for Dead {
            fn next_u32(&mut self) -> u32 {
                0
            }
            fn next_u64(&mut self) -> u64 {
                0
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {}
            fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand_core::Error> {
                Err(core::num::NonZeroU32::new(rand_core::Error::CUSTOM_START)
                    .unwrap()
                    .into())
            }
        }
        impl CryptoRng for Dead {}
        assert_eq!(
            generate_keypair(&mut Dead).unwrap_err(),
            CryptoError::EntropyUnavailable
        );
    }

    #[test]
    fn measurement_depends_on_every_input() {
        let base = measure_stage(Role::Filter, b"blur", b"k").unwrap();
        assert_eq!(base, measure_stage(Role::Filter, b"blur", b"k").unwrap());
        assert_ne!(base, measure_stage(Role::Decoder, b"blur", b"k").unwrap());
        assert_ne!(base, measure_stage(Role::Filter, b"blur", b"k2").unwrap());
        // identity/config boundary is unambiguous
        assert_ne!(
            measure_stage(Role::Filter, b"ab", b"c").unwrap(),
            measure_stage(Role::Filter, b"a", b"bc").unwrap()
        );
        assert_eq!(
            measure_stage(Role::Filter, b"", b"x"),
            Err(CryptoError::EmptyIdentity)
        );
    }
}

//! Files on disk. Every object is stored in its canonical binary framing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vron_core::attest::{decode_key, encode_key, StageCertificate, TrustRoots};
use vron_core::crypto::{sha256, Digest, KeyPair, PublicKey};
use vron_core::frame::{Container, ContainerError, RawFrame};
use vron_core::stages::{builtin_trust_roots, FinalBundle};
use vron_core::verifier::{VerificationReport, VerifierPolicy};
use vron_core::SignedSegment;

pub const SEGMENT_EXT: &str = "vseg";
pub const BUNDLE_EXT: &str = "vbundle";

/// App identity of the bundled camera simulator, approved by default.
pub fn default_app_identity() -> Digest {
    sha256(b"vron-camera/1")
}

/// Built-in stages plus the bundled camera app.
pub fn default_trust(authority: PublicKey) -> TrustRoots {
    let mut t = builtin_trust_roots(authority);
    t.approve_app(default_app_identity());
    t
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Reads a raw VRONC container.
pub fn load_frames_from_file(path: &Path) -> Result<Vec<RawFrame>, LoadError> {
    let bytes = fs::read(path).map_err(LoadError::Io)?;
    Ok(Container::decode(&bytes).map_err(LoadError::Container)?.frames)
}

pub fn load_container(path: &Path) -> Result<Container, LoadError> {
    let bytes = fs::read(path).map_err(LoadError::Io)?;
    Container::decode(&bytes).map_err(LoadError::Container)
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(std::io::Error),
    #[error(transparent)]
    Container(ContainerError),
}

pub fn save_container(path: &Path, c: &Container) -> Result<()> {
    write(path, &c.encode()?)
}

pub fn load_key(path: &Path) -> Result<KeyPair> {
    decode_key(&read(path)?).with_context(|| format!("decoding key {}", path.display()))
}

pub fn save_key(path: &Path, key: &KeyPair) -> Result<()> {
    write(path, &encode_key(key))
}

pub fn load_certificate(path: &Path) -> Result<StageCertificate> {
    StageCertificate::decode(&read(path)?).with_context(|| format!("decoding certificate {}", path.display()))
}

pub fn save_certificate(path: &Path, cert: &StageCertificate) -> Result<()> {
    write(path, &cert.encode())
}

pub fn load_policy(path: &Path) -> Result<VerifierPolicy> {
    VerifierPolicy::decode(&read(path)?).with_context(|| format!("decoding policy {}", path.display()))
}

pub fn save_policy(path: &Path, p: &VerifierPolicy) -> Result<()> {
    write(path, &p.encode()?)
}

pub fn load_segment(path: &Path) -> Result<SignedSegment> {
    SignedSegment::decode(&read(path)?).with_context(|| format!("decoding segment {}", path.display()))
}

pub fn save_segment(path: &Path, s: &SignedSegment) -> Result<()> {
    write(path, &s.encode()?)
}

pub fn load_bundle(path: &Path) -> Result<FinalBundle> {
    FinalBundle::decode(&read(path)?).with_context(|| format!("decoding bundle {}", path.display()))
}

pub fn save_bundle(path: &Path, b: &FinalBundle) -> Result<()> {
    write(path, &b.encode()?)
}

pub fn save_report(path: &Path, r: &VerificationReport) -> Result<()> {
    write(path, &r.encode()?)
}

/// `dir/segment-0003.vseg` style names, which sort by segment id.
pub fn numbered(dir: &Path, stem: &str, id: u32, ext: &str) -> PathBuf {
    dir.join(format!("{stem}-{id:04}.{ext}"))
}

/// A single file, or every file with `ext` in a directory in name order.
pub fn expand_inputs(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == ext))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .{ext} files in {}", path.display());
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

//! Argument parsing and setup shared by the command-line tools.
//!
//! The tools simulate the attestation service locally: a stage binary
//! given `--authority-key` certifies its own freshly generated key with
//! that authority, standing in for a remote attestation round trip.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;

use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use vron_core::attest::{AttestationAuthority, TrustRoots};
use vron_core::provenance::FrameRate;
use vron_core::verifier::VerifierPolicy;
use vron_core::DeviceState;

use crate::camera::authority_with_system_clock;
use crate::io::{default_trust, load_key, load_policy};
use crate::scheduler::EXIT_REJECTED_BASE;
use crate::transport::TcpSink;
use crate::workers::WorkerError;

pub const AUTHORITY_KEY_FILE: &str = "authority.vkey";
pub const POLICY_FILE: &str = "policy.vpolicy";

pub fn load_authority(path: &Path) -> Result<(Arc<AttestationAuthority>, TrustRoots)> {
    let key = load_key(path)?;
    let trust = default_trust(key.public_key());
    Ok((Arc::new(authority_with_system_clock(key)), trust))
}

/// `--policy` when given, else the default policy for `--authority-key`.
pub fn policy_from(policy: Option<&Path>, authority_key: Option<&Path>) -> Result<VerifierPolicy> {
    match (policy, authority_key) {
        (Some(p), _) => load_policy(p),
        (None, Some(k)) => Ok(VerifierPolicy::new(default_trust(load_key(k)?.public_key()))),
        (None, None) => bail!("need --policy or --authority-key"),
    }
}

pub fn parse_addr(s: &str) -> Result<SocketAddr, String> {
    s.to_socket_addrs()
        .map_err(|e| format!("{s}: {e}"))?
        .next()
        .ok_or_else(|| format!("{s}: no address"))
}

/// A bare port means a port on the loopback interface.
pub fn parse_port_or_addr(s: &str) -> Result<SocketAddr, String> {
    match s.parse::<u16>() {
        Ok(p) => Ok(SocketAddr::from(([127, 0, 0, 1], p))),
        Err(_) => parse_addr(s),
    }
}

pub fn parse_fps(s: &str) -> Result<FrameRate, String> {
    let (n, d) = s.split_once('/').unwrap_or((s, "1"));
    let r = FrameRate::new(
        n.trim().parse().map_err(|_| format!("bad frame rate {s:?}"))?,
        d.trim().parse().map_err(|_| format!("bad frame rate {s:?}"))?,
    );
    if !r.is_valid() {
        return Err(format!("bad frame rate {s:?}"));
    }
    Ok(r)
}

pub fn parse_device_state(s: &str) -> Result<DeviceState, String> {
    DeviceState::from_name(s).ok_or_else(|| {
        let names: Vec<_> = DeviceState::ALL.iter().map(|d| d.name()).collect();
        format!("unknown device state {s:?}, expected one of {}", names.join(", "))
    })
}

/// Prints the error chain and exits with `code`.
pub fn fail(code: i32, e: impl std::fmt::Display) -> ! {
    eprintln!("error: {e}");
    std::process::exit(code)
}

/// Exit code for a stage worker's failure, matching `vron-run`.
pub fn worker_exit_code(e: &WorkerError) -> i32 {
    match e {
        WorkerError::Stage(s) => EXIT_REJECTED_BASE + s.code() as i32,
        WorkerError::Transport(_) => 5,
        WorkerError::Attestation(_) => 4,
    }
}

/// Connects to a stage that may still be starting up.
pub fn connect_retry(addr: SocketAddr, within: Duration) -> Result<TcpSink> {
    let deadline = Instant::now() + within;
    loop {
        match TcpSink::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(e).with_context(|| format!("connecting to {addr}")),
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

pub fn listen(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr).with_context(|| format!("listening on {addr}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_arguments() {
        assert_eq!(parse_fps("30000/1001").unwrap(), FrameRate::new(30000, 1001));
        assert_eq!(parse_fps("25").unwrap(), FrameRate::new(25, 1));
        assert!(parse_fps("0/1").is_err());
        assert_eq!(parse_port_or_addr("7001").unwrap().port(), 7001);
        assert_eq!(parse_port_or_addr("127.0.0.1:9").unwrap().port(), 9);
        assert_eq!(parse_device_state("rooted").unwrap(), DeviceState::Rooted);
        assert!(parse_device_state("jailbroken").is_err());
    }
}

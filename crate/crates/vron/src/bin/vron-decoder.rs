//! Decoder stage over TCP: verifies a camera segment and streams tagged
//! frames to the next stage and the sidecar to the encoder.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::Parser;
use vron::cli::{connect_retry, fail, listen, load_authority, parse_addr, parse_port_or_addr, worker_exit_code};
use vron::io::{load_segment, save_certificate};
use vron::transport::{link, Source, TcpSource, Transport};
use vron::workers::{decoder_worker, new_identity, KeySource};
use vron_core::crypto::Role;
use vron_core::stages::decoder_measurement;
use vron_core::wire::segment_messages;

#[derive(Parser)]
#[command(about = "Run the decoder stage")]
struct Args {
    /// Accept the segment on this address.
    #[arg(long, value_parser = parse_addr, conflicts_with = "input", required_unless_present = "input")]
    listen: Option<SocketAddr>,
    /// Read the segment from a file instead.
    #[arg(long)]
    input: Option<PathBuf>,
    /// First filter, or the encoder for an empty chain.
    #[arg(long, value_parser = parse_addr)]
    next: SocketAddr,
    /// The encoder's sidecar port, or address.
    #[arg(long, value_parser = parse_port_or_addr)]
    encoder_sidecar_port: SocketAddr,
    #[arg(long)]
    authority_key: PathBuf,
    /// Where to write this stage's certificate.
    #[arg(long)]
    key_out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let (authority, trust) = load_authority(&args.authority_key)?;
    let identity = new_identity(authority.as_ref(), KeySource::Random, "decoder", decoder_measurement(), Role::Decoder)
        .unwrap_or_else(|e| fail(4, e));
    if let Some(p) = &args.key_out {
        save_certificate(p, &identity.certificate)?;
    }
    let input: Source = match (&args.input, args.listen) {
        (Some(path), _) => {
            let bytes = load_segment(path)?.encode()?;
            let (mut tx, rx) = link(Transport::InProcess)?;
            // fed from a thread: the link holds only a few messages
            std::thread::spawn(move || {
                for m in segment_messages(&bytes) {
                    if tx.send(&m).is_err() {
                        break;
                    }
                }
            });
            rx
        }
        (None, Some(addr)) => Box::new(TcpSource::accept(&listen(addr)?)?),
        (None, None) => unreachable!("clap requires one"),
    };
    let wait = Duration::from_secs(30);
    let frames = connect_retry(args.next, wait)?;
    let sidecar = connect_retry(args.encoder_sidecar_port, wait)?;
    if let Err(e) = decoder_worker(&identity, &trust, input, Box::new(frames), Box::new(sidecar)) {
        fail(worker_exit_code(&e), e);
    }
    Ok(())
}

//! Encoder stage over TCP: collects tagged frames and the sidecar and
//! writes the signed bundle.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use vron::cli::{fail, listen, load_authority, parse_addr, parse_port_or_addr, worker_exit_code};
use vron::io::{save_bundle, save_certificate};
use vron::transport::TcpSource;
use vron::workers::{encoder_worker, new_identity, KeySource};
use vron_core::crypto::Role;
use vron_core::stages::{encoder_measurement, EncoderStage};

#[derive(Parser)]
#[command(about = "Run the encoder stage")]
struct Args {
    /// Frames from the last filter, or the decoder.
    #[arg(long, value_parser = parse_addr)]
    listen: SocketAddr,
    /// Port, or address, for the decoder's sidecar.
    #[arg(long, value_parser = parse_port_or_addr)]
    encoder_sidecar_port: SocketAddr,
    #[arg(long)]
    authority_key: PathBuf,
    #[arg(long)]
    key_out: Option<PathBuf>,
    #[arg(long, default_value = "out.vbundle")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let (authority, trust) = load_authority(&args.authority_key)?;
    let identity = new_identity(authority.as_ref(), KeySource::Random, "encoder", encoder_measurement(), Role::Encoder)
        .unwrap_or_else(|e| fail(4, e));
    if let Some(p) = &args.key_out {
        save_certificate(p, &identity.certificate)?;
    }
    let stage = EncoderStage::new(identity)?;
    let frames_listener = listen(args.listen)?;
    let sidecar_listener = listen(args.encoder_sidecar_port)?;
    let frames = TcpSource::accept(&frames_listener)?;
    let sidecar = TcpSource::accept(&sidecar_listener)?;
    match encoder_worker(stage, &trust, Box::new(frames), Box::new(sidecar)) {
        Ok(bundle) => {
            save_bundle(&args.out, &bundle)?;
            println!("{}", args.out.display());
            Ok(())
        }
        Err(e) => fail(worker_exit_code(&e), e),
    }
}

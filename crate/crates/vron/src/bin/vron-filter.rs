//! One filter stage over TCP.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, Result};
use clap::Parser;
use vron::cli::{connect_retry, fail, listen, load_authority, parse_addr, worker_exit_code};
use vron::io::save_certificate;
use vron::transport::TcpSource;
use vron::workers::{filter_worker, new_identity, KeySource};
use vron_core::crypto::Role;
use vron_core::filters::{FilterKind, FilterSpec};
use vron_core::provenance::Fixed;
use vron_core::stages::FilterStage;

#[derive(Parser)]
#[command(about = "Run one filter stage")]
struct Args {
    #[arg(long, value_parser = parse_addr)]
    listen: SocketAddr,
    #[arg(long, value_parser = parse_addr)]
    next: SocketAddr,
    /// blur, sharpen, brightness, grayscale, denoise or white_balance.
    #[arg(long)]
    filter: String,
    /// Filter parameter; defaults apply when omitted.
    #[arg(long, allow_hyphen_values = true)]
    param: Vec<String>,
    #[arg(long)]
    authority_key: PathBuf,
    #[arg(long)]
    key_out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let kind = FilterKind::from_name(&args.filter).ok_or_else(|| anyhow!("unknown filter {:?}", args.filter))?;
    let spec = if args.param.is_empty() {
        FilterSpec::with_defaults(kind)
    } else {
        let params = args
            .param
            .iter()
            .map(|p| Fixed::parse(p).ok_or_else(|| anyhow!("bad parameter {p:?}")))
            .collect::<Result<Vec<_>>>()?;
        FilterSpec::new(kind, params).unwrap_or_else(|e| fail(2, e))
    };
    let (authority, trust) = load_authority(&args.authority_key)?;
    let identity = new_identity(authority.as_ref(), KeySource::Random, "filter", kind.measurement(), Role::Filter)
        .unwrap_or_else(|e| fail(4, e));
    if let Some(p) = &args.key_out {
        save_certificate(p, &identity.certificate)?;
    }
    let stage = FilterStage::new(spec, identity)?;
    let listener = listen(args.listen)?;
    let input = TcpSource::accept(&listener)?;
    let output = connect_retry(args.next, Duration::from_secs(30))?;
    if let Err(e) = filter_worker(stage, &trust, Box::new(input), Box::new(output)) {
        fail(worker_exit_code(&e), e);
    }
    Ok(())
}

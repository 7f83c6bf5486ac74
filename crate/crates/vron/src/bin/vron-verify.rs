//! Verifies one bundle, or several as one video.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use vron::cli::{fail, policy_from};
use vron::io::load_bundle;
use vron_core::verifier::{verify_bundle, verify_video};

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    /// The canonical binary report on stdout.
    Machine,
}

#[derive(Parser)]
#[command(about = "Verify final bundles")]
struct Args {
    /// Repeat for every segment of a video.
    #[arg(long, required = true)]
    bundle: Vec<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Use the default policy for this authority when no policy is given.
    #[arg(long)]
    authority_key: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    report: Format,
}

fn main() {
    let args = Args::parse();
    let policy = policy_from(args.policy.as_deref(), args.authority_key.as_deref()).unwrap_or_else(|e| fail(2, format!("{e:#}")));
    let bundles: Vec<_> = args
        .bundle
        .iter()
        .map(|p| load_bundle(p).unwrap_or_else(|e| fail(2, format!("{e:#}"))))
        .collect();
    let report = if bundles.len() == 1 {
        verify_bundle(&bundles[0], &policy)
    } else {
        verify_video(&bundles, &policy)
    };
    match args.report {
        Format::Text => print!("{}", report.render_text()),
        Format::Machine => {
            let bytes = report.encode().unwrap_or_else(|e| fail(2, e));
            std::io::stdout().write_all(&bytes).unwrap_or_else(|e| fail(2, e));
        }
    }
    std::process::exit(if report.verdict() { 0 } else { 1 });
}

//! Runs one attack and reports whether it was caught.

use std::path::PathBuf;

use clap::Parser;
use vron::attack::{run_bundle_attack, run_in_flight, run_video_attack, Outcome};
use vron::cli::{fail, load_authority, policy_from};
use vron::io::{expand_inputs, load_bundle, load_segment, BUNDLE_EXT};
use vron::scheduler::{parse_filter, Pipeline};
use vron::transport::Transport;
use vron::workers::KeySource;
use vron_core::filters::FilterSpec;
use vron_core::tamper::{AttackKind, Boundary};

#[derive(Parser)]
#[command(about = "Tamper with a pipeline run, a bundle or a video and check detection")]
struct Args {
    /// An attack name, or `none` for a control run.
    #[arg(long)]
    kind: String,
    /// A link such as decoder->filter, or bundle, bundle+resign, video.
    #[arg(long)]
    boundary: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bundle to tamper with; repeat (or give a directory) for a video.
    #[arg(long)]
    bundle: Vec<PathBuf>,
    /// Material from another video: a segment for in-flight substitution,
    /// bundles for origin change and segment substitution.
    #[arg(long)]
    donor: Vec<PathBuf>,
    /// Segment to run for in-flight attacks.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_filter)]
    filter: Vec<FilterSpec>,
    #[arg(long, default_value = "local")]
    transport: String,
    #[arg(long)]
    authority_key: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn bundles(paths: &[PathBuf]) -> Vec<vron_core::stages::FinalBundle> {
    paths
        .iter()
        .flat_map(|p| expand_inputs(p, BUNDLE_EXT).unwrap_or_else(|e| fail(2, format!("{e:#}"))))
        .map(|p| load_bundle(&p).unwrap_or_else(|e| fail(2, format!("{e:#}"))))
        .collect()
}

fn main() {
    let args = Args::parse();
    let kind = AttackKind::from_name(&args.kind).unwrap_or_else(|| fail(2, format!("unknown attack {:?}", args.kind)));
    let policy = policy_from(args.policy.as_deref(), args.authority_key.as_deref()).unwrap_or_else(|e| fail(2, format!("{e:#}")));
    let outcome = match args.boundary.as_str() {
        "bundle" | "bundle+resign" => {
            let b = bundles(&args.bundle);
            let target = b.first().unwrap_or_else(|| fail(2, "--bundle is required"));
            let donor = bundles(&args.donor);
            run_bundle_attack(&policy, target, kind, args.seed, args.boundary == "bundle+resign", donor.first())
        }
        "video" => {
            let b = bundles(&args.bundle);
            let donor = bundles(&args.donor);
            run_video_attack(&policy, &b, kind, args.seed, (!donor.is_empty()).then_some(&donor[..]))
        }
        name => {
            let boundary = Boundary::from_name(name).unwrap_or_else(|| fail(2, format!("unknown boundary {name:?}")));
            let key = args.authority_key.as_deref().unwrap_or_else(|| fail(2, "--authority-key is required in flight"));
            let (authority, trust) = load_authority(key).unwrap_or_else(|e| fail(2, format!("{e:#}")));
            let transport = match args.transport.as_str() {
                "local" => Transport::InProcess,
                "tcp" => Transport::Tcp,
                t => fail(2, format!("unknown transport {t:?}")),
            };
            let input = args.input.as_deref().unwrap_or_else(|| fail(2, "--input is required in flight"));
            let segment = load_segment(input).unwrap_or_else(|e| fail(2, format!("{e:#}")));
            let donor = args
                .donor
                .first()
                .map(|p| load_segment(p).unwrap_or_else(|e| fail(2, format!("{e:#}"))));
            let pipeline = Pipeline::new(authority, trust, 1, KeySource::Random);
            run_in_flight(&pipeline, &policy, &segment, &args.filter, transport, boundary, kind, args.seed, donor.as_ref())
        }
    };
    println!("{} {}", outcome.label(), outcome.detail());
    if let Outcome::Error(_) = outcome {
        std::process::exit(2);
    }
    std::process::exit(if outcome.is_correct() { 0 } else { 1 });
}

//! Runs a job through the local pipeline.

use std::path::PathBuf;

use clap::Parser;
use vron::bench::{chain_label, write_csv_file, BenchResult, Design};
use vron::cli::{fail, load_authority};
use vron::pool::DEFAULT_POOL_SIZE;
use vron::scheduler::{parse_filter, run_job_timed, JobSpec, Pipeline};
use vron::transport::Transport;
use vron::workers::KeySource;
use vron_core::filters::FilterSpec;

fn parse_transport(s: &str) -> Result<Transport, String> {
    match s {
        "local" => Ok(Transport::InProcess),
        "tcp" => Ok(Transport::Tcp),
        _ => Err(format!("unknown transport {s:?}, expected local or tcp")),
    }
}

#[derive(Parser)]
#[command(about = "Run segments through decoder, filters and encoder")]
struct Args {
    /// A .vseg file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Bundle file, or a directory when the input is a directory.
    #[arg(long)]
    out: PathBuf,
    /// name[:param[,param]], repeatable, in application order.
    #[arg(long, value_parser = parse_filter)]
    filter: Vec<FilterSpec>,
    #[arg(long, default_value = "local", value_parser = parse_transport)]
    transport: Transport,
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pool_size: usize,
    /// Append per-segment phase timings as CSV.
    #[arg(long)]
    bench_csv: Option<PathBuf>,
    #[arg(long)]
    authority_key: PathBuf,
}

fn main() {
    let args = Args::parse();
    let (authority, trust) = load_authority(&args.authority_key).unwrap_or_else(|e| fail(3, format!("{e:#}")));
    let pipeline = Pipeline::new(authority, trust, args.pool_size, KeySource::Random);
    let spec = JobSpec {
        filter_chain: args.filter,
        input_path: args.input,
        output_path: args.out,
        transport: args.transport,
    };
    let done = match run_job_timed(&pipeline, &spec) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{}", e.kind());
            fail(e.exit_code(), e)
        }
    };
    for (b, t) in &done {
        println!(
            "segment {} of {}: {} frames, {} filter(s), {:.3}s",
            b.provenance.segment.segment_id,
            b.provenance.segment.total_segments,
            b.provenance.segment.total_frames,
            b.provenance.filters.len(),
            t.ingest_s + t.process_s + t.emit_s
        );
    }
    if let Some(path) = &args.bench_csv {
        let rows: Vec<BenchResult> = done
            .iter()
            .map(|(b, t)| BenchResult {
                design: Design::StagedSigned,
                width: b.provenance.video.width,
                height: b.provenance.video.height,
                frames: b.provenance.segment.total_frames,
                chain: chain_label(&spec.filter_chain),
                rep: b.provenance.segment.segment_id,
                ingest_s: t.ingest_s,
                process_s: t.process_s,
                emit_s: t.emit_s,
                total_s: t.ingest_s + t.process_s + t.emit_s,
            })
            .collect();
        write_csv_file(path, &rows).unwrap_or_else(|e| fail(3, format!("{e:#}")));
    }
}

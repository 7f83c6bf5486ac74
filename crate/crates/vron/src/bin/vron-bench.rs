//! Scaling and design-comparison benchmarks.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, ValueEnum};
use vron::bench::{
    run_design_comparison, run_scaling_suite, six_filter_chain, two_filter_chain, write_csv_file, Bench,
    ScalingConfig, MIN_REPS,
};
use vron::transport::Transport;

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Scaling,
    Designs,
}

#[derive(Parser)]
#[command(about = "Run the benchmark suites")]
struct Args {
    #[arg(long, value_enum, default_value = "scaling")]
    suite: Suite,
    #[arg(long, default_value_t = MIN_REPS)]
    reps: u32,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Use loopback TCP links instead of in-process channels.
    #[arg(long)]
    tcp: bool,
    /// Clip size for the design comparison.
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    #[arg(long, default_value_t = 30)]
    frames: u32,
}

fn main() -> Result<()> {
    let args = Args::parse();
    anyhow::ensure!(args.reps >= 1, "--reps must be at least 1");
    let mut bench = Bench::new(if args.tcp { Transport::Tcp } else { Transport::InProcess })?;
    let results = match args.suite {
        Suite::Scaling => {
            let cfg = ScalingConfig {
                reps: args.reps,
                ..ScalingConfig::default()
            };
            let r = run_scaling_suite(&mut bench, &cfg)?;
            for (w, h, t) in &r.by_resolution {
                println!("{w}x{h} x{} frames  median {t:.3}s", cfg.frames_per_resolution);
            }
            for (n, t) in &r.by_frames {
                let (w, h) = cfg.frame_axis_resolution;
                println!("{w}x{h} x{n} frames  median {t:.3}s");
            }
            println!("fit vs pixels: R^2 = {:.4}", r.pixel_fit.r2);
            println!("fit vs frames: R^2 = {:.4}", r.frame_fit.r2);
            r.results
        }
        Suite::Designs => {
            let r = run_design_comparison(
                &mut bench,
                &[two_filter_chain(), six_filter_chain()],
                (args.width, args.height, args.frames),
                args.reps,
            )?;
            println!("all designs produced identical pixels");
            for o in &r.overheads {
                println!(
                    "{}: staged_signed/monolithic_unsigned {:.3}, staged/monolithic (signed) {:.3}, signed/unsigned (staged) {:.3}",
                    o.chain,
                    o.staged_signed_vs_monolithic_unsigned(),
                    o.staged_vs_monolithic_signed(),
                    o.signed_vs_unsigned_staged()
                );
            }
            r.results
        }
    };
    if let Some(p) = &args.csv {
        write_csv_file(p, &results)?;
    }
    Ok(())
}

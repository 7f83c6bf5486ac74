//! Records a clip into signed segments.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use rand::rngs::OsRng;
use vron::camera::{record_container, SystemClock};
use vron::cli::{load_authority, parse_device_state, parse_fps};
use vron::io::{default_app_identity, load_container, numbered, save_segment, SEGMENT_EXT};
use vron_core::attest::Clock;
use vron_core::frame::{synthetic_clip, Container};
use vron_core::provenance::FrameRate;
use vron_core::DeviceState;

#[derive(Parser)]
#[command(about = "Record a clip as signed, attested segments")]
struct Args {
    /// A .vronc container, or `synthetic` for a generated clip.
    #[arg(long, default_value = "synthetic")]
    input: String,
    /// Frames to generate, or to keep from the input.
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long, default_value_t = 1280)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    /// Frame rate of a synthetic clip, NUM/DEN.
    #[arg(long, default_value = "30/1", value_parser = parse_fps)]
    fps: FrameRate,
    #[arg(long, default_value_t = 60)]
    segment_size: usize,
    #[arg(long, default_value = "segments")]
    out_dir: PathBuf,
    #[arg(long, default_value = "genuine", value_parser = parse_device_state)]
    device_state: DeviceState,
    #[arg(long)]
    authority_key: PathBuf,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let (authority, _) = load_authority(&args.authority_key)?;
    let container = if args.input == "synthetic" {
        Container::new(synthetic_clip(args.width, args.height, args.frames.unwrap_or(60)), args.fps, None)?
    } else {
        let mut c = load_container(args.input.as_ref()).with_context(|| format!("loading {}", args.input))?;
        if let Some(n) = args.frames {
            c.frames.truncate(n as usize);
        }
        c
    };
    let segments = record_container(
        authority.as_ref(),
        &mut OsRng,
        container,
        args.segment_size,
        args.device_state,
        default_app_identity(),
        SystemClock.now(),
    )?;
    for s in &segments {
        let path = numbered(&args.out_dir, "segment", s.provenance.segment.segment_id, SEGMENT_EXT);
        save_segment(&path, s)?;
        println!("{}", path.display());
    }
    Ok(())
}

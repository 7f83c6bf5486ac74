//! Desk-scale benchmarks: how run time grows with resolution and frame
//! count, and what separate signed stages cost against a single process.
//!
//! Every run has three timed phases. Ingest reads the input file, process
//! runs the design, emit encodes the output and writes it. Recording the
//! camera segment is setup and not timed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use anyhow::Context;
use rand::rngs::OsRng;
use vron_core::attest::{AttestationAuthority, Clock, StageCertifier, TrustRoots};
use vron_core::codec::{Reader, Writer};
use vron_core::crypto::{sign, KeyPair, Role};
use vron_core::filters::{apply_chain, apply_pixel_filter, FilterKind, FilterSpec};
use vron_core::frame::{synthetic_clip, Container, RawFrame};
use vron_core::provenance::{CodecInfo, FilterEntry, FrameRate};
use vron_core::stages::{bundle_frames, decoder_measurement, decoder_open, StageIdentity};
use vron_core::tamper::Passthrough;
use vron_core::wire::{MsgType, WireMessage};
use vron_core::{DeviceState, SignedSegment};

use crate::camera::{record_container, SystemClock};
use crate::io::{default_app_identity, default_trust};
use crate::scheduler::{Hooks, JobError, Pipeline};
use crate::transport::{link, relay, Sink, Source, Transport};
use crate::workers::KeySource;

/// Resolutions of the scaling suite, smallest first.
pub const RESOLUTIONS: [(u32, u32); 5] = [(176, 144), (320, 240), (640, 480), (1280, 720), (1920, 1080)];
pub const FRAME_COUNTS: [u32; 4] = [30, 60, 120, 240];
pub const MIN_REPS: u32 = 3;

pub const CSV_HEADER: [&str; 10] = [
    "design", "width", "height", "frames", "chain", "rep", "ingest_s", "process_s", "emit_s", "total_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Design {
    /// One signed worker per stage, the normal pipeline.
    StagedSigned,
    /// Same workers and links, raw frames, no verification or signatures.
    StagedUnsigned,
    /// One process that verifies the camera segment, filters and signs.
    MonolithicSigned,
    /// One process, no verification or signatures.
    MonolithicUnsigned,
}

impl Design {
    pub const ALL: [Design; 4] = [
        Design::StagedSigned,
        Design::StagedUnsigned,
        Design::MonolithicSigned,
        Design::MonolithicUnsigned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::StagedSigned => "staged_signed",
            Design::StagedUnsigned => "staged_unsigned",
            Design::MonolithicSigned => "monolithic_signed",
            Design::MonolithicUnsigned => "monolithic_unsigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub design: Design,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub chain: String,
    pub rep: u32,
    pub ingest_s: f64,
    pub process_s: f64,
    pub emit_s: f64,
    pub total_s: f64,
}

impl BenchResult {
    fn record(&self) -> [String; 10] {
        [
            self.design.name().to_string(),
            self.width.to_string(),
            self.height.to_string(),
            self.frames.to_string(),
            self.chain.clone(),
            self.rep.to_string(),
            format!("{:.6}", self.ingest_s),
            format!("{:.6}", self.process_s),
            format!("{:.6}", self.emit_s),
            format!("{:.6}", self.total_s),
        ]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{design} output differs from {reference} for chain {chain:?}")]
    OutputDivergence {
        design: &'static str,
        reference: &'static str,
        chain: String,
    },
    #[error(transparent)]
    Job(#[from] JobError),
    #[error("{0:#}")]
    Io(#[from] anyhow::Error),
}

/// `blur:7+sharpen:7` style label.
pub fn chain_label(chain: &[FilterSpec]) -> String {
    if chain.is_empty() {
        return "none".into();
    }
    chain
        .iter()
        .map(|s| {
            let p: Vec<String> = s.parameters.iter().map(|f| format_fixed(f.0)).collect();
            if p.is_empty() {
                s.name().to_string()
            } else {
                format!("{}:{}", s.name(), p.join(","))
            }
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn format_fixed(v: i64) -> String {
    let x = v as f64 / 65536.0;
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn two_filter_chain() -> Vec<FilterSpec> {
    vec![
        FilterSpec::with_defaults(FilterKind::Blur),
        FilterSpec::with_defaults(FilterKind::Sharpen),
    ]
}

pub fn six_filter_chain() -> Vec<FilterSpec> {
    FilterKind::ALL.into_iter().map(FilterSpec::with_defaults).collect()
}

/// A recorded input, stored both as a signed segment and as the bare
/// container the unsigned designs read.
pub struct Prepared {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    segment_path: PathBuf,
    container_path: PathBuf,
}

pub struct Bench {
    authority: Arc<AttestationAuthority>,
    trust: TrustRoots,
    pipeline: Pipeline,
    transport: Transport,
    monolith: StageIdentity,
    dir: tempfile::TempDir,
    inputs: u32,
}

impl Bench {
    pub fn new(transport: Transport) -> anyhow::Result<Self> {
        let key = vron_core::generate_keypair(&mut OsRng)?;
        let trust = default_trust(key.public_key());
        let authority = Arc::new(AttestationAuthority::new(key, Box::new(SystemClock)));
        let pipeline = Pipeline::new(authority.clone(), trust.clone(), 2, KeySource::Random);
        pipeline.pool().prewarm(1)?;
        let mono_key = KeyPair::from_seed(rand::random());
        let monolith = StageIdentity {
            certificate: authority.certify_stage(mono_key.public_key(), decoder_measurement(), Role::Decoder)?,
            key: mono_key,
        };
        Ok(Self {
            authority,
            trust,
            pipeline,
            transport,
            monolith,
            dir: tempfile::tempdir().context("creating bench directory")?,
            inputs: 0,
        })
    }

    /// Records a synthetic clip as one segment and stores it.
    pub fn prepare(&mut self, width: u32, height: u32, frames: u32) -> anyhow::Result<Prepared> {
        anyhow::ensure!(frames >= 1, "a segment needs at least one frame");
        let container = Container::new(synthetic_clip(width, height, frames), FrameRate::new(30, 1), None)?;
        let container_path = self.dir.path().join(format!("input-{}.vronc", self.inputs));
        let segment_path = self.dir.path().join(format!("input-{}.vseg", self.inputs));
        self.inputs += 1;
        fs::write(&container_path, container.encode()?)?;
        let segment = record_container(
            self.authority.as_ref(),
            &mut OsRng,
            container,
            frames as usize,
            DeviceState::Genuine,
            default_app_identity(),
            SystemClock.now(),
        )?
        .pop()
        .expect("one segment");
        fs::write(&segment_path, segment.encode()?)?;
        Ok(Prepared {
            width,
            height,
            frames,
            segment_path,
            container_path,
        })
    }

    /// One timed run; also returns the output frames for comparison.
    pub fn run_once(
        &self,
        input: &Prepared,
        chain: &[FilterSpec],
        design: Design,
        rep: u32,
    ) -> Result<(BenchResult, Vec<RawFrame>), BenchError> {
        let out_path = self.dir.path().join("output.bin");
        let t0 = Instant::now();
        let (frames, ingest_s, process_s, emit_s) = match design {
            Design::StagedSigned => {
                let bytes = read(&input.segment_path)?;
                let segment = SignedSegment::decode(&bytes).map_err(|e| anyhow::anyhow!("{e}"))?;
                drop(bytes);
                let t1 = Instant::now();
                let bundle = self.pipeline.run_segment(&segment, chain, self.transport, Hooks::new())?;
                drop(segment);
                let t2 = Instant::now();
                fs::write(&out_path, bundle.encode().map_err(anyhow::Error::from)?).context("writing output")?;
                let t3 = Instant::now();
                let frames = bundle_frames(&bundle).map_err(anyhow::Error::from)?;
                (frames, t1 - t0, t2 - t1, t3 - t2)
            }
            Design::StagedUnsigned => {
                let bytes = read(&input.container_path)?;
                let t1 = Instant::now();
                let container = staged_unsigned(bytes, chain, self.transport)?;
                let t2 = Instant::now();
                fs::write(&out_path, container.encode().map_err(anyhow::Error::from)?).context("writing output")?;
                let t3 = Instant::now();
                (container.frames, t1 - t0, t2 - t1, t3 - t2)
            }
            Design::MonolithicSigned => {
                let bytes = read(&input.segment_path)?;
                let segment = SignedSegment::decode(&bytes).map_err(|e| anyhow::anyhow!("{e}"))?;
                drop(bytes);
                let t1 = Instant::now();
                let out = self.monolithic_signed(&segment, chain)?;
                let t2 = Instant::now();
                let mut f = fs::File::create(&out_path).context("writing output")?;
                f.write_all(&out.container_bytes).context("writing output")?;
                f.write_all(&out.provenance).context("writing output")?;
                f.write_all(&out.signatures).context("writing output")?;
                drop(f);
                let t3 = Instant::now();
                let frames = Container::decode(&out.container_bytes).map_err(anyhow::Error::from)?.frames;
                (frames, t1 - t0, t2 - t1, t3 - t2)
            }
            Design::MonolithicUnsigned => {
                let bytes = read(&input.container_path)?;
                let t1 = Instant::now();
                let mut c = Container::decode(&bytes).map_err(anyhow::Error::from)?;
                drop(bytes);
                for f in &mut c.frames {
                    *f = apply_chain(chain, f).map_err(anyhow::Error::from)?;
                }
                let t2 = Instant::now();
                fs::write(&out_path, c.encode().map_err(anyhow::Error::from)?).context("writing output")?;
                let t3 = Instant::now();
                (c.frames, t1 - t0, t2 - t1, t3 - t2)
            }
        };
        let total_s = t0.elapsed().as_secs_f64();
        let result = BenchResult {
            design,
            width: input.width,
            height: input.height,
            frames: input.frames,
            chain: chain_label(chain),
            rep,
            ingest_s: ingest_s.as_secs_f64(),
            process_s: process_s.as_secs_f64(),
            emit_s: emit_s.as_secs_f64(),
            total_s,
        };
        Ok((result, frames))
    }

    fn monolithic_signed(&self, segment: &SignedSegment, chain: &[FilterSpec]) -> anyhow::Result<MonolithOutput> {
        let id = &self.monolith;
        let decoded = decoder_open(segment, &self.trust, id)?;
        let mut record = segment.provenance.clone();
        let mut frames = decoded.into_frames();
        for f in &mut frames {
            *f = apply_chain(chain, f)?;
        }
        let c = Container::new(frames, record.segment.frame_rate, None)?;
        let container_bytes = c.encode()?;
        record.filters = chain
            .iter()
            .map(|s| FilterEntry {
                name: s.name().into(),
                measurement: s.kind.measurement(),
                parameters: s.parameters.clone(),
            })
            .collect();
        record.codec = Some(CodecInfo {
            decoder_measurement: id.certificate.measurement,
            encoder_measurement: id.certificate.measurement,
        });
        let provenance = record.encode()?;
        let mut signatures = sign(&id.key, &container_bytes)?.as_bytes().to_vec();
        signatures.extend_from_slice(sign(&id.key, &provenance)?.as_bytes());
        Ok(MonolithOutput {
            container_bytes,
            provenance,
            signatures,
        })
    }
}

struct MonolithOutput {
    container_bytes: Vec<u8>,
    provenance: Vec<u8>,
    signatures: Vec<u8>,
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn frame_payload(f: &RawFrame) -> Vec<u8> {
    let mut w = Writer::with_capacity(8 + f.pixels.len());
    f.write(&mut w);
    w.into_bytes()
}

fn frame_from(m: &WireMessage) -> anyhow::Result<RawFrame> {
    let mut r = Reader::new(&m.payload);
    let f = RawFrame::read(&mut r).map_err(|e| anyhow::anyhow!("{e}"))?;
    r.finish().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(f)
}

/// The staged topology without any security: the same threads, links and
/// relays as the signed pipeline, carrying bare frames.
fn staged_unsigned(container_bytes: Vec<u8>, chain: &[FilterSpec], transport: Transport) -> anyhow::Result<Container> {
    let mut relays = Vec::new();
    let mut hop = || -> anyhow::Result<(Sink, Source)> {
        let (a_tx, a_rx) = link(transport)?;
        let (b_tx, b_rx) = link(transport)?;
        relays.push(relay(a_rx, b_tx, Box::new(Passthrough)));
        Ok((a_tx, b_rx))
    };
    let (mut first_tx, mut upstream) = hop()?;
    let (header_tx, header_rx) = std::sync::mpsc::channel();
    let decoder = thread::spawn(move || -> anyhow::Result<()> {
        let c = Container::decode(&container_bytes)?;
        drop(container_bytes);
        let _ = header_tx.send((c.frame_rate, c.audio.clone()));
        for f in &c.frames {
            first_tx.send(&WireMessage::new(MsgType::Frame, frame_payload(f)))?;
        }
        Ok(())
    });
    let mut filters = Vec::new();
    for spec in chain {
        let (mut tx, rx) = hop()?;
        let mut input = std::mem::replace(&mut upstream, rx);
        let spec = spec.clone();
        filters.push(thread::spawn(move || -> anyhow::Result<()> {
            while let Some(m) = input.recv()? {
                let out = apply_pixel_filter(&spec, &frame_from(&m)?)?;
                tx.send(&WireMessage::new(MsgType::Frame, frame_payload(&out)))?;
            }
            Ok(())
        }));
    }
    let encoder = thread::spawn(move || -> anyhow::Result<Vec<RawFrame>> {
        let mut frames = Vec::new();
        while let Some(m) = upstream.recv()? {
            frames.push(frame_from(&m)?);
        }
        Ok(frames)
    });
    let join = |h: thread::JoinHandle<anyhow::Result<()>>| h.join().map_err(|_| anyhow::anyhow!("stage panicked"))?;
    join(decoder)?;
    for f in filters {
        join(f)?;
    }
    let frames = encoder.join().map_err(|_| anyhow::anyhow!("encoder panicked"))??;
    for r in relays {
        let _ = r.join();
    }
    let (rate, audio) = header_rx.recv().context("decoder sent no header")?;
    Ok(Container::new(frames, rate, audio)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of y on x.
pub fn linear_fit(points: &[(f64, f64)]) -> Fit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Fit { slope, intercept, r2 }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub results: Vec<BenchResult>,
    /// (width, height, median total seconds) per resolution.
    pub by_resolution: Vec<(u32, u32, f64)>,
    /// (frames, median total seconds) per frame count.
    pub by_frames: Vec<(u32, f64)>,
    /// Median time against pixels processed.
    pub pixel_fit: Fit,
    pub frame_fit: Fit,
}

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub resolutions: Vec<(u32, u32)>,
    /// Frames per run on the resolution axis.
    pub frames_per_resolution: u32,
    pub frame_counts: Vec<u32>,
    /// Resolution used on the frame-count axis.
    pub frame_axis_resolution: (u32, u32),
    pub chain: Vec<FilterSpec>,
    pub reps: u32,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            resolutions: RESOLUTIONS.to_vec(),
            frames_per_resolution: 30,
            frame_counts: FRAME_COUNTS.to_vec(),
            frame_axis_resolution: (320, 240),
            chain: vec![FilterSpec::with_defaults(FilterKind::Blur)],
            reps: MIN_REPS,
        }
    }
}

fn median_of(bench: &mut Bench, w: u32, h: u32, frames: u32, cfg: &ScalingConfig, results: &mut Vec<BenchResult>) -> Result<f64, BenchError> {
    let input = bench.prepare(w, h, frames)?;
    let mut times = Vec::new();
    for rep in 0..cfg.reps {
        let (r, _) = bench.run_once(&input, &cfg.chain, Design::StagedSigned, rep)?;
        times.push(r.total_s);
        results.push(r);
    }
    let _ = fs::remove_file(&input.segment_path);
    let _ = fs::remove_file(&input.container_path);
    Ok(median(&times))
}

/// Times the signed pipeline over each resolution and each frame count,
/// serially, and fits median time against pixels processed and frames.
pub fn run_scaling_suite(bench: &mut Bench, cfg: &ScalingConfig) -> Result<ScalingReport, BenchError> {
    let mut results = Vec::new();
    let mut by_resolution = Vec::new();
    for &(w, h) in &cfg.resolutions {
        let m = median_of(bench, w, h, cfg.frames_per_resolution, cfg, &mut results)?;
        by_resolution.push((w, h, m));
    }
    let mut by_frames = Vec::new();
    let (w, h) = cfg.frame_axis_resolution;
    for &n in &cfg.frame_counts {
        let m = median_of(bench, w, h, n, cfg, &mut results)?;
        by_frames.push((n, m));
    }
    let f = cfg.frames_per_resolution as f64;
    let pixel_points: Vec<_> = by_resolution.iter().map(|&(w, h, t)| (w as f64 * h as f64 * f, t)).collect();
    let frame_points: Vec<_> = by_frames.iter().map(|&(n, t)| (n as f64, t)).collect();
    Ok(ScalingReport {
        results,
        by_resolution,
        by_frames,
        pixel_fit: linear_fit(&pixel_points),
        frame_fit: linear_fit(&frame_points),
    })
}

/// Median totals of the four designs for one chain.
#[derive(Debug, Clone)]
pub struct Overhead {
    pub chain: String,
    pub staged_signed_s: f64,
    pub staged_unsigned_s: f64,
    pub monolithic_signed_s: f64,
    pub monolithic_unsigned_s: f64,
}

impl Overhead {
    /// Cost of the full design over a plain single process.
    pub fn staged_signed_vs_monolithic_unsigned(&self) -> f64 {
        self.staged_signed_s / self.monolithic_unsigned_s
    }

    /// Cost of splitting into stages, both signed.
    pub fn staged_vs_monolithic_signed(&self) -> f64 {
        self.staged_signed_s / self.monolithic_signed_s
    }

    /// Cost of signing, both staged.
    pub fn signed_vs_unsigned_staged(&self) -> f64 {
        self.staged_signed_s / self.staged_unsigned_s
    }
}

#[derive(Debug, Clone)]
pub struct DesignReport {
    pub results: Vec<BenchResult>,
    pub overheads: Vec<Overhead>,
}

/// Runs all four designs on each chain, checking that their pixels agree.
pub fn run_design_comparison(
    bench: &mut Bench,
    chains: &[Vec<FilterSpec>],
    (width, height, frames): (u32, u32, u32),
    reps: u32,
) -> Result<DesignReport, BenchError> {
    let input = bench.prepare(width, height, frames)?;
    let mut results = Vec::new();
    let mut overheads = Vec::new();
    for chain in chains {
        let mut reference: Option<(Design, Vec<RawFrame>)> = None;
        let mut medians = [0.0; 4];
        for (i, design) in Design::ALL.into_iter().enumerate() {
            let mut times = Vec::new();
            for rep in 0..reps {
                let (r, frames) = bench.run_once(&input, chain, design, rep)?;
                match &reference {
                    None => reference = Some((design, frames)),
                    Some((d, want)) => {
                        if *want != frames {
                            return Err(BenchError::OutputDivergence {
                                design: design.name(),
                                reference: d.name(),
                                chain: chain_label(chain),
                            });
                        }
                    }
                }
                times.push(r.total_s);
                results.push(r);
            }
            medians[i] = median(&times);
        }
        overheads.push(Overhead {
            chain: chain_label(chain),
            staged_signed_s: medians[0],
            staged_unsigned_s: medians[1],
            monolithic_signed_s: medians[2],
            monolithic_unsigned_s: medians[3],
        });
    }
    Ok(DesignReport { results, overheads })
}

pub fn write_csv<W: Write>(out: W, results: &[BenchResult]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, results: &[BenchResult]) -> anyhow::Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(f, results)
}

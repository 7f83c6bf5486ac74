//! The untrusted orchestrator. It wires stage workers together with links
//! and relays, hands out decoder workers from the pool and never holds a
//! stage key: every key is generated inside the worker thread that uses it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use vron_core::attest::{StageCertifier, TrustRoots};
use vron_core::crypto::Role;
use vron_core::filters::{FilterKind, FilterSpec};
use vron_core::provenance::Fixed;
use vron_core::stages::{encoder_measurement, EncoderStage, FilterStage, FinalBundle, StageError};
use vron_core::tamper::{Boundary, Interceptor, Passthrough};
use vron_core::wire::{segment_messages, WireMessage};
use vron_core::SignedSegment;

use crate::io::{expand_inputs, load_segment, numbered, save_bundle, BUNDLE_EXT, SEGMENT_EXT};
use crate::pool::{DecoderPool, PoolError, DEFAULT_POOL_SIZE};
use crate::transport::{link, relay, Sink, Source, Transport};
use crate::workers::{encoder_worker, filter_worker, new_identity, KeySource, SharedCertifier, WorkerError};

#[derive(Debug, Clone)]
pub struct JobSpec {
    pub filter_chain: Vec<FilterSpec>,
    pub input_path: PathBuf,
    pub output_path: PathBuf,
    pub transport: Transport,
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("{0:#}")]
    Io(anyhow::Error),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("stage {stage} crashed: {reason}")]
    StageCrashed { stage: String, reason: String },
    #[error("pipeline rejected at {stage}: {error}")]
    PipelineRejected { stage: String, error: StageError },
}

/// Exit codes for the first error kinds; rejections start here and add the
/// stage error's code.
pub const EXIT_REJECTED_BASE: i32 = 16;

impl JobError {
    /// Process exit code, one per error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            JobError::InvalidJob(_) => 2,
            JobError::Io(_) => 3,
            JobError::Pool(_) => 4,
            JobError::StageCrashed { .. } => 5,
            JobError::PipelineRejected { error, .. } => EXIT_REJECTED_BASE + error.code() as i32,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            JobError::InvalidJob(_) => "InvalidJob",
            JobError::Io(_) => "Io",
            JobError::Pool(_) => "SpawnFailed",
            JobError::StageCrashed { .. } => "StageCrashed",
            JobError::PipelineRejected { error, .. } => error.kind(),
        }
    }
}

/// Parses `name[:param[,param]]`, e.g. `blur:7` or `brightness:-0.2`.
pub fn parse_filter(s: &str) -> Result<FilterSpec, String> {
    let (name, params) = match s.split_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (s, None),
    };
    let kind = FilterKind::from_name(name.trim()).ok_or_else(|| format!("unknown filter {name:?}"))?;
    let parameters = match params {
        None => kind.default_parameters(),
        Some(p) => p
            .split(',')
            .map(|v| Fixed::parse(v).ok_or_else(|| format!("bad parameter {v:?} for {name}")))
            .collect::<Result<_, _>>()?,
    };
    FilterSpec::new(kind, parameters).map_err(|e| e.to_string())
}

/// Which frame link a boundary names; links run decoder → filter 0 → …
/// → encoder and link `i` feeds stage `i` after the decoder.
fn frame_link(b: Boundary, filters: usize) -> Option<usize> {
    match b {
        Boundary::DecoderToFilter => (filters > 0).then_some(0),
        Boundary::FilterToFilter => (filters > 1).then_some(1),
        Boundary::FilterToEncoder => (filters > 0).then_some(filters),
        Boundary::CameraToDecoder | Boundary::DecoderToEncoderSidecar => None,
    }
}

/// Wraps an interceptor and keeps a copy of everything it emits, so one
/// run's traffic can serve as donor material for another.
pub struct Recorder {
    inner: Box<dyn Interceptor>,
    log: Arc<Mutex<Vec<WireMessage>>>,
}

impl Recorder {
    pub fn new(inner: Box<dyn Interceptor>) -> (Self, Arc<Mutex<Vec<WireMessage>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        (
            Self {
                inner,
                log: Arc::clone(&log),
            },
            log,
        )
    }
}

impl Interceptor for Recorder {
    fn on_message(&mut self, msg: WireMessage, out: &mut Vec<WireMessage>) {
        let start = out.len();
        self.inner.on_message(msg, out);
        self.log.lock().expect("recorder lock").extend_from_slice(&out[start..]);
    }

    fn on_end(&mut self, out: &mut Vec<WireMessage>) {
        let start = out.len();
        self.inner.on_end(out);
        self.log.lock().expect("recorder lock").extend_from_slice(&out[start..]);
    }
}

/// Interceptors keyed by the boundary they sit on.
pub type Hooks = HashMap<Boundary, Box<dyn Interceptor>>;

pub struct Pipeline {
    certifier: SharedCertifier,
    trust: TrustRoots,
    pool: DecoderPool,
    keys: KeySource,
    jobs: AtomicU64,
}

impl Pipeline {
    pub fn new(certifier: Arc<dyn StageCertifier>, trust: TrustRoots, pool_size: usize, keys: KeySource) -> Self {
        let pool = DecoderPool::new(pool_size, Arc::clone(&certifier), trust.clone(), keys);
        Self {
            certifier,
            trust,
            pool,
            keys,
            jobs: AtomicU64::new(0),
        }
    }

    pub fn with_defaults(certifier: Arc<dyn StageCertifier>, trust: TrustRoots) -> Self {
        Self::new(certifier, trust, DEFAULT_POOL_SIZE, KeySource::Random)
    }

    pub fn pool(&self) -> &DecoderPool {
        &self.pool
    }

    pub fn trust(&self) -> &TrustRoots {
        &self.trust
    }

    /// Runs one segment through decoder, `chain` and encoder.
    pub fn run_segment(
        &self,
        segment: &SignedSegment,
        chain: &[FilterSpec],
        transport: Transport,
        mut hooks: Hooks,
    ) -> Result<FinalBundle, JobError> {
        for s in chain {
            s.validate().map_err(|e| JobError::InvalidJob(e.to_string()))?;
        }
        let n = chain.len();
        for b in hooks.keys() {
            let present = matches!(b, Boundary::CameraToDecoder | Boundary::DecoderToEncoderSidecar)
                || frame_link(*b, n).is_some();
            if !present {
                return Err(JobError::InvalidJob(format!("no {b} link in a chain of {n} filter(s)")));
            }
        }
        let mut take = |b: Boundary| hooks.remove(&b).unwrap_or_else(|| Box::new(Passthrough));
        let job = self.jobs.fetch_add(1, Ordering::Relaxed);

        let mut relays = Vec::new();
        let mut hop = |icpt: Box<dyn Interceptor>| -> Result<(Sink, Source), JobError> {
            let (a_tx, a_rx) = link(transport).map_err(|e| JobError::Io(e.into()))?;
            let (b_tx, b_rx) = link(transport).map_err(|e| JobError::Io(e.into()))?;
            relays.push(relay(a_rx, b_tx, icpt));
            Ok((a_tx, b_rx))
        };
        let (camera_tx, decoder_rx) = hop(take(Boundary::CameraToDecoder))?;
        let (sidecar_tx, sidecar_rx) = hop(take(Boundary::DecoderToEncoderSidecar))?;
        let mut frame_hops = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let icpt = match Boundary::ALL.into_iter().find(|b| frame_link(*b, n) == Some(i)) {
                Some(b) => take(b),
                None => Box::new(Passthrough),
            };
            frame_hops.push(hop(icpt)?);
        }

        let decoder = self.pool.acquire()?;
        let mut stage_names = vec!["decoder".to_string()];
        let mut threads: Vec<JoinHandle<Result<(), WorkerError>>> = Vec::new();

        let mut hops = frame_hops.into_iter();
        let (decoder_tx, mut upstream_rx) = hops.next().expect("at least one frame link");
        for (i, spec) in chain.iter().enumerate() {
            let (tx, rx) = hops.next().expect("one link per filter");
            let input = std::mem::replace(&mut upstream_rx, rx);
            let (certifier, trust, keys, spec) = (Arc::clone(&self.certifier), self.trust.clone(), self.keys, spec.clone());
            let name = format!("filter[{i}]:{}", spec.name());
            stage_names.push(name.clone());
            threads.push(spawn_named(name, move || {
                let identity = new_identity(
                    certifier.as_ref(),
                    keys,
                    &format!("job/{job}/filter/{i}"),
                    spec.kind.measurement(),
                    Role::Filter,
                )?;
                let stage = FilterStage::new(spec, identity)?;
                filter_worker(stage, &trust, input, tx)
            })?);
        }
        stage_names.push("encoder".to_string());
        let (certifier, trust, keys) = (Arc::clone(&self.certifier), self.trust.clone(), self.keys);
        let encoder = spawn_named("encoder".into(), move || {
            let identity = new_identity(
                certifier.as_ref(),
                keys,
                &format!("job/{job}/encoder"),
                encoder_measurement(),
                Role::Encoder,
            )?;
            encoder_worker(EncoderStage::new(identity)?, &trust, upstream_rx, sidecar_rx)
        })?;

        // the decoder must be listening before a large segment is written
        let decoder_done = decoder.run(decoder_rx, decoder_tx, sidecar_tx)?;
        let mut camera_tx = camera_tx;
        let sent = segment.encode().map_err(|e| JobError::Io(e.into())).and_then(|bytes| {
            segment_messages(&bytes)
                .iter()
                .try_for_each(|m| camera_tx.send(m))
                .map_err(|e| JobError::Io(e.into()))
        });
        drop(camera_tx);

        let mut results: Vec<Result<(), String>> = Vec::new();
        let mut rejections: Vec<Option<StageError>> = Vec::new();
        let mut record = |r: Result<Result<(), WorkerError>, String>| match r {
            Ok(Ok(())) => {
                results.push(Ok(()));
                rejections.push(None);
            }
            Ok(Err(WorkerError::Stage(e))) => {
                results.push(Ok(()));
                rejections.push(Some(e));
            }
            Ok(Err(e)) => {
                results.push(Err(e.to_string()));
                rejections.push(None);
            }
            Err(panic) => {
                results.push(Err(panic));
                rejections.push(None);
            }
        };
        record(decoder_done.recv().map_err(|_| "decoder worker exited".to_string()));
        for t in threads {
            record(t.join().map_err(panic_text));
        }
        let bundle = match encoder.join().map_err(panic_text) {
            Ok(Ok(b)) => {
                record(Ok(Ok(())));
                Some(b)
            }
            Ok(Err(e)) => {
                record(Ok(Err(e)));
                None
            }
            Err(p) => {
                record(Err(p));
                None
            }
        };
        for r in relays {
            let _ = r.join();
        }
        // a worker whose rotation fails is simply not reused
        let _ = self.pool.release(decoder);

        for (i, (res, rej)) in results.into_iter().zip(rejections).enumerate() {
            if let Some(error) = rej {
                return Err(JobError::PipelineRejected {
                    stage: stage_names[i].clone(),
                    error,
                });
            }
            if let Err(reason) = res {
                return Err(JobError::StageCrashed {
                    stage: stage_names[i].clone(),
                    reason,
                });
            }
        }
        sent?;
        bundle.ok_or_else(|| JobError::StageCrashed {
            stage: "encoder".into(),
            reason: "no bundle produced".into(),
        })
    }
}

fn spawn_named<T: Send + 'static>(
    name: String,
    f: impl FnOnce() -> T + Send + 'static,
) -> Result<JoinHandle<T>, JobError> {
    thread::Builder::new()
        .name(name.clone())
        .spawn(f)
        .map_err(|e| JobError::StageCrashed {
            stage: name,
            reason: e.to_string(),
        })
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panicked".into())
}

/// Seconds spent loading, running and writing one segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub ingest_s: f64,
    pub process_s: f64,
    pub emit_s: f64,
}

/// Runs a job over one segment file or a directory of segments. A single
/// input writes its bundle to `output_path`; a directory input writes one
/// numbered bundle per segment into `output_path`.
pub fn run_job(pipeline: &Pipeline, spec: &JobSpec) -> Result<Vec<FinalBundle>, JobError> {
    Ok(run_job_timed(pipeline, spec)?.into_iter().map(|(b, _)| b).collect())
}

pub fn run_job_timed(pipeline: &Pipeline, spec: &JobSpec) -> Result<Vec<(FinalBundle, PhaseTimes)>, JobError> {
    if !spec.input_path.exists() {
        return Err(JobError::InvalidJob(format!("{} does not exist", spec.input_path.display())));
    }
    let inputs = expand_inputs(&spec.input_path, SEGMENT_EXT).map_err(JobError::Io)?;
    let many = spec.input_path.is_dir();
    let mut out = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let t0 = Instant::now();
        let segment = load_segment(path).map_err(JobError::Io)?;
        let t1 = Instant::now();
        let bundle = pipeline.run_segment(&segment, &spec.filter_chain, spec.transport, Hooks::new())?;
        drop(segment);
        let t2 = Instant::now();
        let dest = if many {
            numbered(&spec.output_path, "bundle", bundle.provenance.segment.segment_id, BUNDLE_EXT)
        } else {
            spec.output_path.clone()
        };
        save_bundle(&dest, &bundle).map_err(JobError::Io)?;
        let times = PhaseTimes {
            ingest_s: (t1 - t0).as_secs_f64(),
            process_s: (t2 - t1).as_secs_f64(),
            emit_s: t2.elapsed().as_secs_f64(),
        };
        out.push((bundle, times));
    }
    Ok(out)
}

/// Bundle paths `run_job` writes for a directory output.
pub fn bundle_paths(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    expand_inputs(dir, BUNDLE_EXT)
}

//! Runs attacks against the real pipeline and the verifier and classifies
//! what happened.
//!
//! An in-flight attack is detected when a stage rejects, or when the bundle
//! that comes out fails verification. Reordering frames in flight is also
//! defeated when the bundle verifies with the frames back in capture order,
//! since the encoder places frames by tag.

use std::collections::HashMap;
use std::fmt;

use vron_core::filters::FilterSpec;
use vron_core::frame::read_watermark;
use vron_core::stages::{bundle_frames, FinalBundle};
use vron_core::tamper::{tamper_bundle, tamper_in_flight, tamper_video, AttackKind, Boundary, Passthrough, TamperOptions};
use vron_core::verifier::{verify_bundle, verify_video, VerificationReport, VerifierPolicy};
use vron_core::SignedSegment;

use crate::scheduler::{Hooks, JobError, Pipeline, Recorder};
use crate::transport::Transport;

/// Where an attack is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    InFlight(Boundary),
    /// A finished bundle, optionally re-signed under attacker keys.
    Bundle { resign: bool },
    /// A whole multi-segment video.
    Video,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::InFlight(b) => write!(f, "{b}"),
            Level::Bundle { resign: false } => f.write_str("bundle"),
            Level::Bundle { resign: true } => f.write_str("bundle+resign"),
            Level::Video => f.write_str("video"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// An attack was rejected; the detail names the stage or failed checks.
    Detected(String),
    /// A reorder that the pipeline undid.
    Neutralized,
    /// An attack produced a verifying bundle.
    Undetected(String),
    /// A control run verified.
    Accepted,
    /// A control run was rejected.
    FalseReject(String),
    /// The run failed for a reason unrelated to the attack.
    Error(String),
}

impl Outcome {
    /// Detected or neutralized attacks and accepted controls.
    pub fn is_correct(&self) -> bool {
        matches!(self, Outcome::Detected(_) | Outcome::Neutralized | Outcome::Accepted)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Detected(_) | Outcome::Neutralized => "DETECTED",
            Outcome::Undetected(_) => "UNDETECTED",
            Outcome::Accepted => "VERIFIED",
            Outcome::FalseReject(_) => "REJECTED",
            Outcome::Error(_) => "ERROR",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            Outcome::Detected(d) | Outcome::Undetected(d) | Outcome::FalseReject(d) | Outcome::Error(d) => d,
            Outcome::Neutralized => "frames restored to capture order by tag",
            Outcome::Accepted => "all checks pass",
        }
    }
}

fn failed_checks(r: &VerificationReport) -> String {
    r.failed().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
}

fn judge_report(kind: AttackKind, r: &VerificationReport) -> Outcome {
    match (kind, r.verdict()) {
        (AttackKind::None, true) => Outcome::Accepted,
        (AttackKind::None, false) => Outcome::FalseReject(format!("verifier: {}", failed_checks(r))),
        (_, false) => Outcome::Detected(format!("verifier: {}", failed_checks(r))),
        (_, true) => Outcome::Undetected("bundle verifies".into()),
    }
}

/// Whether the bundle's frames carry watermarks 0, 1, 2, … in order.
pub fn frames_in_capture_order(b: &FinalBundle) -> bool {
    match bundle_frames(b) {
        Ok(frames) => frames
            .iter()
            .enumerate()
            .all(|(i, f)| read_watermark(f) == Some(i as u32)),
        Err(_) => false,
    }
}

/// Traffic an honest run of `donor` puts on `boundary`.
pub fn record_traffic(
    pipeline: &Pipeline,
    donor: &SignedSegment,
    chain: &[FilterSpec],
    transport: Transport,
    boundary: Boundary,
) -> Result<Vec<vron_core::wire::WireMessage>, JobError> {
    let (rec, log) = Recorder::new(Box::new(Passthrough));
    let mut hooks = Hooks::new();
    hooks.insert(boundary, Box::new(rec));
    pipeline.run_segment(donor, chain, transport, hooks)?;
    let msgs = log.lock().expect("recorder lock").clone();
    Ok(msgs)
}

/// Installs the attack on `boundary` and runs `segment` through the
/// pipeline. Substitution borrows frames from an honest run of `donor`.
#[allow(clippy::too_many_arguments)]
pub fn run_in_flight(
    pipeline: &Pipeline,
    policy: &VerifierPolicy,
    segment: &SignedSegment,
    chain: &[FilterSpec],
    transport: Transport,
    boundary: Boundary,
    kind: AttackKind,
    seed: u64,
    donor: Option<&SignedSegment>,
) -> Outcome {
    let donor_traffic = match (kind, donor) {
        (AttackKind::FrameSubstitute, Some(d)) => match record_traffic(pipeline, d, chain, transport, boundary) {
            Ok(t) => t,
            Err(e) => return Outcome::Error(format!("donor run failed: {e}")),
        },
        (AttackKind::FrameSubstitute, None) => return Outcome::Error("substitution needs a donor segment".into()),
        _ => Vec::new(),
    };
    let icpt = match tamper_in_flight(boundary, kind, seed, donor_traffic) {
        Ok(i) => i,
        Err(e) => return Outcome::Error(e.to_string()),
    };
    let mut hooks = Hooks::new();
    hooks.insert(boundary, icpt);
    match pipeline.run_segment(segment, chain, transport, hooks) {
        Err(JobError::PipelineRejected { stage, error }) => {
            let d = format!("{stage}: {}: {error}", error.kind());
            if kind == AttackKind::None {
                Outcome::FalseReject(d)
            } else {
                Outcome::Detected(d)
            }
        }
        Err(e) => Outcome::Error(e.to_string()),
        Ok(bundle) => {
            let report = verify_bundle(&bundle, policy);
            if kind == AttackKind::FrameReorderInFlight && report.verdict() {
                if frames_in_capture_order(&bundle) {
                    Outcome::Neutralized
                } else {
                    Outcome::Undetected("frames out of order in a verifying bundle".into())
                }
            } else {
                judge_report(kind, &report)
            }
        }
    }
}

pub fn run_bundle_attack(
    policy: &VerifierPolicy,
    bundle: &FinalBundle,
    kind: AttackKind,
    seed: u64,
    resign: bool,
    donor: Option<&FinalBundle>,
) -> Outcome {
    match tamper_bundle(bundle, kind, seed, &TamperOptions { resign, donor }) {
        Ok(t) => judge_report(kind, &verify_bundle(&t, policy)),
        Err(e) => Outcome::Error(e.to_string()),
    }
}

pub fn run_video_attack(
    policy: &VerifierPolicy,
    bundles: &[FinalBundle],
    kind: AttackKind,
    seed: u64,
    donor: Option<&[FinalBundle]>,
) -> Outcome {
    match tamper_video(bundles, kind, seed, donor) {
        Ok(t) => judge_report(kind, &verify_video(&t, policy)),
        Err(e) => Outcome::Error(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub kind: AttackKind,
    pub level: Level,
}

/// Every applicable (attack, place) pair, plus a control at every place.
pub fn matrix() -> Vec<Cell> {
    let mut cells = Vec::new();
    for kind in std::iter::once(AttackKind::None).chain(AttackKind::ATTACKS) {
        for b in Boundary::ALL {
            if kind.in_flight_at(b) {
                cells.push(Cell {
                    kind,
                    level: Level::InFlight(b),
                });
            }
        }
        if kind.bundle_level() {
            for resign in [false, true] {
                cells.push(Cell {
                    kind,
                    level: Level::Bundle { resign },
                });
            }
        }
        if kind.video_level() {
            cells.push(Cell { kind, level: Level::Video });
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub seed: u64,
    pub outcome: Outcome,
}

/// A victim video and a second, unrelated donor video, both already run
/// through the pipeline honestly.
pub struct Scenario<'a> {
    pub pipeline: &'a Pipeline,
    pub policy: &'a VerifierPolicy,
    pub chain: Vec<FilterSpec>,
    pub transport: Transport,
    pub victim: Vec<SignedSegment>,
    pub donor: Vec<SignedSegment>,
    pub victim_bundles: Vec<FinalBundle>,
    pub donor_bundles: Vec<FinalBundle>,
}

impl<'a> Scenario<'a> {
    pub fn new(
        pipeline: &'a Pipeline,
        policy: &'a VerifierPolicy,
        chain: Vec<FilterSpec>,
        transport: Transport,
        victim: Vec<SignedSegment>,
        donor: Vec<SignedSegment>,
    ) -> Result<Self, JobError> {
        let run = |segs: &[SignedSegment]| {
            segs.iter()
                .map(|s| pipeline.run_segment(s, &chain, transport, Hooks::new()))
                .collect::<Result<Vec<_>, _>>()
        };
        let victim_bundles = run(&victim)?;
        let donor_bundles = run(&donor)?;
        Ok(Self {
            pipeline,
            policy,
            chain,
            transport,
            victim,
            donor,
            victim_bundles,
            donor_bundles,
        })
    }

    pub fn run(&self, cell: Cell, seed: u64) -> Outcome {
        match cell.level {
            Level::InFlight(b) => run_in_flight(
                self.pipeline,
                self.policy,
                &self.victim[0],
                &self.chain,
                self.transport,
                b,
                cell.kind,
                seed,
                self.donor.first(),
            ),
            Level::Bundle { resign } => run_bundle_attack(
                self.policy,
                &self.victim_bundles[0],
                cell.kind,
                seed,
                resign,
                self.donor_bundles.first(),
            ),
            Level::Video => run_video_attack(self.policy, &self.victim_bundles, cell.kind, seed, Some(&self.donor_bundles)),
        }
    }

    /// Runs every cell of the matrix under each seed.
    pub fn run_matrix(&self, seeds: &[u64]) -> Vec<CellResult> {
        let mut out = Vec::new();
        for cell in matrix() {
            for &seed in seeds {
                out.push(CellResult {
                    cell,
                    seed,
                    outcome: self.run(cell, seed),
                });
            }
        }
        out
    }
}

/// Detected attacks and accepted controls, per attack kind.
pub fn tally(results: &[CellResult]) -> HashMap<AttackKind, (usize, usize)> {
    let mut t: HashMap<AttackKind, (usize, usize)> = HashMap::new();
    for r in results {
        let e = t.entry(r.cell.kind).or_default();
        e.1 += 1;
        if r.outcome.is_correct() {
            e.0 += 1;
        }
    }
    t
}

//! Consumer-side verification of final bundles.
//!
//! Every check always runs, so a report lists all violations rather than
//! the first one. Checks never require the camera-original frames or any
//! intermediate stage signature: the final bundle, its certificates and the
//! trust roots are enough.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::attest::{verify_certificate, verify_report, DeviceState, TrustRoots};
use crate::codec::{self, tag, DecodeError, EncodeError, Reader, Writer};
use crate::crypto::{Measurement, Role};
use crate::frame::ContainerHeader;
use crate::provenance::compute_video_id;
use crate::stages::FinalBundle;

pub const CHECK_CERTIFICATES: &str = "certificates";
pub const CHECK_CONTAINER_SIGNATURE: &str = "container_signature";
pub const CHECK_PROVENANCE_SIGNATURE: &str = "provenance_signature";
pub const CHECK_CODEC_MEASUREMENTS: &str = "codec_measurements";
pub const CHECK_FILTER_ALLOWLIST: &str = "filter_allowlist";
pub const CHECK_CAMERA_ATTESTATION: &str = "camera_attestation";
pub const CHECK_SEGMENT_CONSISTENCY: &str = "segment_consistency";

pub const CHECK_VIDEO_ID: &str = "video_id_consistency";
pub const CHECK_SEGMENT_COMPLETENESS: &str = "segment_completeness";
pub const CHECK_TIMESTAMP_ORDER: &str = "timestamp_order";

/// Per-bundle check names in the order they run.
pub const BUNDLE_CHECKS: [&str; 7] = [
    CHECK_CERTIFICATES,
    CHECK_CONTAINER_SIGNATURE,
    CHECK_PROVENANCE_SIGNATURE,
    CHECK_CODEC_MEASUREMENTS,
    CHECK_FILTER_ALLOWLIST,
    CHECK_CAMERA_ATTESTATION,
    CHECK_SEGMENT_CONSISTENCY,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn verdict(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }

    fn push(&mut self, name: &str, failures: Vec<String>, ok_detail: String) {
        let pass = failures.is_empty();
        self.checks.push(CheckResult {
            name: name.to_string(),
            pass,
            detail: if pass { ok_detail } else { failures.join("; ") },
        });
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let _ = writeln!(s, "verdict: {}", if self.verdict() { "PASS" } else { "FAIL" });
        s
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        w.bool(self.verdict());
        w.count("checks", self.checks.len())?;
        for c in &self.checks {
            w.str("check name", &c.name)?.bool(c.pass).bytes("detail", c.detail.as_bytes())?;
        }
        codec::frame_single(tag::VERIFICATION_REPORT, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::VERIFICATION_REPORT)?;
        let verdict_at = r.offset();
        let verdict = r.bool()?;
        let n = r.count(2 + 1 + 4)?;
        let mut checks = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let pass = r.bool()?;
            let at = r.offset();
            let detail = core::str::from_utf8(r.bytes()?)
                .map_err(|_| DecodeError::new(at, "detail is not valid UTF-8"))?
                .to_string();
            checks.push(CheckResult { name, pass, detail });
        }
        r.finish()?;
        let rep = Self { checks };
        if rep.verdict() != verdict {
            return Err(DecodeError::new(verdict_at, "verdict disagrees with checks"));
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierPolicy {
    pub trust: TrustRoots,
    pub allowed_filters: BTreeSet<Measurement>,
    pub required_device_states: BTreeSet<DeviceState>,
    pub require_two_reports: bool,
}

impl VerifierPolicy {
    /// Accepts every filter the trust roots approve, genuine devices only,
    /// and requires both camera reports.
    pub fn new(trust: TrustRoots) -> Self {
        let allowed_filters = trust
            .approved_measurements
            .iter()
            .filter(|(_, (role, _))| *role == Role::Filter)
            .map(|(m, _)| *m)
            .collect();
        Self {
            trust,
            allowed_filters,
            required_device_states: [DeviceState::Genuine].into_iter().collect(),
            require_two_reports: true,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w = Writer::new();
        self.trust.write(&mut w)?;
        w.count("allowed filters", self.allowed_filters.len())?;
        for m in &self.allowed_filters {
            w.raw(m.as_bytes());
        }
        w.u8(self.required_device_states.len() as u8);
        for d in &self.required_device_states {
            w.u8(*d as u8);
        }
        w.bool(self.require_two_reports);
        codec::frame_single(tag::VERIFIER_POLICY, &w.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = codec::unframe_single(bytes, tag::VERIFIER_POLICY)?;
        let trust = TrustRoots::read(&mut r)?;
        let n = r.count(32)?;
        let allowed_filters = (0..n)
            .map(|_| r.array().map(Measurement::from_bytes))
            .collect::<Result<_, _>>()?;
        let n = r.u8()?;
        let mut required_device_states = BTreeSet::new();
        for _ in 0..n {
            let at = r.offset();
            let d = DeviceState::from_u8(r.u8()?).ok_or(DecodeError::new(at, "unknown device state"))?;
            required_device_states.insert(d);
        }
        let require_two_reports = r.bool()?;
        r.finish()?;
        Ok(Self {
            trust,
            allowed_filters,
            required_device_states,
            require_two_reports,
        })
    }
}

fn read_header(bundle: &FinalBundle) -> Result<ContainerHeader, DecodeError> {
    let h = ContainerHeader::parse(&bundle.container_bytes)?;
    // walk the body to make sure the audio trailer is consistent too
    let body = crate::frame::CONTAINER_HEADER_LEN + h.frame_len() * h.frame_count as usize;
    let mut r = Reader::at(&bundle.container_bytes[body..], body);
    r.bytes()?;
    r.finish()?;
    Ok(h)
}

pub fn verify_bundle(bundle: &FinalBundle, policy: &VerifierPolicy) -> VerificationReport {
    let mut report = VerificationReport::default();
    let trust = &policy.trust;
    let authority = &trust.attestation_authority_public_key;
    let pi = &bundle.provenance;
    let enc = &bundle.encoder_certificate;

    // (1) certificates and their binding to the provenance
    let mut fails = Vec::new();
    if enc.role != Role::Encoder {
        fails.push(format!("encoder certificate has role {}", enc.role.name()));
    }
    if !verify_certificate(authority, enc) {
        fails.push("encoder certificate not signed by the attestation authority".to_string());
    }
    match bundle.stage_certificates.split_first() {
        None => fails.push("no decoder certificate".to_string()),
        Some((dec, filters)) => {
            if dec.role != Role::Decoder {
                fails.push(format!("first stage certificate has role {}", dec.role.name()));
            }
            for (i, c) in bundle.stage_certificates.iter().enumerate() {
                if !verify_certificate(authority, c) {
                    fails.push(format!("stage certificate {i} not signed by the attestation authority"));
                }
            }
            for (i, c) in filters.iter().enumerate() {
                if c.role != Role::Filter {
                    fails.push(format!("filter certificate {i} has role {}", c.role.name()));
                }
            }
            if filters.len() != pi.filters.len() {
                fails.push(format!(
                    "{} filter certificates for {} filter entries",
                    filters.len(),
                    pi.filters.len()
                ));
            }
            for (i, (c, f)) in filters.iter().zip(&pi.filters).enumerate() {
                if c.measurement != f.measurement {
                    fails.push(format!("filter entry {i} ({}) does not match its certificate", f.name));
                }
            }
            if let Some(codec) = &pi.codec {
                if codec.decoder_measurement != dec.measurement {
                    fails.push("decoder measurement does not match decoder certificate".to_string());
                }
            }
        }
    }
    if let Some(codec) = &pi.codec {
        if codec.encoder_measurement != enc.measurement {
            fails.push("encoder measurement does not match encoder certificate".to_string());
        }
    }
    let anon = bundle
        .stage_certificates
        .iter()
        .chain(core::iter::once(enc))
        .filter(|c| c.anonymous)
        .count();
    report.push(
        CHECK_CERTIFICATES,
        fails,
        format!(
            "{} certificates valid ({} anonymous)",
            bundle.stage_certificates.len() + 1,
            anon
        ),
    );

    // (2) Sig_F' over the container
    let ok = enc.stage_public_key.verify(&bundle.container_bytes, &bundle.sig_f_prime);
    report.push(
        CHECK_CONTAINER_SIGNATURE,
        if ok { Vec::new() } else { alloc::vec!["Sig_F' invalid".to_string()] },
        "Sig_F' valid".to_string(),
    );

    // (3) Sig_PI' over the canonical provenance
    let ok = pi
        .encode()
        .map(|b| enc.stage_public_key.verify(&b, &bundle.sig_pi_prime))
        .unwrap_or(false);
    report.push(
        CHECK_PROVENANCE_SIGNATURE,
        if ok { Vec::new() } else { alloc::vec!["Sig_PI' invalid".to_string()] },
        "Sig_PI' valid".to_string(),
    );

    // (4) decoder and encoder code is approved
    let mut fails = Vec::new();
    match &pi.codec {
        None => fails.push("codec info missing".to_string()),
        Some(codec) => {
            for (m, role) in [
                (&codec.decoder_measurement, Role::Decoder),
                (&codec.encoder_measurement, Role::Encoder),
            ] {
                match trust.approved_measurements.get(m) {
                    Some((r, _)) if *r == role => {}
                    _ => fails.push(format!("{} measurement {} not approved", role.name(), m)),
                }
            }
        }
    }
    report.push(CHECK_CODEC_MEASUREMENTS, fails, "decoder and encoder approved".to_string());

    // (5) every applied filter is allowed; order is recorded
    let mut fails = Vec::new();
    for (i, f) in pi.filters.iter().enumerate() {
        if !policy.allowed_filters.contains(&f.measurement) {
            fails.push(format!("filter {i} ({}) measurement {} not allowed", f.name, f.measurement));
            continue;
        }
        match trust.approved_measurements.get(&f.measurement) {
            Some((Role::Filter, name)) if *name == f.name => {}
            Some((Role::Filter, name)) => {
                fails.push(format!("filter {i} named {} but measurement is {name}", f.name))
            }
            _ => fails.push(format!("filter {i} ({}) not approved as a filter", f.name)),
        }
    }
    let order: Vec<String> = pi
        .filters
        .iter()
        .map(|f| {
            let params: Vec<String> = f.parameters.iter().map(|p| format!("{p}")).collect();
            if params.is_empty() {
                f.name.clone()
            } else {
                format!("{}({})", f.name, params.join(","))
            }
        })
        .collect();
    report.push(
        CHECK_FILTER_ALLOWLIST,
        fails,
        if order.is_empty() {
            "no filters applied".to_string()
        } else {
            format!("applied in order: {}", order.join(" -> "))
        },
    );

    // (6) camera attestation
    let mut fails = Vec::new();
    let video_id = pi.video.video_id;
    match compute_video_id(&pi.camera.camera_certificate) {
        Ok(id) if id == video_id => {}
        _ => fails.push("camera key does not hash to the video id".to_string()),
    }
    let before = &pi.camera.report_before;
    let mut reports = alloc::vec![("before", before)];
    match &pi.camera.report_after {
        Some(a) => reports.push(("after", a)),
        None if policy.require_two_reports => fails.push("closing report missing".to_string()),
        None => {}
    }
    for (label, r) in &reports {
        if !verify_report(authority, r) {
            fails.push(format!("report {label} signature invalid"));
        }
        if r.nonce != video_id.0 {
            fails.push(format!("report {label} nonce does not match video id"));
        }
        if !policy.required_device_states.contains(&r.device_state) {
            fails.push(format!("report {label} device state {} not accepted", r.device_state.name()));
        }
        if !trust.approved_app_identities.contains(&r.app_identity) {
            fails.push(format!("report {label} app identity not approved"));
        }
    }
    if let Some(after) = &pi.camera.report_after {
        if before.issued_at > after.issued_at {
            fails.push("closing report predates opening report".to_string());
        }
        if before.app_identity != after.app_identity {
            fails.push("reports name different apps".to_string());
        }
    }
    report.push(
        CHECK_CAMERA_ATTESTATION,
        fails,
        format!("{} report(s) valid for video {}", reports.len(), video_id),
    );

    // (7) segment consistency against the container
    let mut fails = Vec::new();
    let seg = &pi.segment;
    if seg.segment_id >= seg.total_segments {
        fails.push("segment id out of range".to_string());
    }
    match read_header(bundle) {
        Err(e) => fails.push(format!("container unreadable: {e}")),
        Ok(h) => {
            if h.frame_count != seg.total_frames {
                fails.push(format!(
                    "container holds {} frames, provenance says {}",
                    h.frame_count, seg.total_frames
                ));
            }
            if h.frame_rate != seg.frame_rate {
                fails.push(format!("container rate {} != provenance rate {}", h.frame_rate, seg.frame_rate));
            }
            if (h.width, h.height) != (pi.video.width, pi.video.height) {
                fails.push(format!(
                    "container {}x{} != provenance {}x{}",
                    h.width, h.height, pi.video.width, pi.video.height
                ));
            }
        }
    }
    report.push(
        CHECK_SEGMENT_CONSISTENCY,
        fails,
        format!(
            "segment {}/{}: {} frames @ {} fps, {}x{}",
            seg.segment_id, seg.total_segments, seg.total_frames, seg.frame_rate, pi.video.width, pi.video.height
        ),
    );

    report
}

/// Verifies each segment and then the video as a whole.
pub fn verify_video(bundles: &[FinalBundle], policy: &VerifierPolicy) -> VerificationReport {
    let mut report = VerificationReport::default();
    for (i, b) in bundles.iter().enumerate() {
        for c in verify_bundle(b, policy).checks {
            report.checks.push(CheckResult {
                name: format!("segment[{i}].{}", c.name),
                ..c
            });
        }
    }

    let mut fails = Vec::new();
    if let Some(first) = bundles.first() {
        let id = first.provenance.video.video_id;
        for (i, b) in bundles.iter().enumerate() {
            if b.provenance.video.video_id != id {
                fails.push(format!("video_id mismatch: bundle {i} belongs to another video"));
            }
        }
    } else {
        fails.push("no segments".to_string());
    }
    report.push(CHECK_VIDEO_ID, fails, "all segments share one video id".to_string());

    let mut fails = Vec::new();
    let totals: BTreeSet<u32> = bundles.iter().map(|b| b.provenance.segment.total_segments).collect();
    if totals.len() > 1 {
        fails.push("segments disagree on total_segments".to_string());
    }
    let total = totals.iter().copied().max().unwrap_or(0);
    let mut seen = BTreeSet::new();
    for b in bundles {
        let id = b.provenance.segment.segment_id;
        if !seen.insert(id) {
            fails.push(format!("segment {id} appears more than once"));
        }
    }
    let missing: Vec<String> = (0..total).filter(|i| !seen.contains(i)).map(|i| i.to_string()).collect();
    if !missing.is_empty() {
        fails.push(format!("segment omission: missing id(s) {}", missing.join(",")));
    }
    report.push(
        CHECK_SEGMENT_COMPLETENESS,
        fails,
        format!("segments 0..{total} all present"),
    );

    let mut by_id: Vec<(u32, u64)> = bundles
        .iter()
        .map(|b| (b.provenance.segment.segment_id, b.provenance.video.timestamp))
        .collect();
    by_id.sort_unstable();
    let mut fails = Vec::new();
    for w in by_id.windows(2) {
        if w[1].1 < w[0].1 {
            fails.push(format!("segment {} timestamp precedes segment {}", w[1].0, w[0].0));
        }
    }
    report.push(
        CHECK_TIMESTAMP_ORDER,
        fails,
        "timestamps non-decreasing by segment id (ordering-only cross-segment check)".to_string(),
    );
    report
}

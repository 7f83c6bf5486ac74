mod common;

use std::collections::HashMap;
use std::sync::Arc;
use std::thread;

use common::Env;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vron::scheduler::{parse_filter, run_job, Hooks, JobError, JobSpec, Recorder, EXIT_REJECTED_BASE};
use vron::transport::Transport;
use vron::workers::KeySource;
use vron_core::filters::{apply_chain, FilterKind, FilterSpec};
use vron_core::frame::read_watermark;
use vron_core::stages::{bundle_frames, StageError};
use vron_core::tamper::{tamper_in_flight, AttackKind, BitFlip, Boundary, Interceptor, Passthrough};
use vron_core::verifier::verify_bundle;

fn spec(s: &str) -> FilterSpec {
    parse_filter(s).unwrap()
}

fn hooks(b: Boundary, i: Box<dyn Interceptor>) -> Hooks {
    let mut h = HashMap::new();
    h.insert(b, i);
    h
}

#[test]
fn blur_chain_verifies_with_one_entry() {
    let env = Env::new();
    let seg = &env.record(64, 48, 12, 12, 1)[0];
    let p = env.pipeline(2, KeySource::Random);
    let b = p.run_segment(seg, &[spec("blur:7")], Transport::InProcess, Hooks::new()).unwrap();
    let report = verify_bundle(&b, &env.policy);
    assert!(report.verdict(), "{}", report.render_text());
    assert_eq!(b.provenance.filters.len(), 1);
    assert_eq!(b.provenance.filters[0].name, "blur");
}

#[test]
fn empty_chain_passes_pixels_through() {
    let env = Env::new();
    let seg = &env.record(40, 30, 6, 6, 2)[0];
    let p = env.pipeline(1, KeySource::Random);
    let b = p.run_segment(seg, &[], Transport::InProcess, Hooks::new()).unwrap();
    assert!(verify_bundle(&b, &env.policy).verdict());
    assert_eq!(bundle_frames(&b).unwrap(), env.clip(40, 30, 6).frames);
}

#[test]
fn filter_entries_follow_application_order() {
    let env = Env::new();
    let seg = &env.record(32, 32, 4, 4, 3)[0];
    let p = env.pipeline(1, KeySource::Random);
    let chain = [spec("sharpen"), spec("white_balance"), spec("denoise")];
    let b = p.run_segment(seg, &chain, Transport::Tcp, Hooks::new()).unwrap();
    let names: Vec<_> = b.provenance.filters.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["sharpen", "white_balance", "denoise"]);
    assert!(verify_bundle(&b, &env.policy).verdict());
}

#[test]
fn staged_output_equals_direct_filtering() {
    let env = Env::new();
    let seg = &env.record(48, 36, 5, 5, 4)[0];
    let chain = [spec("brightness:-0.2"), spec("blur:3"), spec("grayscale")];
    let p = env.pipeline(1, KeySource::Random);
    let b = p.run_segment(seg, &chain, Transport::InProcess, Hooks::new()).unwrap();
    let expected: Vec<_> = env.clip(48, 36, 5).frames.iter().map(|f| apply_chain(&chain, f).unwrap()).collect();
    assert_eq!(bundle_frames(&b).unwrap(), expected);
}

#[test]
fn transports_yield_identical_bundles() {
    let env = Env::new();
    let segs = env.record(64, 48, 20, 10, 5);
    let chain = [spec("blur:5"), spec("denoise")];
    let run = |t: Transport| {
        let p = env.pipeline(2, KeySource::Seeded(77));
        segs.iter()
            .map(|s| p.run_segment(s, &chain, t, Hooks::new()).unwrap().encode().unwrap())
            .collect::<Vec<_>>()
    };
    let local = run(Transport::InProcess);
    let tcp = run(Transport::Tcp);
    assert_eq!(local.len(), 2);
    assert_eq!(local, tcp);
}

#[test]
fn seeded_runs_differ_from_random_ones() {
    let env = Env::new();
    let seg = &env.record(16, 16, 2, 2, 6)[0];
    let a = env.pipeline(1, KeySource::Seeded(1)).run_segment(seg, &[], Transport::InProcess, Hooks::new()).unwrap();
    let b = env.pipeline(1, KeySource::Random).run_segment(seg, &[], Transport::InProcess, Hooks::new()).unwrap();
    assert_eq!(a.container_bytes, b.container_bytes);
    assert_ne!(a.encoder_certificate, b.encoder_certificate);
}

#[test]
fn reused_decoder_has_a_new_key_per_job() {
    let env = Env::new();
    let seg = &env.record(16, 16, 2, 2, 7)[0];
    let p = env.pipeline(1, KeySource::Random);
    let a = p.run_segment(seg, &[], Transport::InProcess, Hooks::new()).unwrap();
    let b = p.run_segment(seg, &[], Transport::InProcess, Hooks::new()).unwrap();
    assert_eq!(p.pool().spawn_latencies().len(), 1, "second job reuses the worker");
    assert_ne!(a.stage_certificates[0].stage_public_key, b.stage_certificates[0].stage_public_key);
    assert!(verify_bundle(&b, &env.policy).verdict());
}

#[test]
fn concurrent_jobs_never_share_a_decoder() {
    let env = Env::new();
    let segs = env.record(24, 24, 12, 3, 8);
    let p = Arc::new(env.pipeline(2, KeySource::Random));
    let handles: Vec<_> = segs
        .into_iter()
        .map(|s| {
            let p = Arc::clone(&p);
            thread::spawn(move || p.run_segment(&s, &[spec("blur:3")], Transport::InProcess, Hooks::new()).unwrap())
        })
        .collect();
    let bundles: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let mut keys: Vec<_> = bundles.iter().map(|b| b.stage_certificates[0].stage_public_key).collect();
    keys.sort_by_key(|k| *k.as_bytes());
    keys.dedup();
    assert_eq!(keys.len(), 4);
    assert!(p.pool().idle_count() <= 2);
}

#[test]
fn run_job_writes_bundles_for_a_directory() {
    let env = Env::new();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    for s in env.record(16, 16, 9, 3, 9) {
        vron::io::save_segment(&vron::io::numbered(&input, "segment", s.provenance.segment.segment_id, "vseg"), &s).unwrap();
    }
    let p = env.pipeline(1, KeySource::Random);
    let out = dir.path().join("out");
    let job = JobSpec {
        filter_chain: vec![spec("sharpen:3")],
        input_path: input,
        output_path: out.clone(),
        transport: Transport::InProcess,
    };
    let bundles = run_job(&p, &job).unwrap();
    assert_eq!(bundles.len(), 3);
    let paths = vron::scheduler::bundle_paths(&out).unwrap();
    assert_eq!(paths.len(), 3);
    let loaded: Vec<_> = paths.iter().map(|p| vron::io::load_bundle(p).unwrap()).collect();
    assert_eq!(loaded, bundles);
    let report = vron_core::verifier::verify_video(&loaded, &env.policy);
    assert!(report.verdict(), "{}", report.render_text());
}

#[test]
fn missing_input_is_an_invalid_job() {
    let env = Env::new();
    let p = env.pipeline(1, KeySource::Random);
    let job = JobSpec {
        filter_chain: vec![],
        input_path: "/nonexistent/seg.vseg".into(),
        output_path: "/tmp/x.vbundle".into(),
        transport: Transport::InProcess,
    };
    let e = run_job(&p, &job).unwrap_err();
    assert!(matches!(e, JobError::InvalidJob(_)));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn filter_arguments_parse() {
    assert_eq!(spec("blur"), FilterSpec::with_defaults(FilterKind::Blur));
    assert_eq!(spec("blur:9").parameters[0].0, 9 << 16);
    assert!(parse_filter("blur:8").is_err());
    assert!(parse_filter("emboss").is_err());
    assert!(parse_filter("brightness:x").is_err());
}

#[test]
fn exit_codes_are_distinct_per_kind() {
    let mut codes: Vec<i32> = StageError::KINDS.iter().enumerate().map(|(i, _)| EXIT_REJECTED_BASE + i as i32).collect();
    codes.extend([2, 3, 4, 5]);
    let n = codes.len();
    codes.sort();
    codes.dedup();
    assert_eq!(codes.len(), n);
    let e = JobError::PipelineRejected {
        stage: "encoder".into(),
        error: StageError::MissingSidecar,
    };
    assert_eq!(e.exit_code(), EXIT_REJECTED_BASE + 17);
    assert_eq!(e.kind(), "MissingSidecar");
}

#[test]
fn dropped_frame_between_filter_and_encoder_is_missing() {
    let env = Env::new();
    let seg = &env.record(16, 16, 60, 60, 10)[0];
    let p = env.pipeline(1, KeySource::Random);
    // message 0 is the certificate exchange, so frame 30 is message 31
    struct DropNth(usize, usize);
    impl Interceptor for DropNth {
        fn on_message(&mut self, m: vron_core::wire::WireMessage, out: &mut Vec<vron_core::wire::WireMessage>) {
            if self.1 != self.0 {
                out.push(m);
            }
            self.1 += 1;
        }
    }
    let e = p
        .run_segment(seg, &[spec("blur:3")], Transport::InProcess, hooks(Boundary::FilterToEncoder, Box::new(DropNth(31, 0))))
        .unwrap_err();
    match e {
        JobError::PipelineRejected { stage, error } => {
            assert_eq!(stage, "encoder");
            assert_eq!(error, StageError::MissingFrames { missing: 1, first: 30 });
        }
        other => panic!("{other}"),
    }
}

#[test]
fn in_flight_attacks_are_rejected_by_the_scheduler_pipeline() {
    let env = Env::new();
    let seg = &env.record(24, 16, 8, 8, 11)[0];
    let other = &env.record(24, 16, 8, 8, 12)[0];
    let chain = [spec("blur:3"), spec("sharpen:3")];
    let p = env.pipeline(2, KeySource::Random);
    for b in Boundary::ALL {
        // donor traffic: the same boundary of an honest run on another video
        let (rec, log) = Recorder::new(Box::new(Passthrough));
        p.run_segment(other, &chain, Transport::InProcess, hooks(b, Box::new(rec))).unwrap();
        let donor = log.lock().unwrap().clone();
        for kind in [
            AttackKind::FrameDelete,
            AttackKind::FrameSubstitute,
            AttackKind::FrameReorderInFlight,
            AttackKind::FrameCrop,
        ] {
            if !kind.in_flight_at(b) {
                assert!(tamper_in_flight(b, kind, 1, vec![]).is_err());
                continue;
            }
            for seed in 0..3 {
                let icpt = tamper_in_flight(b, kind, seed, donor.clone()).unwrap();
                match p.run_segment(seg, &chain, Transport::InProcess, hooks(b, icpt)) {
                    Err(JobError::PipelineRejected { .. }) => {}
                    Ok(bundle) if kind == AttackKind::FrameReorderInFlight => {
                        // neutralized: frames come out in capture order
                        let ids: Vec<_> = bundle_frames(&bundle).unwrap().iter().map(|f| read_watermark(f).unwrap()).collect();
                        assert_eq!(ids, (0..8).collect::<Vec<_>>());
                        assert!(verify_bundle(&bundle, &env.policy).verdict());
                    }
                    other => panic!("{kind:?} at {b}: {:?}", other.map(|_| "bundle")),
                }
            }
        }
        let honest = p
            .run_segment(seg, &chain, Transport::InProcess, hooks(b, tamper_in_flight(b, AttackKind::None, 0, vec![]).unwrap()))
            .unwrap();
        assert!(verify_bundle(&honest, &env.policy).verdict());
    }
}

/// Messages per hop for a chain of two filters over `frames` frames.
fn hop_sizes(frames: usize) -> [(Boundary, usize); 5] {
    [
        (Boundary::CameraToDecoder, 1),
        (Boundary::DecoderToEncoderSidecar, 1),
        (Boundary::DecoderToFilter, frames + 1),
        (Boundary::FilterToFilter, frames + 1),
        (Boundary::FilterToEncoder, frames + 1),
    ]
}

fn flip_trials(transport: Transport, trials: u64, seed: u64) {
    let env = Env::new();
    let seg = &env.record(12, 8, 4, 4, 13)[0];
    let chain = [spec("blur:3"), spec("brightness:0.1")];
    let p = env.pipeline(1, KeySource::Random);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sizes = hop_sizes(4);
    let total: usize = sizes.iter().map(|s| s.1).sum();
    for t in 0..trials {
        let mut pick = (rng.next_u64() % total as u64) as usize;
        let (b, index) = sizes
            .iter()
            .find_map(|&(b, n)| {
                if pick < n {
                    Some((b, pick))
                } else {
                    pick -= n;
                    None
                }
            })
            .unwrap();
        let icpt = Box::new(BitFlip::new(index, rng.next_u64()));
        match p.run_segment(seg, &chain, transport, hooks(b, icpt)) {
            Err(JobError::PipelineRejected { .. }) => {}
            Ok(bundle) => panic!(
                "trial {t}: flip at {b} message {index} produced a bundle (verdict {})",
                verify_bundle(&bundle, &env.policy).verdict()
            ),
            Err(e) => panic!("trial {t}: {e}"),
        }
    }
}

#[test]
fn untrusted_scheduler_bit_flips_are_rejected() {
    flip_trials(Transport::InProcess, 520, 99);
}

#[test]
fn untrusted_scheduler_bit_flips_over_tcp() {
    flip_trials(Transport::Tcp, 40, 100);
}

#[test]
fn segments_over_the_message_limit_travel_in_pieces() {
    // 40 frames at 720p is about 110 MB, two wire messages
    let env = Env::new();
    let p = env.pipeline(1, KeySource::Random);
    let seg = env.record(1280, 720, 40, 40, 8).remove(0);
    assert!(seg.encode().unwrap().len() > vron_core::wire::MAX_PAYLOAD);
    let chain = [spec("brightness:0.1")];

    let (rec, log) = Recorder::new(Box::new(Passthrough));
    let b = p
        .run_segment(&seg, &chain, Transport::Tcp, hooks(Boundary::CameraToDecoder, Box::new(rec)))
        .unwrap();
    assert_eq!(log.lock().unwrap().len(), 2);
    assert!(verify_bundle(&b, &env.policy).verdict());

    for kind in [AttackKind::FrameDelete, AttackKind::FrameCrop] {
        let icpt = tamper_in_flight(Boundary::CameraToDecoder, kind, 3, Vec::new()).unwrap();
        match p.run_segment(&seg, &chain, Transport::InProcess, hooks(Boundary::CameraToDecoder, icpt)) {
            Err(JobError::PipelineRejected { stage, .. }) => assert_eq!(stage, "decoder", "{kind}"),
            other => panic!("{kind}: {other:?}"),
        }
    }
}

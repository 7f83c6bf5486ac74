//! The command-line tools driven as separate processes.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output};

fn bin(name: &str) -> Command {
    let path = match name {
        "vron-authority" => env!("CARGO_BIN_EXE_vron-authority"),
        "vron-camera" => env!("CARGO_BIN_EXE_vron-camera"),
        "vron-run" => env!("CARGO_BIN_EXE_vron-run"),
        "vron-verify" => env!("CARGO_BIN_EXE_vron-verify"),
        "vron-attack" => env!("CARGO_BIN_EXE_vron-attack"),
        "vron-decoder" => env!("CARGO_BIN_EXE_vron-decoder"),
        "vron-filter" => env!("CARGO_BIN_EXE_vron-filter"),
        "vron-encoder" => env!("CARGO_BIN_EXE_vron-encoder"),
        _ => unreachable!("{name}"),
    };
    Command::new(path)
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn");
    if !out.stderr.is_empty() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    /// An authority and three 4-frame segments.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let s = Self { dir };
        let o = run(bin("vron-authority").args(["--seed", "1", "--out-dir"]).arg(s.path()));
        assert!(o.status.success());
        let o = run(bin("vron-camera")
            .args(["--frames", "12", "--width", "64", "--height", "48", "--segment-size", "4"])
            .arg("--out-dir")
            .arg(s.path().join("segments"))
            .arg("--authority-key")
            .arg(s.key()));
        assert!(o.status.success());
        assert_eq!(stdout(&o).lines().count(), 3);
        s
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn key(&self) -> PathBuf {
        self.path().join("authority.vkey")
    }

    fn policy(&self) -> PathBuf {
        self.path().join("policy.vpolicy")
    }

    fn segment(&self, i: u32) -> PathBuf {
        self.path().join(format!("segments/segment-{i:04}.vseg"))
    }

    fn bundles(&self) -> PathBuf {
        self.path().join("bundles")
    }

    fn bundle(&self, i: u32) -> PathBuf {
        self.bundles().join(format!("bundle-{i:04}.vbundle"))
    }

    fn run_all(&self) {
        let o = run(bin("vron-run")
            .arg("--input")
            .arg(self.path().join("segments"))
            .arg("--out")
            .arg(self.bundles())
            .args(["--filter", "blur:3", "--filter", "brightness:0.1"])
            .arg("--bench-csv")
            .arg(self.path().join("times.csv"))
            .arg("--authority-key")
            .arg(self.key()));
        assert!(o.status.success());
    }
}

#[test]
fn camera_run_verify() {
    let s = Setup::new();
    s.run_all();
    let csv = std::fs::read_to_string(s.path().join("times.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("staged_signed,")));

    let mut verify = bin("vron-verify");
    verify.arg("--policy").arg(s.policy());
    for i in 0..3 {
        verify.arg("--bundle").arg(s.bundle(i));
    }
    let o = run(&mut verify);
    assert!(o.status.success(), "{}", stdout(&o));

    // one bundle alone, binary report, and a missing segment
    let o = run(bin("vron-verify")
        .arg("--authority-key")
        .arg(s.key())
        .args(["--report", "machine", "--bundle"])
        .arg(s.bundle(1)));
    assert!(o.status.success());
    assert!(vron_core::verifier::VerificationReport::decode(&o.stdout).unwrap().verdict());
    let o = run(bin("vron-verify")
        .arg("--policy")
        .arg(s.policy())
        .arg("--bundle")
        .arg(s.bundle(0))
        .arg("--bundle")
        .arg(s.bundle(2)));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn attacks_are_reported() {
    let s = Setup::new();
    s.run_all();
    let o = run(bin("vron-attack")
        .args(["--kind", "fps_change", "--boundary", "bundle+resign", "--bundle"])
        .arg(s.bundle(0))
        .arg("--policy")
        .arg(s.policy()));
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("DETECTED"));

    let o = run(bin("vron-attack")
        .args(["--kind", "segment_omit", "--boundary", "video", "--bundle"])
        .arg(s.bundles())
        .arg("--policy")
        .arg(s.policy()));
    assert!(o.status.success(), "{}", stdout(&o));

    let o = run(bin("vron-attack")
        .args(["--kind", "frame_crop", "--boundary", "decoder->filter", "--filter", "blur:3", "--input"])
        .arg(s.segment(0))
        .arg("--authority-key")
        .arg(s.key()));
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("DETECTED"));

    let o = run(bin("vron-attack")
        .args(["--kind", "none", "--boundary", "filter->encoder", "--transport", "tcp", "--filter", "denoise", "--input"])
        .arg(s.segment(2))
        .arg("--authority-key")
        .arg(s.key()));
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("VERIFIED"));
}

#[test]
fn bad_jobs_exit_with_their_codes() {
    let s = Setup::new();
    let o = run(bin("vron-run")
        .arg("--input")
        .arg(s.path().join("missing.vseg"))
        .arg("--out")
        .arg(s.path().join("x.vbundle"))
        .arg("--authority-key")
        .arg(s.key()));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin("vron-run")
        .arg("--input")
        .arg(s.segment(0))
        .args(["--out", "unused", "--filter", "vignette"])
        .arg("--authority-key")
        .arg(s.key()));
    assert_eq!(o.status.code(), Some(2));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Kills the process if the test fails before waiting on it.
struct Kill(Option<Child>);

impl Kill {
    fn wait(mut self) -> bool {
        self.0.take().unwrap().wait().unwrap().success()
    }
}

impl Drop for Kill {
    fn drop(&mut self) {
        if let Some(c) = &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

#[test]
fn stages_as_separate_processes() {
    let s = Setup::new();
    let [enc, side, f1, f2] = [free_port(), free_port(), free_port(), free_port()];
    let addr = |p: u16| format!("127.0.0.1:{p}");
    let out = s.path().join("tcp.vbundle");
    let encoder = Kill(Some(bin("vron-encoder")
        .args(["--listen", &addr(enc), "--encoder-sidecar-port", &side.to_string()])
        .arg("--authority-key")
        .arg(s.key())
        .arg("--out")
        .arg(&out)
        .spawn()
        .unwrap()));
    let filters = [
        ("sharpen", vec!["3"], f1, f2),
        ("brightness", vec!["-0.25"], f2, enc),
    ]
    .map(|(name, params, listen, next)| {
        let mut c = bin("vron-filter");
        c.args(["--listen", &addr(listen), "--next", &addr(next), "--filter", name]);
        for p in params {
            c.args(["--param", p]);
        }
        Kill(Some(c.arg("--authority-key").arg(s.key()).spawn().unwrap()))
    });
    let o = run(bin("vron-decoder")
        .arg("--input")
        .arg(s.segment(1))
        .args(["--next", &addr(f1), "--encoder-sidecar-port", &side.to_string()])
        .arg("--authority-key")
        .arg(s.key()));
    assert!(o.status.success());
    for f in filters {
        assert!(f.wait());
    }
    assert!(encoder.wait());

    let o = run(bin("vron-verify").arg("--policy").arg(s.policy()).arg("--bundle").arg(&out));
    assert!(o.status.success(), "{}", stdout(&o));
    let b = vron::io::load_bundle(&out).unwrap();
    let names: Vec<_> = b.provenance.filters.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["sharpen", "brightness"]);
}

#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

pub const FIT_DELTAS: &str = "0,0.001,0.01,0.02,0.05";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Runs the binary with a clean seed environment.
pub fn sptlaw(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sptlaw"))
        .args(args)
        .env_remove("SPTLAW_SEED")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary starts");
    {
        let mut pipe = child.stdin.take().expect("stdin piped");
        if let Some(bytes) = stdin {
            // commands that reject their flags may exit before reading stdin
            if let Err(e) = pipe.write_all(bytes) {
                assert_eq!(e.kind(), std::io::ErrorKind::BrokenPipe, "stdin write: {e}");
            }
        }
    }
    child.wait_with_output().expect("binary runs")
}

pub fn ok(out: Output) -> Vec<u8> {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out.stdout
}

pub struct Pipeline {
    pub curves: Vec<u8>,
    pub law: Vec<u8>,
    pub forecast: Vec<u8>,
}

/// `synth | fit | forecast` on the noiseless fixture truth, all through pipes.
pub fn pipeline() -> Pipeline {
    let truth = fixture("truth.toml");
    let curves = ok(sptlaw(&["synth", "--truth", truth.to_str().unwrap(), "--noise", "0", "--seed", "1"], None));
    let law = ok(sptlaw(&["fit", "--deltas", FIT_DELTAS, "--seed", "7"], Some(&curves)));
    let forecast = ok(sptlaw(&["forecast", "--delta", "10%", "--grid", "1:200:200"], Some(&law)));
    Pipeline { curves, law, forecast }
}

/// Compares against a stored golden file. `SPTLAW_BLESS=1` rewrites it.
pub fn matches_golden(name: &str, bytes: &[u8]) -> bool {
    let path = golden_path(name);
    if std::env::var_os("SPTLAW_BLESS").is_some() {
        std::fs::write(&path, bytes).expect("golden writable");
        return true;
    }
    std::fs::read(&path).map(|g| g == bytes).unwrap_or(false)
}

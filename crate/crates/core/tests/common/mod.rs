use std::process::{Command, Output};

/// Runs the command-line binary and panics unless it succeeds.
#[allow(dead_code)]
pub fn msafe(args: &[&str]) -> Output {
    let out = try_msafe(args);
    assert!(
        out.status.success(),
        "msafe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[allow(dead_code)]
pub fn try_msafe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msafe")).args(args).output().expect("binary runs")
}

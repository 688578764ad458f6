//! Shared helpers for CLI integration tests: binary invocation and
//! fixture synthesis.

// Each test target compiles this module separately and uses its own subset.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub struct CliResult {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_shh(args: &[&str]) -> CliResult {
    let output: Output = Command::new(env!("CARGO_BIN_EXE_shh"))
        .args(args)
        .output()
        .expect("failed to spawn shh");
    CliResult {
        code: output.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&output.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
    }
}

pub fn path_str(path: &Path) -> String {
    path.to_str().expect("utf-8 path").to_string()
}

/// Write a three-sample ASR labeling fixture into `dir`: one sample per
/// winning candidate (internal, external, rewrite). Gold is "a b c d".
pub fn write_label_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let dataset = dir.join("dataset.jsonl");
    let replay = dir.join("replay.jsonl");
    let config = dir.join("config.toml");

    let samples = [
        r#"{"sample_id":"s1","dataset_id":"mini","task":"asr","audio_ref":"audio/s1.wav","gold_transcript":"a b c d"}"#,
        r#"{"sample_id":"s2","dataset_id":"mini","task":"asr","audio_ref":"audio/s2.wav","gold_transcript":"a b c d"}"#,
        r#"{"sample_id":"s3","dataset_id":"mini","task":"asr","audio_ref":"audio/s3.wav","gold_transcript":"a b c d"}"#,
    ];
    std::fs::write(&dataset, samples.join("\n")).unwrap();

    let lines = [
        // s1: internal exact.
        r#"{"sample_id":"s1","role":"internal","seed":0,"text":"a b c d"}"#,
        r#"{"sample_id":"s1","role":"external","seed":1,"text":"a b c x"}"#,
        r#"{"sample_id":"s1","role":"ger","seed":6,"text":"a b x x"}"#,
        // s2: external exact.
        r#"{"sample_id":"s2","role":"internal","seed":0,"text":"a x x d"}"#,
        r#"{"sample_id":"s2","role":"external","seed":1,"text":"a b c d"}"#,
        r#"{"sample_id":"s2","role":"ger","seed":6,"text":"a b c x"}"#,
        // s3: rewrite exact.
        r#"{"sample_id":"s3","role":"internal","seed":0,"text":"a x x d"}"#,
        r#"{"sample_id":"s3","role":"external","seed":1,"text":"a b x d"}"#,
        r#"{"sample_id":"s3","role":"ger","seed":6,"text":"a b c d"}"#,
    ];
    std::fs::write(&replay, lines.join("\n")).unwrap();

    let toml = r#"
task = "asr"
k = 1

[policy]
kind = "oracle"

[seeds]
internal = 0
external = [1]
ger = 6

[backends.internal]
backend_id = "omni-internal"
kind = "replay"
fixture_path = "replay.jsonl"

[backends.external]
backend_id = "asr-external"
kind = "replay"
fixture_path = "replay.jsonl"

[backends.ger]
backend_id = "omni-ger"
kind = "replay"
fixture_path = "replay.jsonl"
"#;
    std::fs::write(&config, toml).unwrap();
    (dataset, config)
}

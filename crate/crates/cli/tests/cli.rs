use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sirep::cost::per_second_cost;
use sirep::netspec::{build_reference_backbone, inflate, InflationSpec, REFERENCE_TABLE};
use sirep::repcount::{densify, Event, EventTrack, Scheme};
use sirep::tensor::Frames;
use sirep::train::{bar_video, BarVideoConfig};

fn sirep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sirep")).args(args).env_remove("SEED").output().expect("binary runs")
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| l.starts_with('{') || l.starts_with('['))
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{e}: {l}")))
        .collect()
}

fn last_json(out: &Output) -> Value {
    stdout_lines(out).pop().unwrap_or_else(|| panic!("no JSON output; stderr: {}", stderr(out)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Stream bytes: u32 LE width, height, channels, then HWC u8 frames.
fn stream_bytes(clip: &Frames) -> Vec<u8> {
    let (c, h, w) = (clip.channels, clip.height, clip.width);
    let mut out = Vec::new();
    for v in [w, h, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let flat = clip.flat();
    for f in flat.chunks(clip.frame_len()) {
        for pixel in 0..h * w {
            for ch in 0..c {
                out.push((f[ch * h * w + pixel] * 255.0).round() as u8);
            }
        }
    }
    out
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn help_lists_flags_and_unknown_flags_exit_one() {
    let out = sirep(&["train", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--synthetic", "--manifest", "--scheme", "--k", "--seed", "--steps", "--out", "--few-shot"] {
        assert!(help.contains(flag), "{flag} missing from help:\n{help}");
    }
    let out = sirep(&["stream-count", "--help"]);
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--net", "--inflation", "--scheme", "--frames", "--events", "--checkpoint"] {
        assert!(help.contains(flag), "{flag} missing from help:\n{help}");
    }
    assert_eq!(sirep(&["cost", "--bogus"]).status.code(), Some(1));
    assert_eq!(sirep(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn cost_matches_the_library_and_inflation_lowers_it() {
    let out = sirep(&["cost", "--net", "reference", "--inflation", "si-en", "--fps", "16"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = last_json(&out);
    let net = inflate(&build_reference_backbone(REFERENCE_TABLE).unwrap(), &InflationSpec::si_en()).unwrap();
    let lib = per_second_cost(&net, 16.0).unwrap();
    assert_eq!(report["total_macs_per_second"].as_f64().unwrap(), lib.total_macs_per_second);
    assert_eq!(report["reference"], serde_json::to_value(&lib.reference).unwrap());

    let plain = last_json(&sirep(&["cost", "--net", "reference", "--fps", "16"]));
    assert!(plain["total_macs_per_second"].as_f64().unwrap() > lib.total_macs_per_second);
}

#[test]
fn cost_table_is_opt_in_and_bad_fps_is_rejected() {
    let out = sirep(&["--table", "cost", "--net", "tiny"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() > 2, "{text}");
    let bare = sirep(&["cost", "--net", "tiny"]);
    assert_eq!(String::from_utf8_lossy(&bare.stdout).lines().count(), 1);
    assert_eq!(sirep(&["cost", "--fps", "0"]).status.code(), Some(1));
    assert_eq!(sirep(&["cost", "--fps", "-4"]).status.code(), Some(1));
}

#[test]
fn zero_step_training_keeps_the_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = sirep(&["train", "--synthetic", "--scheme", "2", "--steps", "0", "--seed", "4", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = last_json(&out);
    assert_eq!(r["sha256"], r["init_sha256"]);
    let mut names: Vec<_> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["checkpoint.bin", "checkpoint.json", "train_log.jsonl"]);
}

#[test]
fn same_seed_gives_the_same_checkpoint() {
    let run = |seed_flag: Option<&str>, env_seed: Option<&str>| {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["train", "--synthetic", "--steps", "2", "--batch-size", "2", "--out", p(dir.path())];
        if let Some(s) = seed_flag {
            args.extend(["--seed", s]);
        }
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sirep"));
        cmd.args(&args).env_remove("SEED");
        if let Some(s) = env_seed {
            cmd.env("SEED", s);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        last_json(&out)["sha256"].as_str().unwrap().to_string()
    };
    let a = run(Some("9"), None);
    assert_eq!(a, run(Some("9"), None));
    assert_eq!(a, run(None, Some("9")));
    assert_ne!(a, run(Some("10"), None));
}

#[test]
fn trained_counter_counts_a_ten_repetition_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = sirep(&["train", "--synthetic", "--scheme", "3", "--steps", "500", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = last_json(&out);
    let mape = r["mape"].as_f64().unwrap();
    assert!(mape < 15.0, "held-out MAPE {mape}");
    let log = fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 500);

    // lead-in below one half-period plus 20 half-periods of 4 steps, and a
    // short tail: exactly ten end events
    let video = (100..)
        .map(|seed| bar_video(&BarVideoConfig::default(), "sweep-x", 86, seed).unwrap())
        .find(|v| v.true_count == 10)
        .unwrap();
    let frames = write(dir.path(), "reps.bin", stream_bytes(&video.clip));
    let events = write(dir.path(), "reps.json", serde_json::to_string(&video.track).unwrap());
    let ckpt = dir.path().join("checkpoint.json");
    let out = sirep(&[
        "stream-count",
        "--checkpoint",
        p(&ckpt),
        "--scheme",
        "3",
        "--frames",
        p(&frames),
        "--events",
        p(&events),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 86 + 1);
    assert!(lines[..86]
        .iter()
        .all(|l| l["probabilities"].as_array().unwrap().len() == Scheme::from_number(3).unwrap().num_classes()));
    let last = lines.last().unwrap();
    assert_eq!(last["count"], 10);
    assert_eq!(last["true_count"], 10);
    assert_eq!(last["mape"].as_f64(), Some(0.0));
    // the running count never decreases and ends at the final count
    let running: Vec<u64> = lines[..86].iter().map(|l| l["count"].as_u64().unwrap()).collect();
    assert!(running.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(running.last(), Some(&10));
}

#[test]
fn empty_stream_counts_zero() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.bin", []);
    let out = sirep(&["stream-count", "--frames", p(&empty)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["count"], 0);
    assert_eq!(lines[0]["frames"], 0);
}

#[test]
fn malformed_stream_exits_two_at_the_bad_frame() {
    let dir = tempfile::tempdir().unwrap();
    let video = bar_video(&BarVideoConfig::default(), "sweep-y", 2, 1).unwrap();
    let mut bytes = stream_bytes(&video.clip);
    bytes.truncate(bytes.len() - 16 * 16 * 3 * 5 - 10);
    let frames = write(dir.path(), "bad.bin", bytes);
    let out = sirep(&["stream-count", "--frames", p(&frames)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("frame 2 truncated"), "{}", stderr(&out));
    // the frames before the bad one were still processed
    assert_eq!(stdout_lines(&out).len(), 1);

    let header_only = write(dir.path(), "short.bin", [1u8, 0, 0]);
    assert_eq!(sirep(&["stream-count", "--frames", p(&header_only)]).status.code(), Some(2));
}

#[test]
fn inflated_reference_emits_every_fourth_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut clip = Frames::new(3, 32, 32);
    for i in 0..13 {
        clip.push(vec![i as f64 / 13.0; 3 * 32 * 32]).unwrap();
    }
    let frames = write(dir.path(), "ref.bin", stream_bytes(&clip));
    let out = sirep(&[
        "stream-count",
        "--net",
        "reference",
        "--inflation",
        "si-en",
        "--input-size",
        "32",
        "--frames",
        p(&frames),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let lines = stdout_lines(&out);
    let indices: Vec<u64> = lines[..lines.len() - 1].iter().map(|l| l["frame_index"].as_u64().unwrap()).collect();
    assert_eq!(indices, [0, 4, 8, 12]);
}

#[test]
fn offline_inference_matches_streaming() {
    let dir = tempfile::tempdir().unwrap();
    let video = bar_video(&BarVideoConfig::default(), "sweep-x", 6, 2).unwrap();
    let frames = write(dir.path(), "v.bin", stream_bytes(&video.clip));
    let streamed = stdout_lines(&sirep(&["stream-count", "--scheme", "2", "--seed", "3", "--frames", p(&frames)]));
    let offline = stdout_lines(&sirep(&["infer", "--classes", "3", "--seed", "3", "--frames", p(&frames)]));
    assert_eq!(offline.len(), 6);
    for (a, b) in streamed.iter().zip(&offline) {
        assert_eq!(a["probabilities"], b["probabilities"]);
        assert_eq!(a["frame_index"], b["frame_index"]);
    }
}

fn manifest_line(id: &str, path: &str, worker: &str, split: &str, duration: f64, events: &str) -> String {
    serde_json::json!({
        "video_id": id,
        "path": path,
        "class": "alternating lateral lunges/no obvious mistakes",
        "worker_id": worker,
        "split": split,
        "native_fps": 16.0,
        "duration": duration,
        "events": events,
    })
    .to_string()
}

#[test]
fn grid_mismatch_exits_one_naming_both_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let video = bar_video(&BarVideoConfig::default(), "sweep-x", 6, 3).unwrap();
    write(dir.path(), "v.bin", stream_bytes(&video.clip));
    let mut long = video.track.clone();
    long.duration = Some(2.0);
    write(dir.path(), "good.json", serde_json::to_string(&video.track).unwrap());
    write(dir.path(), "long.json", serde_json::to_string(&long).unwrap());
    let manifest = write(
        dir.path(),
        "m.jsonl",
        [
            manifest_line("a", "v.bin", "w1", "train", 1.5, "long.json"),
            manifest_line("b", "v.bin", "w2", "validation", 1.5, "good.json"),
        ]
        .join("\n"),
    );
    let out_dir = dir.path().join("out");
    let out = sirep(&["train", "--manifest", p(&manifest), "--steps", "1", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("8 label steps") && err.contains("6 output steps"), "{err}");
    assert!(!out_dir.exists());
}

#[test]
fn manifest_training_and_evaluation_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let video = bar_video(&BarVideoConfig::default(), "sweep-x", 12, 3).unwrap();
    write(dir.path(), "v.bin", stream_bytes(&video.clip));
    write(dir.path(), "v.json", serde_json::to_string(&video.track).unwrap());
    let lines: Vec<String> = [("a", "w1", "train"), ("b", "w2", "train"), ("c", "w3", "test")]
        .iter()
        .map(|(id, w, s)| manifest_line(id, "v.bin", w, s, 3.0, "v.json"))
        .collect();
    let manifest = write(dir.path(), "m.jsonl", lines.join("\n"));
    let out = sirep(&[
        "train",
        "--manifest",
        p(&manifest),
        "--few-shot",
        "1",
        "--eval-split",
        "test",
        "--steps",
        "2",
        "--window",
        "16",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let trained = last_json(&out);
    let ckpt = dir.path().join("checkpoint.json");
    let out = sirep(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let eval = last_json(&out);
    assert_eq!(eval["mape"], trained["mape"]);
    assert_eq!(eval["videos"].as_array().unwrap().len(), 1);
}

#[test]
fn manifest_validation_and_fewshot_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let lines: Vec<String> = (0..6)
        .map(|i| {
            let split = if i < 4 { "train" } else { "test" };
            manifest_line(&format!("v{i}"), "x.bin", &format!("w{i}"), split, 6.0, "x.json")
        })
        .collect();
    let manifest = write(dir.path(), "m.jsonl", lines.join("\n"));
    let out = sirep(&["manifest-validate", "--manifest", p(&manifest)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let summary = last_json(&out);
    assert_eq!(summary["total_videos"], 6);
    assert_eq!(summary["splits"]["train"]["videos"], 4);
    // the exercise dataset's class and split sizes are not met
    let out = sirep(&["manifest-validate", "--manifest", p(&manifest), "--policy", "exercise"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("declared 4000"), "{}", stderr(&out));

    let sampled = dir.path().join("few.jsonl");
    let run = |seed: &str| {
        let out =
            sirep(&["fewshot-sample", "--manifest", p(&manifest), "--n", "2", "--seed", seed, "--out", p(&sampled)]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        fs::read_to_string(&sampled).unwrap()
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    let train = a.lines().filter(|l| l.contains("\"train\"")).count();
    assert_eq!((a.lines().count(), train), (4, 2));
    let out = sirep(&["fewshot-sample", "--manifest", p(&manifest), "--n", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn densify_and_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let track = EventTrack {
        exercise: "squats".into(),
        fps_grid: 4.0,
        duration: Some(5.0),
        events: [
            (1.0, "middle_of_repetition"),
            (2.0, "end_of_repetition"),
            (3.5, "middle_of_repetition"),
            (4.5, "end_of_repetition"),
        ]
        .iter()
        .map(|(t, k)| Event { t: *t, kind: (*k).into() })
        .collect(),
    };
    let events = write(dir.path(), "e.json", serde_json::to_string(&track).unwrap());
    for scheme in ["1", "2", "3"] {
        let out = sirep(&["densify", "--events", p(&events), "--scheme", scheme]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let labels = last_json(&out);
        let n: u8 = scheme.parse().unwrap();
        let expected = densify(&track, Scheme::from_number(n).unwrap(), 20).unwrap();
        assert_eq!(labels["labels"], serde_json::to_value(&expected.labels).unwrap());
        let labels_path = write(dir.path(), "l.json", labels.to_string());
        let out = sirep(&["decode-count", "--labels", p(&labels_path), "--true-count", "2"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert_eq!(last_json(&out)["predicted_count"], 2, "scheme {scheme}");
    }

    // probability lines, bare or as emitted by the streaming command
    let probs = write(dir.path(), "p.jsonl", "[0.9, 0.1]\n{\"probabilities\": [0.2, 0.8]}\n[0.7, 0.3]\n[0.1, 0.9]\n");
    let out = sirep(&["decode-count", "--probs", p(&probs), "--scheme", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(last_json(&out)["predicted_count"], 2);
    assert_eq!(sirep(&["decode-count", "--probs", p(&probs)]).status.code(), Some(1));
}

#[test]
fn pose_commands() {
    let dir = tempfile::tempdir().unwrap();
    let frame: Vec<[f64; 3]> = (0..33).map(|j| [j as f64 / 40.0, 0.5, 1.0]).collect();
    let text: String = (0..100).map(|_| serde_json::json!({ "joints": frame }).to_string() + "\n").collect();
    let input = write(dir.path(), "bp.jsonl", text);

    let out = sirep(&["pose", "map", "--input", p(&input)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mapped = stdout_lines(&out);
    assert_eq!(mapped.len(), 100);
    assert_eq!(mapped[0]["joints"].as_array().unwrap().len(), 18);

    let out = sirep(&["pose", "adjacency", "--layout", "openpose18"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let augment = |seed: &str| {
        let out = sirep(&["pose", "augment", "--input", p(&input), "--layout", "blazepose33", "--seed", seed]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        out.stdout
    };
    let a = augment("5");
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 90);
    assert_eq!(a, augment("5"));
    assert_ne!(a, augment("6"));

    // an 18-joint file is not a 33-joint sequence
    let mapped_path = write(dir.path(), "op.jsonl", out_text(&mapped));
    assert_eq!(sirep(&["pose", "map", "--input", p(&mapped_path)]).status.code(), Some(1));
}

fn out_text(lines: &[Value]) -> String {
    lines.iter().map(|l| l.to_string() + "\n").collect()
}

use std::fs;
use std::net::UdpSocket;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use kinact::formats;
use kinact_core::biomech::default_template;
use kinact_core::synth::{default_rig, generate_motion, render_keypoints, MotionConfig};

fn kinact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinact"))
        .args(args)
        .env("KINACT_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = kinact(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = kinact(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_cleanly() {
    let out = kinact(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["triangulate", "ik", "synth", "train", "eval", "ablate", "transform-jcp", "serve", "pen", "bench"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn missing_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinact(&["ik", "--markers", "/nonexistent.ndjson", "--out", s(&dir.path().join("q.ndjson"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("/nonexistent.ndjson"), "{err}");
}

#[test]
fn synth_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (p, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        ok(&["--seed", seed, "synth", "--trials", "3", "--duration", "15", "--out", s(p)]);
    }
    for f in ["manifest.json", "trial_000.ndjson", "trial_001.ndjson"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("trial_000.ndjson")).unwrap(), fs::read(c.join("trial_000.ndjson")).unwrap());
}

#[test]
fn cameras_to_angles() {
    let dir = tempfile::tempdir().unwrap();
    let model = default_template();
    let truth = generate_motion(1, 11, 2.0, &model, 3, &MotionConfig { noise_sigma: 0.0, ..MotionConfig::default() }).unwrap();
    let calib = dir.path().join("calib.json");
    let kp = dir.path().join("kp.ndjson");
    formats::save_calibration(&calib, &default_rig()).unwrap();
    formats::write_keypoints(&kp, &render_keypoints(&truth, &model, &default_rig(), 0.0, 0).unwrap().concat()).unwrap();

    let (jcp, markers, angles) = (dir.path().join("jcp.ndjson"), dir.path().join("m.ndjson"), dir.path().join("q.ndjson"));
    ok(&["triangulate", "--calib", s(&calib), "--keypoints", s(&kp), "--out", s(&jcp), "--markers-out", s(&markers)]);
    let centers = formats::read_jcps(&jcp).unwrap();
    assert_eq!(centers.len(), truth.len());
    let expected: Vec<_> = truth.iter().map(|f| model.joint_centers(&f.q, &f.base, f.t).unwrap()).collect();
    for (got, want) in centers.iter().zip(&expected) {
        for (p, q) in got.points.iter().zip(&want.points) {
            let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(d < 1e-6, "{d}");
        }
    }

    ok(&["ik", "--markers", s(&markers), "--out", s(&angles), "--max-iterations", "50"]);
    let solved = formats::read_angles(&angles, 22).unwrap();
    assert_eq!(solved.len(), truth.len());
    assert!(solved.iter().all(|f| f.q.iter().all(|v| v.is_finite())));
}

#[test]
fn train_eval_serve_pen_bench() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let weights = dir.path().join("w");
    ok(&["synth", "--trials", "3", "--duration", "30", "--out", s(&corpus)]);
    #[rustfmt::skip]
    ok(&[
        "train", "--corpus", s(&corpus), "--out", s(&weights), "--epochs", "1", "--stride", "20", "--val-stride", "20",
        "--window", "10", "--layers", "1", "--d-model", "8", "--ffn-dim", "8", "--mlp-dim", "8",
    ]);
    for f in ["lower.kadc", "lower.json", "upper.kadc", "upper.json", "history.json"] {
        assert!(weights.join(f).is_file(), "{f}");
    }

    let (eval, csv) = (dir.path().join("eval.json"), dir.path().join("eval.csv"));
    ok(&["eval", "--corpus", s(&corpus), "--weights", s(&weights), "--split", "all", "--out", s(&eval), "--csv", s(&csv)]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&eval).unwrap()).unwrap();
    let acc = report["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc), "{report}");
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 1);

    let port = UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    let board = dir.path().join("board.json");
    let pen = Command::new(env!("CARGO_BIN_EXE_kinact"))
        .args(["pen", "--listen", &port, "--board-out", s(&board), "--idle-timeout", "3"])
        .env("KINACT_LOG", "warn")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));
    let (msgs, rep) = (dir.path().join("msgs.ndjson"), dir.path().join("rep.json"));
    let trial = corpus.join("trial_000.ndjson");
    #[rustfmt::skip]
    ok(&[
        "serve", "--weights-lower", s(&weights.join("lower.kadc")), "--weights-upper", s(&weights.join("upper.kadc")),
        "--input", s(&trial), "--rate", "0", "--dest", &format!("127.0.0.1:{port}"), "--out", s(&msgs), "--report", s(&rep),
    ]);
    let frames = fs::read_to_string(&trial).unwrap().lines().count();
    let sent = fs::read_to_string(&msgs).unwrap();
    assert_eq!(sent.lines().count(), frames);
    for line in sent.lines() {
        assert!(kinact::udp::decode(line.as_bytes()).is_ok(), "{line}");
    }
    let pen = pen.wait_with_output().unwrap();
    assert!(pen.status.success(), "{}", String::from_utf8_lossy(&pen.stderr));
    let snap: kinact::udp::BoardSnapshot = serde_json::from_slice(&fs::read(&board).unwrap()).unwrap();
    assert!(snap.messages > 0 && snap.messages as usize <= frames);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&rep).unwrap()).unwrap();
    assert_eq!(rep["frames"].as_u64().unwrap() as usize, frames);

    let bench = dir.path().join("bench.json");
    ok(&["bench", "--weights", s(&weights), "--trials", "10", "--out", s(&bench)]);
    let stages: serde_json::Value = serde_json::from_slice(&fs::read(&bench).unwrap()).unwrap();
    let names: Vec<_> = stages.as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap().to_owned()).collect();
    assert!(names.contains(&"step".to_owned()) && names.contains(&"ik".to_owned()), "{names:?}");
}

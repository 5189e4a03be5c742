use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn semsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semsplat")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = semsplat(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Exit code and the parsed error JSON of a failing run.
fn fails(args: &[&str]) -> (i32, Value) {
    let out = semsplat(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr)));
    let code = out.status.code().unwrap();
    assert_eq!(err["exit_code"], code);
    (code, err)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn fixtures(root: &Path, seed: &str) -> PathBuf {
    let fx = root.join("fx");
    ok(&["gen-fixtures", "--out", s(&fx), "--seed", seed, "--set", "track_frames=3"]);
    fx
}

#[test]
fn gen_fixtures_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen-fixtures", "--out", s(&a), "--seed", "7"]);
    ok(&["gen-fixtures", "--out", s(&b), "--seed", "7"]);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() > 100);
    assert_eq!(fa, fb);
    let capture = fa.iter().filter(|(p, _)| p.starts_with("capture") && p.extension().is_some_and(|e| e == "json")).count();
    assert_eq!(capture, 40);
}

#[test]
fn fit_then_metrics_reconstructs_held_out_view() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path(), "0");
    let fit = tmp.path().join("fit");
    ok(&["fit", "--out", s(&fit), "--views", s(&fx.join("recon/views")), "--points", s(&fx.join("recon/points.json")), "--config", s(&fx.join("recon/fit.toml"))]);
    let losses = read_json(&fit.join("losses.json"));
    assert_eq!(losses.as_array().unwrap().len(), 2000);
    let ho = tmp.path().join("heldout");
    ok(&["render", "--out", s(&ho), "--scene", s(&fit.join("scene.s2gs")), "--camera", s(&fx.join("recon/heldout/camera.json"))]);
    let m = tmp.path().join("metrics");
    let out = ok(&["metrics", "--out", s(&m), "--a", s(&ho.join("color.s2gb")), "--b", s(&fx.join("recon/heldout/color.s2gb"))]);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, read_json(&m.join("report.json")));
    let psnr = printed["psnr"].as_f64().unwrap();
    assert!(psnr > 35.0, "held-out PSNR {psnr}");
}

#[test]
fn manifest_records_inputs_config_hash_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path(), "1");
    let q = tmp.path().join("q");
    ok(&["query", "--out", s(&q), "--scene", s(&fx.join("objects/scene.s2gs")), "--query", s(&fx.join("objects/query_1.s2gq")), "--set", "dbscan_eps=0.025"]);
    let m = read_json(&q.join("manifest.json"));
    assert_eq!(m["subcommand"], "query");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    let config = std::fs::read(q.join("config.toml")).unwrap();
    assert!(String::from_utf8_lossy(&config).contains("dbscan_eps = 0.025"));
    use sha2::Digest;
    assert_eq!(m["config_hash"], hex::encode(sha2::Sha256::digest(&config)));
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert_eq!(artifacts, ["config.toml", "report.json"]);

    // Re-running from the snapshot reproduces the outputs.
    let again = tmp.path().join("again");
    ok(&["query", "--out", s(&again), "--scene", s(&fx.join("objects/scene.s2gs")), "--query", s(&fx.join("objects/query_1.s2gq")), "--config", s(&q.join("config.toml"))]);
    assert_eq!(files(&q), files(&again));

    let truth = read_json(&fx.join("objects/truth.json"));
    let report = read_json(&q.join("report.json"));
    for (a, b) in report["centroid"].as_array().unwrap().iter().zip(truth["centroids"][1].as_array().unwrap()) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-6);
    }
}

#[test]
fn track_follows_fixture_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path(), "0");
    let out = tmp.path().join("track");
    ok(&["track", "--out", s(&out), "--scene", s(&fx.join("track/scene.s2gs")), "--extract", s(&fx.join("track/extract.json")), "--frames", s(&fx.join("track/frames"))]);
    let got = read_json(&out.join("transforms.json"));
    let truth = read_json(&fx.join("track/truth.json"));
    let got = got.as_array().unwrap();
    assert_eq!(got.len(), 3);
    for (g, t) in got.iter().zip(truth["transforms"].as_array().unwrap()) {
        let d: f64 = g["transform"]["translation"].as_array().unwrap().iter().zip(t["translation"].as_array().unwrap()).map(|(a, b)| (a.as_f64().unwrap() - b.as_f64().unwrap()).powi(2)).sum::<f64>().sqrt();
        assert!(d < 1e-3, "frame {}: {d}", g["frame"]);
    }
    assert!(out.join("scene.s2gs").exists());
}

#[test]
fn eval_policy_reports_success_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let pol = tmp.path().join("pol");
    ok(&["train-policy", "--out", s(&pol), "--task", "push", "--obs", "state", "--demos", "10", "--set", "steps=100"]);
    for f in ["dataset.s2gd", "policy.json", "losses.json", "manifest.json"] {
        assert!(pol.join(f).exists(), "{f}");
    }
    let ev = tmp.path().join("eval");
    ok(&["eval-policy", "--out", s(&ev), "--policy", s(&pol.join("policy.json")), "--obs", "state", "--task", "push", "--episodes", "50"]);
    let r = read_json(&ev.join("report.json"));
    let rate = r["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert_eq!(r["task"], "push");
    assert_eq!(r["obs_source"], "state");
    let outcomes = r["outcomes"].as_array().unwrap();
    assert_eq!(outcomes.len(), 50);
    let wins = outcomes.iter().filter(|o| o["success"] == true).count();
    assert_eq!(rate, wins as f64 / 50.0);
    assert_eq!(outcomes[0]["sim_seed"], 100_000);

    // Retraining from the saved dataset gives the same policy.
    let again = tmp.path().join("again");
    ok(&["train-policy", "--out", s(&again), "--task", "push", "--obs", "state", "--dataset", s(&pol.join("dataset.s2gd")), "--set", "steps=100"]);
    assert_eq!(std::fs::read(pol.join("policy.json")).unwrap(), std::fs::read(again.join("policy.json")).unwrap());
}

#[test]
fn errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path(), "2");
    let out = tmp.path().join("out");
    let camera = fx.join("recon/heldout/camera.json");

    let (missing, e) = fails(&["render", "--out", s(&out), "--scene", s(&tmp.path().join("nope.s2gs")), "--camera", s(&camera)]);
    assert_eq!(e["error"], "missing_file");

    let (magic, e) = fails(&["render", "--out", s(&out), "--scene", s(&fx.join("objects/query_0.s2gq")), "--camera", s(&camera)]);
    assert_eq!(e["error"], "bad_magic");

    let scene = std::fs::read(fx.join("objects/scene.s2gs")).unwrap();
    let truncated = tmp.path().join("truncated.s2gs");
    std::fs::write(&truncated, &scene[..scene.len() / 2]).unwrap();
    let (malformed, e) = fails(&["render", "--out", s(&out), "--scene", s(&truncated), "--camera", s(&camera)]);
    assert_eq!(e["error"], "malformed");

    // The tracking scene's decoder emits 1 channel, queries have 16.
    let (dims, e) = fails(&["query", "--out", s(&out), "--scene", s(&fx.join("track/scene.s2gs")), "--query", s(&fx.join("objects/query_0.s2gq"))]);
    assert_eq!(e["error"], "dimension_mismatch");

    let (config, e) = fails(&["query", "--out", s(&out), "--scene", s(&fx.join("objects/scene.s2gs")), "--query", s(&fx.join("objects/query_0.s2gq")), "--set", "dbscan_epz=0.1"]);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("dbscan_epz"));

    let (usage, _) = fails(&["render", "--scene", "x"]);

    let codes = [missing, magic, dims, config];
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            assert_ne!(a, b);
        }
    }
    assert_eq!(malformed, magic);
    assert_eq!(usage, config);
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["fit", "render", "query", "track", "train-policy", "eval-policy", "metrics", "gen-fixtures"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let out = ok(&["fit", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--out", "--config", "--set", "--seed", "--views", "--points", "--init", "--threads"] {
        assert!(text.contains(flag), "{flag} missing from fit help");
    }
}

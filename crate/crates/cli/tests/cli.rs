use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use octoflight::env::observation_bounds;
use octoflight::policy::{save_checkpoint, NetShape, PolicyParameters};
use octoflight::EpisodeConfig;
use octoflight_cli::plot;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_octoflight"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn zero_policy(dir: &Path) -> std::path::PathBuf {
    let mut z = PolicyParameters::<f64>::zeros(NetShape::supervisor());
    z.block_mut("obs_bounds").copy_from_slice(&observation_bounds(&EpisodeConfig::default()));
    let path = dir.join("zero.ckpt");
    fs::write(&path, save_checkpoint(&z)).unwrap();
    path
}

#[test]
fn help_lists_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        ("tune", &["--config", "--preset", "--out", "--seed", "--mode", "--wind", "--trials", "--paper-scale", "--space", "--compare", "--record-wall-time"]),
        ("train", &["--config", "--preset", "--out", "--seed", "--wind", "--episodes"]),
        ("fly", &["--config", "--preset", "--out", "--seed", "--trajectory", "--mode", "--policy", "--wind", "--wind-onset-segment", "--start-speed"]),
        ("eval", &["--config", "--preset", "--out", "--seed", "--policy", "--policy-b", "--trajectory", "--seeds", "--runs", "--wind", "--sweep-magnitude", "--sweep-heading", "--magnitudes", "--samples"]),
        ("plot", &["--out", "--trajectory", "--config"]),
    ];
    for (cmd, flags) in expected {
        let o = ok(&[cmd, "--help"]);
        let text = String::from_utf8(o.stdout).unwrap();
        let documented: Vec<&str> = text.split_whitespace().filter(|w| w.starts_with("--")).map(|w| w.trim_end_matches(|c: char| !(c.is_alphanumeric() || c == '-'))).collect();
        for f in *flags {
            assert!(documented.contains(f), "{cmd} --help lacks {f}");
        }
        for d in documented {
            assert!(d == "--help" || d == "--version" || flags.contains(&d), "{cmd} documents unexpected {d}");
        }
    }
}

#[test]
fn usage_errors_exit_2_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["tune", "--trials", "0", "--out", p(&out)],
        vec!["train", "--wind", "5@360", "--out", p(&out)],
        vec!["train", "--wind", "five", "--out", p(&out)],
        vec!["fly", "--mode", "rl", "--out", p(&out)],
        vec!["fly", "--trajectory", "nowhere.txt", "--out", p(&out)],
        vec!["fly", "--preset", "nope", "--out", p(&out)],
        vec!["eval", "--policy", "missing.ckpt", "--out", p(&out)],
        vec!["fly"],
        vec!["bogus"],
    ];
    for c in cases {
        let o = run(&c);
        assert_eq!(o.status.code(), Some(2), "{c:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{c:?} wrote output");
    }
}

#[test]
fn bad_space_file_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.toml");
    fs::write(&space, "[\"position.k_p\"]\ndist = \"uniform\"\nlow = 1.0\nhigh = oops\n").unwrap();
    let o = run(&["tune", "--space", p(&space), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tune_writes_requested_records_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["tune", "--mode", "pid", "--wind", "0", "--trials", "50", "--seed", "3", "--out", p(&a)]);
    ok(&["tune", "--mode", "pid", "--wind", "0", "--trials", "50", "--seed", "3", "--out", p(&b)]);
    let log = fs::read_to_string(a.join("trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 50);
    for f in ["trials.jsonl", "best.toml", "top10.csv", "importance.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // Asking again for the same count reruns nothing.
    ok(&["tune", "--trials", "50", "--seed", "3", "--out", p(&a)]);
    assert_eq!(fs::read_to_string(a.join("trials.jsonl")).unwrap(), log);
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"trials.jsonl\""));
}

#[test]
fn train_is_deterministic_and_curve_matches_updates() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, z) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("z"));
    let args = |o: &Path| vec!["train".to_string(), "--wind".into(), "5@90".into(), "--episodes".into(), "20".into(), "--seed".into(), "7".into(), "--out".into(), p(o).into()];
    let run_a: Vec<String> = args(&a);
    let run_b: Vec<String> = args(&b);
    ok(&run_a.iter().map(String::as_str).collect::<Vec<_>>());
    let stdout = String::from_utf8(ok(&run_b.iter().map(String::as_str).collect::<Vec<_>>()).stdout).unwrap();
    for f in ["policy.ckpt", "curve.csv", "config.toml", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let updates: usize = stdout.split_whitespace().next().unwrap().parse().unwrap();
    assert_eq!(fs::read_to_string(a.join("curve.csv")).unwrap().lines().count(), updates + 1);

    ok(&["train", "--episodes", "0", "--out", p(&z)]);
    assert_eq!(fs::read_to_string(z.join("curve.csv")).unwrap().lines().count(), 1);
    assert!(z.join("policy.ckpt").exists());
}

#[test]
fn fly_square_completes_and_zero_policy_matches_pid() {
    let dir = tempfile::tempdir().unwrap();
    let zero = zero_policy(dir.path());
    let (pid, rl, again) = (dir.path().join("pid"), dir.path().join("rl"), dir.path().join("again"));
    ok(&["fly", "--trajectory", "square", "--mode", "pid", "--wind", "5@90", "--seed", "4", "--out", p(&pid)]);
    ok(&["fly", "--trajectory", "square", "--mode", "rl", "--policy", p(&zero), "--wind", "5@90", "--seed", "4", "--out", p(&rl)]);
    ok(&["fly", "--trajectory", "square", "--mode", "pid", "--wind", "5@90", "--seed", "4", "--out", p(&again)]);
    let log = fs::read(pid.join("flight.csv")).unwrap();
    assert_eq!(log, fs::read(rl.join("flight.csv")).unwrap());
    assert_eq!(log, fs::read(again.join("flight.csv")).unwrap());

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(pid.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["completion"], 1.0);
    let ticks: u64 = summary["segments"].as_array().unwrap().iter().map(|s| s["ticks"].as_u64().unwrap()).sum();
    assert_eq!(String::from_utf8(log).unwrap().lines().count() as u64, ticks + 1);
    assert_eq!(summary["wind"]["onset_segment"], 2);
}

#[test]
fn eval_emits_sweeps_and_cosine_curve() {
    let dir = tempfile::tempdir().unwrap();
    let zero = zero_policy(dir.path());
    let out = dir.path().join("e");
    let args = ["eval", "--policy", p(&zero), "--seeds", "2", "--runs", "2", "--magnitudes", "0,5", "--samples", "200", "--out", p(&out)];
    ok(&args);
    let headings = fs::read_to_string(out.join("headings.csv")).unwrap();
    let rl_rows: Vec<&str> = headings.lines().filter(|l| l.starts_with("rl_supervised")).collect();
    assert_eq!(rl_rows.len(), 8);
    for (row, h) in rl_rows.iter().zip([0, 45, 90, 135, 180, 225, 270, 315]) {
        assert_eq!(row.split(',').nth(2).unwrap(), h.to_string());
    }
    let cosine = fs::read_to_string(out.join("cosine.csv")).unwrap();
    assert_eq!(cosine.lines().count(), 37);
    assert_eq!(cosine.lines().nth(1).unwrap(), "0,1");
    for f in ["magnitudes.csv", "rewards.csv", "histogram.csv", "headings.svg", "cosine.svg", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let again = dir.path().join("e2");
    let mut args2 = args;
    args2[args2.len() - 1] = p(&again);
    ok(&args2);
    for f in ["headings.csv", "magnitudes.csv", "rewards.csv", "cosine.csv", "manifest.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn plot_square_log_shows_four_reference_chords() {
    let dir = tempfile::tempdir().unwrap();
    let fly_out = dir.path().join("f");
    ok(&["fly", "--trajectory", "square", "--seed", "1", "--out", p(&fly_out)]);
    let log = fly_out.join("flight.csv");
    let (a, b) = (dir.path().join("pa"), dir.path().join("pb"));
    ok(&["plot", p(&log), "--out", p(&a)]);
    ok(&["plot", p(&log), "--out", p(&b)]);
    let svg = fs::read_to_string(a.join("flight.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(b.join("flight.svg")).unwrap());
    assert_eq!(svg.matches("class=\"reference\"").count(), 4);
    ok(&["plot", p(&log), "--trajectory", "square", "--out", p(&a)]);
    assert_eq!(fs::read_to_string(a.join("flight.svg")).unwrap().matches("class=\"reference\"").count(), 4);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(run(&["plot", p(&empty), "--out", p(&dir.path().join("pc"))]).status.code(), Some(2));
    let header_only = dir.path().join("h.csv");
    fs::write(&header_only, fs::read_to_string(&log).unwrap().lines().next().unwrap()).unwrap();
    assert!(plot::render(&fs::read_to_string(&header_only).unwrap(), "h", None).is_err());
    let bad = dir.path().join("bad.csv");
    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str("1,2,3\n");
    fs::write(&bad, text).unwrap();
    let o = run(&["plot", p(&bad), "--out", p(&dir.path().join("pd"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

use std::path::Path;
use std::process::{Command, Output, Stdio};

const SMALL: [&str; 10] = [
    "--set",
    "frames.synth_count=4",
    "--set",
    "frames.width=64",
    "--set",
    "frames.height=48",
    "--set",
    "trace.length=40",
    "--set",
    "fit.samples=30",
];

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_roi-adapt")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_small<'a>(cmd: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = cmd.to_vec();
    v.extend(SMALL);
    v.extend(rest);
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_override_is_visible() {
    let o = run(&["config", "--set", "sac.total_steps=123"]);
    assert!(stdout(&o).contains("\"total_steps\": 123"));
    let bad = Command::new(env!("CARGO_BIN_EXE_roi-adapt")).args(["config", "--set", "sac.bogus=1"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn fit_then_train_then_eval() {
    let d = tempfile::tempdir().unwrap();
    let fit_dir = d.path().join("fit");
    let o = run(&with_small(&["fit", "--run-dir", fit_dir.to_str().unwrap()], &[]));
    assert!(stdout(&o).contains("r_squared"));
    let model = fit_dir.join("model.json");
    assert!(model.exists());

    let train_dir = d.path().join("train");
    run(&with_small(
        &["train", "--run-dir", train_dir.to_str().unwrap()],
        &[
            "--set",
            &format!("model={}", model.display()),
            "--set",
            "sac.total_steps=120",
            "--set",
            "sac.warmup=40",
            "--set",
            "sac.batch=16",
            "--set",
            "sac.hidden=[8,8]",
        ],
    ));
    let ckpt = train_dir.join("policy.json");
    assert!(ckpt.exists() && train_dir.join("curve.csv").exists() && train_dir.join("curve.svg").exists());

    let eval_dir = d.path().join("eval");
    let o = run(&with_small(
        &["eval", "--run-dir", eval_dir.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()],
        &["--set", "eval.episodes=2"],
    ));
    let s = stdout(&o);
    for name in ["policy", "low", "high", "random"] {
        assert!(s.lines().any(|l| l.starts_with(name)), "{name} missing in\n{s}");
    }
    let charts = d.path().join("charts");
    let o = run(&["report", "--out", charts.to_str().unwrap(), eval_dir.join("series_high.csv").to_str().unwrap()]);
    assert!(stdout(&o).contains("series_high_delay_s.svg"));
}

#[test]
fn trace_and_frames_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a.csv"), d.path().join("b.csv"));
    run(&["trace", "--out", a.to_str().unwrap()]);
    run(&["trace", "--out", b.to_str().unwrap()]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let fdir = d.path().join("frames");
    run(&with_small(&["frames", "--out", fdir.to_str().unwrap()], &[]));
    assert!(fdir.join("annotations.csv").exists());
    assert!(fdir.join("frame_0003.png").exists());
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_for(path: &Path) {
    for _ in 0..200 {
        if path.exists() {
            return;
        }
        std::thread::sleep(std::time::Duration::from_millis(25));
    }
}

#[test]
fn stream_between_processes() {
    let d = tempfile::tempdir().unwrap();
    let frames = d.path().join("frames");
    run(&with_small(&["frames", "--out", frames.to_str().unwrap()], &[]));
    let trace = d.path().join("trace.csv");
    run(&["trace", "--out", trace.to_str().unwrap(), "--set", "trace.length=8"]);

    let addr = format!("127.0.0.1:{}", free_port());
    let recv_log = d.path().join("recv.csv");
    let mut recv = Command::new(env!("CARGO_BIN_EXE_roi-adapt"))
        .args(["stream", "recv", "--bind", &addr, "--out", recv_log.to_str().unwrap()])
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let send_log = d.path().join("send.csv");
    let mut ok = false;
    for _ in 0..50 {
        let o = Command::new(env!("CARGO_BIN_EXE_roi-adapt"))
            .args([
                "stream", "send", "--to", &addr, "--policy", "low", "--pace",
                "--frames", frames.to_str().unwrap(),
                "--trace", trace.to_str().unwrap(),
                "--out", send_log.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        if o.status.success() {
            ok = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    assert!(ok, "sender never connected");
    assert!(recv.wait().unwrap().success());
    wait_for(&recv_log);
    let o = run(&["stream", "summarize", send_log.to_str().unwrap(), "--baseline", send_log.to_str().unwrap()]);
    let s = stdout(&o);
    assert!(s.contains("frames: 4"), "{s}");
    assert!(s.contains("0.0% reduction"), "{s}");
    let recv_txt = std::fs::read_to_string(&recv_log).unwrap();
    assert_eq!(recv_txt.lines().filter(|l| !l.starts_with('#')).count(), 5);
}

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use roi_adapt::codec::dct::{forward_dct_block, inverse_dct_block};
use roi_adapt::codec::entropy::{decode_levels, encode_levels};
use roi_adapt::codec::{self, compression_ratio, encode_frame};
use roi_adapt::env::{self, presets, RewardConfig, RoiEnv, SizeMode};
use roi_adapt::harness::{self, PolicyChoice, RunConfig};
use roi_adapt::sac::{self, smooth, SacHyperParams, ToyEnv, TrainedPolicy};
use roi_adapt::sizemodel::PolynomialModel;
use roi_adapt::stream::{self, MessageKind, SenderOptions, StreamPolicy, WireMessage};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Trained {
    cfg: RunConfig,
    checkpoint: PathBuf,
    policy: TrainedPolicy,
    curve: Vec<sac::CurvePoint>,
    train_secs: f64,
    _dir: tempfile::TempDir,
}

fn default_cfg(dir: &Path) -> RunConfig {
    RunConfig { run_dir: Some(dir.to_path_buf()), ..RunConfig::default() }
}

/// Trains the default configuration (20,000 steps, lr 0.002, regression env).
fn train_default() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { parallel: false, ..default_cfg(dir.path()) };
    assert_eq!(cfg.sac.total_steps, 20_000);
    assert_eq!(cfg.sac.lr_pi, 0.002);
    assert_eq!(cfg.env.size_mode, SizeMode::Regression);
    let t = Instant::now();
    let r = harness::cmd_train(&cfg).unwrap();
    Trained {
        train_secs: t.elapsed().as_secs_f64(),
        checkpoint: r.checkpoint,
        policy: r.policy,
        curve: r.curve,
        cfg,
        _dir: dir,
    }
}

fn c1_regression_quality() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_cfg(dir.path());
    let t = Instant::now();
    let r = harness::cmd_fit(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        r.samples == 500 && r.model.r_squared >= 0.8 && secs < 120.0,
        format!("R²={:.4} over {} samples (need ≥ 0.8), {secs:.1}s", r.model.r_squared, r.samples),
    )
}

fn c2_compression_trend() -> Outcome {
    let frames = harness::load_frames(&RunConfig::default()).unwrap();
    let mean_ratio = |qf: u8| {
        frames.frames().iter().map(|f| compression_ratio(f, &encode_frame(f, f.roi, qf).unwrap())).sum::<f64>()
            / frames.len() as f64
    };
    let (r10, r100) = (mean_ratio(10), mean_ratio(100));
    outcome(
        r10 >= 1.3 * r100 && (3.0..=10.0).contains(&r10),
        format!("ratio qf10={r10:.3} qf100={r100:.3} ({:.2}x, need ≥ 1.3x and qf10 in [3,10])", r10 / r100),
    )
}

fn c3_delay_improvement(tr: &Trained) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { run_dir: Some(dir.path().to_path_buf()), ..tr.cfg.clone() };
    let policies = [PolicyChoice::Checkpoint(Arc::new(tr.policy.clone())), PolicyChoice::High];
    let r = harness::eval_policies(&cfg, &policies).unwrap();
    let (p, h) = (r.get("policy").unwrap(), r.get("high").unwrap());
    outcome(
        p.mean_delay_s <= 0.9 * h.mean_delay_s && p.mean_ssim >= 0.8 && tr.train_secs < 1800.0,
        format!(
            "measured replay over {} frames: delay {:.4}s vs high {:.4}s ({:.1}% lower, need ≥ 10%), SSIM {:.4} (need ≥ 0.8); training {:.0}s",
            p.steps, p.mean_delay_s, h.mean_delay_s, p.delay_vs_high_pct, p.mean_ssim, tr.train_secs
        ),
    )
}

/// Largest drop of the smoothed curve below its running maximum, taken over
/// the final two thirds.
fn worst_drop(smoothed: &[f64]) -> (f64, usize) {
    let start = smoothed.len() / 3;
    let mut best = smoothed[start];
    let mut worst: f64 = 0.0;
    let mut strict = 0;
    for i in start + 1..smoothed.len() {
        if smoothed[i] < smoothed[i - 1] {
            strict += 1;
        }
        worst = worst.max(best - smoothed[i]);
        best = best.max(smoothed[i]);
    }
    (worst, strict)
}

/// Per-step drop tolerance for the smoothed toy curve; equal to the toy
/// convergence band.
const TOY_TOLERANCE: f64 = 0.01;

fn c4_convergence_shape(tr: &Trained) -> Outcome {
    // toy env, three seeds, deterministic-policy return per step
    let mut finals = Vec::new();
    let mut drops = Vec::new();
    let mut strict = Vec::new();
    for seed in 0..3 {
        let hp = SacHyperParams { seed, total_steps: 5_000, ..Default::default() };
        let out = sac::train(&mut ToyEnv::default(), &hp).unwrap();
        let g: Vec<f64> = out.curve.iter().map(|c| c.greedy_reward.unwrap() / ToyEnv::LEN as f64).collect();
        let s = smooth(&g, 10);
        let (d, k) = worst_drop(&s);
        finals.push(*s.last().unwrap());
        drops.push(d);
        strict.push(k);
    }
    let toy_final = finals.iter().sum::<f64>() / 3.0;
    let toy_drop = drops.iter().cloned().fold(0.0, f64::max);

    // roi env: last ten training episodes against the random policy on the same episodes
    let frames = Arc::new(harness::load_frames(&tr.cfg).unwrap());
    let trace = Arc::new(harness::load_trace(&tr.cfg).unwrap());
    let model = Arc::new(PolynomialModel::load_json(&tr.checkpoint.with_file_name("model.json")).unwrap());
    let mut renv = RoiEnv::new(frames, trace, Some(model), tr.cfg.env.clone()).unwrap();
    let returns: Vec<f64> = tr.curve.iter().map(|c| c.reward).collect();
    let final_smoothed = *smooth(&returns, 10).last().unwrap();
    let n_ep = tr.curve.len();
    let mut rng = ChaCha8Rng::seed_from_u64(tr.cfg.eval.random_seed);
    let mut random_returns = Vec::new();
    for ep in n_ep - 10..n_ep {
        renv.reset_at(ep * renv.episode_len()).unwrap();
        let mut total = 0.0;
        loop {
            let o = renv.step(env::Action::new(rng.random(), rng.random(), rng.random())).unwrap();
            total += o.reward;
            if o.done {
                break;
            }
        }
        random_returns.push(total);
    }
    let random_mean = random_returns.iter().sum::<f64>() / 10.0;
    let ratio = final_smoothed / random_mean;

    outcome(
        toy_final >= -0.01 && toy_drop <= TOY_TOLERANCE && ratio >= 1.5,
        format!(
            "toy: final smoothed {toy_final:.5}/step (need ≥ -0.01), worst drop below running max {toy_drop:.2e} (tolerance {TOY_TOLERANCE}; strict decreases per seed {strict:?}); roi env: final smoothed return {final_smoothed:.2} vs random {random_mean:.2} ({ratio:.2}x, need ≥ 1.5x)"
        ),
    )
}

fn c5_gradients() -> Outcome {
    let t = Instant::now();
    let worst = (0..20).map(|s| sac::gradient_check(s).worst()).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(worst < 1e-4 && secs < 60.0, format!("worst relative error {worst:.2e} over 20 seeds (need < 1e-4), {secs:.1}s"))
}

fn c6_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut dct_err: f64 = 0.0;
    for _ in 0..2000 {
        let block: [f64; 64] = std::array::from_fn(|_| rng.random_range(-128.0..128.0));
        let back = inverse_dct_block(&forward_dct_block(&block));
        dct_err = block.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(dct_err, f64::max);
    }
    let mut entropy_ok = true;
    for _ in 0..200 {
        let n = rng.random_range(1..20);
        let blocks: Vec<[i32; 64]> = (0..n)
            .map(|_| {
                std::array::from_fn(|_| {
                    if rng.random_bool(0.7) {
                        0
                    } else {
                        (rng.sample::<f64, _>(StandardNormal) * 200.0) as i32
                    }
                })
            })
            .collect();
        let bytes = encode_levels(&blocks);
        let back = decode_levels(&bytes, n).unwrap();
        entropy_ok &= back == blocks && encode_levels(&back) == bytes;
    }
    let mut wire_ok = true;
    for k in 0..300u32 {
        let kind = [MessageKind::Frame, MessageKind::Ack, MessageKind::End][k as usize % 3];
        let payload = if kind == MessageKind::Frame { (0..rng.random_range(0..500)).map(|_| rng.random()).collect() } else { vec![] };
        let m = WireMessage { kind, frame_id: rng.random(), ts_us: rng.random(), payload };
        let b = m.to_bytes();
        wire_ok &= WireMessage::from_bytes(&b).map(|x| x.to_bytes() == b).unwrap_or(false);
    }
    let s00 = PolynomialModel::reference_2022().eval_size(0.0, 0.0);
    let rc = RewardConfig::default();
    let r_below = env::reward(&rc, 5.0, 0.2541, 0.5, 0.5, 1.0).value;
    let r_above = env::reward(&rc, 5.0, 0.2541, 0.1, 0.9, 9.0).value;
    let codec_ok = {
        let f = &harness::load_frames(&RunConfig::default()).unwrap().frames()[0].clone();
        let ef = encode_frame(f, f.roi, 100).unwrap();
        codec::EncodedFrame::from_bytes(&ef.to_bytes()).unwrap() == ef
    };
    outcome(
        dct_err < 0.5 && entropy_ok && wire_ok && codec_ok && s00 == 62_560.0 && r_below == 4.0 && r_above == 1.0,
        format!(
            "DCT max err {dct_err:.2e}; entropy round-trip {entropy_ok}; wire round-trip {wire_ok}; container round-trip {codec_ok}; S(0,0)={s00}; reward {r_below} / {r_above}"
        ),
    )
}

fn stream_session(cfg: &RunConfig, policy: StreamPolicy, n: usize) -> stream::SessionLog {
    let frames = Arc::new(harness::load_frames(cfg).unwrap());
    let trace = harness::load_trace(cfg).unwrap();
    let listener = stream::bind_receiver("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let rx = thread::spawn(move || stream::serve_receiver(&listener).unwrap());
    let opts = SenderOptions { pace: true, n_frames: Some(n), trace_offset: 0 };
    let log = stream::run_sender(addr, frames, &trace, &policy, &opts).unwrap();
    let recv = rx.join().unwrap();
    assert_eq!(recv.records.len(), log.records.len());
    log
}

fn c7_stream(tr: &Trained) -> Outcome {
    let t = Instant::now();
    let n = 32;
    let pol = StreamPolicy::Trained { policy: Arc::new(tr.policy.clone()), bounds: tr.cfg.env.bounds };
    let p = stream_session(&tr.cfg, pol, n);
    let h = stream_session(&tr.cfg, StreamPolicy::Fixed(presets::HIGH), n);
    let s = stream::summarize(&p.records, Some(&h.records)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        s.mean_delay_s < s.baseline_mean_delay_s.unwrap() && secs < 300.0,
        format!(
            "paced loopback, {n} frames: policy {:.4}s vs high {:.4}s ({}), {secs:.1}s",
            s.mean_delay_s,
            s.baseline_mean_delay_s.unwrap(),
            s.reduction_text().unwrap()
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn c8_determinism(tr: &Trained) -> Outcome {
    let base = tempfile::tempdir().unwrap();
    let run = |name: &str, k: usize| base.path().join(format!("{name}{k}"));
    let mut checked = Vec::new();
    let ok = std::cell::Cell::new(true);
    let mut compare = |label: &str, a: &Path, b: &Path| {
        let (fa, fb) = (csv_files(a), csv_files(b));
        let same = !fa.is_empty() && fa == fb;
        ok.set(ok.get() && same);
        checked.push(format!("{label}:{}{}", fa.len(), if same { "" } else { "(differs)" }));
    };

    let fit = |k| harness::cmd_fit(&RunConfig { run_dir: Some(run("fit", k)), ..RunConfig::default() }).unwrap();
    fit(0);
    fit(1);
    compare("fit", &run("fit", 0), &run("fit", 1));

    let train_cfg = |k| RunConfig {
        run_dir: Some(run("train", k)),
        sac: SacHyperParams { total_steps: 1_500, ..Default::default() },
        ..RunConfig::default()
    };
    let t0 = harness::cmd_train(&train_cfg(0)).unwrap();
    let t1 = harness::cmd_train(&train_cfg(1)).unwrap();
    compare("train", &run("train", 0), &run("train", 1));
    ok.set(ok.get() && t0.policy == t1.policy);

    let eval = |k| {
        harness::cmd_eval(&RunConfig {
            run_dir: Some(run("eval", k)),
            checkpoint: Some(tr.checkpoint.clone()),
            ..RunConfig::default()
        })
        .unwrap()
    };
    eval(0);
    eval(1);
    compare("eval", &run("eval", 0), &run("eval", 1));

    for k in 0..2 {
        std::fs::create_dir_all(run("trace", k)).unwrap();
        harness::cmd_trace(&RunConfig::default(), &run("trace", k).join("trace.csv")).unwrap();
        harness::cmd_frames(&RunConfig::default(), &run("frames", k)).unwrap();
    }
    compare("trace", &run("trace", 0), &run("trace", 1));
    compare("frames", &run("frames", 0), &run("frames", 1));
    outcome(ok.get(), format!("bitwise-identical CSVs on re-run ({})", checked.join(", ")))
}

fn main() {
    let mut results = Vec::new();
    let mut record = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!(
            "criterion {n} [{name}]: {} ({:.1}s) {}",
            if out.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            out.detail
        );
        results.push(out.pass);
    };

    record(1, "regression quality", &mut c1_regression_quality);
    record(2, "compression trend", &mut c2_compression_trend);
    record(5, "gradient correctness", &mut c5_gradients);
    record(6, "oracle equivalences", &mut c6_oracles);

    let trained = catch_unwind(train_default);
    match &trained {
        Ok(tr) => {
            record(3, "delay improvement", &mut || c3_delay_improvement(tr));
            record(4, "convergence shape", &mut || c4_convergence_shape(tr));
            record(7, "stream harness", &mut || c7_stream(tr));
            record(8, "determinism", &mut || c8_determinism(tr));
        }
        Err(_) => {
            for (n, name) in [(3, "delay improvement"), (4, "convergence shape"), (7, "stream harness"), (8, "determinism")] {
                record(n, name, &mut || outcome(false, "default training run failed".into()));
            }
        }
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

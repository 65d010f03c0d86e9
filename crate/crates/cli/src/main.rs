use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use roi_adapt::harness::{self, PolicyChoice, RunConfig};
use roi_adapt::stream::{self, SenderOptions};

#[derive(Parser)]
#[command(name = "roi-adapt", version, about = "Throughput-adaptive ROI frame compression")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set sac.total_steps=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Write outputs here instead of a timestamped directory.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample random encodes and fit the frame-size surface.
    Fit,
    /// Train a policy.
    Train,
    /// Compare a checkpoint against the fixed presets.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render charts from CSV files.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write the configured throughput trace as CSV.
    Trace {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured frames as PNGs plus annotations.
    Frames {
        #[arg(long)]
        out: PathBuf,
    },
    /// Loopback/TCP streaming experiment.
    #[command(subcommand)]
    Stream(StreamCommand),
    /// Print the effective configuration.
    Config,
}

#[derive(Subcommand)]
enum StreamCommand {
    /// Receive one session and write its delay log.
    Recv {
        #[arg(long)]
        bind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream frames under a trace with a policy or preset.
    Send {
        #[arg(long)]
        to: String,
        /// Checkpoint path, `low` or `high`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Throttle writes to the trace throughput.
        #[arg(long)]
        pace: bool,
        #[arg(long)]
        n_frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise a delay log, optionally against a baseline log.
    Summarize {
        log: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn config(g: &Global) -> Result<RunConfig> {
    let base = match &g.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&g.overrides)?;
    if g.run_dir.is_some() {
        cfg.run_dir = g.run_dir.clone();
    }
    Ok(cfg)
}

fn read_log(p: &PathBuf) -> Result<Vec<stream::DelayRecord>> {
    let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    Ok(stream::read_delay_csv(f)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = config(&cli.global)?;
    match cli.command {
        Command::Fit => {
            let r = harness::cmd_fit(&cfg)?;
            println!("samples: {}", r.samples);
            println!("r_squared: {:.6}", r.model.r_squared);
            println!("model: {}", r.model_path.display());
        }
        Command::Train => {
            let r = harness::cmd_train(&cfg)?;
            let last: Vec<f64> = r.curve.iter().rev().take(10).map(|c| c.reward).collect();
            println!("episodes: {}", r.curve.len());
            if !last.is_empty() {
                println!("last-10 mean episode reward: {:.4}", last.iter().sum::<f64>() / last.len() as f64);
            }
            println!("checkpoint: {}", r.checkpoint.display());
        }
        Command::Eval { checkpoint } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            let r = harness::cmd_eval(&cfg)?;
            println!("{}", harness::PRESET_NOTE);
            println!("{:<8} {:>6} {:>12} {:>9} {:>12} {:>10}", "policy", "steps", "delay_s", "ssim", "reward", "vs_high_%");
            for s in &r.summaries {
                println!(
                    "{:<8} {:>6} {:>12.6} {:>9.4} {:>12.4} {:>10.2}",
                    s.policy, s.steps, s.mean_delay_s, s.mean_ssim, s.mean_reward, s.delay_vs_high_pct
                );
            }
            println!("outputs: {}", r.run_dir.display());
        }
        Command::Report { out, inputs } => {
            for f in harness::cmd_report(&inputs, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Trace { out } => {
            let t = harness::cmd_trace(&cfg, &out)?;
            println!("{} samples, {:.4}..{:.4} Mb/s -> {}", t.len(), t.min(), t.max(), out.display());
        }
        Command::Frames { out } => {
            let s = harness::cmd_frames(&cfg, &out)?;
            println!("{} frames -> {}", s.len(), out.display());
        }
        Command::Config => println!("{}", serde_json::to_string_pretty(&cfg)?),
        Command::Stream(StreamCommand::Recv { bind, out }) => {
            let log = harness::cmd_stream_recv(&bind, &out)?;
            println!("received {} frames -> {}", log.records.len(), out.display());
            if let Some(e) = log.error {
                bail!("session ended with error: {e}");
            }
        }
        Command::Stream(StreamCommand::Send { to, policy, frames, trace, pace, n_frames, out }) => {
            if frames.is_some() {
                cfg.frames.dir = frames;
            }
            if trace.is_some() {
                cfg.trace.path = trace;
            }
            let choice = PolicyChoice::parse(&policy, cfg.eval.random_seed)?;
            let opts = SenderOptions { pace, n_frames, trace_offset: 0 };
            let log = harness::cmd_stream_send(&cfg, &to, &choice, &opts, &out)?;
            let s = stream::summarize(&log.records, None)?;
            println!("sent {} frames, mean delay {:.6} s -> {}", s.frames, s.mean_delay_s, out.display());
        }
        Command::Stream(StreamCommand::Summarize { log, baseline }) => {
            let recs = read_log(&log)?;
            let base = baseline.as_ref().map(read_log).transpose()?;
            let s = stream::summarize(&recs, base.as_deref())?;
            println!("frames: {}", s.frames);
            println!("mean delay: {:.6} s", s.mean_delay_s);
            println!("median delay: {:.6} s", s.median_delay_s);
            println!("p95 delay: {:.6} s", s.p95_delay_s);
            if let Some(q) = s.mean_ssim {
                println!("mean ssim: {q:.4}");
            }
            if let Some(t) = s.reduction_text() {
                println!("vs baseline: {t}");
            }
        }
    }
    Ok(())
}

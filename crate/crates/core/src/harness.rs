//! End-to-end pipelines behind the command line: size-model fitting,
//! training, policy evaluation, chart rendering, and the trace, frame and
//! stream utilities.
//!
//! Every CSV starts with a `# config_hash=... seeds=...` line. The hash
//! covers the whole configuration except output locations, so two runs with
//! equal hashes write identical CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{self, DatasetError, FrameSet, LoadOptions};
use crate::env::{self, presets, Action, EnvConfig, EnvError, EpisodeLogRow, QualityCache, RoiEnv, SizeMode};
use crate::par::{self, Exec};
use crate::sac::{self, SacError, SacHyperParams, TrainedPolicy};
use crate::sizemodel::{self, PolynomialModel, SizeModelError};
use crate::stream::{self, SenderOptions, StreamError, StreamPolicy};
use crate::svg::{BarChart, ChartError, LineChart, Series};
use crate::traces::{self, ThroughputTrace, TraceError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    SizeModel(#[from] SizeModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FramesConfig {
    /// Image directory; synthetic frames are generated when absent.
    pub dir: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub chroma: bool,
    pub synth_seed: u64,
    pub synth_count: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for FramesConfig {
    fn default() -> Self {
        FramesConfig { dir: None, annotations: None, chroma: false, synth_seed: 1, synth_count: 16, width: 256, height: 192 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Trace CSV; a synthetic trace is generated when absent.
    pub path: Option<PathBuf>,
    pub synth_seed: u64,
    pub length: usize,
    pub min_mbps: f64,
    pub max_mbps: f64,
    pub step_sigma: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            path: None,
            synth_seed: 1,
            length: 600,
            min_mbps: traces::DEFAULT_MIN_MBPS,
            max_mbps: traces::DEFAULT_MAX_MBPS,
            step_sigma: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { samples: 500, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Episodes per policy; `None` covers the trace once.
    pub episodes: Option<usize>,
    pub size_mode: SizeMode,
    pub random_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes: None, size_mode: SizeMode::Measured, random_seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub frames: FramesConfig,
    pub trace: TraceConfig,
    /// Fitted size model; `train` fits one in place when absent.
    pub model: Option<PathBuf>,
    /// Policy checkpoint for `eval` and `stream send`.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Fixed run directory instead of a timestamped one under `output_dir`.
    pub run_dir: Option<PathBuf>,
    pub fit: FitConfig,
    pub env: EnvConfig,
    pub sac: SacHyperParams,
    pub eval: EvalConfig,
    /// Fan independent encodes out over threads.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frames: FramesConfig::default(),
            trace: TraceConfig::default(),
            model: None,
            checkpoint: None,
            output_dir: PathBuf::from("runs"),
            run_dir: None,
            fit: FitConfig::default(),
            env: EnvConfig::default(),
            sac: SacHyperParams::default(),
            eval: EvalConfig::default(),
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON and fall
    /// back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override '{o}' is not key=value")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut cur = &mut v;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, p) in parts.iter().enumerate() {
                let obj = cur
                    .as_object_mut()
                    .ok_or_else(|| HarnessError::Config(format!("'{key}': '{p}' is not inside an object")))?;
                if !obj.contains_key(*p) {
                    return Err(HarnessError::Config(format!("unknown config key '{key}'")));
                }
                if i + 1 == parts.len() {
                    obj.insert(p.to_string(), parsed.clone());
                    break;
                }
                cur = obj.get_mut(*p).unwrap();
            }
        }
        serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Checks that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        let check = |p: &Option<PathBuf>, what: &str| match p {
            Some(p) if !p.exists() => Err(HarnessError::Config(format!("{what} '{}' does not exist", p.display()))),
            _ => Ok(()),
        };
        check(&self.frames.dir, "frames.dir")?;
        check(&self.frames.annotations, "frames.annotations")?;
        if self.frames.dir.is_some() && self.frames.annotations.is_none() {
            let ann = self.frames.dir.as_ref().unwrap().join("annotations.csv");
            if !ann.exists() {
                return Err(HarnessError::Config("frames.dir given without annotations".into()));
            }
        }
        check(&self.trace.path, "trace.path")?;
        check(&self.model, "model")?;
        check(&self.checkpoint, "checkpoint")?;
        self.sac.validate()?;
        Ok(())
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    /// SHA-256 over the configuration with output locations blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.run_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn seeds_text(&self) -> String {
        format!(
            "frames:{},trace:{},fit:{},sac:{},eval:{}",
            self.frames.synth_seed, self.trace.synth_seed, self.fit.seed, self.sac.seed, self.eval.random_seed
        )
    }

    /// First line of every CSV artifact.
    pub fn provenance(&self) -> String {
        format!("config_hash={} seeds={}", self.hash(), self.seeds_text())
    }

    /// Creates the run directory for `command`.
    pub fn prepare_run_dir(&self, command: &str) -> Result<PathBuf> {
        let dir = match &self.run_dir {
            Some(d) => d.clone(),
            None => {
                let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
                let base = self.output_dir.join(format!("{stamp}-{command}"));
                let mut dir = base.clone();
                let mut k = 1;
                while dir.exists() {
                    dir = PathBuf::from(format!("{}-{k}", base.display()));
                    k += 1;
                }
                dir
            }
        };
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(dir)
    }
}

pub fn load_frames(cfg: &RunConfig) -> Result<FrameSet> {
    let f = &cfg.frames;
    match &f.dir {
        Some(dir) => {
            let ann = f.annotations.clone().unwrap_or_else(|| dir.join("annotations.csv"));
            Ok(dataset::load_frames(dir, &ann, LoadOptions { chroma: f.chroma })?)
        }
        None => Ok(dataset::synth_frames(f.synth_seed, f.synth_count, f.width, f.height)?),
    }
}

pub fn load_trace(cfg: &RunConfig) -> Result<ThroughputTrace> {
    let t = &cfg.trace;
    match &t.path {
        Some(p) => Ok(traces::load_trace(p)?),
        None => Ok(traces::synth_trace(t.synth_seed, t.length, t.min_mbps, t.max_mbps, t.step_sigma)?),
    }
}

fn write_with_comment(path: &Path, comment: &str, body: &[u8]) -> Result<()> {
    let mut out = format!("# {comment}\n").into_bytes();
    out.extend_from_slice(body);
    std::fs::write(path, out)?;
    Ok(())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub run_dir: PathBuf,
    pub model: PolynomialModel,
    pub model_path: PathBuf,
    pub samples: usize,
}

/// Encodes `fit.samples` random (ROI growth, QF) draws over the frame set,
/// fits the size surface and writes `samples.csv`, `model.json` and
/// `fit.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let frames = load_frames(cfg)?;
    let run_dir = cfg.prepare_run_dir("fit")?;
    let (model, n) = fit_into(cfg, &frames, &run_dir)?;
    Ok(FitOutcome { model_path: run_dir.join("model.json"), run_dir, model, samples: n })
}

fn fit_into(cfg: &RunConfig, frames: &FrameSet, dir: &Path) -> Result<(PolynomialModel, usize)> {
    let samples = env::sample_sizes(frames, cfg.fit.samples, cfg.fit.seed, cfg.exec())?;
    let mut body = Vec::new();
    sizemodel::write_samples_csv(&mut body, &samples)?;
    write_with_comment(&dir.join("samples.csv"), &cfg.provenance(), &body)?;
    let model = sizemodel::fit_polynomial(&samples)?;
    model.save_json(&dir.join("model.json"))?;
    let report = serde_json::json!({
        "r_squared": model.r_squared,
        "samples": samples.len(),
        "x_semantics": model.x_semantics,
        "config_hash": cfg.hash(),
    });
    std::fs::write(dir.join("fit.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok((model, samples.len()))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: Vec<sac::CurvePoint>,
    pub policy: TrainedPolicy,
}

pub fn bounds_vec(b: &env::NormBounds) -> Vec<(f64, f64)> {
    vec![b.delay, b.quality, b.throughput]
}

fn model_for(cfg: &RunConfig, frames: &FrameSet, dir: &Path) -> Result<Option<Arc<PolynomialModel>>> {
    match (&cfg.model, cfg.env.size_mode) {
        (Some(p), _) => Ok(Some(Arc::new(PolynomialModel::load_json(p)?))),
        (None, SizeMode::Regression) => Ok(Some(Arc::new(fit_into(cfg, frames, dir)?.0))),
        (None, SizeMode::Measured) => Ok(None),
    }
}

/// Trains a policy and writes `policy.json`, `curve.csv` and `curve.svg`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let frames = Arc::new(load_frames(cfg)?);
    let trace = Arc::new(load_trace(cfg)?);
    let run_dir = cfg.prepare_run_dir("train")?;
    let model = model_for(cfg, &frames, &run_dir)?;
    let cache = match cfg.env.size_mode {
        SizeMode::Regression => Some(Arc::new(QualityCache::build(&frames, cfg.exec())?)),
        SizeMode::Measured => None,
    };
    let mut env = RoiEnv::with_cache(frames, trace, model, cache, cfg.env.clone())?;
    let out = sac::train(&mut env, &cfg.sac)?;
    let policy = out.agent.trained_policy(bounds_vec(&cfg.env.bounds));
    let checkpoint = run_dir.join("policy.json");
    policy.save(&checkpoint)?;
    let mut body = Vec::new();
    sac::write_curve_csv(&out.curve, Some(&cfg.provenance()), &mut body)?;
    std::fs::write(run_dir.join("curve.csv"), body)?;
    let pts = |f: &dyn Fn(&sac::CurvePoint) -> Option<f64>| -> Vec<(f64, f64)> {
        out.curve.iter().filter_map(|c| f(c).map(|v| (c.episode as f64, v))).collect()
    };
    let mut chart = LineChart::new("Episode reward", "episode", "reward")
        .with(Series::new("behaviour", pts(&|c| Some(c.reward))));
    if cfg.sac.greedy_eval {
        chart = chart.with(Series::new("deterministic", pts(&|c| c.greedy_reward)));
    }
    std::fs::write(run_dir.join("curve.svg"), chart.render()?)?;
    Ok(TrainReport { run_dir, checkpoint, curve: out.curve, policy })
}

/// A policy to replay.
#[derive(Debug, Clone)]
pub enum PolicyChoice {
    Checkpoint(Arc<TrainedPolicy>),
    Low,
    High,
    Random(u64),
}

impl PolicyChoice {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyChoice::Checkpoint(_) => "policy",
            PolicyChoice::Low => "low",
            PolicyChoice::High => "high",
            PolicyChoice::Random(_) => "random",
        }
    }

    /// `low`, `high`, `random`, or a checkpoint path.
    pub fn parse(s: &str, random_seed: u64) -> Result<Self> {
        match s {
            "low" => Ok(PolicyChoice::Low),
            "high" => Ok(PolicyChoice::High),
            "random" => Ok(PolicyChoice::Random(random_seed)),
            path => Ok(PolicyChoice::Checkpoint(Arc::new(TrainedPolicy::load(Path::new(path))?))),
        }
    }

    pub fn to_stream_policy(&self, bounds: env::NormBounds) -> Result<StreamPolicy> {
        match self {
            PolicyChoice::Checkpoint(p) => Ok(StreamPolicy::Trained { policy: p.clone(), bounds }),
            PolicyChoice::Low => Ok(StreamPolicy::Fixed(presets::LOW)),
            PolicyChoice::High => Ok(StreamPolicy::Fixed(presets::HIGH)),
            PolicyChoice::Random(_) => Err(HarnessError::Config("random policy is not available for streaming".into())),
        }
    }
}

pub const PRESET_NOTE: &str = "presets: low=(0,0,0) original ROI at qf 1; high=(1,1,1) full-frame ROI at qf 100; random=uniform actions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub steps: usize,
    pub mean_delay_s: f64,
    pub mean_ssim: f64,
    pub mean_reward: f64,
    pub delay_vs_high_pct: f64,
    pub delay_vs_low_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormalizedRow {
    step: usize,
    throughput: f64,
    delay: f64,
    quality: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub run_dir: PathBuf,
    pub summaries: Vec<PolicySummary>,
    pub series: BTreeMap<String, Vec<EpisodeLogRow>>,
    pub bounds: env::NormBounds,
}

impl EvalReport {
    pub fn get(&self, policy: &str) -> Option<&PolicySummary> {
        self.summaries.iter().find(|s| s.policy == policy)
    }
}

/// Replays `episodes` episodes of `policy`; episode `e` starts the trace at
/// `e · episode_len`, as in training.
pub fn replay(env: &mut RoiEnv, policy: &PolicyChoice, episodes: usize) -> Result<Vec<EpisodeLogRow>> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(match policy {
        PolicyChoice::Random(s) => *s,
        _ => 0,
    });
    let len = env.episode_len();
    for e in 0..episodes {
        let mut s = env.reset_at(e * len)?;
        loop {
            let a = match policy {
                PolicyChoice::Checkpoint(p) => Action::from_squashed(&p.act(&s.normalized)),
                PolicyChoice::Low => presets::LOW,
                PolicyChoice::High => presets::HIGH,
                PolicyChoice::Random(_) => Action::new(rng.random(), rng.random(), rng.random()),
            };
            let out = env.step(a)?;
            rows.push(EpisodeLogRow::from_outcome(rows.len(), &out));
            s = out.next_state;
            if out.done {
                break;
            }
        }
    }
    Ok(rows)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Replays the checkpoint (when configured) and the fixed presets over the
/// same frames and trace, and writes per-policy series, normalised series,
/// charts and a summary table.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut policies = Vec::new();
    if let Some(p) = &cfg.checkpoint {
        let tp = TrainedPolicy::load(p)?;
        if tp.state_bounds != bounds_vec(&cfg.env.bounds) {
            return Err(HarnessError::Config(format!(
                "checkpoint was trained with state bounds {:?}, config has {:?}",
                tp.state_bounds,
                bounds_vec(&cfg.env.bounds)
            )));
        }
        policies.push(PolicyChoice::Checkpoint(Arc::new(tp)));
    }
    policies.extend([PolicyChoice::Low, PolicyChoice::High, PolicyChoice::Random(cfg.eval.random_seed)]);
    eval_policies(cfg, &policies)
}

pub fn eval_policies(cfg: &RunConfig, policies: &[PolicyChoice]) -> Result<EvalReport> {
    let frames = Arc::new(load_frames(cfg)?);
    let trace = Arc::new(load_trace(cfg)?);
    let run_dir = cfg.prepare_run_dir("eval")?;
    let env_cfg = EnvConfig { size_mode: cfg.eval.size_mode, ..cfg.env.clone() };
    let model = match env_cfg.size_mode {
        SizeMode::Regression => model_for(&RunConfig { env: env_cfg.clone(), ..cfg.clone() }, &frames, &run_dir)?,
        SizeMode::Measured => None,
    };
    let cache = match env_cfg.size_mode {
        SizeMode::Regression => Some(Arc::new(QualityCache::build(&frames, cfg.exec())?)),
        SizeMode::Measured => None,
    };
    let base = RoiEnv::with_cache(frames, trace.clone(), model, cache, env_cfg)?;
    let episodes = cfg.eval.episodes.unwrap_or_else(|| trace.len().div_ceil(base.episode_len()));

    let results = par::map(cfg.exec(), policies, |p| replay(&mut base.clone(), p, episodes));
    let mut series = BTreeMap::new();
    for (p, r) in policies.iter().zip(results) {
        series.insert(p.name().to_string(), r?);
    }
    let mean_delay = |name: &str| series.get(name).map(|rows: &Vec<EpisodeLogRow>| mean(rows.iter().map(|r| r.delay_s)));
    let (high, low) = (mean_delay("high").unwrap_or(f64::NAN), mean_delay("low").unwrap_or(f64::NAN));
    let prov = cfg.provenance();
    let b = cfg.env.bounds;
    let header = format!(
        "{prov}\n# {PRESET_NOTE}\n# bounds: delay=[{},{}] quality=[{},{}] throughput=[{},{}]; size_mode={:?}; episodes={episodes}\n# reward={:?} threshold={} Mb/s; ssim over the full frame (luma)",
        b.delay.0,
        b.delay.1,
        b.quality.0,
        b.quality.1,
        b.throughput.0,
        b.throughput.1,
        cfg.eval.size_mode,
        cfg.env.reward.preset,
        base.threshold()
    );

    let mut summaries = Vec::new();
    let mut delay_chart = LineChart::new("Per-frame delay", "step", "delay (s)");
    for p in policies {
        let name = p.name();
        let rows = &series[name];
        write_with_comment(&run_dir.join(format!("series_{name}.csv")), &header, &csv_bytes(rows)?)?;
        let norm: Vec<NormalizedRow> = rows
            .iter()
            .map(|r| {
                let [d, q, t] = b.normalize(r.delay_s, r.ssim, r.throughput_mbps);
                NormalizedRow { step: r.step, throughput: t, delay: d, quality: q }
            })
            .collect();
        write_with_comment(&run_dir.join(format!("normalized_{name}.csv")), &header, &csv_bytes(&norm)?)?;
        let tdq = LineChart::new(format!("Throughput, delay and quality ({name})"), "step", "normalised value")
            .with(Series::indexed("throughput", &norm.iter().map(|r| r.throughput).collect::<Vec<_>>()))
            .with(Series::indexed("delay", &norm.iter().map(|r| r.delay).collect::<Vec<_>>()))
            .with(Series::indexed("quality", &norm.iter().map(|r| r.quality).collect::<Vec<_>>()));
        std::fs::write(run_dir.join(format!("tdq_{name}.svg")), tdq.render()?)?;
        delay_chart = delay_chart.with(Series::indexed(name, &rows.iter().map(|r| r.delay_s).collect::<Vec<_>>()));
        let md = mean(rows.iter().map(|r| r.delay_s));
        summaries.push(PolicySummary {
            policy: name.to_string(),
            steps: rows.len(),
            mean_delay_s: md,
            mean_ssim: mean(rows.iter().map(|r| r.ssim)),
            mean_reward: mean(rows.iter().map(|r| r.reward)),
            delay_vs_high_pct: stream::percent_reduction(high, md),
            delay_vs_low_pct: stream::percent_reduction(low, md),
        });
    }
    std::fs::write(run_dir.join("delay.svg"), delay_chart.render()?)?;
    let bars = |f: fn(&PolicySummary) -> f64| summaries.iter().map(|s| (s.policy.clone(), f(s))).collect();
    std::fs::write(run_dir.join("quality.svg"), BarChart::new("Mean SSIM", "SSIM", bars(|s| s.mean_ssim)).render()?)?;
    std::fs::write(run_dir.join("delay_bars.svg"), BarChart::new("Mean delay", "delay (s)", bars(|s| s.mean_delay_s)).render()?)?;
    write_with_comment(&run_dir.join("summary.csv"), &header, &csv_bytes(&summaries)?)?;
    Ok(EvalReport { run_dir, summaries, series, bounds: b })
}

/// Renders one line chart per numeric column of each CSV into `out_dir`.
/// The `step` column, when present, is the x axis.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(HarnessError::Input("no input CSVs".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for path in inputs {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len()];
        for rec in rd.records() {
            let rec = rec?;
            for (i, v) in rec.iter().enumerate().take(headers.len()) {
                cols[i].push(v.trim().parse::<f64>().ok());
            }
        }
        let n = cols.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(HarnessError::Input(format!("{}: no data rows", path.display())));
        }
        let xcol = headers.iter().position(|h| h == "step");
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("chart");
        for (i, h) in headers.iter().enumerate() {
            if Some(i) == xcol || cols[i].iter().any(Option::is_none) {
                continue;
            }
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|r| (xcol.and_then(|x| cols[x][r]).unwrap_or(r as f64), cols[i][r].unwrap()))
                .collect();
            let chart = LineChart::new(format!("{stem}: {h}"), xcol.map_or("row", |_| "step"), h.as_str())
                .with(Series::new(h.as_str(), pts));
            let out = out_dir.join(format!("{stem}_{h}.svg"));
            std::fs::write(&out, chart.render()?)?;
            written.push(out);
        }
    }
    Ok(written)
}

/// Writes the configured (synthetic or loaded) trace to `out`.
pub fn cmd_trace(cfg: &RunConfig, out: &Path) -> Result<ThroughputTrace> {
    let t = load_trace(cfg)?;
    let mut body = Vec::new();
    t.write_csv(&mut body)?;
    write_with_comment(out, &cfg.provenance(), &body)?;
    Ok(t)
}

/// Writes the configured frames as PNGs plus `annotations.csv` into `dir`.
pub fn cmd_frames(cfg: &RunConfig, dir: &Path) -> Result<FrameSet> {
    let set = load_frames(cfg)?;
    dataset::write_frames(&set, dir)?;
    Ok(set)
}

pub fn cmd_stream_recv(bind: &str, out: &Path) -> Result<stream::SessionLog> {
    let listener = stream::bind_receiver(bind)?;
    let log = stream::serve_receiver(&listener)?;
    log.save(out, None)?;
    Ok(log)
}

pub fn cmd_stream_send(cfg: &RunConfig, to: &str, policy: &PolicyChoice, opts: &SenderOptions, out: &Path) -> Result<stream::SessionLog> {
    cfg.validate()?;
    let frames = Arc::new(load_frames(cfg)?);
    let trace = load_trace(cfg)?;
    let sp = policy.to_stream_policy(cfg.env.bounds)?;
    let comment = format!("{} policy={}", cfg.provenance(), policy.name());
    match stream::run_sender(to, frames, &trace, &sp, opts) {
        Ok(log) => {
            log.save(out, Some(&comment))?;
            Ok(log)
        }
        Err(e) => {
            let mut partial = e.partial.clone();
            partial.error = Some(e.source.to_string());
            partial.save(out, Some(&comment))?;
            Err(e.source.into())
        }
    }
}

//! Per-frame decision process.
//!
//! Each step takes one frame. The action grows the original ROI toward the
//! full frame and picks the background quality factor; the environment
//! returns the resulting delay, SSIM and reward, and the next state
//! `{delay, quality, throughput}`. Delay and quality in the state are the
//! previous step's values; throughput is the current step's.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, Frame, RoiBox};
use crate::dataset::FrameSet;
use crate::par::{self, Exec};
use crate::quality::{self, QualityError};
use crate::sac::{EnvStep, Environment};
use crate::sizemodel::{self, PolynomialModel, SizeModelError, SizeSample};
use crate::traces::ThroughputTrace;

/// Threshold constant printed in the original reward definition. Its unit is
/// not stated; it is only reachable with traces expressed in that unit.
pub const LITERAL_REWARD_THRESHOLD: f64 = 103_076.0;

/// QF grid for the regression-mode quality lookup.
pub const QUALITY_GRID: [u8; 11] = [1, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished after {0} steps; call reset")]
    Exhausted(usize),
    #[error("regression size mode needs a fitted size model")]
    MissingModel,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    SizeModel(#[from] SizeModelError),
}

/// Normalized action: ROI growth along x and y, and background quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub x_grow: f64,
    pub y_grow: f64,
    pub qf_norm: f64,
}

impl Action {
    /// Clamps each component into `[0, 1]`; NaN maps to 0.
    pub fn new(x_grow: f64, y_grow: f64, qf_norm: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Action { x_grow: c(x_grow), y_grow: c(y_grow), qf_norm: c(qf_norm) }
    }

    /// Maps a squashed policy output in `[-1, 1]³` onto `[0, 1]³`.
    pub fn from_squashed(a: &[f64]) -> Self {
        Action::new((a[0] + 1.0) / 2.0, (a[1] + 1.0) / 2.0, (a[2] + 1.0) / 2.0)
    }

    pub fn to_squashed(&self) -> [f64; 3] {
        [2.0 * self.x_grow - 1.0, 2.0 * self.y_grow - 1.0, 2.0 * self.qf_norm - 1.0]
    }
}

/// Fixed comparison presets.
pub mod presets {
    use super::Action;

    /// Original ROI, lowest background quality.
    pub const LOW: Action = Action { x_grow: 0.0, y_grow: 0.0, qf_norm: 0.0 };
    /// Full-frame ROI at QF 100, i.e. the frame sent losslessly.
    pub const HIGH: Action = Action { x_grow: 1.0, y_grow: 1.0, qf_norm: 1.0 };
}

/// Grows `roi` by the action's fractions of the remaining frame extent,
/// centred on the ROI and shifted back inside the frame, then snapped
/// outward to the 8-pixel grid. QF is `max(1, round(100·qf_norm))`.
pub fn apply_action(roi: RoiBox, width: usize, height: usize, a: Action) -> (RoiBox, u8) {
    let grow = |start: usize, len: usize, full: usize, g: f64| -> (f64, f64) {
        let new_len = len as f64 + g * (full - len) as f64;
        let centre = start as f64 + len as f64 / 2.0;
        let lo = (centre - new_len / 2.0).clamp(0.0, full as f64 - new_len);
        (lo, lo + new_len)
    };
    let (x0, x1) = grow(roi.x0, roi.w, width, a.x_grow);
    let (y0, y1) = grow(roi.y0, roi.h, height, a.y_grow);
    let sx0 = (x0 / 8.0).floor() as usize * 8;
    let sy0 = (y0 / 8.0).floor() as usize * 8;
    let sx1 = (((x1 / 8.0).ceil() as usize) * 8).min(width);
    let sy1 = (((y1 / 8.0).ceil() as usize) * 8).min(height);
    let qf = ((a.qf_norm * 100.0).round() as i64).clamp(1, 100) as u8;
    (RoiBox::new(sx0, sy0, sx1.saturating_sub(sx0), sy1.saturating_sub(sy0)), qf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeMode {
    /// Encode every step and measure bytes and SSIM.
    Measured,
    /// Predict bytes from the size model and SSIM from a per-frame cache.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardPreset {
    /// `1/γ + 1/λ` below the throughput threshold, `γ + λ` at or above it.
    TwoBranch,
    /// `w_delay·(1 − γ/γ_max) + w_quality·λ`.
    MinDelayMaxQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub preset: RewardPreset,
    /// Branch point in the trace's unit (Mb/s). `None` uses the midpoint of
    /// the trace's observed range.
    pub threshold: Option<f64>,
    pub w_delay: f64,
    pub w_quality: f64,
}

impl RewardConfig {
    /// Two-branch reward with the literal threshold constant.
    pub fn literal_threshold() -> Self {
        RewardConfig { threshold: Some(LITERAL_REWARD_THRESHOLD), ..Self::default() }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { preset: RewardPreset::TwoBranch, threshold: None, w_delay: 0.5, w_quality: 0.5 }
    }
}

/// Both branches of the two-branch reward, kept for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub below: f64,
    pub at_or_above: f64,
    pub value: f64,
}

/// Evaluates the reward for one step.
pub fn reward(cfg: &RewardConfig, threshold: f64, delay_max: f64, delay: f64, quality: f64, throughput: f64) -> RewardBreakdown {
    match cfg.preset {
        RewardPreset::TwoBranch => {
            let below = 1.0 / delay + 1.0 / quality;
            let at_or_above = delay + quality;
            let value = if throughput < threshold { below } else { at_or_above };
            RewardBreakdown { below, at_or_above, value }
        }
        RewardPreset::MinDelayMaxQuality => {
            let v = cfg.w_delay * (1.0 - delay / delay_max) + cfg.w_quality * quality;
            RewardBreakdown { below: v, at_or_above: v, value: v }
        }
    }
}

/// Min-max bounds used to normalise the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormBounds {
    pub delay: (f64, f64),
    pub quality: (f64, f64),
    pub throughput: (f64, f64),
}

impl Default for NormBounds {
    /// Ranges reported for the reference evaluation run.
    fn default() -> Self {
        NormBounds { delay: (0.0791, 0.2541), quality: (0.6144, 0.9839), throughput: (1.7912, 9.5001) }
    }
}

fn minmax(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl NormBounds {
    pub fn normalize(&self, delay: f64, quality: f64, throughput: f64) -> [f64; 3] {
        [minmax(delay, self.delay), minmax(quality, self.quality), minmax(throughput, self.throughput)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub size_mode: SizeMode,
    pub reward: RewardConfig,
    pub bounds: NormBounds,
    /// Steps per episode; `None` means `min(frames, trace length)`.
    pub episode_len: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            size_mode: SizeMode::Regression,
            reward: RewardConfig::default(),
            bounds: NormBounds::default(),
            episode_len: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateObs {
    pub delay: f64,
    pub quality: f64,
    pub throughput: f64,
    pub normalized: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub frame_index: usize,
    pub throughput: f64,
    pub encoded_bytes: u64,
    pub effective_roi: RoiBox,
    pub qf_used: u8,
    pub size_mode: SizeMode,
    pub delay: f64,
    pub quality: f64,
    pub reward: RewardBreakdown,
    /// The size polynomial went below its floor and was clamped.
    pub size_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateObs,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// SSIM at the original ROI on [`QUALITY_GRID`], per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityCache {
    per_frame: Vec<[f64; QUALITY_GRID.len()]>,
}

impl QualityCache {
    pub fn build(frames: &FrameSet, exec: Exec) -> Result<Self, EnvError> {
        let n = frames.len();
        let g = QUALITY_GRID.len();
        let flat = par::map_range(exec, n * g, |k| -> Result<f64, EnvError> {
            let f = frames.get(k / g);
            let ef = codec::encode_frame(f, f.roi, QUALITY_GRID[k % g])?;
            Ok(quality::ssim_frames(f, &codec::decode_frame(&ef)?)?.mean_ssim)
        });
        let mut per_frame = vec![[0.0; QUALITY_GRID.len()]; n];
        for (k, v) in flat.into_iter().enumerate() {
            per_frame[k / g][k % g] = v?;
        }
        Ok(QualityCache { per_frame })
    }

    /// Linearly interpolated SSIM at the original ROI.
    pub fn at_original_roi(&self, frame: usize, qf: u8) -> f64 {
        let row = &self.per_frame[frame];
        let q = qf as f64;
        for i in 1..QUALITY_GRID.len() {
            let (q0, q1) = (QUALITY_GRID[i - 1] as f64, QUALITY_GRID[i] as f64);
            if q <= q1 {
                let t = (q - q0) / (q1 - q0);
                return row[i - 1] + t * (row[i] - row[i - 1]);
            }
        }
        row[QUALITY_GRID.len() - 1]
    }

    /// Estimate for a grown ROI: the SSIM deficit scales with the share of
    /// the frame that is still lossy.
    pub fn estimate(&self, frame_index: usize, frame: &Frame, roi: &RoiBox, qf: u8) -> f64 {
        let base = self.at_original_roi(frame_index, qf);
        let total = frame.area() as f64;
        let lossy0 = total - frame.roi.area() as f64;
        if lossy0 <= 0.0 {
            return 1.0;
        }
        let lossy = (total - roi.area() as f64).max(0.0);
        1.0 - (1.0 - base) * (lossy / lossy0).min(1.0)
    }
}

/// The environment. Frames, trace and model are shared and immutable; the
/// cursors are per instance.
#[derive(Debug, Clone)]
pub struct RoiEnv {
    frames: Arc<FrameSet>,
    trace: Arc<ThroughputTrace>,
    model: Option<Arc<PolynomialModel>>,
    cache: Option<Arc<QualityCache>>,
    config: EnvConfig,
    threshold: f64,
    episode_len: usize,
    bootstrap: (u64, f64),
    cursor: usize,
    trace_offset: usize,
    state: StateObs,
    clamp_count: u64,
}

impl RoiEnv {
    pub fn new(
        frames: Arc<FrameSet>,
        trace: Arc<ThroughputTrace>,
        model: Option<Arc<PolynomialModel>>,
        config: EnvConfig,
    ) -> Result<Self, EnvError> {
        let cache = match config.size_mode {
            SizeMode::Regression => {
                if model.is_none() {
                    return Err(EnvError::MissingModel);
                }
                Some(Arc::new(QualityCache::build(&frames, Exec::default())?))
            }
            SizeMode::Measured => None,
        };
        Self::with_cache(frames, trace, model, cache, config)
    }

    /// Like [`RoiEnv::new`] but reusing a precomputed quality cache.
    pub fn with_cache(
        frames: Arc<FrameSet>,
        trace: Arc<ThroughputTrace>,
        model: Option<Arc<PolynomialModel>>,
        cache: Option<Arc<QualityCache>>,
        config: EnvConfig,
    ) -> Result<Self, EnvError> {
        if config.size_mode == SizeMode::Regression && (model.is_none() || cache.is_none()) {
            return Err(EnvError::MissingModel);
        }
        let episode_len = config.episode_len.unwrap_or(frames.len().min(trace.len()));
        if episode_len == 0 {
            return Err(EnvError::Config("episode length must be positive".into()));
        }
        if episode_len > frames.len() {
            return Err(EnvError::Config(format!(
                "episode length {episode_len} exceeds the {} available frames",
                frames.len()
            )));
        }
        let threshold = config.reward.threshold.unwrap_or_else(|| trace.midpoint());
        let f0 = frames.get(0);
        let ef = codec::encode_frame(f0, f0.roi, 100)?;
        let q0 = quality::ssim_frames(f0, &codec::decode_frame(&ef)?)?.mean_ssim;
        let bootstrap = (ef.serialized_len() as u64, q0);
        let mut env = RoiEnv {
            frames,
            trace,
            model,
            cache,
            config,
            threshold,
            episode_len,
            bootstrap,
            cursor: 0,
            trace_offset: 0,
            state: StateObs { delay: 0.0, quality: 0.0, throughput: 0.0, normalized: [0.0; 3] },
            clamp_count: 0,
        };
        env.reset_at(0)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn frames(&self) -> &Arc<FrameSet> {
        &self.frames
    }

    pub fn trace(&self) -> &Arc<ThroughputTrace> {
        &self.trace
    }

    pub fn state(&self) -> StateObs {
        self.state
    }

    /// Bootstrap encode of frame 0 at its original ROI and QF 100: (bytes, SSIM).
    pub fn bootstrap(&self) -> (u64, f64) {
        self.bootstrap
    }

    /// Number of size-polynomial evaluations that hit the floor.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    fn make_state(&self, delay: f64, quality: f64, throughput: f64) -> StateObs {
        StateObs { delay, quality, throughput, normalized: self.config.bounds.normalize(delay, quality, throughput) }
    }

    /// Resets cursors with the trace starting at sample 0.
    pub fn reset(&mut self) -> Result<StateObs, EnvError> {
        self.reset_at(0)
    }

    /// Resets the frame cursor to 0 and starts the trace at `trace_offset`.
    pub fn reset_at(&mut self, trace_offset: usize) -> Result<StateObs, EnvError> {
        self.cursor = 0;
        self.trace_offset = trace_offset;
        let t0 = self.trace.at(trace_offset);
        let delay = sizemodel::delay_seconds(self.bootstrap.0 as f64, t0)?;
        self.state = self.make_state(delay, self.bootstrap.1, t0);
        Ok(self.state)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.cursor >= self.episode_len {
            return Err(EnvError::Exhausted(self.episode_len));
        }
        let fi = self.cursor;
        let frame = self.frames.get(fi);
        let throughput = self.trace.at(self.trace_offset + self.cursor);
        let (roi, qf) = apply_action(frame.roi, frame.width(), frame.height(), action);

        let (bytes, quality, clamped) = match self.config.size_mode {
            SizeMode::Measured => {
                let ef = codec::encode_frame(frame, roi, qf)?;
                let dec = codec::decode_frame(&ef)?;
                (ef.serialized_len() as f64, quality::ssim_frames(frame, &dec)?.mean_ssim, false)
            }
            SizeMode::Regression => {
                let model = self.model.as_ref().ok_or(EnvError::MissingModel)?;
                let cache = self.cache.as_ref().ok_or(EnvError::MissingModel)?;
                let (s, clamped) = model.eval_size_checked(roi.area() as f64, qf as f64);
                (s, cache.estimate(fi, frame, &roi, qf), clamped)
            }
        };
        if clamped {
            self.clamp_count += 1;
        }
        let delay = sizemodel::delay_seconds(bytes, throughput)?;
        let r = reward(&self.config.reward, self.threshold, self.config.bounds.delay.1, delay, quality, throughput);

        self.cursor += 1;
        let done = self.cursor >= self.episode_len;
        let next_t = self.trace.at(self.trace_offset + self.cursor);
        self.state = self.make_state(delay, quality, next_t);

        Ok(StepOutcome {
            next_state: self.state,
            reward: r.value,
            done,
            info: StepInfo {
                frame_index: fi,
                throughput,
                encoded_bytes: bytes.round() as u64,
                effective_roi: roi,
                qf_used: qf,
                size_mode: self.config.size_mode,
                delay,
                quality,
                reward: r,
                size_clamped: clamped,
            },
        })
    }
}

impl Environment for RoiEnv {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>, String> {
        let offset = episode * self.episode_len;
        self.reset_at(offset).map(|s| s.normalized.to_vec()).map_err(|e| e.to_string())
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep, String> {
        let out = RoiEnv::step(self, Action::from_squashed(action)).map_err(|e| e.to_string())?;
        Ok(EnvStep { next_state: out.next_state.normalized.to_vec(), reward: out.reward, done: out.done })
    }
}

/// One row of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub step: usize,
    pub throughput_mbps: f64,
    pub roi_w: usize,
    pub roi_h: usize,
    pub qf: u8,
    pub bytes: u64,
    pub delay_s: f64,
    pub ssim: f64,
    pub reward: f64,
}

impl EpisodeLogRow {
    pub fn from_outcome(step: usize, out: &StepOutcome) -> Self {
        let i = &out.info;
        EpisodeLogRow {
            step,
            throughput_mbps: i.throughput,
            roi_w: i.effective_roi.w,
            roi_h: i.effective_roi.h,
            qf: i.qf_used,
            bytes: i.encoded_bytes,
            delay_s: i.delay,
            ssim: i.quality,
            reward: out.reward,
        }
    }
}

/// Encodes `n` random (frame, growth, QF) draws and records their sizes.
///
/// Draws are generated sequentially from `seed`; only the encodes fan out,
/// so the result is independent of the execution mode.
pub fn sample_sizes(frames: &FrameSet, n: usize, seed: u64, exec: Exec) -> Result<Vec<SizeSample>, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, Action, u8)> = (0..n)
        .map(|_| {
            let fi = rng.random_range(0..frames.len());
            let a = Action::new(rng.random(), rng.random(), 0.0);
            let qf = rng.random_range(1..=100u8);
            (fi, a, qf)
        })
        .collect();
    par::map(exec, &draws, |&(fi, a, qf)| -> Result<SizeSample, EnvError> {
        let f = frames.get(fi);
        let (roi, _) = apply_action(f.roi, f.width(), f.height(), a);
        let ef = codec::encode_frame(f, roi, qf)?;
        Ok(SizeSample { roi_w: roi.w as u32, roi_h: roi.h as u32, qf, bytes: ef.serialized_len() as u64 })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_frames;
    use crate::sizemodel::fit_polynomial;
    use crate::traces::synth_trace;

    fn small_env(mode: SizeMode) -> RoiEnv {
        let frames = Arc::new(synth_frames(3, 6, 96, 64).unwrap());
        let trace = Arc::new(synth_trace(1, 40, 1.7912, 9.5001, 1.0).unwrap());
        let model = match mode {
            SizeMode::Regression => {
                Some(Arc::new(fit_polynomial(&sample_sizes(&frames, 120, 5, Exec::default()).unwrap()).unwrap()))
            }
            SizeMode::Measured => None,
        };
        RoiEnv::new(frames, trace, model, EnvConfig { size_mode: mode, ..EnvConfig::default() }).unwrap()
    }

    #[test]
    fn identity_growth() {
        let roi = RoiBox::new(16, 8, 32, 24);
        assert_eq!(apply_action(roi, 96, 64, Action::new(0.0, 0.0, 1.0)), (roi, 100));
        assert_eq!(apply_action(roi, 96, 64, Action::new(0.0, 0.0, 0.0)).1, 1);
    }

    #[test]
    fn full_growth_is_full_frame() {
        for roi in [RoiBox::new(0, 0, 8, 8), RoiBox::new(80, 48, 16, 16), RoiBox::new(40, 24, 8, 16)] {
            let (r, _) = apply_action(roi, 96, 64, Action::new(1.0, 1.0, 0.3));
            assert_eq!(r, RoiBox::full(96, 64));
        }
    }

    #[test]
    fn half_growth_geometry() {
        // Independent arithmetic: ROI (16,8,32,24) in 96x64, growth 0.5.
        // w' = 32 + 0.5*(96-32) = 64, centred at x = 32 -> [0, 64]
        // h' = 24 + 0.5*(64-24) = 44, centred at y = 20 -> [-2, 42] -> shifted [0, 44] -> snapped [0, 48]
        let (r, qf) = apply_action(RoiBox::new(16, 8, 32, 24), 96, 64, Action::new(0.5, 0.5, 0.5));
        assert_eq!(r, RoiBox::new(0, 0, 64, 48));
        assert_eq!(qf, 50);
        // interior case: ROI (40,24,16,16), growth 0.5 -> w' = 56 centred 48 -> [20,76] -> [16,80]
        // h' = 40 centred 32 -> [12,52] -> [8,56]
        let (r, _) = apply_action(RoiBox::new(40, 24, 16, 16), 96, 64, Action::new(0.5, 0.5, 0.5));
        assert_eq!(r, RoiBox::new(16, 8, 64, 48));
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let below = reward(&cfg, 5.0, 0.25, 0.5, 0.5, 2.0);
        assert_eq!(below.value, 4.0);
        let above = reward(&cfg, 5.0, 0.25, 0.1, 0.9, 8.0);
        assert_eq!(above.value, 1.0);
        // at the branch point the upper branch applies; both values are kept
        let at = reward(&cfg, 5.0, 0.25, 0.1, 0.9, 5.0);
        assert_eq!(at.value, at.at_or_above);
        assert_eq!(at.below, 1.0 / 0.1 + 1.0 / 0.9);
        let alt = RewardConfig { preset: RewardPreset::MinDelayMaxQuality, ..cfg };
        assert!((reward(&alt, 5.0, 0.25, 0.125, 0.8, 1.0).value - (0.5 * 0.5 + 0.5 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn reset_is_repeatable_and_bootstrapped() {
        let mut env = small_env(SizeMode::Measured);
        let a = env.reset().unwrap();
        env.step(Action::new(0.3, 0.1, 0.2)).unwrap();
        let b = env.reset().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.throughput, env.trace().at(0));
        let (bytes, q) = env.bootstrap();
        assert!((a.delay - bytes as f64 * 8.0 / (a.throughput * 1e6)).abs() < 1e-15);
        assert!(q > 0.9 && q <= 1.0);
        assert!(a.normalized.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn all_roi_bootstrap_has_unit_quality() {
        let base = synth_frames(3, 2, 64, 48).unwrap();
        let frames: Vec<Frame> = base.frames().iter().map(|f| Frame { roi: RoiBox::full(64, 48), ..f.clone() }).collect();
        let set = Arc::new(FrameSet::new(frames, base.origin().clone()).unwrap());
        let trace = Arc::new(crate::traces::ThroughputTrace::constant(4.0, 4).unwrap());
        let cfg = EnvConfig { size_mode: SizeMode::Measured, ..EnvConfig::default() };
        let env = RoiEnv::new(set, trace, None, cfg).unwrap();
        assert_eq!(env.bootstrap().1, 1.0);
    }

    #[test]
    fn fixed_action_episode_replays() {
        let mut env = small_env(SizeMode::Measured);
        env.reset().unwrap();
        let frames = env.frames().clone();
        let trace = env.trace().clone();
        let mut t = 0;
        loop {
            let out = env.step(Action::new(0.0, 0.0, 1.0)).unwrap();
            // standalone replay: encode at the original ROI, QF 100
            let f = frames.get(t);
            let bytes = codec::encode_frame(f, f.roi, 100).unwrap().to_bytes().len() as f64;
            assert_eq!(out.info.delay, bytes * 8.0 / (trace.at(t) * 1e6));
            t += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(t, env.episode_len());
        assert!(matches!(env.step(presets::LOW), Err(EnvError::Exhausted(_))));
    }

    #[test]
    fn state_carries_previous_step() {
        let mut env = small_env(SizeMode::Measured);
        env.reset().unwrap();
        let out = env.step(Action::new(0.2, 0.4, 0.6)).unwrap();
        assert_eq!(out.next_state.delay, out.info.delay);
        assert_eq!(out.next_state.quality, out.info.quality);
        assert_eq!(out.next_state.throughput, env.trace().at(1));
        assert!(out.reward.is_finite() && out.info.encoded_bytes > 0);
    }

    #[test]
    fn quality_nondecreasing_in_qf_measured() {
        let mut env = small_env(SizeMode::Measured);
        let mut prev = 0.0;
        for q in [0.05, 0.3, 0.6, 0.9, 1.0] {
            env.reset().unwrap();
            let out = env.step(Action::new(0.1, 0.1, q)).unwrap();
            assert!(out.info.quality >= prev, "{q}");
            prev = out.info.quality;
        }
    }

    #[test]
    fn regression_mode_needs_model() {
        let frames = Arc::new(synth_frames(3, 2, 64, 48).unwrap());
        let trace = Arc::new(crate::traces::ThroughputTrace::constant(4.0, 4).unwrap());
        assert!(matches!(
            RoiEnv::new(frames, trace, None, EnvConfig::default()),
            Err(EnvError::MissingModel)
        ));
    }

    #[test]
    fn regression_tracks_measured_delay() {
        let frames = Arc::new(synth_frames(8, 10, 128, 96).unwrap());
        let trace = Arc::new(synth_trace(2, 64, 1.7912, 9.5001, 1.0).unwrap());
        let model = Arc::new(fit_polynomial(&sample_sizes(&frames, 300, 1, Exec::default()).unwrap()).unwrap());
        let mk = |mode| {
            RoiEnv::new(
                frames.clone(),
                trace.clone(),
                Some(model.clone()),
                EnvConfig { size_mode: mode, ..EnvConfig::default() },
            )
            .unwrap()
        };
        let (mut meas, mut reg) = (mk(SizeMode::Measured), mk(SizeMode::Regression));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for ep in 0..20 {
            meas.reset_at(ep * 10).unwrap();
            reg.reset_at(ep * 10).unwrap();
            for _ in 0..10 {
                let a = Action::new(rng.random(), rng.random(), rng.random());
                xs.push(meas.step(a).unwrap().info.delay);
                ys.push(reg.step(a).unwrap().info.delay);
            }
        }
        let r = pearson(&xs, &ys);
        assert!(r >= 0.85, "pearson {r}");
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn sample_sizes_mode_independent() {
        let frames = synth_frames(4, 3, 64, 48).unwrap();
        assert_eq!(
            sample_sizes(&frames, 30, 9, Exec::Sequential).unwrap(),
            sample_sizes(&frames, 30, 9, Exec::Parallel).unwrap()
        );
    }
}

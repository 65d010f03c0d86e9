//! Throughput time series.
//!
//! CSV format: `t_seconds,throughput_mbps`, one sample per line. An optional
//! header line and `#` comment lines are accepted.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest throughput in the reference measurement campaign, Mb/s.
pub const DEFAULT_MIN_MBPS: f64 = 1.7912;
/// Highest throughput in the reference measurement campaign, Mb/s.
pub const DEFAULT_MAX_MBPS: f64 = 9.5001;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace is empty")]
    Empty,
    #[error("invalid synthetic bounds: min {min}, max {max}, sigma {sigma}")]
    Bounds { min: f64, max: f64, sigma: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceSource {
    Measured,
    Synthetic { seed: u64, min: f64, max: f64, step_sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputTrace {
    samples: Vec<TraceSample>,
    source: TraceSource,
}

impl ThroughputTrace {
    /// Validates strictly increasing time and positive, finite throughput.
    pub fn new(samples: Vec<TraceSample>, source: TraceSource) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, s) in samples.iter().enumerate() {
            check_sample(s, samples[..i].last(), i + 1)?;
        }
        Ok(ThroughputTrace { samples, source })
    }

    /// A single-valued trace, mostly for tests and fixed-link experiments.
    pub fn constant(mbps: f64, n: usize) -> Result<Self, TraceError> {
        let samples = (0..n).map(|i| TraceSample { t: i as f64, mbps }).collect();
        Self::new(samples, TraceSource::Measured)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn source(&self) -> &TraceSource {
        &self.source
    }

    /// Throughput at `step`, wrapping cyclically past the end.
    pub fn at(&self, step: usize) -> f64 {
        self.samples[step % self.samples.len()].mbps
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().map(|s| s.mbps).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().map(|s| s.mbps).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Midpoint of the observed range.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min() + self.max())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        writeln!(w, "t_seconds,throughput_mbps")?;
        for s in &self.samples {
            writeln!(w, "{},{}", s.t, s.mbps)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

fn check_sample(s: &TraceSample, prev: Option<&TraceSample>, line: usize) -> Result<(), TraceError> {
    if !s.t.is_finite() {
        return Err(TraceError::Parse { line, reason: "non-finite timestamp".into() });
    }
    if !(s.mbps > 0.0) || !s.mbps.is_finite() {
        return Err(TraceError::Parse { line, reason: format!("throughput must be positive, got {}", s.mbps) });
    }
    if let Some(p) = prev {
        if s.t <= p.t {
            return Err(TraceError::Parse {
                line,
                reason: format!("timestamp {} not after previous {}", s.t, p.t),
            });
        }
    }
    Ok(())
}

/// Parses a trace CSV; errors carry the 1-based file line number.
pub fn parse_trace<R: BufRead>(r: R) -> Result<ThroughputTrace, TraceError> {
    let mut samples: Vec<TraceSample> = Vec::new();
    let mut seen_data = false;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(TraceError::Parse { line: line_no, reason: "expected two columns".into() });
        };
        let parsed = (a.parse::<f64>(), b.parse::<f64>());
        let (t, mbps) = match parsed {
            (Ok(t), Ok(m)) => (t, m),
            _ if !seen_data && samples.is_empty() && a.parse::<f64>().is_err() => {
                // header
                seen_data = true;
                continue;
            }
            _ => return Err(TraceError::Parse { line: line_no, reason: format!("unparseable row '{line}'") }),
        };
        seen_data = true;
        let s = TraceSample { t, mbps };
        check_sample(&s, samples.last(), line_no)?;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(ThroughputTrace { samples, source: TraceSource::Measured })
}

pub fn load_trace(path: &Path) -> Result<ThroughputTrace, TraceError> {
    let f = std::fs::File::open(path)?;
    parse_trace(std::io::BufReader::new(f))
}

/// Gaussian random walk reflected into `[min, max]`, one sample per second,
/// starting at the midpoint.
pub fn synth_trace(seed: u64, n: usize, min: f64, max: f64, step_sigma: f64) -> Result<ThroughputTrace, TraceError> {
    if n == 0 {
        return Err(TraceError::Empty);
    }
    if !(min > 0.0) || !(max >= min) || !(step_sigma >= 0.0) || !max.is_finite() || !step_sigma.is_finite() {
        return Err(TraceError::Bounds { min, max, sigma: step_sigma });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = 0.5 * (min + max);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push(TraceSample { t: i as f64, mbps: x });
        let z: f64 = StandardNormal.sample(&mut rng);
        x += step_sigma * z;
        let span = max - min;
        if span == 0.0 {
            x = min;
        } else {
            // fold into [min, max] by reflection
            let period = 2.0 * span;
            let mut r = (x - min).rem_euclid(period);
            if r > span {
                r = period - r;
            }
            x = min + r;
        }
    }
    Ok(ThroughputTrace {
        samples,
        source: TraceSource::Synthetic { seed, min, max, step_sigma },
    })
}

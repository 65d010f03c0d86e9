//! Cubic frame-size surface `S(d, q)` and the delay it implies.
//!
//! The two regressors are the lossless ROI area `d = w·h` in pixels² and the
//! background quality factor `q`. The ten monomials, in coefficient order,
//! are `1, d, q, d², dq, q², d³, d²q, dq², q³`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MONOMIALS: [&str; 10] = ["p00", "p10", "p01", "p20", "p11", "p02", "p30", "p21", "p12", "p03"];

/// Regressor meaning recorded alongside every model.
pub const X_SEMANTICS: &str = "x=roi_area_px2,y=qf";

#[derive(Debug, Error)]
pub enum SizeModelError {
    #[error("need at least 10 samples, got {0}")]
    TooFewSamples(usize),
    #[error("design matrix is rank deficient; no independent contribution from {0:?}")]
    RankDeficient(Vec<&'static str>),
    #[error("sample {index}: {reason}")]
    BadSample { index: usize, reason: String },
    #[error("throughput must be positive, got {0}")]
    Throughput(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSample {
    pub roi_w: u32,
    pub roi_h: u32,
    pub qf: u8,
    pub bytes: u64,
}

impl SizeSample {
    pub fn area(&self) -> f64 {
        self.roi_w as f64 * self.roi_h as f64
    }
}

fn default_floor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub p00: f64,
    pub p10: f64,
    pub p01: f64,
    pub p20: f64,
    pub p11: f64,
    pub p02: f64,
    pub p30: f64,
    pub p21: f64,
    pub p12: f64,
    pub p03: f64,
    pub r_squared: f64,
    pub x_semantics: String,
    pub sample_count: usize,
    /// Lower clamp applied by [`PolynomialModel::eval_size`].
    #[serde(default = "default_floor")]
    pub floor_bytes: f64,
}

impl PolynomialModel {
    pub fn from_coefficients(c: [f64; 10]) -> Self {
        PolynomialModel {
            p00: c[0],
            p10: c[1],
            p01: c[2],
            p20: c[3],
            p11: c[4],
            p02: c[5],
            p30: c[6],
            p21: c[7],
            p12: c[8],
            p03: c[9],
            r_squared: 0.0,
            x_semantics: X_SEMANTICS.to_string(),
            sample_count: 0,
            floor_bytes: default_floor(),
        }
    }

    /// Coefficients reported for the published surgical-video fit
    /// (R² = 0.822). Only meaningful for that corpus.
    pub fn reference_2022() -> Self {
        let mut m = Self::from_coefficients([
            6.256e4, -0.2356, 432.4, 1.412e-6, 0.001398, -8.561, -2.637e-12, -8.87e-9, 6.147e-6, 0.04034,
        ]);
        m.r_squared = 0.822;
        m
    }

    pub fn coefficients(&self) -> [f64; 10] {
        [
            self.p00, self.p10, self.p01, self.p20, self.p11, self.p02, self.p30, self.p21, self.p12, self.p03,
        ]
    }

    /// Raw polynomial value, no clamping.
    pub fn polynomial(&self, d: f64, q: f64) -> f64 {
        let c = self.coefficients();
        monomials(d, q).iter().zip(c).map(|(m, c)| m * c).sum()
    }

    /// Predicted frame size in bytes, clamped below at `floor_bytes`.
    /// The flag reports whether the clamp fired.
    pub fn eval_size_checked(&self, d: f64, q: f64) -> (f64, bool) {
        let s = self.polynomial(d, q);
        if s < self.floor_bytes {
            (self.floor_bytes, true)
        } else {
            (s, false)
        }
    }

    pub fn eval_size(&self, d: f64, q: f64) -> f64 {
        self.eval_size_checked(d, q).0
    }

    /// Delay in seconds to ship `S(d, q)` bytes at `throughput_mbps`.
    pub fn predict_delay(&self, d: f64, q: f64, throughput_mbps: f64) -> Result<f64, SizeModelError> {
        delay_seconds(self.eval_size(d, q), throughput_mbps)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), SizeModelError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, SizeModelError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `bytes · 8 / (throughput · 10⁶)`.
pub fn delay_seconds(bytes: f64, throughput_mbps: f64) -> Result<f64, SizeModelError> {
    if !(throughput_mbps > 0.0) || !throughput_mbps.is_finite() {
        return Err(SizeModelError::Throughput(throughput_mbps));
    }
    Ok(bytes * 8.0 / (throughput_mbps * 1e6))
}

pub fn monomials(d: f64, q: f64) -> [f64; 10] {
    [1.0, d, q, d * d, d * q, q * q, d * d * d, d * d * q, d * q * q, q * q * q]
}

/// Ordinary least squares over the ten monomials.
///
/// Columns are scaled to unit max-magnitude and solved through a thin QR
/// decomposition. Rank is checked by adding columns one at a time; any
/// monomial that does not raise the rank is reported by name.
pub fn fit_polynomial(samples: &[SizeSample]) -> Result<PolynomialModel, SizeModelError> {
    let n = samples.len();
    if n < 10 {
        return Err(SizeModelError::TooFewSamples(n));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.bytes == 0 {
            return Err(SizeModelError::BadSample { index: i, reason: "measured_bytes must be > 0".into() });
        }
        if !(1..=100).contains(&s.qf) {
            return Err(SizeModelError::BadSample { index: i, reason: format!("qf {} outside 1..=100", s.qf) });
        }
    }

    let mut a = DMatrix::<f64>::zeros(n, 10);
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.bytes as f64));
    for (i, s) in samples.iter().enumerate() {
        for (j, m) in monomials(s.area(), s.qf as f64).into_iter().enumerate() {
            a[(i, j)] = m;
        }
    }
    let mut scales = [1.0; 10];
    for (j, scale) in scales.iter_mut().enumerate() {
        let m = a.column(j).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m > 0.0 {
            *scale = m;
            a.column_mut(j).scale_mut(1.0 / m);
        }
    }

    let deficient = deficient_columns(&a);
    if !deficient.is_empty() {
        return Err(SizeModelError::RankDeficient(deficient));
    }

    let qr = a.clone().qr();
    let qty = qr.q().transpose() * &y;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| SizeModelError::RankDeficient(MONOMIALS.to_vec()))?;

    let mut coeffs = [0.0; 10];
    for j in 0..10 {
        coeffs[j] = beta[j] / scales[j];
    }

    let fitted = &a * &beta;
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let mut model = PolynomialModel::from_coefficients(coeffs);
    model.r_squared = r2.clamp(0.0, 1.0);
    model.sample_count = n;
    Ok(model)
}

fn deficient_columns(a: &DMatrix<f64>) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..a.ncols() {
        let mut cols = kept.clone();
        cols.push(j);
        let sub = a.select_columns(cols.iter());
        let sv = sub.singular_values();
        let max = sv.iter().cloned().fold(0.0f64, f64::max);
        let rank = sv.iter().filter(|&&s| s > max * 1e-10 * a.nrows() as f64).count();
        if rank == cols.len() {
            kept.push(j);
        } else {
            out.push(MONOMIALS[j]);
        }
    }
    out
}

pub fn write_samples_csv<W: std::io::Write>(w: W, samples: &[SizeSample]) -> Result<(), SizeModelError> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in samples {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `roi_w,roi_h,qf,bytes` rows; lines starting with `#` are skipped.
pub fn read_samples_csv<R: std::io::Read>(r: R) -> Result<Vec<SizeSample>, SizeModelError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

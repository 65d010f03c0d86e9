//! Windowed structural similarity on luma planes.
//!
//! 11×11 Gaussian window (σ = 1.5) at stride 1 over the valid region,
//! `C1 = (0.01·255)²`, `C2 = (0.03·255)²`, `C3 = C2/2`. Luminance, contrast
//! and structure are computed separately per window; their product is the
//! per-window SSIM and the mean over windows is the score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Frame, Plane};
use crate::par::{self, Exec};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
pub const C3: f64 = C2 / 2.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QualityError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    Mismatch((usize, usize), (usize, usize)),
    #[error("plane {0}x{1} is smaller than the {WINDOW}x{WINDOW} window")]
    TooSmall(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimResult {
    pub mean_ssim: f64,
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// SSIM of two luma planes using the default execution mode.
pub fn ssim(f: &Plane, g: &Plane) -> Result<SsimResult, QualityError> {
    ssim_with(Exec::default(), f, g)
}

/// SSIM between the luma planes of two frames.
pub fn ssim_frames(f: &Frame, g: &Frame) -> Result<SsimResult, QualityError> {
    ssim(&f.luma, &g.luma)
}

pub fn ssim_with(exec: Exec, f: &Plane, g: &Plane) -> Result<SsimResult, QualityError> {
    if (f.width, f.height) != (g.width, g.height) {
        return Err(QualityError::Mismatch((f.width, f.height), (g.width, g.height)));
    }
    let (w, h) = (f.width, f.height);
    if w < WINDOW || h < WINDOW {
        return Err(QualityError::TooSmall(w, h));
    }
    let win = gaussian_window();
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;

    // Horizontal pass: per input row, filtered f, g, f², g², fg.
    let rows: Vec<[Vec<f64>; 5]> = par::map_range(exec, h, |y| {
        let fr = &f.data[y * w..(y + 1) * w];
        let gr = &g.data[y * w..(y + 1) * w];
        let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; ow]);
        for x in 0..ow {
            let mut acc = [0.0; 5];
            for (k, &wk) in win.iter().enumerate() {
                let a = fr[x + k] as f64;
                let b = gr[x + k] as f64;
                acc[0] += wk * a;
                acc[1] += wk * b;
                acc[2] += wk * a * a;
                acc[3] += wk * b * b;
                acc[4] += wk * a * b;
            }
            for (o, v) in out.iter_mut().zip(acc) {
                o[x] = v;
            }
        }
        out
    });

    // Vertical pass: per output row, sums of ssim, l, c, s.
    let sums: Vec<[f64; 4]> = par::map_range(exec, oh, |y| {
        let mut s = [0.0; 4];
        for x in 0..ow {
            let mut m = [0.0; 5];
            for (k, &wk) in win.iter().enumerate() {
                let r = &rows[y + k];
                for (mi, ri) in m.iter_mut().zip(r.iter()) {
                    *mi += wk * ri[x];
                }
            }
            let (mu_f, mu_g) = (m[0], m[1]);
            let var_f = (m[2] - mu_f * mu_f).max(0.0);
            let var_g = (m[3] - mu_g * mu_g).max(0.0);
            let cov = m[4] - mu_f * mu_g;
            let (sd_f, sd_g) = (var_f.sqrt(), var_g.sqrt());
            let l = (2.0 * mu_f * mu_g + C1) / (mu_f * mu_f + mu_g * mu_g + C1);
            let c = (2.0 * sd_f * sd_g + C2) / (var_f + var_g + C2);
            let st = (cov + C3) / (sd_f * sd_g + C3);
            s[0] += l * c * st;
            s[1] += l;
            s[2] += c;
            s[3] += st;
        }
        s
    });

    let mut total = [0.0; 4];
    for s in &sums {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    let n = (ow * oh) as f64;
    Ok(SsimResult {
        mean_ssim: total[0] / n,
        luminance: total[1] / n,
        contrast: total[2] / n,
        structure: total[3] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_frame, encode_frame, RoiBox};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(w: usize, h: usize, seed: u64, lo: u8, hi: u8) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::new(w, h, (0..w * h).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let p = noisy(40, 32, 1, 0, 255);
        let r = ssim(&p, &p).unwrap();
        assert!((r.mean_ssim - 1.0).abs() < 1e-9);
        assert!((r.structure - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_shift_changes_only_luminance() {
        let p = noisy(40, 32, 2, 20, 200);
        let q = Plane::new(40, 32, p.data.iter().map(|v| v + 10).collect()).unwrap();
        let r = ssim(&p, &q).unwrap();
        assert!(r.mean_ssim < 1.0);
        assert!(r.luminance < 1.0);
        assert!((r.contrast - 1.0).abs() < 1e-9, "{r:?}");
        assert!((r.structure - 1.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn errors() {
        let a = noisy(16, 16, 0, 0, 255);
        let b = noisy(24, 16, 0, 0, 255);
        assert!(matches!(ssim(&a, &b), Err(QualityError::Mismatch(..))));
        let tiny = noisy(8, 8, 0, 0, 255);
        assert_eq!(ssim(&tiny, &tiny), Err(QualityError::TooSmall(8, 8)));
    }

    #[test]
    fn exec_modes_bitwise_equal() {
        let a = noisy(64, 40, 5, 0, 255);
        let b = noisy(64, 40, 6, 0, 255);
        assert_eq!(ssim_with(Exec::Sequential, &a, &b), ssim_with(Exec::Parallel, &a, &b));
    }

    /// Brute-force oracle: explicit 2-D window sums per output pixel.
    fn brute_ssim(f: &Plane, g: &Plane) -> f64 {
        let win = gaussian_window();
        let (ow, oh) = (f.width - WINDOW + 1, f.height - WINDOW + 1);
        let mut total = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut mf, mut mg) = (0.0, 0.0);
                for j in 0..WINDOW {
                    for i in 0..WINDOW {
                        let wt = win[i] * win[j];
                        mf += wt * f.get(x + i, y + j) as f64;
                        mg += wt * g.get(x + i, y + j) as f64;
                    }
                }
                let (mut vf, mut vg, mut cv) = (0.0, 0.0, 0.0);
                for j in 0..WINDOW {
                    for i in 0..WINDOW {
                        let wt = win[i] * win[j];
                        let a = f.get(x + i, y + j) as f64 - mf;
                        let b = g.get(x + i, y + j) as f64 - mg;
                        vf += wt * a * a;
                        vg += wt * b * b;
                        cv += wt * a * b;
                    }
                }
                total += ((2.0 * mf * mg + C1) * (2.0 * cv + C2)) / ((mf * mf + mg * mg + C1) * (vf + vg + C2));
            }
        }
        total / (ow * oh) as f64
    }

    #[test]
    fn matches_brute_force_window_sums() {
        let a = noisy(24, 20, 9, 30, 220);
        let b = Plane::new(24, 20, a.data.iter().enumerate().map(|(i, &v)| v.saturating_add((i % 7) as u8 * 3)).collect())
            .unwrap();
        let fast = ssim(&a, &b).unwrap().mean_ssim;
        assert!((fast - brute_ssim(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn increases_with_quality_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (64, 64);
        let luma: Vec<u8> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                (128.0 + 50.0 * (x / 7.0).sin() + 30.0 * (y / 5.0).cos() + rng.random_range(-10.0..10.0)) as u8
            })
            .collect();
        let f = Frame::new(w, h, luma, RoiBox::new(24, 24, 16, 16)).unwrap();
        let scores: Vec<f64> = [10u8, 50, 90]
            .iter()
            .map(|&q| ssim_frames(&f, &decode_frame(&encode_frame(&f, f.roi, q).unwrap()).unwrap()).unwrap().mean_ssim)
            .collect();
        assert!(scores[0] < scores[1] && scores[1] < scores[2], "{scores:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn symmetric_and_bounded(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = noisy(16, 14, s1, 0, 255);
            let b = noisy(16, 14, s2, 0, 255);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab.mean_ssim - ba.mean_ssim).abs() <= 1e-12);
            prop_assert!(ab.mean_ssim.abs() <= 1.0);
            for c in [ab.luminance, ab.contrast, ab.structure] {
                prop_assert!(c.abs() <= 1.0 + 1e-12);
            }
        }
    }
}

//! Frame sources: image directories with ROI annotations, or synthetic
//! frames with a smooth background and a detailed ROI patch.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Frame, RoiBox};

/// Bounds on the ROI share of frame area for synthetic frames.
pub const SYNTH_ROI_AREA: (f64, f64) = (0.10, 0.40);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("frame set must not be empty")]
    Empty,
    #[error("no annotation for frame {0} ({1})")]
    MissingAnnotation(usize, PathBuf),
    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: CodecError,
    },
    #[error("synthetic frames need at least 32x32 pixels, got {0}x{1}")]
    SynthSize(usize, usize),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FrameOrigin {
    Loaded { dir: PathBuf },
    Synthetic { seed: u64, n: usize, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    frames: Vec<Frame>,
    origin: FrameOrigin,
}

impl FrameSet {
    pub fn new(frames: Vec<Frame>, origin: FrameOrigin) -> Result<Self, DatasetError> {
        if frames.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(FrameSet { frames, origin })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn origin(&self) -> &FrameOrigin {
        &self.origin
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Keep 4:2:0 chroma planes alongside luma.
    pub chroma: bool,
}

const IMAGE_EXTS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// Loads every PNG/PNM image in `dir` (sorted by file name) and pairs it with
/// the `frame_index,x0,y0,w,h` rows of `annotations`.
pub fn load_frames(dir: &Path, annotations: &Path, opts: LoadOptions) -> Result<FrameSet, DatasetError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DatasetError::Empty);
    }

    let rois = read_annotations(&std::fs::read_to_string(annotations)?, paths.len())?;
    let mut frames = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let roi = rois[i].ok_or_else(|| DatasetError::MissingAnnotation(i, path.clone()))?;
        let img = image::open(path)
            .map_err(|source| DatasetError::Image { path: path.clone(), source })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut y = Vec::with_capacity(w * h);
        let mut cb = Vec::with_capacity(if opts.chroma { w * h } else { 0 });
        let mut cr = Vec::with_capacity(if opts.chroma { w * h } else { 0 });
        for p in img.pixels() {
            let [r, g, b] = p.0.map(f64::from);
            y.push((0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8);
            if opts.chroma {
                cb.push((128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b).round().clamp(0.0, 255.0) as u8);
                cr.push((128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b).round().clamp(0.0, 255.0) as u8);
            }
        }
        let frame = if opts.chroma {
            Frame::from_ycbcr_padded(w, h, y, cb, cr, roi)
        } else {
            Frame::from_luma_padded(w, h, y, roi)
        }
        .map_err(|source| DatasetError::Frame { index: i, source })?;
        frames.push(frame);
    }
    FrameSet::new(frames, FrameOrigin::Loaded { dir: dir.to_path_buf() })
}

fn read_annotations(text: &str, n_frames: usize) -> Result<Vec<Option<RoiBox>>, DatasetError> {
    let mut rois = vec![None; n_frames];
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame_index") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<usize>, _> = fields.iter().map(|f| f.parse::<usize>()).collect();
        let vals = match parsed {
            Ok(v) if v.len() == 5 => v,
            _ => {
                return Err(DatasetError::Annotation {
                    line: line_no,
                    reason: "expected frame_index,x0,y0,w,h as non-negative integers".into(),
                })
            }
        };
        let i = vals[0];
        if i >= n_frames {
            return Err(DatasetError::Annotation {
                line: line_no,
                reason: format!("frame {i} does not exist ({n_frames} frames)"),
            });
        }
        if rois[i].is_some() {
            return Err(DatasetError::Annotation { line: line_no, reason: format!("frame {i} annotated twice") });
        }
        rois[i] = Some(RoiBox::new(vals[1], vals[2], vals[3], vals[4]));
    }
    Ok(rois)
}

/// Writes luma PNGs (`frame_0000.png`, ...) and `annotations.csv` into `dir`.
pub fn write_frames(set: &FrameSet, dir: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut ann = String::from("frame_index,x0,y0,w,h\n");
    for (i, f) in set.frames().iter().enumerate() {
        let path = dir.join(format!("frame_{i:04}.png"));
        image::save_buffer(&path, &f.luma.data, f.width() as u32, f.height() as u32, image::ColorType::L8)
            .map_err(|source| DatasetError::Image { path: path.clone(), source })?;
        let r = f.roi;
        ann.push_str(&format!("{i},{},{},{},{}\n", r.x0, r.y0, r.w, r.h));
    }
    std::fs::write(dir.join("annotations.csv"), ann)?;
    Ok(())
}

/// Deterministic synthetic frames.
///
/// Background: a slow gradient plus a low-frequency wave and mild Gaussian
/// noise. ROI: a block-aligned box covering 10% to 40% of the frame, filled
/// with a high-frequency texture.
pub fn synth_frames(seed: u64, n: usize, width: usize, height: usize) -> Result<FrameSet, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    if width < 32 || height < 32 {
        return Err(DatasetError::SynthSize(width, height));
    }
    let (w, h) = (width.div_ceil(8) * 8, height.div_ceil(8) * 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 2.0).expect("valid sigma");
    let texture_noise = Normal::new(0.0, 14.0).expect("valid sigma");

    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let roi = synth_roi(&mut rng, w, h);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let tilt: f64 = rng.random_range(-40.0..40.0);
        let base: f64 = rng.random_range(80.0..150.0);
        let (fx, fy): (f64, f64) = (rng.random_range(0.6..1.4), rng.random_range(0.6..1.4));
        let mut luma = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let mut px = if roi.contains_block(x, y, 1) {
                    let stripes = 55.0 * (fx * x as f64 + phase).sin() * (fy * y as f64).cos();
                    let cells = if ((x / 3) + (y / 3)) % 2 == 0 { 25.0 } else { -25.0 };
                    128.0 + stripes + cells + texture_noise.sample(&mut rng)
                } else {
                    base + tilt * (u - 0.5)
                        + 30.0 * (std::f64::consts::PI * (u + v) + phase).sin()
                        + noise.sample(&mut rng)
                };
                px = px.round().clamp(0.0, 255.0);
                luma.push(px as u8);
            }
        }
        frames.push(Frame::new(w, h, luma, roi).map_err(|source| DatasetError::Frame { index: i, source })?);
    }
    FrameSet::new(frames, FrameOrigin::Synthetic { seed, n, width: w, height: h })
}

fn synth_roi(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RoiBox {
    let (bw, bh) = (w / 8, h / 8);
    let total = (w * h) as f64;
    loop {
        let rw = rng.random_range(2..=bw) * 8;
        let rh = rng.random_range(2..=bh) * 8;
        let frac = (rw * rh) as f64 / total;
        if frac < SYNTH_ROI_AREA.0 || frac > SYNTH_ROI_AREA.1 {
            continue;
        }
        let x0 = rng.random_range(0..=(w - rw) / 8) * 8;
        let y0 = rng.random_range(0..=(h - rh) / 8) * 8;
        return RoiBox::new(x0, y0, rw, rh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{compression_ratio, encode_frame};

    #[test]
    fn synthetic_deterministic() {
        let a = synth_frames(5, 3, 96, 64).unwrap();
        assert_eq!(a, synth_frames(5, 3, 96, 64).unwrap());
        assert_ne!(a, synth_frames(6, 3, 96, 64).unwrap());
        assert!(matches!(synth_frames(5, 0, 96, 64), Err(DatasetError::Empty)));
    }

    #[test]
    fn synthetic_roi_area_bounds() {
        let set = synth_frames(11, 200, 128, 96).unwrap();
        for f in set.frames() {
            let frac = f.roi.area() as f64 / f.area() as f64;
            assert!((SYNTH_ROI_AREA.0..=SYNTH_ROI_AREA.1).contains(&frac), "{frac}");
            assert!(f.roi.fits(f.width(), f.height()));
            assert_eq!(f.roi.x0 % 8, 0);
            assert_eq!(f.roi.w % 8, 0);
        }
    }

    #[test]
    fn low_qf_compresses_harder() {
        let set = synth_frames(2, 6, 128, 96).unwrap();
        let mean = |qf| {
            set.frames().iter().map(|f| compression_ratio(f, &encode_frame(f, f.roi, qf).unwrap())).sum::<f64>()
                / set.len() as f64
        };
        assert!(mean(10) > mean(90));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = synth_frames(3, 2, 64, 48).unwrap();
        write_frames(&set, dir.path()).unwrap();
        let back = load_frames(dir.path(), &dir.path().join("annotations.csv"), LoadOptions::default()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in set.frames().iter().zip(back.frames()) {
            assert_eq!(a.luma, b.luma);
            assert_eq!(a.roi, b.roi);
        }
    }

    #[test]
    fn ppm_with_chroma_and_unaligned_size() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_fn(30, 20, |x, y| image::Rgb([(x * 8) as u8, (y * 12) as u8, 90]));
        img.save(dir.path().join("a.ppm")).unwrap();
        let ann = dir.path().join("ann.csv");
        std::fs::write(&ann, "frame_index,x0,y0,w,h\n0,0,0,30,20\n").unwrap();
        let set = load_frames(dir.path(), &ann, LoadOptions { chroma: true }).unwrap();
        let f = set.get(0);
        assert_eq!((f.width(), f.height()), (32, 32));
        assert_eq!(f.source_dims, (30, 20));
        assert!(f.chroma.is_some());
        assert_eq!(f.roi, RoiBox::new(0, 0, 32, 24));
    }

    #[test]
    fn annotation_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(&synth_frames(1, 2, 64, 48).unwrap(), dir.path()).unwrap();
        let ann = dir.path().join("bad.csv");
        let load = |text: &str| {
            std::fs::write(&ann, text).unwrap();
            load_frames(dir.path(), &ann, LoadOptions::default())
        };
        assert!(matches!(load("0,0,0,8,8\n5,0,0,8,8\n"), Err(DatasetError::Annotation { line: 2, .. })));
        assert!(matches!(load("0,0,0,8,8\n"), Err(DatasetError::MissingAnnotation(1, _))));
        assert!(matches!(load("0,0,0,8,8\n1,60,0,8,8\n"), Err(DatasetError::Frame { index: 1, .. })));
        assert!(load("0,0,0,64,48\n1,0,0,64,48\n").is_ok());
    }
}

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Axis-aligned region of interest, in luma pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoiBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl RoiBox {
    pub const fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        RoiBox { x0, y0, w, h }
    }

    pub const fn full(width: usize, height: usize) -> Self {
        RoiBox { x0: 0, y0: 0, w: width, h: height }
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1() <= width && self.y1() <= height
    }

    /// Grows the box outward to multiples of `align`, clamped to the frame.
    pub fn snapped(&self, align: usize, width: usize, height: usize) -> RoiBox {
        if self.is_empty() {
            return RoiBox::new(0, 0, 0, 0);
        }
        let x0 = self.x0 / align * align;
        let y0 = self.y0 / align * align;
        let x1 = self.x1().div_ceil(align) * align;
        let y1 = self.y1().div_ceil(align) * align;
        let x1 = x1.min(width);
        let y1 = y1.min(height);
        RoiBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// True when the `size`×`size` block at (bx, by) lies entirely inside.
    pub fn contains_block(&self, bx: usize, by: usize, size: usize) -> bool {
        !self.is_empty()
            && bx >= self.x0
            && by >= self.y0
            && bx + size <= self.x1()
            && by + size <= self.y1()
    }

    fn halved(&self) -> RoiBox {
        RoiBox::new(self.x0 / 2, self.y0 / 2, self.w / 2, self.h / 2)
    }
}

/// One 8-bit sample plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, CodecError> {
        if data.len() != width * height {
            return Err(CodecError::PlaneSize {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Edge-replicating pad to the given dimensions.
    pub fn padded(&self, width: usize, height: usize) -> Plane {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y.min(self.height - 1);
            let row = &self.data[sy * self.width..(sy + 1) * self.width];
            data.extend_from_slice(&row[..self.width.min(width)]);
            let last = row[self.width - 1];
            data.extend(std::iter::repeat_n(last, width.saturating_sub(self.width)));
        }
        Plane { width, height, data }
    }

    pub(crate) fn roi_samples(&self, roi: &RoiBox, out: &mut Vec<u8>) {
        for y in roi.y0..roi.y1() {
            out.extend_from_slice(&self.data[y * self.width + roi.x0..y * self.width + roi.x1()]);
        }
    }

    pub(crate) fn paste_roi(&mut self, roi: &RoiBox, samples: &[u8]) {
        for (row, y) in (roi.y0..roi.y1()).enumerate() {
            let dst = y * self.width + roi.x0;
            self.data[dst..dst + roi.w].copy_from_slice(&samples[row * roi.w..(row + 1) * roi.w]);
        }
    }
}

/// A video frame: luma plus optional 4:2:0 chroma, and its original ROI.
///
/// Dimensions are always multiples of 8 (16 with chroma). Frames built from
/// arbitrary sizes are edge-padded and remember their source size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub luma: Plane,
    pub chroma: Option<[Plane; 2]>,
    pub roi: RoiBox,
    /// Size before padding, `(width, height)`.
    pub source_dims: (usize, usize),
}

impl Frame {
    /// Builds a luma-only frame; dimensions must already be multiples of 8.
    pub fn new(width: usize, height: usize, luma: Vec<u8>, roi: RoiBox) -> Result<Self, CodecError> {
        if width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0 {
            return Err(CodecError::Dimensions { width, height, align: 8 });
        }
        check_dims_fit(width, height)?;
        let luma = Plane::new(width, height, luma)?;
        if !roi.fits(width, height) {
            return Err(CodecError::RoiOutside { roi, width, height });
        }
        Ok(Frame { luma, chroma: None, roi, source_dims: (width, height) })
    }

    /// Builds a luma-only frame from any size, padding to multiples of 8 and
    /// snapping the ROI outward to the block grid.
    pub fn from_luma_padded(width: usize, height: usize, luma: Vec<u8>, roi: RoiBox) -> Result<Self, CodecError> {
        Self::padded_with(width, height, luma, None, roi)
    }

    /// Like [`Frame::from_luma_padded`] but with full-resolution chroma
    /// planes, which are 2×2 averaged down to 4:2:0. Pads to multiples of 16.
    pub fn from_ycbcr_padded(
        width: usize,
        height: usize,
        luma: Vec<u8>,
        cb_full: Vec<u8>,
        cr_full: Vec<u8>,
        roi: RoiBox,
    ) -> Result<Self, CodecError> {
        Self::padded_with(width, height, luma, Some((cb_full, cr_full)), roi)
    }

    fn padded_with(
        width: usize,
        height: usize,
        luma: Vec<u8>,
        chroma: Option<(Vec<u8>, Vec<u8>)>,
        roi: RoiBox,
    ) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::Dimensions { width, height, align: 1 });
        }
        if !roi.fits(width, height) {
            return Err(CodecError::RoiOutside { roi, width, height });
        }
        let align = if chroma.is_some() { 16 } else { 8 };
        let pw = width.div_ceil(align) * align;
        let ph = height.div_ceil(align) * align;
        check_dims_fit(pw, ph)?;
        let luma = Plane::new(width, height, luma)?.padded(pw, ph);
        let chroma = match chroma {
            None => None,
            Some((cb, cr)) => {
                let cb = Plane::new(width, height, cb)?.padded(pw, ph);
                let cr = Plane::new(width, height, cr)?.padded(pw, ph);
                Some([subsample(&cb), subsample(&cr)])
            }
        };
        Ok(Frame {
            luma,
            chroma,
            roi: roi.snapped(8, pw, ph),
            source_dims: (width, height),
        })
    }

    pub fn width(&self) -> usize {
        self.luma.width
    }

    pub fn height(&self) -> usize {
        self.luma.height
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Total raw sample bytes across planes.
    pub fn raw_bytes(&self) -> usize {
        self.planes().map(|p| p.data.len()).sum()
    }

    pub fn planes(&self) -> impl Iterator<Item = &Plane> {
        std::iter::once(&self.luma).chain(self.chroma.iter().flat_map(|c| c.iter()))
    }

    /// The ROI expressed in each plane's coordinates.
    pub(crate) fn plane_rois(&self, roi: &RoiBox) -> Vec<RoiBox> {
        let mut out = vec![*roi];
        if self.chroma.is_some() {
            out.push(roi.halved());
            out.push(roi.halved());
        }
        out
    }
}

fn check_dims_fit(width: usize, height: usize) -> Result<(), CodecError> {
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(CodecError::Dimensions { width, height, align: 8 });
    }
    Ok(())
}

fn subsample(p: &Plane) -> Plane {
    let (w, h) = (p.width / 2, p.height / 2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = p.get(2 * x, 2 * y) as u32
                + p.get(2 * x + 1, 2 * y) as u32
                + p.get(2 * x, 2 * y + 1) as u32
                + p.get(2 * x + 1, 2 * y + 1) as u32;
            data.push(((s + 2) / 4) as u8);
        }
    }
    Plane { width: w, height: h, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snap_grows_outward() {
        let r = RoiBox::new(3, 9, 10, 7).snapped(8, 64, 64);
        assert_eq!(r, RoiBox::new(0, 8, 16, 8));
        let edge = RoiBox::new(60, 60, 4, 4).snapped(8, 64, 64);
        assert_eq!(edge, RoiBox::new(56, 56, 8, 8));
    }

    #[test]
    fn padding_replicates_edges() {
        let luma: Vec<u8> = (0..(10 * 3)).map(|i| i as u8).collect();
        let f = Frame::from_luma_padded(10, 3, luma, RoiBox::new(1, 1, 2, 1)).unwrap();
        assert_eq!((f.width(), f.height()), (16, 8));
        assert_eq!(f.source_dims, (10, 3));
        assert_eq!(f.luma.get(15, 0), 9);
        assert_eq!(f.luma.get(15, 7), 29);
        assert_eq!(f.roi, RoiBox::new(0, 0, 8, 8));
    }

    #[test]
    fn rejects_roi_outside_and_bad_dims() {
        assert!(matches!(
            Frame::new(16, 16, vec![0; 256], RoiBox::new(8, 8, 9, 8)),
            Err(CodecError::RoiOutside { .. })
        ));
        assert!(matches!(
            Frame::new(12, 16, vec![0; 192], RoiBox::new(0, 0, 8, 8)),
            Err(CodecError::Dimensions { .. })
        ));
        assert!(Frame::new(16, 16, vec![0; 255], RoiBox::new(0, 0, 8, 8)).is_err());
    }

    #[test]
    fn chroma_pads_to_sixteen() {
        let n = 20 * 10;
        let f = Frame::from_ycbcr_padded(20, 10, vec![50; n], vec![100; n], vec![150; n], RoiBox::new(0, 0, 4, 4))
            .unwrap();
        assert_eq!((f.width(), f.height()), (32, 16));
        let c = f.chroma.as_ref().unwrap();
        assert_eq!((c[0].width, c[0].height), (16, 8));
        assert!(c[1].data.iter().all(|&v| v == 150));
        assert_eq!(f.raw_bytes(), 32 * 16 + 2 * 16 * 8);
    }
}

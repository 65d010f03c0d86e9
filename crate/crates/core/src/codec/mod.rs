//! ROI-preserving block-DCT frame codec.
//!
//! The ROI (snapped outward to the 8-pixel grid) is stored raw. Every 8×8
//! block not fully inside it is DCT transformed, quantized with a
//! [`QuantTable`] scaled from the frame's quality factor, and entropy coded.
//!
//! Container layout, all integers big-endian:
//!
//! ```text
//! "ROI1" | version u8 | width u16 | height u16 | roi x0,y0,w,h u16 | qf u8
//!        | roi_payload_len u32 | bg_payload_len u32 | roi_payload | bg_payload
//! ```
//!
//! Version 1 carries luma only. Version 2 carries luma followed by two 4:2:0
//! chroma planes; each payload is the concatenation of the per-plane parts.

pub mod dct;
pub mod entropy;
mod frame;
pub mod quant;

use thiserror::Error;

pub use dct::{forward_dct_block, inverse_dct_block};
pub use frame::{Frame, Plane, RoiBox};
pub use quant::{dequantize_block, make_quant_table, quantize_block, QuantTable, JPEG_LUMA_BASE};

pub const MAGIC: &[u8; 4] = b"ROI1";
pub const VERSION_LUMA: u8 = 1;
pub const VERSION_YCBCR420: u8 = 2;
pub const HEADER_LEN: usize = 26;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("quality factor {0} outside 1..=100")]
    QualityFactor(u8),
    #[error("frame {width}x{height} must be nonzero multiples of {align} and fit in u16")]
    Dimensions { width: usize, height: usize, align: usize },
    #[error("plane holds {got} samples, expected {expected}")]
    PlaneSize { expected: usize, got: usize },
    #[error("roi {roi:?} does not fit a {width}x{height} frame")]
    RoiOutside { roi: RoiBox, width: usize, height: usize },
    #[error("bad container magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("truncated input while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt payload: {0}")]
    Corrupt(&'static str),
}

/// A compressed frame. `to_bytes().len() == serialized_len()` always.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub version: u8,
    pub width: u16,
    pub height: u16,
    pub roi: RoiBox,
    pub qf: u8,
    pub roi_payload: Vec<u8>,
    pub bg_payload: Vec<u8>,
}

impl EncodedFrame {
    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + self.roi_payload.len() + self.bg_payload.len()
    }

    pub fn plane_count(&self) -> usize {
        if self.version == VERSION_YCBCR420 {
            3
        } else {
            1
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.width.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        for v in [self.roi.x0, self.roi.y0, self.roi.w, self.roi.h] {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
        out.push(self.qf);
        out.extend_from_slice(&(self.roi_payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&(self.bg_payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.roi_payload);
        out.extend_from_slice(&self.bg_payload);
        out
    }

    /// Parses and validates a container. Trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 4 {
            return Err(CodecError::Truncated("magic"));
        }
        if &bytes[..4] != MAGIC {
            return Err(CodecError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated("header"));
        }
        let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let version = bytes[4];
        if version != VERSION_LUMA && version != VERSION_YCBCR420 {
            return Err(CodecError::Version(version));
        }
        let width = u16_at(5);
        let height = u16_at(7);
        let roi = RoiBox::new(
            u16_at(9) as usize,
            u16_at(11) as usize,
            u16_at(13) as usize,
            u16_at(15) as usize,
        );
        let qf = bytes[17];
        let roi_len = u32_at(18) as usize;
        let bg_len = u32_at(22) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() < roi_len + bg_len {
            return Err(CodecError::Truncated("payload"));
        }
        if body.len() > roi_len + bg_len {
            return Err(CodecError::Corrupt("trailing bytes after payload"));
        }
        let ef = EncodedFrame {
            version,
            width,
            height,
            roi,
            qf,
            roi_payload: body[..roi_len].to_vec(),
            bg_payload: body[roi_len..].to_vec(),
        };
        ef.validate_header()?;
        Ok(ef)
    }

    fn validate_header(&self) -> Result<(), CodecError> {
        let (w, h) = (self.width as usize, self.height as usize);
        let align = if self.version == VERSION_YCBCR420 { 16 } else { 8 };
        if w == 0 || h == 0 || w % align != 0 || h % align != 0 {
            return Err(CodecError::Dimensions { width: w, height: h, align });
        }
        if !(1..=100).contains(&self.qf) {
            return Err(CodecError::QualityFactor(self.qf));
        }
        if !self.roi.fits(w, h) {
            return Err(CodecError::RoiOutside { roi: self.roi, width: w, height: h });
        }
        let expected_roi: usize = plane_layout(self.version, w, h, &self.roi)
            .iter()
            .map(|(_, _, r)| r.area())
            .sum();
        if expected_roi != self.roi_payload.len() {
            return Err(CodecError::Corrupt("roi payload length does not match roi box"));
        }
        Ok(())
    }
}

/// Per-plane (width, height, roi) for a container version.
fn plane_layout(version: u8, w: usize, h: usize, roi: &RoiBox) -> Vec<(usize, usize, RoiBox)> {
    let mut planes = vec![(w, h, *roi)];
    if version == VERSION_YCBCR420 {
        let half = RoiBox::new(roi.x0 / 2, roi.y0 / 2, roi.w / 2, roi.h / 2);
        planes.push((w / 2, h / 2, half));
        planes.push((w / 2, h / 2, half));
    }
    planes
}

/// Encodes `frame` keeping `roi` lossless and compressing the rest at `qf`.
///
/// `roi` is snapped outward to the 8-pixel grid; the snapped box is what the
/// container records and what decodes bit-exactly.
pub fn encode_frame(frame: &Frame, roi: RoiBox, qf: u8) -> Result<EncodedFrame, CodecError> {
    let (w, h) = (frame.width(), frame.height());
    if !roi.fits(w, h) {
        return Err(CodecError::RoiOutside { roi, width: w, height: h });
    }
    let qt = QuantTable::new(qf)?;
    let roi = roi.snapped(8, w, h);

    let mut roi_payload = Vec::with_capacity(roi.area());
    let mut bg_payload = Vec::new();
    for (plane, proi) in frame.planes().zip(frame.plane_rois(&roi)) {
        plane.roi_samples(&proi, &mut roi_payload);
        encode_background(plane, &proi, &qt, &mut bg_payload);
    }

    Ok(EncodedFrame {
        version: if frame.chroma.is_some() { VERSION_YCBCR420 } else { VERSION_LUMA },
        width: w as u16,
        height: h as u16,
        roi,
        qf,
        roi_payload,
        bg_payload,
    })
}

fn encode_background(plane: &Plane, roi: &RoiBox, qt: &QuantTable, out: &mut Vec<u8>) {
    let mut block = [0.0f64; 64];
    for by in (0..plane.height).step_by(8) {
        for bx in (0..plane.width).step_by(8) {
            if roi.contains_block(bx, by, 8) {
                continue;
            }
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane.get(bx + x, by + y) as f64 - 128.0;
                }
            }
            let coeffs = quant::to_zigzag(&forward_dct_block(&block));
            entropy::encode_block(&quantize_block(&coeffs, qt), out);
        }
    }
}

/// Reconstructs a frame: ROI samples exactly, background from the
/// dequantized inverse DCT clamped to `[0, 255]`.
pub fn decode_frame(ef: &EncodedFrame) -> Result<Frame, CodecError> {
    ef.validate_header()?;
    let qt = QuantTable::new(ef.qf)?;
    let (w, h) = (ef.width as usize, ef.height as usize);

    let mut planes = Vec::with_capacity(3);
    let mut roi_off = 0;
    let mut bg_pos = 0;
    for (pw, ph, proi) in plane_layout(ef.version, w, h, &ef.roi) {
        let mut plane = Plane::filled(pw, ph, 0);
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                if proi.contains_block(bx, by, 8) {
                    continue;
                }
                let levels = entropy::decode_block(&ef.bg_payload, &mut bg_pos)?;
                let coeffs = quant::from_zigzag(&dequantize_block(&levels, &qt));
                let samples = inverse_dct_block(&coeffs);
                for y in 0..8 {
                    let row = (by + y) * pw + bx;
                    for x in 0..8 {
                        plane.data[row + x] = (samples[y * 8 + x] + 128.0).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        let n = proi.area();
        plane.paste_roi(&proi, &ef.roi_payload[roi_off..roi_off + n]);
        roi_off += n;
        planes.push(plane);
    }
    if bg_pos != ef.bg_payload.len() {
        return Err(CodecError::Corrupt("trailing background bytes"));
    }

    let luma = planes.remove(0);
    let chroma = if planes.len() == 2 {
        let cr = planes.pop().expect("two chroma planes");
        let cb = planes.pop().expect("two chroma planes");
        Some([cb, cr])
    } else {
        None
    };
    Ok(Frame { luma, chroma, roi: ef.roi, source_dims: (w, h) })
}

/// Raw plane bytes over serialized container bytes.
pub fn compression_ratio(frame: &Frame, encoded: &EncodedFrame) -> f64 {
    frame.raw_bytes() as f64 / encoded.serialized_len() as f64
}

use super::CodecError;

/// Standard JPEG luminance quantization table (Annex K), natural order.
pub const JPEG_LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// `ZIGZAG[k]` is the natural (row-major) index of the k-th zigzag coefficient.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, //
    17, 24, 32, 25, 18, 11, 4, 5, //
    12, 19, 26, 33, 40, 48, 41, 34, //
    27, 20, 13, 6, 7, 14, 21, 28, //
    35, 42, 49, 56, 57, 50, 43, 36, //
    29, 22, 15, 23, 30, 37, 44, 51, //
    58, 59, 52, 45, 38, 31, 39, 46, //
    53, 60, 61, 54, 47, 55, 62, 63,
];

/// Reorders a natural-order block into zigzag order.
pub fn to_zigzag<T: Copy + Default>(natural: &[T; 64]) -> [T; 64] {
    let mut out = [T::default(); 64];
    for (k, &n) in ZIGZAG.iter().enumerate() {
        out[k] = natural[n];
    }
    out
}

/// Inverse of [`to_zigzag`].
pub fn from_zigzag<T: Copy + Default>(zz: &[T; 64]) -> [T; 64] {
    let mut out = [T::default(); 64];
    for (k, &n) in ZIGZAG.iter().enumerate() {
        out[n] = zz[k];
    }
    out
}

/// A quality-scaled quantization table. Entries are stored in zigzag order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable {
    pub qf: u8,
    pub entries: [u16; 64],
}

impl QuantTable {
    /// Scales the standard luminance table by `qf`.
    pub fn new(qf: u8) -> Result<Self, CodecError> {
        make_quant_table(qf, &JPEG_LUMA_BASE)
    }

    pub fn max_entry(&self) -> u16 {
        self.entries.iter().copied().max().unwrap_or(1)
    }
}

/// Scales a natural-order `base` table using the libjpeg quality convention:
/// `scale = 5000/qf` below 50, `200 - 2qf` otherwise, entries clamped to
/// `[1, 255]`. The result is in zigzag order.
pub fn make_quant_table(qf: u8, base: &[u16; 64]) -> Result<QuantTable, CodecError> {
    if !(1..=100).contains(&qf) {
        return Err(CodecError::QualityFactor(qf));
    }
    let q = qf as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut natural = [0u16; 64];
    for (dst, &b) in natural.iter_mut().zip(base) {
        let v = (b as u32 * scale + 50) / 100;
        *dst = v.clamp(1, 255) as u16;
    }
    Ok(QuantTable { qf, entries: to_zigzag(&natural) })
}

/// `round(coeff / q)` per zigzag position.
pub fn quantize_block(coeffs_zz: &[f64; 64], qt: &QuantTable) -> [i32; 64] {
    let mut out = [0i32; 64];
    for k in 0..64 {
        out[k] = (coeffs_zz[k] / qt.entries[k] as f64).round() as i32;
    }
    out
}

pub fn dequantize_block(levels_zz: &[i32; 64], qt: &QuantTable) -> [f64; 64] {
    let mut out = [0f64; 64];
    for k in 0..64 {
        out[k] = (levels_zz[k] * qt.entries[k] as i32) as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qf50_is_base() {
        let t = QuantTable::new(50).unwrap();
        assert_eq!(from_zigzag(&t.entries), JPEG_LUMA_BASE);
    }

    #[test]
    fn qf100_is_all_ones() {
        assert!(QuantTable::new(100).unwrap().entries.iter().all(|&e| e == 1));
    }

    #[test]
    fn qf10_dc_entry() {
        // scale = 500, (16*500 + 50) / 100 = 80
        assert_eq!(QuantTable::new(10).unwrap().entries[0], 80);
    }

    #[test]
    fn out_of_range_qf() {
        assert_eq!(QuantTable::new(0), Err(CodecError::QualityFactor(0)));
        assert_eq!(QuantTable::new(101), Err(CodecError::QualityFactor(101)));
    }

    #[test]
    fn entries_monotone_in_qf() {
        let mut prev = QuantTable::new(1).unwrap();
        assert!(prev.entries.iter().all(|&e| (1..=255).contains(&e)));
        for qf in 2..=100 {
            let t = QuantTable::new(qf).unwrap();
            for k in 0..64 {
                assert!(t.entries[k] <= prev.entries[k], "qf {qf} index {k}");
                assert!((1..=255).contains(&t.entries[k]));
            }
            prev = t;
        }
    }

    #[test]
    fn zigzag_is_a_permutation() {
        let natural: [usize; 64] = std::array::from_fn(|i| i);
        assert_eq!(from_zigzag(&to_zigzag(&natural)), natural);
        let mut seen = [false; 64];
        ZIGZAG.iter().for_each(|&i| seen[i] = true);
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn quantize_examples() {
        let mut qt = QuantTable::new(50).unwrap();
        qt.entries = [16; 64];
        let zero = quantize_block(&[0.0; 64], &qt);
        assert!(zero.iter().all(|&l| l == 0));

        let mut c = [0.0; 64];
        c[0] = 160.0;
        c[1] = 167.0;
        let l = quantize_block(&c, &qt);
        assert_eq!((l[0], l[1]), (10, 10));
        let d = dequantize_block(&l, &qt);
        assert_eq!((d[0], d[1]), (160.0, 160.0));
        // rounding bound: |c - dequant| <= q/2
        assert!((c[1] - d[1]).abs() <= 8.0);
    }
}

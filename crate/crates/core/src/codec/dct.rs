//! Orthonormal 8×8 type-II DCT and its inverse, by separable matrix products.

use std::sync::OnceLock;

/// `basis()[u][x] = a(u) cos((2x + 1) u pi / 16)`, `a(0) = sqrt(1/8)`, else `sqrt(2/8)`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        c
    })
}

/// Forward DCT of a level-shifted block (samples already minus 128),
/// natural row-major order in and out.
pub fn forward_dct_block(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    // rows: tmp[y][u] = sum_x block[y][x] c[u][x]
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += block[y * 8 + x] * c[u][x];
            }
            tmp[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += tmp[y * 8 + u] * c[v][y];
            }
            out[v * 8 + u] = s;
        }
    }
    out
}

/// Inverse of [`forward_dct_block`].
pub fn inverse_dct_block(coeffs: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                s += coeffs[v * 8 + u] * c[v][y];
            }
            tmp[y * 8 + u] = s;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for u in 0..8 {
                s += tmp[y * 8 + u] * c[u][x];
            }
            out[y * 8 + x] = s;
        }
    }
    out
}

/// Sum over basis functions of `|basis_k(x, y)|` weighted by `weights[k]`
/// (natural order), per sample position. Used by tests as a worst-case
/// reconstruction error bound.
pub fn weighted_basis_l1(weights: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    s += weights[v * 8 + u] * (c[v][y] * c[u][x]).abs();
                }
            }
            out[y * 8 + x] = s;
        }
    }
    out
}

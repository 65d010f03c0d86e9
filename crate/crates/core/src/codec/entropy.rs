//! Background entropy coding.
//!
//! Each block's zigzag-ordered levels are written as `(zero_run, level)`
//! pairs for the nonzero levels, followed by an end-of-block run value of 64.
//! Runs are unsigned LEB128; levels are zigzag-mapped (`0, -1, 1, -2, ...`
//! to `0, 1, 2, 3, ...`) and then LEB128-encoded.

use super::CodecError;

const END_OF_BLOCK: u64 = 64;

pub fn write_uvarint(mut v: u64, out: &mut Vec<u8>) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Reads one LEB128 value starting at `*pos`, advancing it.
pub fn read_uvarint(bytes: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let mut v = 0u64;
    let mut shift = 0u32;
    loop {
        let &b = bytes.get(*pos).ok_or(CodecError::Truncated("varint"))?;
        *pos += 1;
        if shift >= 64 || (shift == 63 && b > 1) {
            return Err(CodecError::Corrupt("varint overflow"));
        }
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
    }
}

#[inline]
pub fn zigzag_encode(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
pub fn zigzag_decode(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

pub fn encode_block(levels_zz: &[i32; 64], out: &mut Vec<u8>) {
    let mut run = 0u64;
    for &l in levels_zz {
        if l == 0 {
            run += 1;
        } else {
            write_uvarint(run, out);
            write_uvarint(zigzag_encode(l as i64), out);
            run = 0;
        }
    }
    write_uvarint(END_OF_BLOCK, out);
}

pub fn decode_block(bytes: &[u8], pos: &mut usize) -> Result<[i32; 64], CodecError> {
    let mut levels = [0i32; 64];
    let mut k = 0usize;
    loop {
        let run = read_uvarint(bytes, pos)?;
        if run == END_OF_BLOCK {
            return Ok(levels);
        }
        k += run as usize;
        if run > END_OF_BLOCK || k >= 64 {
            return Err(CodecError::Corrupt("zero run past end of block"));
        }
        let level = zigzag_decode(read_uvarint(bytes, pos)?);
        if level == 0 || level < i32::MIN as i64 || level > i32::MAX as i64 {
            return Err(CodecError::Corrupt("invalid level"));
        }
        levels[k] = level as i32;
        k += 1;
    }
}

/// Encodes a sequence of blocks.
pub fn encode_levels(blocks: &[[i32; 64]]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        encode_block(b, &mut out);
    }
    out
}

/// Decodes exactly `n_blocks` blocks, requiring the input to be fully consumed.
pub fn decode_levels(bytes: &[u8], n_blocks: usize) -> Result<Vec<[i32; 64]>, CodecError> {
    let mut pos = 0;
    let blocks = (0..n_blocks)
        .map(|_| decode_block(bytes, &mut pos))
        .collect::<Result<Vec<_>, _>>()?;
    if pos != bytes.len() {
        return Err(CodecError::Corrupt("trailing background bytes"));
    }
    Ok(blocks)
}

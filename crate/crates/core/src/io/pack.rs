//! Sub-byte packing of unsigned codes.
//!
//! * 2 bits: four codes per byte, first code in the least significant bits.
//! * 4 bits: two codes per byte, low nibble first.
//! * 3 bits: blocks of eight codes in three bytes, read as a little-endian
//!   24-bit word with code `k` at bits `3k..3k+3`. A trailing partial block
//!   still occupies three bytes, zero-filled.

use super::{IoError, IoResult};

/// Bytes needed for `count` codes of `bits` bits.
pub fn packed_len(count: usize, bits: u8) -> IoResult<usize> {
    match bits {
        2 => Ok(count.div_ceil(4)),
        3 => Ok(count.div_ceil(8) * 3),
        4 => Ok(count.div_ceil(2)),
        _ => Err(IoError::Format(format!("unsupported code width {bits}"))),
    }
}

pub fn pack_codes(codes: &[u8], bits: u8) -> IoResult<Vec<u8>> {
    let len = packed_len(codes.len(), bits)?;
    let limit = 1u16 << bits;
    if let Some(index) = codes.iter().position(|&c| c as u16 >= limit) {
        return Err(IoError::CodeOutOfRange {
            index,
            code: codes[index],
            bits,
        });
    }
    let mut out = vec![0u8; len];
    match bits {
        2 | 4 => {
            let per_byte = 8 / bits as usize;
            for (i, &c) in codes.iter().enumerate() {
                out[i / per_byte] |= c << (bits as usize * (i % per_byte));
            }
        }
        3 => {
            for (b, block) in codes.chunks(8).enumerate() {
                let word = block
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (k, &c)| acc | (c as u32) << (3 * k));
                out[3 * b..3 * b + 3].copy_from_slice(&word.to_le_bytes()[..3]);
            }
        }
        _ => unreachable!("checked by packed_len"),
    }
    Ok(out)
}

/// Inverse of [`pack_codes`]; `count` is the number of codes to recover.
pub fn unpack_codes(bytes: &[u8], bits: u8, count: usize) -> IoResult<Vec<u8>> {
    let len = packed_len(count, bits)?;
    if bytes.len() < len {
        return Err(IoError::Truncated("packed code payload"));
    }
    if bytes.len() > len {
        return Err(IoError::TrailingBytes(bytes.len() - len));
    }
    let mask = ((1u16 << bits) - 1) as u8;
    let mut out = Vec::with_capacity(count);
    match bits {
        2 | 4 => {
            let per_byte = 8 / bits as usize;
            for i in 0..count {
                out.push((bytes[i / per_byte] >> (bits as usize * (i % per_byte))) & mask);
            }
        }
        3 => {
            for i in 0..count {
                let b = i / 8;
                let word = u32::from_le_bytes([bytes[3 * b], bytes[3 * b + 1], bytes[3 * b + 2], 0]);
                out.push(((word >> (3 * (i % 8))) & mask as u32) as u8);
            }
        }
        _ => unreachable!("checked by packed_len"),
    }
    Ok(out)
}

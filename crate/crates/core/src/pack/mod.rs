//! Bit-packing of integer codes into 32-bit words, Z-curve block layout and
//! the on-disk weight format.
//!
//! Codes form a little-endian bit stream: code `j` of a packing unit starts
//! at bit `j * b`. For 2 and 4 bits a unit is one word (16 or 8 codes) and no
//! code straddles a word. For 3 bits a unit is three words holding 32 codes,
//! and codes 10 and 21 straddle a word boundary.

mod file;
mod layout;

pub use file::{
    decode_weight_file, encode_weight_file, read_header, read_weight_file, write_weight_file,
    WeightFileHeader, FORMAT_VERSION, HEADER_BYTES, MAGIC,
};
pub use layout::{lay_out_blocks, BlockDesc, Layout, PackedMatrix, Zeros};

use crate::error::{Error, Result};
use crate::quant::Bits;

/// Packs `codes` (a whole number of packing units) into words.
pub fn pack_words(codes: &[u8], bits: Bits) -> Result<Vec<u32>> {
    let unit = bits.unit_rows();
    if codes.len() % unit != 0 {
        return Err(Error::PackLength {
            len: codes.len(),
            bits: bits.get(),
            unit,
        });
    }
    let max_code = bits.max_code();
    let mut words = vec![0u32; codes.len() / unit * bits.unit_words()];
    for (u, (chunk, out)) in codes
        .chunks_exact(unit)
        .zip(words.chunks_exact_mut(bits.unit_words()))
        .enumerate()
    {
        for (j, &code) in chunk.iter().enumerate() {
            if code as u32 > max_code {
                return Err(Error::CodeOutOfRange {
                    index: u * unit + j,
                    code: code as u32,
                    bits: bits.get(),
                });
            }
            put_code(out, j, code as u32, bits);
        }
    }
    Ok(words)
}

/// Inverse of [`pack_words`].
pub fn unpack_words(words: &[u32], bits: Bits) -> Result<Vec<u8>> {
    let unit_words = bits.unit_words();
    if words.len() % unit_words != 0 {
        return Err(Error::PackLength {
            len: words.len(),
            bits: bits.get(),
            unit: unit_words,
        });
    }
    let mut codes = Vec::with_capacity(words.len() / unit_words * bits.unit_rows());
    for unit in words.chunks_exact(unit_words) {
        codes.extend((0..bits.unit_rows()).map(|j| get_code(unit, j, bits) as u8));
    }
    Ok(codes)
}

/// Writes code `j` into a packing unit.
#[inline]
pub(crate) fn put_code(unit: &mut [u32], j: usize, code: u32, bits: Bits) {
    let offset = j * bits.get() as usize;
    let (word, shift) = (offset / 32, offset % 32);
    unit[word] |= code << shift;
    if shift + bits.get() as usize > 32 {
        unit[word + 1] |= code >> (32 - shift);
    }
}

/// Reads code `j` of a packing unit: shift right, then mask.
#[inline]
pub(crate) fn get_code(unit: &[u32], j: usize, bits: Bits) -> u32 {
    let offset = j * bits.get() as usize;
    let (word, shift) = (offset / 32, offset % 32);
    let mut v = unit[word] >> shift;
    if shift + bits.get() as usize > 32 {
        v |= unit[word + 1] << (32 - shift);
    }
    v & bits.max_code()
}

#[inline]
fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

/// Z-curve position of a block: bit `i` of `row_block` lands on bit `2i`,
/// bit `i` of `col_block` on bit `2i + 1`.
#[inline]
pub fn morton_index(row_block: u32, col_block: u32) -> u64 {
    spread_bits(row_block) | (spread_bits(col_block) << 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-by-bit interleave.
    fn interleave_oracle(r: u32, c: u32) -> u64 {
        let mut out = 0u64;
        for i in 0..32 {
            out |= (((r >> i) & 1) as u64) << (2 * i);
            out |= (((c >> i) & 1) as u64) << (2 * i + 1);
        }
        out
    }

    #[test]
    fn four_bit_word() {
        assert_eq!(pack_words(&[1, 2, 3, 4, 5, 6, 7, 8], Bits::FOUR).unwrap(), vec![0x8765_4321]);
        assert_eq!(unpack_words(&[0x8765_4321], Bits::FOUR).unwrap(), vec![1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn three_bit_units() {
        assert_eq!(pack_words(&[7; 32], Bits::THREE).unwrap(), vec![u32::MAX; 3]);
        let mut one = [0u8; 32];
        one[0] = 1;
        assert_eq!(pack_words(&one, Bits::THREE).unwrap(), vec![1, 0, 0]);
        assert_eq!(unpack_words(&[0, 0, 0], Bits::THREE).unwrap(), vec![0; 32]);
    }

    #[test]
    fn three_bit_straddling_codes() {
        // code 10 covers stream bits 30..33, code 21 covers 63..66
        let mut codes = [0u8; 32];
        codes[10] = 0b101;
        codes[21] = 0b011;
        let words = pack_words(&codes, Bits::THREE).unwrap();
        assert_eq!(words, vec![0b01 << 30, (0b1) | (1 << 31), 0b01]);
        assert_eq!(unpack_words(&words, Bits::THREE).unwrap(), codes.to_vec());
    }

    #[test]
    fn two_bit_word() {
        let codes: Vec<u8> = (0..16).map(|i| (i % 4) as u8).collect();
        assert_eq!(pack_words(&codes, Bits::TWO).unwrap(), vec![0xE4E4_E4E4]);
    }

    #[test]
    fn pack_errors() {
        assert!(matches!(
            pack_words(&[16, 0, 0, 0, 0, 0, 0, 0], Bits::FOUR),
            Err(Error::CodeOutOfRange { index: 0, code: 16, bits: 4 })
        ));
        assert!(matches!(
            pack_words(&[0; 8 + 3], Bits::FOUR),
            Err(Error::PackLength { len: 11, .. })
        ));
        assert!(matches!(
            pack_words(&[0; 16], Bits::THREE),
            Err(Error::PackLength { unit: 32, .. })
        ));
        assert!(unpack_words(&[0, 0], Bits::THREE).is_err());
    }

    #[test]
    fn out_of_range_reports_position() {
        let mut codes = vec![0u8; 32];
        codes[19] = 9;
        assert!(matches!(
            pack_words(&codes, Bits::TWO),
            Err(Error::CodeOutOfRange { index: 19, code: 9, .. })
        ));
    }

    #[test]
    fn morton_examples() {
        assert_eq!(morton_index(0, 0), 0);
        assert_eq!(morton_index(1, 0), 1);
        assert_eq!(morton_index(0, 1), 2);
        assert_eq!(morton_index(3, 5), interleave_oracle(3, 5));
        assert_eq!(morton_index(3, 5), 39);
    }

    #[test]
    fn morton_bijection_on_square_grid() {
        for k in 0..6u32 {
            let side = 1u32 << k;
            let mut seen = vec![false; (side * side) as usize];
            for r in 0..side {
                for c in 0..side {
                    let z = morton_index(r, c) as usize;
                    assert!(z < seen.len() && !seen[z]);
                    seen[z] = true;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn morton_matches_oracle(r in any::<u32>(), c in any::<u32>()) {
            prop_assert_eq!(morton_index(r, c), interleave_oracle(r, c));
        }

        #[test]
        fn pack_unpack_inverse(bits in 2u32..=4, units in 1usize..8, seed in any::<u64>()) {
            let bits = Bits::new(bits).unwrap();
            let n = units * bits.unit_rows();
            let mut state = seed | 1;
            let codes: Vec<u8> = (0..n)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state as u32 & bits.max_code()) as u8
                })
                .collect();
            let words = pack_words(&codes, bits).unwrap();
            prop_assert_eq!(words.len() * 32, n * bits.get() as usize);
            prop_assert_eq!(unpack_words(&words, bits).unwrap(), codes);
        }
    }
}

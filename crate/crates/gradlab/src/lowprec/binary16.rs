//! Bit-exact binary16 (1 sign, 5 exponent, 10 mantissa) conversion.
//!
//! `from_f32` implements round-to-nearest-even, the IEEE default. Widening
//! back to fp32 is exact since every half value is representable there. NaNs
//! canonicalize to a single quiet pattern so runs are reproducible bit for
//! bit regardless of which NaN payload an overflowing computation produced.

use serde::{Deserialize, Serialize};

/// Canonical quiet NaN. Every NaN input maps here, sign included.
const CANONICAL_NAN: u16 = 0x7E00;
const EXP_MASK: u16 = 0x7C00;

/// A binary16 value stored as its raw bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    pub const NAN: Half = Half(CANONICAL_NAN);
    /// Largest finite magnitude, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: Half = Half(0x0001);

    pub const fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Round an fp32 value to the nearest binary16 (ties to even).
    ///
    /// Results past the overflow boundary (|x| >= 65520) become signed
    /// infinity; magnitudes at or below half the smallest subnormal round to
    /// signed zero; NaN becomes the canonical quiet NaN.
    pub fn from_f32(value: f32) -> Half {
        let x = value.to_bits();
        let sign = (x >> 16) & 0x8000;
        let abs = x & 0x7FFF_FFFF;

        if abs > 0x7F80_0000 {
            return Half(CANONICAL_NAN);
        }
        if abs == 0x7F80_0000 {
            return Half((sign | 0x7C00) as u16);
        }

        let unbiased = ((abs >> 23) as i32) - 127;
        let half_exp = unbiased + 15;
        let man = abs & 0x007F_FFFF;

        if half_exp >= 0x1F {
            // Magnitude at least 2^16: past the largest finite half even
            // before rounding.
            return Half((sign | 0x7C00) as u16);
        }

        if half_exp <= 0 {
            // Subnormal or underflow-to-zero territory.
            if 14 - half_exp > 24 {
                return Half(sign as u16);
            }
            let man = man | 0x0080_0000; // restore the implicit bit
            let shift = (14 - half_exp) as u32;
            let half_man = man >> shift;
            let round_bit = 1u32 << (shift - 1);
            // Round up iff the round bit is set and either a sticky bit below
            // it or the result LSB is set (ties to even).
            if (man & round_bit) != 0 && (man & (3 * round_bit - 1)) != 0 {
                return Half((sign | (half_man + 1)) as u16);
            }
            return Half((sign | half_man) as u16);
        }

        let out = sign | ((half_exp as u32) << 10) | (man >> 13);
        let round_bit = 0x0000_1000u32;
        if (man & round_bit) != 0 && (man & (3 * round_bit - 1)) != 0 {
            // The +1 may carry into the exponent; that is exactly the
            // rounding-to-infinity behavior required at 65520.
            Half((out + 1) as u16)
        } else {
            Half(out as u16)
        }
    }

    /// Exact widening conversion to fp32.
    pub fn to_f32(self) -> f32 {
        let bits = self.0 as u32;
        let sign = (bits & 0x8000) << 16;
        let exp = (bits >> 10) & 0x1F;
        let man = bits & 0x03FF;
        match (exp, man) {
            (0, 0) => f32::from_bits(sign),
            (0, _) => {
                // Subnormal: normalize into an fp32 with an implicit bit.
                let mut e: i32 = -14;
                let mut m = man;
                while m & 0x0400 == 0 {
                    m <<= 1;
                    e -= 1;
                }
                m &= 0x03FF;
                f32::from_bits(sign | (((e + 127) as u32) << 23) | (m << 13))
            }
            (0x1F, 0) => f32::from_bits(sign | 0x7F80_0000),
            (0x1F, _) => f32::from_bits(sign | 0x7FC0_0000 | (man << 13)),
            _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
        }
    }

    pub const fn is_nan(self) -> bool {
        self.0 & 0x7FFF > EXP_MASK
    }

    pub const fn is_infinite(self) -> bool {
        self.0 & 0x7FFF == EXP_MASK
    }

    pub const fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    pub const fn is_sign_negative(self) -> bool {
        self.0 & 0x8000 != 0
    }
}

impl std::fmt::Display for Half {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_f32())
    }
}

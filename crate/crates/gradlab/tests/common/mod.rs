//! Shared test oracles.
//!
//! The binary16 reference converter here is deliberately independent of the
//! production bit-twiddling path: it decodes every half pattern to its exact
//! f64 value from the format definition and rounds by nearest-value search
//! over the sorted finite halves, ties to the even mantissa.

/// Exact f64 value of a half bit pattern from the format definition.
/// NaN patterns return NaN; infinities return signed infinity.
pub fn half_value_f64(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = (bits >> 10) & 0x1F;
    let man = f64::from(bits & 0x03FF);
    match exp {
        0 => sign * man / 1024.0 * (2.0f64).powi(-14),
        0x1F => {
            if man == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        e => sign * (1.0 + man / 1024.0) * (2.0f64).powi(i32::from(e) - 15),
    }
}

/// All positive finite half patterns (0x0000..=0x7BFF) with their values,
/// ascending. Bit order and value order coincide for positive halves.
fn positive_values() -> &'static [f64] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| (0x0000u16..=0x7BFF).map(half_value_f64).collect())
}

/// Overflow boundary: max finite (65504) plus half an ulp (32/2).
const OVERFLOW_AT: f64 = 65520.0;

/// Reference round-to-nearest-even conversion, value-space search.
pub fn ref_round_f32(x: f32) -> u16 {
    if x.is_nan() {
        return 0x7E00;
    }
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0x0000 };
    let mag = f64::from(x.abs());
    if mag >= OVERFLOW_AT {
        return sign | 0x7C00;
    }
    let table = positive_values();
    // Largest index with value <= mag.
    let hi = table.partition_point(|&v| v <= mag);
    let lo = hi - 1; // table[0] = 0.0 <= mag, so hi >= 1
    if hi == table.len() {
        // Between 65504 and the overflow boundary.
        return sign | 0x7BFF;
    }
    let d_lo = mag - table[lo];
    let d_hi = table[hi] - mag;
    let pick = if d_lo < d_hi {
        lo
    } else if d_hi < d_lo {
        hi
    } else if lo % 2 == 0 {
        // Tie: even mantissa wins; adjacent patterns differ in the last bit.
        lo
    } else {
        hi
    };
    sign | pick as u16
}

/// Reference widening: the exact f64 value, narrowed to f32 (exact, since
/// every half value is representable in f32).
pub fn ref_to_f32(bits: u16) -> f32 {
    half_value_f64(bits) as f32
}

//! Integer-only GRU inference on power-of-two scales.
//!
//! A value is an integer `v` with exponent `e`, standing for `v * 2^e`.

mod cordic;
mod engine;

pub use cordic::{cordic_eval, Cordic, CordicConfig, CordicMode};
pub use engine::{
    fxp_gru_infer, lower_checkpoint, FxpImage, FxpOp, FxpOptions, FxpOutput, FxpSite, IMAGE_FORMAT,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FxpError {
    #[error("scale of {0} is not snapped to a power of two")]
    Unsnapped(String),
    #[error("no quantization state to lower")]
    NoQuantState,
    #[error("accumulator overflow at site {site} (step {step}): needs more than {bits} bits")]
    Overflow { site: &'static str, step: usize, bits: u32 },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("non-finite feature at step {0}")]
    NonFinite(usize),
    #[error("feature vector has {found} entries, model expects {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Fixed-point scalar: `value * 2^exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fxp {
    pub value: i64,
    pub exp: i32,
}

impl Fxp {
    pub const fn new(value: i64, exp: i32) -> Self {
        Self { value, exp }
    }

    /// Real value; for de-scaling and tests only.
    pub fn to_f64(self) -> f64 {
        self.value as f64 * 2f64.powi(self.exp)
    }
}

/// Arithmetic right shift by `k` with round-half-up on the shifted-out bits.
#[inline]
pub fn shift_right_round(v: i128, k: u32) -> i128 {
    match k {
        0 => v,
        // values stay far below 2^119, so they round to zero
        k if k >= 120 => 0,
        k => (v + (1i128 << (k - 1))) >> k,
    }
}

/// Arithmetic right shift by `k`, ties to even.
#[inline]
pub fn shift_right_round_even(v: i128, k: u32) -> i128 {
    match k {
        0 => v,
        k if k >= 120 => 0,
        k => {
            let q = v >> k;
            let rem = v - (q << k);
            let half = 1i128 << (k - 1);
            if rem > half || (rem == half && q & 1 == 1) {
                q + 1
            } else {
                q
            }
        }
    }
}

/// Tie-breaking rule for right shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RoundMode {
    HalfUp,
    #[default]
    HalfEven,
}

/// Moves `v` from exponent `from` to exponent `to` with half-up rounding.
#[inline]
pub fn rescale(v: i128, from: i32, to: i32) -> i128 {
    rescale_with(v, from, to, RoundMode::HalfUp)
}

/// Moves `v` from exponent `from` to exponent `to`: exact left shift when
/// `to < from`, rounding right shift otherwise.
#[inline]
pub fn rescale_with(v: i128, from: i32, to: i32, mode: RoundMode) -> i128 {
    if to >= from {
        let k = (to - from) as u32;
        match mode {
            RoundMode::HalfUp => shift_right_round(v, k),
            RoundMode::HalfEven => shift_right_round_even(v, k),
        }
    } else {
        let k = (from - to) as u32;
        if k >= 127 || (v != 0 && v.unsigned_abs().leading_zeros() <= k) {
            // saturate; callers clamp to the destination range anyway
            if v > 0 {
                i128::MAX / 2
            } else if v < 0 {
                i128::MIN / 2
            } else {
                0
            }
        } else {
            v << k
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_rounds_up() {
        assert_eq!(shift_right_round(3, 1), 2); // 1.5 -> 2
        assert_eq!(shift_right_round(-3, 1), -1); // -1.5 -> -1
        assert_eq!(shift_right_round(5, 2), 1); // 1.25 -> 1
        assert_eq!(shift_right_round(6, 2), 2); // 1.5 -> 2
        assert_eq!(shift_right_round(-6, 2), -1); // -1.5 -> -1
        assert_eq!(shift_right_round(-7, 2), -2); // -1.75 -> -2
        assert_eq!(rescale(5, -4, -6), 20);
        assert_eq!(shift_right_round(-5, 200), 0);
    }

    /// Wide-integer oracle: floor((v * 2 + 2^k) / 2^(k+1)) computed with exact division.
    fn oracle(v: i64, k: u32) -> i128 {
        let num = 2 * v as i128 + (1i128 << k);
        num.div_euclid(1i128 << (k + 1))
    }

    #[test]
    fn ties_to_even() {
        assert_eq!(shift_right_round_even(3, 1), 2); // 1.5 -> 2
        assert_eq!(shift_right_round_even(5, 1), 2); // 2.5 -> 2
        assert_eq!(shift_right_round_even(-3, 1), -2); // -1.5 -> -2
        assert_eq!(shift_right_round_even(-5, 1), -2); // -2.5 -> -2
        assert_eq!(shift_right_round_even(7, 2), 2); // 1.75 -> 2
        for k in 1..=12 {
            for v in -5000i128..5000 {
                let exact = v as f64 / 2f64.powi(k as i32);
                assert_eq!(shift_right_round_even(v, k), exact.round_ties_even() as i128);
            }
        }
    }

    #[test]
    fn full_16_bit_range_matches_oracle() {
        for k in 1..=20 {
            for v in i16::MIN as i64..=i16::MAX as i64 {
                assert_eq!(shift_right_round(v as i128, k), oracle(v, k), "v={v} k={k}");
            }
        }
    }

    proptest! {
        #[test]
        fn rescale_equals_rounded_real(v in -(1i64 << 40)..(1i64 << 40), k in 1u32..30) {
            let got = rescale(v as i128, 0, k as i32);
            let exact = v as f64 / 2f64.powi(k as i32);
            prop_assert_eq!(got, (exact + 0.5).floor() as i128);
        }
    }
}

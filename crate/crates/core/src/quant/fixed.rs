use serde::{Deserialize, Serialize};

/// A non-negative real multiplier encoded as `multiplier * 2^-shift`, with
/// `multiplier` in `[2^30, 2^31)`. A negative `shift` is a left shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMultiplier {
    pub multiplier: i32,
    pub shift: i32,
}

const FRAC_BITS: i32 = 31;

impl FixedMultiplier {
    pub const ZERO: FixedMultiplier = FixedMultiplier { multiplier: 0, shift: 0 };

    pub fn from_real(m: f64) -> Self {
        assert!(m.is_finite() && m >= 0.0, "multiplier must be finite and non-negative, got {m}");
        if m == 0.0 {
            return Self::ZERO;
        }
        // m = frac * 2^exp with frac in [0.5, 1)
        let mut exp = m.log2().floor() as i32 + 1;
        let mut frac = m / 2f64.powi(exp);
        while frac >= 1.0 {
            frac /= 2.0;
            exp += 1;
        }
        while frac < 0.5 {
            frac *= 2.0;
            exp -= 1;
        }
        let mut q = (frac * (1i64 << FRAC_BITS) as f64).round() as i64;
        if q == 1i64 << FRAC_BITS {
            q /= 2;
            exp += 1;
        }
        FixedMultiplier {
            multiplier: q as i32,
            shift: FRAC_BITS - exp,
        }
    }

    /// The real value this encoding represents.
    pub fn to_real(self) -> f64 {
        self.multiplier as f64 * 2f64.powi(-self.shift)
    }

    /// `round(x * M)` with ties away from zero, computed in integers only.
    pub fn apply(self, x: i64) -> i64 {
        self.apply_div(x, 1)
    }

    /// `round(x * M / divisor)` with a single rounding step; `divisor >= 1`.
    pub fn apply_div(self, x: i64, divisor: i64) -> i64 {
        debug_assert!(divisor >= 1);
        let p = x as i128 * self.multiplier as i128;
        let (num, den) = if self.shift >= 0 {
            if self.shift >= 100 {
                return 0;
            }
            (p, (divisor as i128) << self.shift)
        } else {
            (p << (-self.shift).min(62), divisor as i128)
        };
        let q = div_round_half_away(num, den);
        q.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

fn div_round_half_away(num: i128, den: i128) -> i128 {
    // odd divisors have no exact ties, so adding den/2 then truncating is correct for both parities
    let mag = num.unsigned_abs() as i128;
    let r = (mag + den / 2) / den;
    if num < 0 {
        -r
    } else {
        r
    }
}

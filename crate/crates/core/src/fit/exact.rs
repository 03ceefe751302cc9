//! Exact accumulation of `f64 × count` terms with a single final rounding.
//!
//! The accumulator is a two's-complement fixed-point register whose LSB is
//! the smallest subnormal (2^-1074) and which spans the whole finite `f64`
//! range plus 128 bits of headroom. Every addition is exact, so any two
//! orderings or groupings of the same terms produce the same result.

const LIMBS: usize = 36;
const LSB_EXP: i32 = -1074;

#[derive(Clone)]
pub struct ExactSum {
    limbs: [u64; LIMBS],
    /// Accumulates non-finite inputs; dominates the result when non-zero.
    special: f64,
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum {
            limbs: [0; LIMBS],
            special: 0.0,
        }
    }
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSum({})", self.value())
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        self.add_times(x, 1);
    }

    /// Adds `x * count` exactly.
    pub fn add_times(&mut self, x: f64, count: u64) {
        if count == 0 || x == 0.0 {
            return;
        }
        if !x.is_finite() {
            self.special += x;
            return;
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp_field = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1 << 52) - 1);
        let (mantissa, exp) = if exp_field == 0 {
            (frac, LSB_EXP)
        } else {
            (frac | (1 << 52), exp_field - 1075)
        };
        let offset = (exp - LSB_EXP) as u32;
        let product = mantissa as u128 * count as u128;
        let limb = (offset / 64) as usize;
        let shift = offset % 64;
        let lo = product as u64;
        let hi = (product >> 64) as u64;
        let words = if shift == 0 {
            [lo, hi, 0]
        } else {
            [lo << shift, (hi << shift) | (lo >> (64 - shift)), hi >> (64 - shift)]
        };
        if negative {
            self.sub_words(limb, words);
        } else {
            self.add_words(limb, words);
        }
    }

    fn add_words(&mut self, start: usize, words: [u64; 3]) {
        let mut carry = false;
        for (i, limb) in self.limbs.iter_mut().enumerate().skip(start) {
            let w = words.get(i - start).copied().unwrap_or(0);
            if w == 0 && !carry && i >= start + 3 {
                break;
            }
            let (s1, c1) = limb.overflowing_add(w);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *limb = s2;
            carry = c1 || c2;
        }
    }

    fn sub_words(&mut self, start: usize, words: [u64; 3]) {
        let mut borrow = false;
        for (i, limb) in self.limbs.iter_mut().enumerate().skip(start) {
            let w = words.get(i - start).copied().unwrap_or(0);
            if w == 0 && !borrow && i >= start + 3 {
                break;
            }
            let (d1, b1) = limb.overflowing_sub(w);
            let (d2, b2) = d1.overflowing_sub(borrow as u64);
            *limb = d2;
            borrow = b1 || b2;
        }
    }

    /// The accumulated sum, correctly rounded (ties to even).
    pub fn value(&self) -> f64 {
        if self.special != 0.0 || self.special.is_nan() {
            return self.special;
        }
        let negative = self.limbs[LIMBS - 1] >> 63 == 1;
        let mag = if negative {
            let mut m = self.limbs;
            let mut carry = true;
            for limb in m.iter_mut() {
                let (s, c) = (!*limb).overflowing_add(carry as u64);
                *limb = s;
                carry = c;
            }
            m
        } else {
            self.limbs
        };
        let Some(top) = (0..LIMBS).rev().find(|&i| mag[i] != 0) else {
            return 0.0;
        };
        let high = top as u32 * 64 + 63 - mag[top].leading_zeros();
        let bit = |i: u32| (mag[(i / 64) as usize] >> (i % 64)) & 1;
        let magnitude = if high < 53 {
            // Below 2^53 ulps of 2^-1074 the bit pattern is the f64 encoding.
            f64::from_bits(mag[0])
        } else {
            let lo = high - 52;
            let mut mant = 0u64;
            for i in (lo..=high).rev() {
                mant = (mant << 1) | bit(i);
            }
            let round = bit(lo - 1) == 1;
            let cut = lo - 1;
            let full = (cut / 64) as usize;
            let partial = cut % 64;
            let sticky =
                mag[..full].iter().any(|&w| w != 0) || (partial > 0 && mag[full] & ((1u64 << partial) - 1) != 0);
            let mut exp_field = high as u64 - 51;
            if round && (sticky || mant & 1 == 1) {
                mant += 1;
                if mant == 1 << 53 {
                    mant >>= 1;
                    exp_field += 1;
                }
            }
            if exp_field >= 0x7ff {
                f64::INFINITY
            } else {
                f64::from_bits((exp_field << 52) | (mant & ((1 << 52) - 1)))
            }
        };
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

/// Correctly rounded `Σ x_i`.
pub fn exact_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = ExactSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(exact_sum([]), 0.0);
        assert_eq!(exact_sum([0.1, 0.2]), 0.1 + 0.2);
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([-3.5, 1.25]), -2.25);
        assert_eq!(
            exact_sum([f64::MIN_POSITIVE / 8.0, f64::MIN_POSITIVE / 8.0]),
            f64::MIN_POSITIVE / 4.0
        );
        assert_eq!(exact_sum([f64::MAX, f64::MAX]), f64::INFINITY);
        assert!(exact_sum([1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn counts_multiply() {
        let mut acc = ExactSum::new();
        acc.add_times(0.1, 3);
        assert_eq!(acc.value(), 0.1 * 3.0);
        acc.add_times(-0.1, 3);
        assert_eq!(acc.value(), 0.0);
    }

    #[test]
    fn ties_round_to_even() {
        // 2^53 + 1 is halfway between 2^53 and 2^53 + 2.
        assert_eq!(exact_sum([9007199254740992.0, 1.0]), 9007199254740992.0);
        assert_eq!(exact_sum([9007199254740994.0, 1.0]), 9007199254740996.0);
        // Sticky bit breaks the tie upward.
        assert_eq!(exact_sum([9007199254740992.0, 1.0, 1e-300]), 9007199254740994.0);
    }

    proptest! {
        #[test]
        fn pair_matches_ieee_addition(a in -1e300f64..1e300, b in -1e300f64..1e300) {
            prop_assert_eq!(exact_sum([a, b]), a + b);
        }

        #[test]
        fn scaled_matches_ieee_product(a in -1e12f64..1e12, c in 0u64..(1 << 40)) {
            let mut acc = ExactSum::new();
            acc.add_times(a, c);
            prop_assert_eq!(acc.value(), a * c as f64);
        }

        #[test]
        fn order_independent(mut xs in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let forward = exact_sum(xs.iter().copied());
            xs.reverse();
            prop_assert_eq!(exact_sum(xs.iter().copied()), forward);
        }

        #[test]
        fn integers_match_i128(xs in proptest::collection::vec(-(1i64 << 52)..(1i64 << 52), 0..64)) {
            let want: i128 = xs.iter().map(|&x| x as i128).sum();
            prop_assert_eq!(exact_sum(xs.iter().map(|&x| x as f64)), want as f64);
        }
    }
}

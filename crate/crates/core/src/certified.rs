//! Rational enclosures of logarithms, used where a real-valued parameter
//! has to be rounded in a known direction.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Closed interval `[lo, hi]` with rational endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enclosure {
    pub lo: BigRational,
    pub hi: BigRational,
}

impl Enclosure {
    pub fn exact(q: BigRational) -> Self {
        Enclosure { lo: q.clone(), hi: q }
    }

    pub fn width(&self) -> BigRational {
        &self.hi - &self.lo
    }

    pub fn contains(&self, q: &BigRational) -> bool {
        &self.lo <= q && q <= &self.hi
    }

    /// Product of two enclosures of non-negative quantities.
    pub fn mul_nonneg(&self, other: &Enclosure) -> Enclosure {
        debug_assert!(!self.lo.is_negative() && !other.lo.is_negative());
        Enclosure { lo: &self.lo * &other.lo, hi: &self.hi * &other.hi }
    }

    /// Quotient of non-negative by strictly positive.
    pub fn div_pos(&self, other: &Enclosure) -> Enclosure {
        debug_assert!(other.lo.is_positive());
        Enclosure { lo: &self.lo / &other.hi, hi: &self.hi / &other.lo }
    }

    /// Widens to dyadic endpoints with `bits` fractional bits.
    pub fn round_out(&self, bits: u32) -> Enclosure {
        let scale = BigRational::from_integer(BigInt::one() << bits);
        let lo = (&self.lo * &scale).floor() / &scale;
        let hi = (&self.hi * &scale).ceil() / &scale;
        Enclosure { lo, hi }
    }
}

/// `atanh(z)` for rational `0 <= z <= 1/3`, accurate to `2^-bits`.
fn atanh_small(z: &BigRational, bits: u32) -> Enclosure {
    if z.is_zero() {
        return Enclosure::exact(BigRational::zero());
    }
    let target = BigRational::new(BigInt::one(), BigInt::one() << bits);
    let z2 = z * z;
    let one_minus = BigRational::one() - &z2;
    let mut sum = BigRational::zero();
    let mut power = z.clone();
    let mut j: u64 = 0;
    loop {
        sum += &power / BigRational::from_integer(BigInt::from(2 * j + 1));
        power *= &z2;
        j += 1;
        // remaining terms are at most power / ((2j+1)(1 - z^2))
        let tail = &power / (BigRational::from_integer(BigInt::from(2 * j + 1)) * &one_minus);
        if tail < target {
            return Enclosure { lo: sum.clone(), hi: sum + tail }.round_out(bits + 8);
        }
    }
}

/// Enclosure of `ln 2` of width at most `2^-bits` (roughly).
pub fn ln2(bits: u32) -> Enclosure {
    let e = atanh_small(&BigRational::new(1.into(), 3.into()), bits + 2);
    Enclosure { lo: e.lo * BigRational::from_integer(2.into()), hi: e.hi * BigRational::from_integer(2.into()) }
}

/// Enclosure of `ln n` for an integer `n >= 1`.
pub fn ln_int(n: u64, bits: u32) -> Enclosure {
    assert!(n >= 1, "logarithm of zero");
    if n == 1 {
        return Enclosure::exact(BigRational::zero());
    }
    // n = 2^e * f with f in [1, 2); ln f = 2 atanh((f-1)/(f+1))
    let e = 63 - n.leading_zeros();
    let f = BigRational::new(BigInt::from(n), BigInt::one() << e);
    let z = (&f - BigRational::one()) / (&f + BigRational::one());
    let extra = 8;
    let tail = atanh_small(&z, bits + extra);
    let two = BigRational::from_integer(2.into());
    let l2 = ln2(bits + extra + 8);
    let e_q = BigRational::from_integer(e.into());
    Enclosure {
        lo: &e_q * &l2.lo + &two * &tail.lo,
        hi: &e_q * &l2.hi + &two * &tail.hi,
    }
    .round_out(bits + extra)
}

/// `floor(sqrt(q) * 2^bits)` for rational `q >= 0`.
pub fn floor_sqrt_scaled(q: &BigRational, bits: u32) -> BigInt {
    let scaled = (q * BigRational::from_integer(BigInt::one() << (2 * bits))).floor().to_integer();
    // floor(sqrt(floor(x))) = floor(sqrt(x))
    num_integer::Roots::sqrt(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    #[test]
    fn ln2_brackets_the_float_value() {
        let e = ln2(80);
        let lo = e.lo.to_f64().unwrap();
        let hi = e.hi.to_f64().unwrap();
        assert!(lo <= std::f64::consts::LN_2 + 1e-16 && hi >= std::f64::consts::LN_2 - 1e-16);
        assert!(e.width() < BigRational::new(1.into(), BigInt::one() << 70));
    }

    #[test]
    fn ln_int_matches_float_and_is_narrow() {
        for n in [1u64, 2, 3, 7, 16, 81, 100, 1000, 65_537, 1 << 40] {
            let e = ln_int(n, 90);
            let f = (n as f64).ln();
            assert!((e.lo.to_f64().unwrap() - f).abs() < 1e-12, "n={n}");
            assert!(e.lo <= e.hi);
            assert!(e.width() < BigRational::new(1.into(), BigInt::one() << 80), "n={n}");
        }
        // ln 16 = 4 ln 2 exactly, so the enclosures must overlap
        let a = ln_int(16, 90);
        let b = ln2(90);
        let four = BigRational::from_integer(4.into());
        assert!(a.lo <= &b.hi * &four && &b.lo * &four <= a.hi);
    }

    #[test]
    fn scaled_square_roots() {
        assert_eq!(floor_sqrt_scaled(&BigRational::from_integer(4.into()), 3), BigInt::from(16));
        assert_eq!(floor_sqrt_scaled(&BigRational::new(1.into(), 2.into()), 4), BigInt::from(11));
    }
}

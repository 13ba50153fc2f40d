//! Per-length constraint parameters and the checkpoint/activation schedule.
//!
//! For an output length `n >= 3`: `t_n = n` shufflers, block lengths up to
//! `ell_n = floor(log_k(n) / 3)`, and tolerance
//! `eps_n = 2 sqrt(ln n * log_k n / n)` stored as a dyadic rational rounded
//! down. Checkpoints are `N_j = (j + m0)^4`, activated at `A_j = (j + m0)^2`.

use std::collections::HashMap;
use std::sync::Mutex;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::certified::{floor_sqrt_scaled, ln_int, Enclosure};
use crate::shuffler::ShufflerFamily;
use crate::words::Alphabet;

pub type Rational = BigRational;

pub const DEFAULT_EPS_BITS: u32 = 64;

/// Partial-sum horizon for certifying `sum_j (j + m0)^-8 < 1/4`.
const SUM_HORIZON: u64 = 10_000;
const SUM_BITS: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("output length n = {0} is below 3")]
    LengthTooSmall(u64),
    #[error("block length r = {r} outside 1..={n}")]
    BlockOutOfRange { r: u64, n: u64 },
    #[error("m0 = {0} does not certify sum_j (j+m0)^-8 < 1/4")]
    SumNotCertified(u64),
    #[error("N_1 = {n1} is below n0 = {n0}")]
    FirstCheckpointTooSmall { n1: u64, n0: u64 },
    #[error("checkpoint index {0} must be at least 1")]
    BadIndex(u64),
    #[error("fixed tolerance must be non-negative")]
    NegativeTolerance,
    #[error("eps_bits must be between 1 and 1024")]
    BadPrecision,
}

/// How `eps_n` is obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpsilonRule {
    /// `2 sqrt(ln n log_k n / n)`, rounded down to `eps_bits` fractional bits.
    Formula,
    /// The same tolerance at every length; for exercising the construction
    /// at sizes where the formula exceeds 1.
    Fixed(Rational),
}

/// Parameters of the constraint family at one output length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthParams {
    pub n: u64,
    /// `t_n`: how many shufflers are constrained.
    pub shufflers: u64,
    /// `ell_n`: the longest block length constrained.
    pub max_block: usize,
    pub eps: Rational,
}

/// Outcome of rounding `eps_n` down to a dyadic value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpsCertificate {
    pub stored: Rational,
    /// Enclosure of `eps_n^2`.
    pub squared: Enclosure,
    /// `stored <= eps_n < stored + 2^-bits` was proven.
    pub certified: bool,
}

#[derive(Debug)]
pub struct Schedule {
    alphabet: Alphabet,
    m0: u64,
    n0: u64,
    eps_bits: u32,
    rule: EpsilonRule,
    family: ShufflerFamily,
    eps_cache: Mutex<HashMap<u64, Rational>>,
}

impl Clone for Schedule {
    fn clone(&self) -> Self {
        Schedule {
            alphabet: self.alphabet,
            m0: self.m0,
            n0: self.n0,
            eps_bits: self.eps_bits,
            rule: self.rule.clone(),
            family: self.family.clone(),
            eps_cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Schedule {
    pub fn new(alphabet: Alphabet, m0: u64, n0: u64, eps_bits: u32) -> Result<Self, ScheduleError> {
        if eps_bits == 0 || eps_bits > 1024 {
            return Err(ScheduleError::BadPrecision);
        }
        if !checkpoint_sum_certified(m0) {
            return Err(ScheduleError::SumNotCertified(m0));
        }
        let n1 = (1 + m0).pow(4);
        if n1 < n0 {
            return Err(ScheduleError::FirstCheckpointTooSmall { n1, n0 });
        }
        Ok(Schedule {
            alphabet,
            m0,
            n0,
            eps_bits,
            rule: EpsilonRule::Formula,
            family: ShufflerFamily::Canonical,
            eps_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Uses the least admissible `m0` for `n0`.
    pub fn auto(alphabet: Alphabet, n0: u64, eps_bits: u32) -> Result<Self, ScheduleError> {
        Self::new(alphabet, choose_m0(n0), n0, eps_bits)
    }

    pub fn with_epsilon(mut self, rule: EpsilonRule) -> Result<Self, ScheduleError> {
        if let EpsilonRule::Fixed(eps) = &rule {
            if eps < &Rational::zero() {
                return Err(ScheduleError::NegativeTolerance);
            }
        }
        self.rule = rule;
        self.eps_cache = Mutex::new(HashMap::new());
        Ok(self)
    }

    pub fn with_family(mut self, family: ShufflerFamily) -> Self {
        self.family = family;
        self
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn k(&self) -> u32 {
        self.alphabet.size()
    }

    pub fn m0(&self) -> u64 {
        self.m0
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    pub fn eps_bits(&self) -> u32 {
        self.eps_bits
    }

    pub fn rule(&self) -> &EpsilonRule {
        &self.rule
    }

    pub fn family(&self) -> &ShufflerFamily {
        &self.family
    }

    pub fn params_of(&self, n: u64) -> Result<LengthParams, ScheduleError> {
        if n < 3 {
            return Err(ScheduleError::LengthTooSmall(n));
        }
        let eps = match &self.rule {
            EpsilonRule::Fixed(eps) => eps.clone(),
            EpsilonRule::Formula => {
                let mut cache = self.eps_cache.lock().expect("eps cache poisoned");
                cache
                    .entry(n)
                    .or_insert_with(|| eps_certificate(self.k(), n, self.eps_bits).stored)
                    .clone()
            }
        };
        Ok(LengthParams { n, shufflers: n, max_block: max_block_length(self.k(), n), eps })
    }

    /// `(N_j, A_j) = ((j + m0)^4, (j + m0)^2)`.
    pub fn checkpoints(&self, j: u64) -> Result<(u64, u64), ScheduleError> {
        if j == 0 {
            return Err(ScheduleError::BadIndex(j));
        }
        Ok(checkpoint_lengths(self.m0, j))
    }

    fn checkpoint(&self, j: u64) -> u64 {
        (j + self.m0).pow(4)
    }

    /// `N_j` for `j >= 1`.
    pub fn checkpoint_len(&self, j: u64) -> u64 {
        self.checkpoint(j)
    }

    fn activation(&self, j: u64) -> u64 {
        (j + self.m0).pow(2)
    }

    /// Indices already activated by length `len`: `A_j <= len`.
    pub fn activated_by(&self, len: u64) -> Vec<u64> {
        let root = integer_sqrt(len);
        (1..=root.saturating_sub(self.m0)).collect()
    }

    /// `J(L) = { j : A_j <= L <= N_j }`, ascending.
    pub fn active_set(&self, len: u64) -> Vec<u64> {
        self.activated_by(len).into_iter().filter(|&j| self.checkpoint(j) >= len).collect()
    }

    /// Indices with `A_j = len`.
    pub fn activated_at(&self, len: u64) -> Vec<u64> {
        self.activated_by(len).into_iter().filter(|&j| self.activation(j) == len).collect()
    }

    /// Indices with `N_j <= len`, i.e. checkpoints reached by a prefix of that length.
    pub fn checkpoints_within(&self, len: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut j = 1;
        while self.checkpoint(j) <= len {
            out.push(j);
            j += 1;
        }
        out
    }

    /// `sum_{j : A_j <= len} 1 / N_j^2`.
    pub fn potential_budget(&self, len: u64) -> Rational {
        self.activated_by(len)
            .into_iter()
            .map(|j| {
                let nj = BigInt::from(self.checkpoint(j));
                Rational::new(BigInt::one(), &nj * &nj)
            })
            .fold(Rational::zero(), |acc, x| acc + x)
    }
}

/// `(N_j, A_j)` for a given offset `m0`, without validating `m0`.
pub fn checkpoint_lengths(m0: u64, j: u64) -> (u64, u64) {
    let base = j + m0;
    (base.pow(4), base.pow(2))
}

/// `m_{n,r} = floor(n / r)`.
pub fn block_count(n: u64, r: u64) -> Result<u64, ScheduleError> {
    if r == 0 || r > n {
        return Err(ScheduleError::BlockOutOfRange { r, n });
    }
    Ok(n / r)
}

/// `floor(log_k(n) / 3)`: the largest `l` with `k^(3l) <= n`.
pub fn max_block_length(k: u32, n: u64) -> usize {
    let k3 = (k as u128).pow(3);
    let mut l = 0;
    let mut power: u128 = 1;
    while power * k3 <= n as u128 {
        power *= k3;
        l += 1;
    }
    l
}

/// Rounds `eps_n` down to `bits` fractional bits with an interval proof.
pub fn eps_certificate(k: u32, n: u64, bits: u32) -> EpsCertificate {
    assert!(n >= 3, "eps_n is defined for n >= 3");
    let scale = BigRational::from_integer(BigInt::one() << bits);
    let mut extra = 48;
    loop {
        let precision = bits + extra;
        let ln_n = ln_int(n, precision);
        let ln_k = ln_int(k as u64, precision);
        // eps^2 = 4 (ln n)^2 / (n ln k)
        let four_over_n = Enclosure::exact(BigRational::new(4.into(), BigInt::from(n)));
        let squared = ln_n.mul_nonneg(&ln_n).mul_nonneg(&four_over_n).div_pos(&ln_k).round_out(precision * 2);
        let lo = floor_sqrt_scaled(&squared.lo, bits);
        let hi = floor_sqrt_scaled(&squared.hi, bits);
        let certified = lo == hi;
        if certified || extra >= 1024 {
            let stored = BigRational::from_integer(lo) / &scale;
            return EpsCertificate { stored, squared, certified };
        }
        extra *= 2;
    }
}

/// Upper bound, with `SUM_BITS` fractional bits, on `sum_{j>=1} (j + m0)^-8`
/// as a numerator over `2^SUM_BITS`: partial sum through `SUM_HORIZON`
/// (each term rounded up) plus `integral_{H}^inf (x + m0)^-8 dx`.
fn checkpoint_sum_upper(m0: u64) -> u128 {
    let one: u128 = 1 << SUM_BITS;
    let ceil_div = |den: Option<u128>| match den {
        Some(d) => one.div_ceil(d),
        None => 1,
    };
    let mut total: u128 = 0;
    for j in 1..=SUM_HORIZON {
        total += ceil_div((j as u128 + m0 as u128).checked_pow(8));
    }
    let h = SUM_HORIZON as u128 + m0 as u128;
    total + ceil_div(h.checked_pow(7).and_then(|p| p.checked_mul(7)))
}

pub fn checkpoint_sum_certified(m0: u64) -> bool {
    // sum < 1/4  <=>  4 * numerator < 2^SUM_BITS
    checkpoint_sum_upper(m0).saturating_mul(4) < (1u128 << SUM_BITS)
}

/// Least `m0` with `(1 + m0)^4 >= n0` and a certified checkpoint sum below 1/4.
pub fn choose_m0(n0: u64) -> u64 {
    let mut m0: u64 = 0;
    while (1 + m0).pow(4) < n0 || !checkpoint_sum_certified(m0) {
        m0 += 1;
    }
    m0
}

fn integer_sqrt(x: u64) -> u64 {
    num_integer::Roots::sqrt(&x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn sched(m0: u64) -> Schedule {
        Schedule::new(bin(), m0, 1, DEFAULT_EPS_BITS).unwrap()
    }

    #[test]
    fn length_parameters() {
        let s = sched(1);
        let p = s.params_of(16).unwrap();
        assert_eq!((p.shufflers, p.max_block), (16, 1));
        assert_eq!(s.params_of(512).unwrap().max_block, 3);
        assert_eq!(s.params_of(511).unwrap().max_block, 2);
        assert_eq!(s.params_of(7).unwrap().max_block, 0);
        assert_eq!(s.params_of(2), Err(ScheduleError::LengthTooSmall(2)));
    }

    #[test]
    fn eps_at_sixteen() {
        // 2 sqrt(ln 16 * 4 / 16) = sqrt(ln 16) = 1.66510...
        let c = eps_certificate(2, 16, 64);
        assert!(c.certified);
        let v = c.stored.to_f64().unwrap();
        assert!((v - 16f64.ln().sqrt()).abs() < 1e-12);
        assert!(*c.stored.denom() <= BigInt::one() << 64);
        let s = sched(1);
        assert_eq!(s.params_of(16).unwrap().eps, c.stored);
    }

    #[test]
    fn eps_rounding_is_certified_over_a_range() {
        let ulp = BigRational::new(BigInt::one(), BigInt::one() << 64);
        for n in (3..400u64).chain([1000, 4096, 65_536, 1_000_003]) {
            for k in [2u32, 3, 10] {
                let c = eps_certificate(k, n, 64);
                assert!(c.certified, "k={k} n={n}");
                // stored^2 <= eps^2 and (stored + ulp)^2 > eps^2
                assert!(&c.stored * &c.stored <= c.squared.lo);
                let up = &c.stored + &ulp;
                assert!(&up * &up > c.squared.hi);
            }
        }
    }

    #[test]
    fn checkpoint_examples() {
        assert_eq!(sched(1).checkpoints(1).unwrap(), (16, 4));
        assert_eq!(sched(1).checkpoints(2).unwrap(), (81, 9));
        assert!(Schedule::new(bin(), 0, 1, 64).is_err());
        assert!(sched(1).checkpoints(0).is_err());
        // m0 = 0 fails the sum certificate but the lengths are still defined
        assert_eq!(checkpoint_lengths(0, 3), (81, 9));
    }

    #[test]
    fn active_set_examples() {
        let s = sched(1);
        assert!(s.active_set(0).is_empty());
        assert!(s.active_set(3).is_empty());
        assert_eq!(s.active_set(4), vec![1]);
        // A_3 = 16, so j = 3 joins exactly when j = 1 is about to leave
        assert_eq!(s.active_set(15), vec![1, 2]);
        assert_eq!(s.active_set(16), vec![1, 2, 3]);
        assert_eq!(s.active_set(17), vec![2, 3]);
        assert_eq!(s.active_set(20), vec![2, 3]);
        assert_eq!(s.activated_at(9), vec![2]);
        assert!(s.activated_at(10).is_empty());
        assert_eq!(s.checkpoints_within(80), vec![1]);
        assert_eq!(s.checkpoints_within(81), vec![1, 2]);
    }

    #[test]
    fn block_counts() {
        assert_eq!(block_count(16, 1).unwrap(), 16);
        assert_eq!(block_count(16, 3).unwrap(), 5);
        assert_eq!(block_count(9, 9).unwrap(), 1);
        assert!(block_count(9, 0).is_err());
        assert!(block_count(9, 10).is_err());
    }

    #[test]
    fn m0_selection() {
        assert!(!checkpoint_sum_certified(0));
        assert!(checkpoint_sum_certified(1));
        assert_eq!(choose_m0(1), 1);
        assert_eq!(choose_m0(16), 1);
        assert_eq!(choose_m0(17), 2);
        assert_eq!(choose_m0(100), 3);
        let s = Schedule::auto(bin(), 100, 64).unwrap();
        assert_eq!(s.m0(), 3);
        assert!(matches!(
            Schedule::new(bin(), 1, 100, 64),
            Err(ScheduleError::FirstCheckpointTooSmall { n1: 16, n0: 100 })
        ));
    }

    #[test]
    fn budget_sums() {
        let s = sched(1);
        assert_eq!(s.potential_budget(3), Rational::zero());
        assert_eq!(s.potential_budget(9), Rational::new(1.into(), 256.into()) + Rational::new(1.into(), 6561.into()));
        assert!(s.potential_budget(1_000_000) < Rational::new(1.into(), 4.into()));
    }

    proptest! {
        #[test]
        fn active_set_transitions(m0 in 1u64..4, len in 0u64..3000) {
            let s = sched(m0);
            let now: Vec<u64> = s.active_set(len);
            let next: Vec<u64> = s.active_set(len + 1);
            let added: Vec<u64> = next.iter().copied().filter(|j| !now.contains(j)).collect();
            let removed: Vec<u64> = now.iter().copied().filter(|j| !next.contains(j)).collect();
            let expect_added: Vec<u64> = s.activated_at(len + 1);
            let expect_removed: Vec<u64> = now.iter().copied().filter(|&j| s.checkpoints(j).unwrap().0 == len).collect();
            prop_assert_eq!(added, expect_added);
            prop_assert_eq!(removed, expect_removed);
            prop_assert!(now.len() as u64 <= integer_sqrt(len));
            for j in now {
                // A_j <= L gives N_j = A_j^2 <= L^2
                prop_assert!(s.checkpoints(j).unwrap().0 <= len * len);
            }
        }
    }
}

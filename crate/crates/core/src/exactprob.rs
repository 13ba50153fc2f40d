//! Exact laws of aligned block counts of shuffler outputs under prefix
//! conditioning.
//!
//! Every mass is an integer numerator over an implicit denominator `k^t`,
//! where `t` is the number of output steps taken so far. A fixed read that
//! agrees with the prefix multiplies the numerator by `k` (probability one),
//! a free read keeps it (probability `1/k`). Reduction to a fraction in
//! lowest terms happens only when a probability leaves this module.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::shuffler::{Shuffler, ShufflerError, Tape};
use crate::words::{occ_aligned, Alphabet, Word, WordError};

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbError {
    #[error("block word has length {len}, expected r = {r} >= 1")]
    BadBlock { len: usize, r: usize },
    #[error("prefixes have lengths {x} and {y}; they must be equal")]
    UnequalPrefixes { x: usize, y: usize },
    #[error("prefix length {prefix} exceeds horizon n = {n}")]
    PrefixTooLong { prefix: usize, n: usize },
    #[error("enumeration of {required} cases exceeds the budget of {budget}")]
    BudgetExceeded { required: String, budget: u64 },
    #[error("delta must lie in (0, 1]")]
    DeltaOutOfRange,
    #[error("p must lie in (0, 1]")]
    ProbabilityOutOfRange,
    #[error("tolerance must be non-negative")]
    NegativeTolerance,
    #[error("oracle law is not representable over k^n")]
    NotDyadic,
    #[error("malformed distribution text: {0}")]
    Parse(String),
    #[error(transparent)]
    Word(#[from] WordError),
    #[error(transparent)]
    Shuffler(#[from] ShufflerError),
}

/// `numerator / k^steps`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BaseKProb {
    pub numerator: BigUint,
    pub steps: u32,
}

impl BaseKProb {
    pub fn to_rational(&self, k: u32) -> Rational {
        Rational::new(
            BigInt::from(self.numerator.clone()),
            BigInt::from(BigUint::from(k).pow(self.steps)),
        )
    }

    pub fn checked_add(&self, other: &BaseKProb) -> Option<BaseKProb> {
        (self.steps == other.steps).then(|| BaseKProb {
            numerator: &self.numerator + &other.numerator,
            steps: self.steps,
        })
    }
}

/// Law of `C = alocc_{w,r}(S(X,Y)[1..n])`: `mass[c]` is the numerator of
/// `Pr[C = c]` over `k^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountDistribution {
    pub k: u32,
    pub n: usize,
    pub r: usize,
    pub w: Word,
    pub mass: Vec<BigUint>,
}

impl CountDistribution {
    /// Number of aligned blocks, `floor(n / r)`.
    pub fn blocks(&self) -> usize {
        self.n / self.r
    }

    pub fn denominator(&self) -> BigUint {
        BigUint::from(self.k).pow(self.n as u32)
    }

    pub fn prob(&self, c: usize) -> BaseKProb {
        BaseKProb {
            numerator: self.mass.get(c).cloned().unwrap_or_default(),
            steps: self.n as u32,
        }
    }

    pub fn total_numerator(&self) -> BigUint {
        self.mass.iter().sum()
    }

    /// Header `n r w k`, then one `c numerator` line per count.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {} {}\n", self.n, self.r, self.w, self.k);
        for (c, m) in self.mass.iter().enumerate() {
            out.push_str(&format!("{c} {m}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ProbError> {
        let bad = |m: &str| ProbError::Parse(m.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        let [n, r, w, k] = header[..] else {
            return Err(bad("header must be `n r w k`"));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("expected integer"));
        let (n, r, k) = (parse(n)?, parse(r)?, parse(k)? as u32);
        let w = Word::parse(w, Alphabet::new(k)?)?;
        let mut mass = Vec::new();
        for (expected, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let c = parse(fields.next().ok_or_else(|| bad("missing count"))?)?;
            if c != expected {
                return Err(bad("counts must be listed in order from 0"));
            }
            let m = fields
                .next()
                .and_then(|s| s.parse::<BigUint>().ok())
                .ok_or_else(|| bad("missing numerator"))?;
            mass.push(m);
        }
        Ok(CountDistribution { k, n, r, w, mass })
    }
}

/// Fraction in lowest terms as `num/den`.
pub struct DisplayRational<'a>(pub &'a Rational);

impl fmt::Display for DisplayRational<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

pub fn format_rational(q: &Rational) -> String {
    DisplayRational(q).to_string()
}

/// Parses `num/den` or a plain integer.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    match text.split_once('/') {
        Some((n, d)) => {
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(Rational::new(n.trim().parse().ok()?, d))
        }
        None => Some(Rational::from_integer(text.parse().ok()?)),
    }
}

/// Numerator arithmetic used inside the DP: `u128` when `k^n` fits, big
/// integers otherwise.
trait Mass: Clone + Send {
    fn m_zero() -> Self;
    fn m_one() -> Self;
    fn m_is_zero(&self) -> bool;
    fn add_scaled(&mut self, other: &Self, factor: u32);
    fn into_big(self) -> BigUint;
}

impl Mass for u128 {
    fn m_zero() -> Self {
        0
    }

    fn m_one() -> Self {
        1
    }

    fn m_is_zero(&self) -> bool {
        *self == 0
    }

    fn add_scaled(&mut self, other: &Self, factor: u32) {
        *self += other * factor as u128;
    }

    fn into_big(self) -> BigUint {
        BigUint::from(self)
    }
}

impl Mass for BigUint {
    fn m_zero() -> Self {
        Zero::zero()
    }

    fn m_one() -> Self {
        One::one()
    }

    fn m_is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn add_scaled(&mut self, other: &Self, factor: u32) {
        if factor == 1 {
            *self += other;
        } else {
            *self += other * factor;
        }
    }

    fn into_big(self) -> BigUint {
        self
    }
}

struct Instance<'a> {
    s: &'a Shuffler,
    n: usize,
    r: usize,
    w: &'a [u8],
    up: &'a [u8],
    vp: &'a [u8],
}

fn validate<'a>(
    s: &'a Shuffler,
    n: usize,
    r: usize,
    w: &'a [u8],
    up: &'a [u8],
    vp: &'a [u8],
) -> Result<Instance<'a>, ProbError> {
    if r == 0 || w.len() != r {
        return Err(ProbError::BadBlock { len: w.len(), r });
    }
    if up.len() != vp.len() {
        return Err(ProbError::UnequalPrefixes { x: up.len(), y: vp.len() });
    }
    if up.len() > n {
        return Err(ProbError::PrefixTooLong { prefix: up.len(), n });
    }
    let a = s.alphabet();
    a.check(w)?;
    a.check(up)?;
    a.check(vp)?;
    Ok(Instance { s, n, r, w, up, vp })
}

/// Exact law of the aligned count of `w` in `S(X,Y)[1..n]` given `X ∈ [up]`,
/// `Y ∈ [vp]`.
///
/// The table is indexed by output time `t`; within a slice the live
/// coordinates are `(q, a)` (so `b = t - a` and the block offset is
/// `t mod r`), plus the match flag and the completed-block count. Only two
/// slices are held at once.
pub fn dp_count_distribution(
    s: &Shuffler,
    n: usize,
    r: usize,
    w: &[u8],
    up: &[u8],
    vp: &[u8],
) -> Result<CountDistribution, ProbError> {
    let inst = validate(s, n, r, w, up, vp)?;
    Ok(run_dp(&inst))
}

fn run_dp(inst: &Instance<'_>) -> CountDistribution {
    let k = inst.s.alphabet().size();
    let bits = (n_bits(k) * (inst.n as f64 + 1.0)).ceil();
    let mass = if bits < 126.0 { dp_table::<u128>(inst) } else { dp_table::<BigUint>(inst) };
    CountDistribution { k, n: inst.n, r: inst.r, w: Word::from(inst.w.to_vec()), mass }
}

fn n_bits(k: u32) -> f64 {
    (k as f64).log2()
}

fn dp_table<M: Mass>(inst: &Instance<'_>) -> Vec<BigUint> {
    let s = inst.s;
    let k = s.alphabet().size() as usize;
    let states = s.num_states();
    let n = inst.n;
    let r = inst.r;
    let m = n / r;
    let fixed = inst.up.len();
    // row layout: [sigma * (m + 1) + c]
    let row_len = 2 * (m + 1);
    let slot = |q: usize, a: usize| q * (n + 1) + a;

    let mut current: Vec<Option<Vec<M>>> = vec![None; states * (n + 1)];
    let mut start_row = vec![M::m_zero(); row_len];
    start_row[m + 1] = M::m_one();
    current[slot(s.start(), 0)] = Some(start_row);

    for t in 0..n {
        let offset = t % r;
        let closes_block = offset + 1 == r;
        let mut next: Vec<Option<Vec<M>>> = vec![None; states * (n + 1)];
        for q in 0..states {
            let tape = s.tape(q);
            for a in 0..=t {
                let Some(row) = current[slot(q, a)].take() else { continue };
                let b = t - a;
                let (pos, prefix) = match tape {
                    Tape::X => (a, inst.up),
                    Tape::Y => (b, inst.vp),
                };
                let next_a = if tape == Tape::X { a + 1 } else { a };
                let (symbols, weight): (std::ops::Range<usize>, u32) = if pos < fixed {
                    let sym = prefix[pos] as usize;
                    (sym..sym + 1, k as u32)
                } else {
                    (0..k, 1)
                };
                for alpha in symbols {
                    let target = slot(s.next(q, alpha as u8), next_a);
                    let dest = next[target].get_or_insert_with(|| vec![M::m_zero(); row_len]);
                    let matches = inst.w[offset] as usize == alpha;
                    for sigma in 0..2 {
                        for c in 0..=m {
                            let value = &row[sigma * (m + 1) + c];
                            if value.m_is_zero() {
                                continue;
                            }
                            let still = sigma == 1 && matches;
                            let index = if closes_block {
                                (m + 1) + c + still as usize
                            } else {
                                still as usize * (m + 1) + c
                            };
                            dest[index].add_scaled(value, weight);
                        }
                    }
                }
            }
        }
        current = next;
    }

    let mut law = vec![M::m_zero(); m + 1];
    for row in current.into_iter().flatten() {
        for sigma in 0..2 {
            for c in 0..=m {
                law[c].add_scaled(&row[sigma * (m + 1) + c], 1);
            }
        }
    }
    law.into_iter().map(Mass::into_big).collect()
}

/// The same law by enumerating every length-`n` completion of both tapes.
/// `budget` bounds the number of completion pairs, `k^(2(n - |up|))`.
pub fn brute_force_distribution(
    s: &Shuffler,
    n: usize,
    r: usize,
    w: &[u8],
    up: &[u8],
    vp: &[u8],
    budget: u64,
) -> Result<CountDistribution, ProbError> {
    let inst = validate(s, n, r, w, up, vp)?;
    let k = s.alphabet().size() as u64;
    let free = (n - up.len()) as u32;
    let per_tape = k.checked_pow(free);
    let pairs = per_tape.and_then(|p| p.checked_mul(p)).filter(|&p| p <= budget);
    let Some(pairs) = pairs else {
        return Err(ProbError::BudgetExceeded {
            required: format!("{k}^{}", 2 * free),
            budget,
        });
    };
    let per_tape = per_tape.unwrap_or(1);
    let m = n / r;
    let mut counts = vec![0u64; m + 1];
    let mut xs = up.to_vec();
    let mut ys = vp.to_vec();
    xs.resize(n, 0);
    ys.resize(n, 0);
    for code in 0..pairs {
        fill_tail(&mut xs[up.len()..], code / per_tape, k);
        fill_tail(&mut ys[vp.len()..], code % per_tape, k);
        let out = inst.s.output(&xs, &ys, n)?;
        counts[occ_aligned(&out, inst.w, r)? as usize] += 1;
    }
    // Pr[C = c] = counts[c] / k^(2 free); rescale to denominator k^n
    let denom = BigUint::from(k).pow(2 * free);
    let target = BigUint::from(k).pow(n as u32);
    let mass = counts
        .into_iter()
        .map(|c| {
            let scaled = BigUint::from(c) * &target;
            if (&scaled % &denom).is_zero() {
                Ok(scaled / &denom)
            } else {
                Err(ProbError::NotDyadic)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CountDistribution { k: k as u32, n, r, w: Word::from(w.to_vec()), mass })
}

fn fill_tail(slots: &mut [u8], mut code: u64, k: u64) {
    for slot in slots.iter_mut().rev() {
        *slot = (code % k) as u8;
        code /= k;
    }
}

/// Whether count `c` violates `|c - m/k^r| < eps * m`.
pub fn count_fails(c: usize, m: usize, k: u32, r: usize, eps: &Rational) -> bool {
    // |c k^r - m| >= eps m k^r
    let kr = BigInt::from(k).pow(r as u32);
    let lhs = (BigInt::from(c) * &kr - BigInt::from(m)).magnitude().clone();
    let rhs = eps * Rational::from_integer(BigInt::from(m) * kr);
    Rational::from_integer(BigInt::from(lhs)) >= rhs
}

/// Numerator over `k^n` of `Pr[|C - m/k^r| >= eps * m]`.
pub fn failure_numerator(dist: &CountDistribution, eps: &Rational) -> BigUint {
    let m = dist.blocks();
    dist.mass
        .iter()
        .enumerate()
        .filter(|(c, mass)| !Zero::is_zero(*mass) && count_fails(*c, m, dist.k, dist.r, eps))
        .map(|(_, mass)| mass)
        .sum()
}

/// `Pr[|C - m/k^r| >= eps * m]`, the complement of the strict good event.
pub fn failure_probability(dist: &CountDistribution, eps: &Rational) -> Result<Rational, ProbError> {
    if eps < &Rational::zero() {
        return Err(ProbError::NegativeTolerance);
    }
    Ok(Rational::new(failure_numerator(dist, eps).into(), dist.denominator().into()))
}

/// `2 exp(-delta^2 M p / 3)`, rounded so the result is never below the true
/// value.
pub fn chernoff_bound(trials: u64, p: &Rational, delta: &Rational) -> Result<f64, ProbError> {
    if delta <= &Rational::zero() || delta > &Rational::one() {
        return Err(ProbError::DeltaOutOfRange);
    }
    if p <= &Rational::zero() || p > &Rational::one() {
        return Err(ProbError::ProbabilityOutOfRange);
    }
    let exponent = delta * delta * p * Rational::from_integer(trials.into()) / Rational::from_integer(3.into());
    if exponent.is_zero() {
        return Ok(2.0);
    }
    // shrink the exponent, then inflate the result, to absorb rounding in to_f64 and exp
    let x = exponent.to_f64().unwrap_or(f64::MAX) * (1.0 - 4.0 * f64::EPSILON);
    let bound = 2.0 * (-x).exp() * (1.0 + 8.0 * f64::EPSILON);
    Ok(bound.min(2.0))
}

/// Bound on one conditional failure probability, available when
/// `4L <= eps m` and `eps <= k^{-r}`: `2 exp(-eps^2 m k^r / 12)`.
pub fn conditional_failure_bound(
    eps: &Rational,
    m: usize,
    k: u32,
    r: usize,
    prefix_len: usize,
) -> Option<f64> {
    let m_q = Rational::from_integer(m.into());
    let kr = Rational::from_integer(BigInt::from(k).pow(r as u32));
    let short_prefix = Rational::from_integer((4 * prefix_len).into()) <= eps * &m_q;
    let small_eps = eps * &kr <= Rational::one();
    if !(short_prefix && small_eps) || eps <= &Rational::zero() {
        return None;
    }
    // delta = eps k^r / 2, mean = m / k^r
    let delta = eps * &kr / Rational::from_integer(2.into());
    let p = Rational::one() / &kr;
    chernoff_bound(m as u64, &p, &delta).ok()
}

type CacheKey = (String, usize, usize, Word, Word, Word);

/// Shared memo table for count laws, keyed by the shuffler's canonical
/// encoding. Concurrent callers asking for the same key compute it once.
#[derive(Default)]
pub struct DistCache {
    map: Mutex<HashMap<CacheKey, Arc<OnceLock<Arc<CountDistribution>>>>>,
    stats: Mutex<CacheStats>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl DistCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(
        &self,
        s: &Shuffler,
        n: usize,
        r: usize,
        w: &[u8],
        up: &[u8],
        vp: &[u8],
    ) -> Result<Arc<CountDistribution>, ProbError> {
        let inst = validate(s, n, r, w, up, vp)?;
        let key = (s.encode(), n, r, Word::from(w.to_vec()), Word::from(up.to_vec()), Word::from(vp.to_vec()));
        let cell = {
            let mut map = self.map.lock().expect("cache poisoned");
            map.entry(key).or_default().clone()
        };
        let mut computed = false;
        let dist = cell
            .get_or_init(|| {
                computed = true;
                Arc::new(run_dp(&inst))
            })
            .clone();
        let mut stats = self.stats.lock().expect("cache poisoned");
        if computed {
            stats.misses += 1;
        } else {
            stats.hits += 1;
        }
        Ok(dist)
    }

    pub fn stats(&self) -> CacheStats {
        *self.stats.lock().expect("cache poisoned")
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.map.lock().expect("cache poisoned").clear();
    }
}

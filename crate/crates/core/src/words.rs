//! Finite words over a `k`-letter alphabet, word sources, and block statistics.
//!
//! Symbols are plain integers `0..k`. The text form writes one character per
//! symbol (`0-9` then `a-z`), so alphabets up to 36 letters are printable.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::path::Path;
use std::sync::Mutex;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

/// Largest alphabet with a one-character-per-symbol text form.
pub const MAX_TEXT_ALPHABET: u32 = 36;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WordError {
    #[error("alphabet size must be at least 2, got {0}")]
    AlphabetTooSmall(u32),
    #[error("alphabet size {0} exceeds the supported maximum of 256")]
    AlphabetTooLarge(u32),
    #[error("symbol {symbol} at position {position} is outside the alphabet of size {k}")]
    SymbolOutOfRange { symbol: u32, position: usize, k: u32 },
    #[error("invalid character {0:?} in word text")]
    BadCharacter(char),
    #[error("block word must be non-empty")]
    EmptyBlock,
    #[error("block length {len} does not match r = {r}")]
    BlockLengthMismatch { len: usize, r: usize },
    #[error("block length m = {m} must satisfy 1 <= m <= |u| = {len}")]
    BlockLengthOutOfRange { m: usize, len: usize },
    #[error("tolerance must be non-negative")]
    NegativeTolerance,
    #[error("word source holds only {available} symbols, {requested} requested")]
    SourceExhausted { available: usize, requested: usize },
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// Alphabet `{0, .., k-1}` with `k >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet(u32);

impl Alphabet {
    pub fn new(k: u32) -> Result<Self, WordError> {
        if k < 2 {
            return Err(WordError::AlphabetTooSmall(k));
        }
        if k > 256 {
            // symbols are stored as bytes
            return Err(WordError::AlphabetTooLarge(k));
        }
        Ok(Alphabet(k))
    }

    pub fn size(self) -> u32 {
        self.0
    }

    /// All words of length `len` in length-lexicographic (numeric) order.
    pub fn words_of_length(self, len: usize) -> impl Iterator<Item = Word> {
        let k = self.0 as u64;
        let total = k.checked_pow(len as u32).expect("too many words to enumerate");
        (0..total).map(move |mut idx| {
            let mut symbols = vec![0u8; len];
            for slot in symbols.iter_mut().rev() {
                *slot = (idx % k) as u8;
                idx /= k;
            }
            Word(symbols)
        })
    }

    pub fn check(self, word: &[u8]) -> Result<(), WordError> {
        match word.iter().position(|&s| s as u32 >= self.0) {
            Some(position) => Err(WordError::SymbolOutOfRange {
                symbol: word[position] as u32,
                position,
                k: self.0,
            }),
            None => Ok(()),
        }
    }
}

/// A finite word; the empty word has no symbols.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn from_symbols(symbols: Vec<u8>) -> Self {
        Word(symbols)
    }

    pub fn zeros(len: usize) -> Self {
        Word(vec![0; len])
    }

    /// Parses the one-character-per-symbol text form; whitespace is skipped.
    pub fn parse(text: &str, alphabet: Alphabet) -> Result<Self, WordError> {
        let mut symbols = Vec::with_capacity(text.len());
        for ch in text.chars().filter(|c| !c.is_whitespace()) {
            let value = ch.to_digit(36).ok_or(WordError::BadCharacter(ch))?;
            if ch.is_ascii_uppercase() {
                return Err(WordError::BadCharacter(ch));
            }
            if value >= alphabet.size() {
                return Err(WordError::SymbolOutOfRange {
                    symbol: value,
                    position: symbols.len(),
                    k: alphabet.size(),
                });
            }
            symbols.push(value as u8);
        }
        Ok(Word(symbols))
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn push(&mut self, symbol: u8) {
        self.0.push(symbol);
    }

    pub fn extended(&self, symbol: u8) -> Word {
        let mut next = self.0.clone();
        next.push(symbol);
        Word(next)
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn into_symbols(self) -> Vec<u8> {
        self.0
    }
}

impl Deref for Word {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl From<Vec<u8>> for Word {
    fn from(symbols: Vec<u8>) -> Self {
        Word(symbols)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            let ch = std::char::from_digit(s as u32, 36).unwrap_or('?');
            write!(f, "{ch}")?;
        }
        Ok(())
    }
}

/// Overlapping occurrences of `w` in `u`.
pub fn occ_overlapping(u: &[u8], w: &[u8]) -> Result<u64, WordError> {
    if w.is_empty() {
        return Err(WordError::EmptyBlock);
    }
    if w.len() > u.len() {
        return Ok(0);
    }
    Ok(u.windows(w.len()).filter(|win| *win == w).count() as u64)
}

/// Occurrences of `w` among the aligned blocks `u[jr..jr+r]`, `0 <= j < |u|/r`.
pub fn occ_aligned(u: &[u8], w: &[u8], r: usize) -> Result<u64, WordError> {
    if r == 0 {
        return Err(WordError::EmptyBlock);
    }
    if w.len() != r {
        return Err(WordError::BlockLengthMismatch { len: w.len(), r });
    }
    Ok(u.chunks_exact(r).filter(|block| *block == w).count() as u64)
}

/// Overlapping counts of every length-`m` block, keyed by base-`k` index.
/// Blocks that never occur are absent from the sparse form.
enum BlockCounts {
    Dense(Vec<u64>),
    Sparse(HashMap<u64, u64>),
}

const DENSE_LIMIT: u64 = 1 << 22;

fn block_counts(u: &[u8], m: usize, k: u32) -> (BlockCounts, Option<u64>) {
    let kk = k as u64;
    let universe = kk.checked_pow(m as u32).filter(|&n| n <= u64::MAX / kk);
    let mut counts = match universe {
        Some(n) if n <= DENSE_LIMIT => BlockCounts::Dense(vec![0; n as usize]),
        _ => BlockCounts::Sparse(HashMap::new()),
    };
    if let Some(n) = universe {
        let mut index = 0u64;
        for (pos, &s) in u.iter().enumerate() {
            index = (index * kk + s as u64) % n;
            if pos + 1 >= m {
                match &mut counts {
                    BlockCounts::Dense(v) => v[index as usize] += 1,
                    BlockCounts::Sparse(map) => *map.entry(index).or_default() += 1,
                }
            }
        }
    } else {
        // k^m overflows: fall back to hashing the windows directly
        let mut by_window: HashMap<&[u8], u64> = HashMap::new();
        for win in u.windows(m) {
            *by_window.entry(win).or_default() += 1;
        }
        let map = by_window.into_values().enumerate().map(|(i, c)| (i as u64, c)).collect();
        counts = BlockCounts::Sparse(map);
    }
    (counts, universe)
}

/// Largest and smallest count over all of `Σ^m`, including absent blocks.
fn count_extremes(u: &[u8], m: usize, k: u32) -> (u64, u64) {
    let (counts, universe) = block_counts(u, m, k);
    match counts {
        BlockCounts::Dense(v) => (
            v.iter().copied().max().unwrap_or(0),
            v.iter().copied().min().unwrap_or(0),
        ),
        BlockCounts::Sparse(map) => {
            let max = map.values().copied().max().unwrap_or(0);
            let all_present = universe.is_some_and(|n| map.len() as u64 == n);
            let min = if all_present { map.values().copied().min().unwrap_or(0) } else { 0 };
            (max, min)
        }
    }
}

/// `max_{w in Σ^m} |occ(u,w)/|u| - k^{-m}|`, normalised by `|u|`.
pub fn max_deviation(u: &[u8], m: usize, k: u32) -> Result<BigRational, WordError> {
    if m == 0 || m > u.len() {
        return Err(WordError::BlockLengthOutOfRange { m, len: u.len() });
    }
    let (max, min) = count_extremes(u, m, k);
    let len = BigInt::from(u.len());
    let km = num_traits::pow(BigInt::from(k), m);
    // |count/len - 1/k^m| = |count*k^m - len| / (len*k^m)
    let dev = |count: u64| (BigInt::from(count) * &km - &len).magnitude().clone();
    let worst = dev(max).max(dev(min));
    Ok(BigRational::new(BigInt::from(worst), len * km))
}

/// Block-frequency test: every length-`m` block frequency is within `eps` of `k^{-m}`.
pub fn run_test(u: &[u8], m: usize, eps: &BigRational, k: u32) -> Result<bool, WordError> {
    if eps.numer() < &BigInt::zero() {
        return Err(WordError::NegativeTolerance);
    }
    Ok(&max_deviation(u, m, k)? <= eps)
}

/// First `n` digits of the base-`k` Champernowne word `1 2 3 ...` (k >= 2).
pub fn champernowne_prefix(k: u32, n: usize) -> Word {
    assert!(k >= 2, "alphabet size must be at least 2");
    let mut out = Vec::with_capacity(n);
    let mut digits = Vec::new();
    let mut value: u64 = 1;
    while out.len() < n {
        digits.clear();
        let mut x = value;
        while x > 0 {
            digits.push((x % k as u64) as u8);
            x /= k as u64;
        }
        out.extend(digits.iter().rev().take(n - out.len()));
        value += 1;
    }
    Word(out)
}

/// A computable infinite word, presented through its prefixes.
pub trait WordSource: Send + Sync {
    fn alphabet(&self) -> Alphabet;

    /// The first `n` symbols.
    fn prefix(&self, n: usize) -> Result<Word, WordError>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct Champernowne {
    alphabet: Alphabet,
}

impl Champernowne {
    pub fn new(alphabet: Alphabet) -> Self {
        Champernowne { alphabet }
    }
}

impl WordSource for Champernowne {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn prefix(&self, n: usize) -> Result<Word, WordError> {
        Ok(champernowne_prefix(self.alphabet.size(), n))
    }

    fn describe(&self) -> String {
        format!("champernowne(k={})", self.alphabet.size())
    }
}

/// A finite literal; prefixes past its end are an error.
#[derive(Debug, Clone)]
pub struct Literal {
    alphabet: Alphabet,
    word: Word,
    label: String,
}

impl Literal {
    pub fn new(word: Word, alphabet: Alphabet) -> Result<Self, WordError> {
        alphabet.check(&word)?;
        Ok(Literal { alphabet, word, label: "literal".into() })
    }

    pub fn parse(text: &str, alphabet: Alphabet) -> Result<Self, WordError> {
        Self::new(Word::parse(text, alphabet)?, alphabet)
    }

    pub fn from_file(path: &Path, alphabet: Alphabet) -> Result<Self, WordError> {
        let text = std::fs::read_to_string(path).map_err(|e| WordError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut lit = Self::parse(&text, alphabet)?;
        lit.label = format!("file:{}", path.display());
        Ok(lit)
    }
}

impl WordSource for Literal {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn prefix(&self, n: usize) -> Result<Word, WordError> {
        if n > self.word.len() {
            return Err(WordError::SourceExhausted { available: self.word.len(), requested: n });
        }
        Ok(self.word.prefix(n))
    }

    fn describe(&self) -> String {
        format!("{}(len={})", self.label, self.word.len())
    }
}

/// Wraps a source and keeps the longest prefix fetched so far.
pub struct CachedSource<'a> {
    inner: &'a dyn WordSource,
    cache: Mutex<Word>,
}

impl<'a> CachedSource<'a> {
    pub fn new(inner: &'a dyn WordSource) -> Self {
        CachedSource { inner, cache: Mutex::new(Word::empty()) }
    }
}

impl WordSource for CachedSource<'_> {
    fn alphabet(&self) -> Alphabet {
        self.inner.alphabet()
    }

    fn prefix(&self, n: usize) -> Result<Word, WordError> {
        let mut cache = self.cache.lock().expect("word cache poisoned");
        if cache.len() < n {
            *cache = self.inner.prefix(n)?;
        }
        Ok(cache.prefix(n))
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// `1/k^m` as an exact rational.
pub fn uniform_block_probability(k: u32, m: usize) -> BigRational {
    BigRational::new(BigInt::one(), num_traits::pow(BigInt::from(k), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Signed;
    use proptest::prelude::*;

    fn w(s: &str) -> Word {
        Word::parse(s, Alphabet::new(36).unwrap()).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn overlapping_counts() {
        assert_eq!(occ_overlapping(&w("000"), &w("00")).unwrap(), 2);
        assert_eq!(occ_overlapping(&w("0101"), &w("01")).unwrap(), 2);
        assert_eq!(occ_overlapping(&w("01"), &w("010")).unwrap(), 0);
        assert_eq!(occ_overlapping(&w("01"), &w("")), Err(WordError::EmptyBlock));
    }

    #[test]
    fn aligned_counts() {
        assert_eq!(occ_aligned(&w("0000"), &w("00"), 2).unwrap(), 2);
        assert_eq!(occ_aligned(&w("001"), &w("00"), 2).unwrap(), 1);
        assert_eq!(occ_aligned(&w("0101"), &w("10"), 2).unwrap(), 0);
        assert!(matches!(
            occ_aligned(&w("0101"), &w("1"), 2),
            Err(WordError::BlockLengthMismatch { len: 1, r: 2 })
        ));
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(max_deviation(&w("01"), 1, 2).unwrap(), rat(0, 1));
        assert_eq!(max_deviation(&w("00"), 1, 2).unwrap(), rat(1, 2));
        // 2-blocks of 0101: 01 twice, 10 once, 00 and 11 never; divisor 4.
        // |2/4 - 1/4| = 1/4, |1/4 - 1/4| = 0, |0 - 1/4| = 1/4.
        assert_eq!(max_deviation(&w("0101"), 2, 2).unwrap(), rat(1, 4));
        assert!(max_deviation(&w("01"), 3, 2).is_err());
        assert!(max_deviation(&w("01"), 0, 2).is_err());
    }

    #[test]
    fn test_predicate_examples() {
        assert!(run_test(&w("01"), 1, &rat(0, 1), 2).unwrap());
        assert!(!run_test(&w("00"), 1, &rat(1, 4), 2).unwrap());
        assert!(run_test(&w("0000111"), 3, &rat(1, 1), 2).unwrap());
        assert_eq!(run_test(&w("01"), 1, &rat(-1, 4), 2), Err(WordError::NegativeTolerance));
    }

    #[test]
    fn champernowne_examples() {
        assert_eq!(champernowne_prefix(10, 10).to_string(), "1234567891");
        assert_eq!(champernowne_prefix(2, 6).to_string(), "110111");
        assert!(champernowne_prefix(3, 0).is_empty());
    }

    #[test]
    fn text_form() {
        let a = Alphabet::new(12).unwrap();
        let word = Word::parse("01 9a\nb", a).unwrap();
        assert_eq!(word.symbols(), &[0, 1, 9, 10, 11]);
        assert_eq!(word.to_string(), "019ab");
        assert!(Word::parse("c", a).is_err());
        assert!(Word::parse("A", a).is_err());
        assert!(Word::parse("-", a).is_err());
        assert!(Alphabet::new(1).is_err());
    }

    #[test]
    fn literal_sources() {
        let a = Alphabet::new(2).unwrap();
        let lit = Literal::parse("0110", a).unwrap();
        assert_eq!(lit.prefix(3).unwrap().to_string(), "011");
        assert!(matches!(lit.prefix(5), Err(WordError::SourceExhausted { .. })));
        let cached = CachedSource::new(&lit);
        assert_eq!(cached.prefix(4).unwrap().to_string(), "0110");
        assert_eq!(cached.prefix(2).unwrap().to_string(), "01");
    }

    #[test]
    fn sparse_deviation_matches_dense() {
        // k^m beyond the dense limit forces the sparse path
        let u = champernowne_prefix(2, 200);
        let dense = max_deviation(&u, 4, 2).unwrap();
        let mut brute = BigRational::zero();
        for block in Alphabet::new(2).unwrap().words_of_length(4) {
            let f = BigRational::new(occ_overlapping(&u, &block).unwrap().into(), 200.into());
            let d = (f - uniform_block_probability(2, 4)).abs();
            brute = brute.max(d);
        }
        assert_eq!(dense, brute);
        let wide = max_deviation(&u, 30, 2).unwrap();
        // every 30-block is rare: the worst deviation comes from a block seen at most a few times
        assert!(wide > BigRational::zero());
    }

    fn arb_word(k: u8, max_len: usize) -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0..k, 0..max_len)
    }

    proptest! {
        #[test]
        fn aligned_counts_partition(u in arb_word(3, 40), r in 1usize..4) {
            let a = Alphabet::new(3).unwrap();
            let mut total = 0;
            for block in a.words_of_length(r) {
                let c = occ_aligned(&u, &block, r).unwrap();
                prop_assert!(c <= (u.len() / r) as u64);
                total += c;
            }
            prop_assert_eq!(total, (u.len() / r) as u64);
        }

        #[test]
        fn overlapping_counts_sum(u in arb_word(2, 40), m in 1usize..5) {
            prop_assume!(u.len() >= m);
            let a = Alphabet::new(2).unwrap();
            let total: u64 = a.words_of_length(m).map(|b| occ_overlapping(&u, &b).unwrap()).sum();
            prop_assert_eq!(total, (u.len() - m + 1) as u64);
        }

        #[test]
        fn one_symbol_change_moves_aligned_count_by_at_most_one(
            u in arb_word(2, 40), pos in 0usize..40, r in 1usize..4, wbits in 0u32..8
        ) {
            prop_assume!(!u.is_empty());
            let pos = pos % u.len();
            let mut v = u.clone();
            v[pos] ^= 1;
            let block: Vec<u8> = (0..r).map(|i| ((wbits >> i) & 1) as u8).collect();
            let a = occ_aligned(&u, &block, r).unwrap() as i64;
            let b = occ_aligned(&v, &block, r).unwrap() as i64;
            prop_assert!((a - b).abs() <= 1);
        }

        #[test]
        fn test_is_monotone_in_tolerance(u in arb_word(2, 30), m in 1usize..3, p in 0i64..20, q in 0i64..20) {
            prop_assume!(u.len() >= m);
            let lo = BigRational::new(p.min(q).into(), 20.into());
            let hi = BigRational::new(p.max(q).into(), 20.into());
            if run_test(&u, m, &lo, 2).unwrap() {
                prop_assert!(run_test(&u, m, &hi, 2).unwrap());
            }
        }

        #[test]
        fn champernowne_prefixes_are_consistent(k in 2u32..12, n in 0usize..300, extra in 0usize..100) {
            let short = champernowne_prefix(k, n);
            let long = champernowne_prefix(k, n + extra);
            prop_assert_eq!(&long[..n], &short[..]);
            prop_assert!(long.iter().all(|&s| (s as u32) < k));
        }
    }
}

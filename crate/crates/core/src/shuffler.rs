//! Deterministic two-tape shufflers, their canonical bit encoding, and the
//! effective enumeration `S_1, S_2, ...` over all binary strings.
//!
//! Encoding (version [`ENCODING_VERSION`]), with `Q` states and
//! `s = ceil(log2 Q)` (`s = 0` when `Q = 1`):
//!
//! ```text
//! 1^Q 0 | tau bits (0 = tape 1, 1 = tape 2) | q0 (s bits) | delta row-major (s bits each)
//! ```
//!
//! Every field is big-endian. A string is valid iff its length is exactly
//! `2Q + 1 + s + Q*k*s` and every `s`-bit field is `< Q`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::words::{Alphabet, Word};

pub const ENCODING_VERSION: &str = "enc-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShufflerError {
    #[error("shuffler needs at least one state")]
    NoStates,
    #[error("start state {start} out of range for {states} states")]
    BadStart { start: usize, states: usize },
    #[error("transition table has {got} entries, expected {expected}")]
    TableSize { got: usize, expected: usize },
    #[error("transition ({state}, {symbol}) targets {target}, but only {states} states exist")]
    BadTarget { state: usize, symbol: usize, target: usize, states: usize },
    #[error("tape {tape} exhausted at position {position} after {produced} output symbols")]
    TapeExhausted { tape: Tape, position: usize, produced: usize },
    #[error("input symbol {symbol} on tape {tape} is outside the alphabet")]
    BadSymbol { tape: Tape, symbol: u8 },
    #[error("malformed shuffler text: {0}")]
    Parse(String),
    #[error(transparent)]
    Word(#[from] crate::words::WordError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tape {
    X,
    Y,
}

impl Tape {
    /// Tape number as written in the text format (1 or 2).
    pub fn number(self) -> u8 {
        match self {
            Tape::X => 1,
            Tape::Y => 2,
        }
    }
}

impl fmt::Display for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Position of a run: current state, symbols consumed from each tape, output so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunState {
    pub q: usize,
    pub a: usize,
    pub b: usize,
    pub out: Word,
}

/// `(Q, q0, delta, tau)` over a `k`-letter alphabet; states are `0..Q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shuffler {
    alphabet: Alphabet,
    start: usize,
    delta: Vec<usize>,
    tau: Vec<Tape>,
}

impl Shuffler {
    /// `delta` is row-major: entry `q * k + a` is the successor of `q` on `a`.
    pub fn new(
        alphabet: Alphabet,
        start: usize,
        delta: Vec<usize>,
        tau: Vec<Tape>,
    ) -> Result<Self, ShufflerError> {
        let states = tau.len();
        let k = alphabet.size() as usize;
        if states == 0 {
            return Err(ShufflerError::NoStates);
        }
        if start >= states {
            return Err(ShufflerError::BadStart { start, states });
        }
        if delta.len() != states * k {
            return Err(ShufflerError::TableSize { got: delta.len(), expected: states * k });
        }
        if let Some(i) = delta.iter().position(|&t| t >= states) {
            return Err(ShufflerError::BadTarget {
                state: i / k,
                symbol: i % k,
                target: delta[i],
                states,
            });
        }
        Ok(Shuffler { alphabet, start, delta, tau })
    }

    /// Single-state shuffler that always reads `tape`.
    pub fn reader(alphabet: Alphabet, tape: Tape) -> Self {
        Shuffler {
            alphabet,
            start: 0,
            delta: vec![0; alphabet.size() as usize],
            tau: vec![tape],
        }
    }

    /// Two states alternating tape 1, tape 2 regardless of the symbol read.
    pub fn alternator(alphabet: Alphabet) -> Self {
        let k = alphabet.size() as usize;
        let mut delta = vec![1; k];
        delta.extend(std::iter::repeat(0).take(k));
        Shuffler { alphabet, start: 0, delta, tau: vec![Tape::X, Tape::Y] }
    }

    /// Uniformly random table with between 1 and `max_states` states.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, alphabet: Alphabet, max_states: usize) -> Self {
        let states = rng.gen_range(1..=max_states.max(1));
        let k = alphabet.size() as usize;
        let delta = (0..states * k).map(|_| rng.gen_range(0..states)).collect();
        let tau = (0..states).map(|_| if rng.gen() { Tape::Y } else { Tape::X }).collect();
        Shuffler { alphabet, start: rng.gen_range(0..states), delta, tau }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn num_states(&self) -> usize {
        self.tau.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn tape(&self, q: usize) -> Tape {
        self.tau[q]
    }

    pub fn next(&self, q: usize, symbol: u8) -> usize {
        self.delta[q * self.alphabet.size() as usize + symbol as usize]
    }

    pub fn start_run(&self) -> RunState {
        RunState { q: self.start, a: 0, b: 0, out: Word::empty() }
    }

    /// Advances `state` by one output symbol, reading from `xp`/`yp`.
    pub fn step(&self, state: &mut RunState, xp: &[u8], yp: &[u8]) -> Result<u8, ShufflerError> {
        let tape = self.tau[state.q];
        let (input, pos) = match tape {
            Tape::X => (xp, state.a),
            Tape::Y => (yp, state.b),
        };
        let symbol = *input.get(pos).ok_or(ShufflerError::TapeExhausted {
            tape,
            position: pos + 1,
            produced: state.out.len(),
        })?;
        if symbol as u32 >= self.alphabet.size() {
            return Err(ShufflerError::BadSymbol { tape, symbol });
        }
        match tape {
            Tape::X => state.a += 1,
            Tape::Y => state.b += 1,
        }
        state.q = self.next(state.q, symbol);
        state.out.push(symbol);
        Ok(symbol)
    }

    /// First `n` output symbols of `S(x, y)` for any extensions of `xp`, `yp`.
    pub fn run_n(&self, xp: &[u8], yp: &[u8], n: usize) -> Result<(Word, RunState), ShufflerError> {
        let mut state = self.start_run();
        for _ in 0..n {
            self.step(&mut state, xp, yp)?;
        }
        Ok((state.out.clone(), state))
    }

    /// Output only, without the bookkeeping copy of `run_n`.
    pub fn output(&self, xp: &[u8], yp: &[u8], n: usize) -> Result<Word, ShufflerError> {
        Ok(self.run_n(xp, yp, n)?.1.out)
    }

    pub fn encode(&self) -> String {
        let states = self.num_states();
        let width = field_width(states);
        let mut bits = String::with_capacity(2 * states + 1 + width * (1 + self.delta.len()));
        bits.extend(std::iter::repeat('1').take(states));
        bits.push('0');
        bits.extend(self.tau.iter().map(|t| if *t == Tape::X { '0' } else { '1' }));
        push_field(&mut bits, self.start, width);
        for &target in &self.delta {
            push_field(&mut bits, target, width);
        }
        bits
    }

    /// The unique shuffler whose encoding is `bits`, or `None`.
    pub fn decode(bits: &str, alphabet: Alphabet) -> Option<Self> {
        let bytes = bits.as_bytes();
        if bytes.iter().any(|&b| b != b'0' && b != b'1') {
            return None;
        }
        let states = bytes.iter().position(|&b| b == b'0')?;
        if states == 0 {
            return None;
        }
        let k = alphabet.size() as usize;
        let width = field_width(states);
        let expected = 2 * states + 1 + width + states * k * width;
        if bytes.len() != expected {
            return None;
        }
        let mut cursor = states + 1;
        let tau = bytes[cursor..cursor + states]
            .iter()
            .map(|&b| if b == b'0' { Tape::X } else { Tape::Y })
            .collect();
        cursor += states;
        let read = |cursor: &mut usize| -> Option<usize> {
            let value = bytes[*cursor..*cursor + width]
                .iter()
                .fold(0usize, |acc, &b| (acc << 1) | (b - b'0') as usize);
            *cursor += width;
            (value < states).then_some(value)
        };
        let start = read(&mut cursor)?;
        let delta = (0..states * k).map(|_| read(&mut cursor)).collect::<Option<Vec<_>>>()?;
        Some(Shuffler { alphabet, start, delta, tau })
    }

    /// Text format: `k Q q0`, then the tape of each state, then one row of targets per state.
    pub fn to_text(&self) -> String {
        let k = self.alphabet.size() as usize;
        let mut out = format!("{} {} {}\n", k, self.num_states(), self.start);
        out.extend(self.tau.iter().map(|t| char::from(b'0' + t.number())));
        out.push('\n');
        for row in self.delta.chunks(k) {
            let cells: Vec<String> = row.iter().map(|t| t.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ShufflerError> {
        let bad = |msg: &str| ShufflerError::Parse(msg.to_string());
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("missing header line"))?
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| bad("header fields must be integers")))
            .collect::<Result<_, _>>()?;
        let [k, states, start] = header[..] else {
            return Err(bad("header must be `k Q q0`"));
        };
        let alphabet = Alphabet::new(k as u32)?;
        let tau_line = lines.next().ok_or_else(|| bad("missing tape line"))?;
        let tau = tau_line
            .chars()
            .map(|c| match c {
                '1' => Ok(Tape::X),
                '2' => Ok(Tape::Y),
                _ => Err(bad("tape choices must be '1' or '2'")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if tau.len() != states {
            return Err(bad("tape line length differs from Q"));
        }
        let mut delta = Vec::with_capacity(states * k);
        for _ in 0..states {
            let row: Vec<usize> = lines
                .next()
                .ok_or_else(|| bad("missing transition row"))?
                .split_whitespace()
                .map(|f| f.parse().map_err(|_| bad("transition targets must be integers")))
                .collect::<Result<_, _>>()?;
            if row.len() != k {
                return Err(bad("transition row must have k entries"));
            }
            delta.extend(row);
        }
        if lines.next().is_some() {
            return Err(bad("trailing lines after transition table"));
        }
        Shuffler::new(alphabet, start, delta, tau)
    }
}

fn field_width(states: usize) -> usize {
    if states <= 1 {
        0
    } else {
        (usize::BITS - (states - 1).leading_zeros()) as usize
    }
}

fn push_field(bits: &mut String, value: usize, width: usize) {
    for shift in (0..width).rev() {
        bits.push(if (value >> shift) & 1 == 1 { '1' } else { '0' });
    }
}

/// `b_i` in the length-lexicographic order of binary strings, `b_1 = λ`.
pub fn binary_string(i: u64) -> String {
    assert!(i >= 1, "enumeration starts at 1");
    // b_i is the binary form of i with its leading 1 removed
    format!("{i:b}")[1..].to_string()
}

/// `S_i`: the decoding of `b_i`, or the tape-1 reader when `b_i` is invalid.
pub fn enumerate(i: u64, alphabet: Alphabet) -> Shuffler {
    Shuffler::decode(&binary_string(i), alphabet)
        .unwrap_or_else(|| Shuffler::reader(alphabet, Tape::X))
}

/// The shufflers a construction quantifies over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShufflerFamily {
    /// `S_i` from the canonical enumeration.
    Canonical,
    /// `S_i = list[(i - 1) mod len]`; used to probe constructions with
    /// small, hand-picked automata.
    Explicit(Vec<Arc<Shuffler>>),
}

impl ShufflerFamily {
    pub fn explicit(list: Vec<Shuffler>) -> Self {
        assert!(!list.is_empty(), "explicit family must be non-empty");
        ShufflerFamily::Explicit(list.into_iter().map(Arc::new).collect())
    }

    pub fn get(&self, i: u64, alphabet: Alphabet) -> Arc<Shuffler> {
        match self {
            ShufflerFamily::Canonical => Arc::new(enumerate(i, alphabet)),
            ShufflerFamily::Explicit(list) => list[((i - 1) % list.len() as u64) as usize].clone(),
        }
    }

    /// `S_1..=S_count` grouped by encoding, with multiplicities, in order of
    /// first appearance.
    pub fn distinct_prefix(&self, count: u64, alphabet: Alphabet) -> Vec<(Arc<Shuffler>, u64)> {
        let mut groups: Vec<(Arc<Shuffler>, u64)> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for i in 1..=count {
            let s = self.get(i, alphabet);
            let slot = *index.entry(s.encode()).or_insert_with(|| {
                groups.push((s.clone(), 0));
                groups.len() - 1
            });
            groups[slot].1 += 1;
        }
        groups
    }

    pub fn describe(&self) -> String {
        match self {
            ShufflerFamily::Canonical => format!("canonical({ENCODING_VERSION})"),
            ShufflerFamily::Explicit(list) => format!("explicit({} shufflers)", list.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn word(s: &str) -> Word {
        Word::parse(s, bin()).unwrap()
    }

    #[test]
    fn readers_copy_their_tape() {
        let x = word("0110");
        let y = word("1000");
        let s1 = Shuffler::reader(bin(), Tape::X);
        let s2 = Shuffler::reader(bin(), Tape::Y);
        assert_eq!(s1.run_n(&x, &y, 4).unwrap().0, x);
        assert_eq!(s2.run_n(&x, &y, 3).unwrap().0, word("100"));
        let (_, st) = s2.run_n(&x, &y, 3).unwrap();
        assert_eq!((st.a, st.b, st.q), (0, 3, 0));
    }

    #[test]
    fn alternator_interleaves() {
        let s = Shuffler::alternator(bin());
        let (out, st) = s.run_n(&word("000000"), &word("111111"), 6).unwrap();
        assert_eq!(out, word("010101"));
        assert_eq!(st.a + st.b, 6);
    }

    #[test]
    fn exhausted_tape_is_reported() {
        let s = Shuffler::reader(bin(), Tape::Y);
        let err = s.run_n(&word("0000"), &word("01"), 3).unwrap_err();
        assert_eq!(err, ShufflerError::TapeExhausted { tape: Tape::Y, position: 3, produced: 2 });
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(Shuffler::reader(bin(), Tape::X).encode(), "100");
        assert_eq!(Shuffler::reader(bin(), Tape::Y).encode(), "101");
        // Q=2, s=1: 110 | 01 | 0 | 1 1 0 0
        assert_eq!(Shuffler::alternator(bin()).encode(), "1100101100");
        assert_eq!(Shuffler::decode("100", bin()), Some(Shuffler::reader(bin(), Tape::X)));
        assert_eq!(Shuffler::decode("", bin()), None);
        assert_eq!(Shuffler::decode("11", bin()), None);
        assert_eq!(Shuffler::decode("1001", bin()), None);
        assert_eq!(Shuffler::decode("10a", bin()), None);
        // Q=3, s=2: a field value 3 is out of range
        let mut bad = String::from("1110000");
        bad.push_str("11");
        bad.push_str(&"00".repeat(6));
        assert_eq!(Shuffler::decode(&bad, bin()), None);
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(binary_string(1), "");
        assert_eq!(binary_string(2), "0");
        assert_eq!(binary_string(7), "11");
        assert_eq!(binary_string(12), "100");
        assert_eq!(binary_string(13), "101");
        assert_eq!(enumerate(1, bin()), Shuffler::reader(bin(), Tape::X));
        assert_eq!(enumerate(12, bin()), Shuffler::reader(bin(), Tape::X));
        assert_eq!(enumerate(13, bin()), Shuffler::reader(bin(), Tape::Y));
    }

    #[test]
    fn enumeration_size_bound() {
        for i in 1..5000u64 {
            let bits = binary_string(i);
            if let Some(s) = Shuffler::decode(&bits, bin()) {
                let log_bound = (64 - i.leading_zeros()) as usize + 1; // ceil(log2(i+1)) + 1
                assert!(s.num_states() <= bits.len());
                assert!(bits.len() <= log_bound);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = Shuffler::random(&mut rng, Alphabet::new(3).unwrap(), 5);
            assert_eq!(Shuffler::from_text(&s.to_text()).unwrap(), s);
        }
        assert_eq!(Shuffler::reader(bin(), Tape::X).to_text(), "2 1 0\n1\n0 0\n");
        assert!(Shuffler::from_text("2 1 0\n3\n0 0\n").is_err());
        assert!(Shuffler::from_text("2 1 0\n1\n0 1\n").is_err());
        assert!(Shuffler::from_text("2 1\n1\n0 0\n").is_err());
    }

    #[test]
    fn family_grouping() {
        let groups = ShufflerFamily::Canonical.distinct_prefix(16, bin());
        let total: u64 = groups.iter().map(|g| g.1).sum();
        assert_eq!(total, 16);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].1, 15);
        assert_eq!(groups[1].0.tape(0), Tape::Y);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(seed in any::<u64>(), k in 2u32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Alphabet::new(k).unwrap();
            let s = Shuffler::random(&mut rng, a, 8);
            let bits = s.encode();
            prop_assert_eq!(Shuffler::decode(&bits, a), Some(s));
        }

        #[test]
        fn decode_encode_round_trip(bits in "[01]{0,14}") {
            if let Some(s) = Shuffler::decode(&bits, bin()) {
                prop_assert_eq!(s.encode(), bits);
            }
        }

        #[test]
        fn runs_are_prefix_consistent(seed in any::<u64>(), n in 0usize..20, cut in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Shuffler::random(&mut rng, bin(), 6);
            let x: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let cut = cut.min(n);
            let full = s.output(&x, &y, n).unwrap();
            let part = s.output(&x, &y, cut).unwrap();
            prop_assert_eq!(&full[..cut], &part[..]);
        }
    }
}

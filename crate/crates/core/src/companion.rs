//! Companion extraction: given a computable word `x`, build `y` symbol by
//! symbol so that `(x, y)` lands in a decreasing family of clopen test
//! slices.
//!
//! A slice `H_t(N)(x)` holds the `y` for which every shuffler `S_i`
//! (`i <= t`) maps `(x, y)` to an output whose first `n` symbols pass the
//! block-frequency test for every block length `ell <= t` and every
//! `n in [N, N^2]`, with tolerance `2^-t`. Membership is decided by
//! `y[..N^2]`, so measures are exact counts over finitely many extensions.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::exactprob::{format_rational, Rational};
use crate::shuffler::{Shuffler, ShufflerError, ShufflerFamily};
use crate::words::{run_test, uniform_block_probability, Alphabet, CachedSource, Word, WordError, WordSource};

#[derive(Debug, Error)]
pub enum CompanionError {
    #[error("slice needs t >= 1 and N >= 2, got t = {t}, N = {n}")]
    BadSlice { t: u32, n: u64 },
    #[error("prefixes of length {x} and {y} are shorter than n = {n}")]
    PrefixTooShort { x: usize, y: usize, n: usize },
    #[error("enumerating {k}^{exponent} extensions exceeds max-enum = {cap}")]
    EnumerationTooLarge { k: u32, exponent: usize, cap: u64 },
    #[error("no cutoff found for stage {stage} within max-window = {max_window}; best measure {}", best.as_ref().map_or("none".into(), format_rational))]
    CutoffNotFound { stage: u32, max_window: u64, best: Option<Rational> },
    #[error("no level L <= {max_level} meets the threshold at position {ell}")]
    LevelCapExhausted { ell: usize, max_level: u32 },
    #[error("prefix |v| = {len} does not fit slice deciding length {decided}")]
    PrefixTooLong { len: usize, decided: usize },
    #[error(transparent)]
    Word(#[from] WordError),
    #[error(transparent)]
    Shuffler(#[from] ShufflerError),
}

impl CompanionError {
    /// Failures caused by a search or enumeration cap rather than by bad input.
    pub fn is_cap_exhaustion(&self) -> bool {
        matches!(
            self,
            CompanionError::EnumerationTooLarge { .. }
                | CompanionError::CutoffNotFound { .. }
                | CompanionError::LevelCapExhausted { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SliceSpec {
    pub t: u32,
    pub n_start: u64,
}

impl SliceSpec {
    pub fn new(t: u32, n_start: u64) -> Result<Self, CompanionError> {
        if t == 0 || n_start < 2 {
            return Err(CompanionError::BadSlice { t, n: n_start });
        }
        Ok(SliceSpec { t, n_start })
    }

    /// `2^-t`.
    pub fn tolerance(&self) -> Rational {
        Rational::new(BigInt::one(), BigInt::one() << self.t)
    }

    /// `N^2`: the prefix length of `y` (and `x`) that decides membership.
    pub fn deciding_len(&self) -> usize {
        (self.n_start * self.n_start) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Caps {
    /// Largest window start `N` tried by the cutoff search.
    pub max_window: u64,
    /// Largest number of `y`-extensions enumerated for one measure.
    pub max_enum: u64,
    /// Largest level `L` tried by the extraction threshold search.
    pub max_level: u32,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { max_window: 4, max_enum: 1 << 16, max_level: 1024 }
    }
}

/// How far ahead the cutoff search demands witnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lookahead {
    /// Witnesses only for the stages actually built (`t <= T`).
    #[default]
    Truncated,
    /// Stage `t` also needs a witness for stage `t + 1`, and stage 1 for
    /// stages 2 and 3, even past `T`.
    Nested,
}

#[derive(Debug, Clone)]
pub struct CompanionConfig {
    pub family: ShufflerFamily,
    pub caps: Caps,
    pub lookahead: Lookahead,
}

impl Default for CompanionConfig {
    fn default() -> Self {
        CompanionConfig { family: ShufflerFamily::Canonical, caps: Caps::default(), lookahead: Lookahead::Truncated }
    }
}

/// `sum_{t > L} 4^-t = 4^-L / 3`.
pub fn tail(level: u32) -> Rational {
    Rational::new(BigInt::one(), BigInt::from(3) * (BigInt::one() << (2 * level)))
}

/// Threshold `1 - 4^-t` a stage-`t` slice must reach.
pub fn stage_target(t: u32) -> Rational {
    Rational::one() - Rational::new(BigInt::one(), BigInt::one() << (2 * t))
}

/// Whether `S(xp, yp)[..n]` passes the length-`m` block test with tolerance
/// `eps`. When `m > n` no block fits, so every frequency is `0` and the
/// deviation is `k^-m`.
pub fn slice_membership(
    s: &Shuffler,
    n: usize,
    m: usize,
    eps: &Rational,
    xp: &[u8],
    yp: &[u8],
) -> Result<bool, CompanionError> {
    if xp.len() < n || yp.len() < n {
        return Err(CompanionError::PrefixTooShort { x: xp.len(), y: yp.len(), n });
    }
    let out = s.output(xp, yp, n)?;
    let k = s.alphabet().size();
    if m > n {
        return Ok(&uniform_block_probability(k, m) <= eps);
    }
    Ok(run_test(&out, m, eps, k)?)
}

/// Exact slice measures for one fixed `x`.
pub struct SliceEvaluator<'a> {
    alphabet: Alphabet,
    source: CachedSource<'a>,
    family: ShufflerFamily,
    caps: Caps,
    shufflers: std::sync::Mutex<HashMap<u64, Arc<Shuffler>>>,
    enumerated: AtomicU64,
}

impl<'a> SliceEvaluator<'a> {
    pub fn new(x: &'a dyn WordSource, config: &CompanionConfig) -> Self {
        SliceEvaluator {
            alphabet: x.alphabet(),
            source: CachedSource::new(x),
            family: config.family.clone(),
            caps: config.caps,
            shufflers: std::sync::Mutex::new(HashMap::new()),
            enumerated: AtomicU64::new(0),
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// Extensions of `y` enumerated so far.
    pub fn enumerated(&self) -> u64 {
        self.enumerated.load(Ordering::Relaxed)
    }

    fn shuffler(&self, i: u64) -> Arc<Shuffler> {
        let mut map = self.shufflers.lock().expect("shuffler table poisoned");
        map.entry(i).or_insert_with(|| self.family.get(i, self.alphabet)).clone()
    }

    pub fn x_prefix(&self, n: usize) -> Result<Word, CompanionError> {
        Ok(self.source.prefix(n)?)
    }

    /// Membership of `y` (at least `N^2` long) in every listed slice.
    pub fn member(&self, specs: &[SliceSpec], xp: &[u8], y: &[u8]) -> Result<bool, CompanionError> {
        for spec in specs {
            if !self.member_one(spec, xp, y)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn member_one(&self, spec: &SliceSpec, xp: &[u8], y: &[u8]) -> Result<bool, CompanionError> {
        let k = self.alphabet.size() as i128;
        let lo = spec.n_start as usize;
        let hi = spec.deciding_len();
        for i in 1..=spec.t as u64 {
            let out = self.shuffler(i).output(xp, y, hi)?;
            for ell in 1..=spec.t as usize {
                let universe = k.pow(ell as u32);
                let mut counts = vec![0i128; universe as usize];
                let mut index = 0i128;
                for (pos, &sym) in out.iter().enumerate() {
                    index = (index * k + sym as i128) % universe;
                    if pos + 1 >= ell {
                        counts[index as usize] += 1;
                    }
                    let n = pos as i128 + 1;
                    if pos + 1 < lo {
                        continue;
                    }
                    // pass iff |c k^ell - n| 2^t <= n k^ell for the extreme counts
                    let max = *counts.iter().max().expect("non-empty");
                    let min = *counts.iter().min().expect("non-empty");
                    let bound = n * universe;
                    let dev = (max * universe - n).abs().max((min * universe - n).abs());
                    if dev << spec.t > bound {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// `mu([v] ∩ ⋂ specs)`, exact.
    pub fn measure(&self, specs: &[SliceSpec], v: &[u8]) -> Result<Rational, CompanionError> {
        let k = self.alphabet.size();
        let depth = specs.iter().map(SliceSpec::deciding_len).max().unwrap_or(0);
        let cylinder = Rational::new(BigInt::one(), BigInt::from(k).pow(v.len() as u32));
        if specs.is_empty() {
            return Ok(cylinder);
        }
        if v.len() >= depth {
            let xp = self.x_prefix(depth)?;
            return Ok(if self.member(specs, &xp, &v[..depth])? { cylinder } else { Rational::zero() });
        }
        let free = depth - v.len();
        let total = (k as u64)
            .checked_pow(free as u32)
            .filter(|&n| n <= self.caps.max_enum)
            .ok_or(CompanionError::EnumerationTooLarge { k, exponent: free, cap: self.caps.max_enum })?;
        let xp = self.x_prefix(depth)?;
        let hits: u64 = (0..total)
            .into_par_iter()
            .map(|code| {
                let mut y = v.to_vec();
                y.resize(depth, 0);
                fill_base_k(&mut y[v.len()..], code, k as u64);
                self.member(specs, &xp, &y).map(u64::from)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        self.enumerated.fetch_add(total, Ordering::Relaxed);
        Ok(Rational::new(BigInt::from(hits), BigInt::from(k).pow(depth as u32)))
    }
}

fn fill_base_k(slots: &mut [u8], mut code: u64, k: u64) {
    for slot in slots.iter_mut().rev() {
        *slot = (code % k) as u8;
        code /= k;
    }
}

/// `mu(H_t(N)(x) ∩ [v])`.
pub fn slice_measure(
    spec: &SliceSpec,
    x: &dyn WordSource,
    v: &[u8],
    config: &CompanionConfig,
) -> Result<Rational, CompanionError> {
    let depth = spec.deciding_len();
    if v.len() > depth {
        return Err(CompanionError::PrefixTooLong { len: v.len(), decided: depth });
    }
    SliceEvaluator::new(x, config).measure(&[*spec], v)
}

/// Same quantity as [`slice_measure`], by a deliberately plain route: every
/// extension and every test goes through [`slice_membership`].
pub fn naive_slice_measure(
    spec: &SliceSpec,
    x: &dyn WordSource,
    v: &[u8],
    config: &CompanionConfig,
) -> Result<Rational, CompanionError> {
    let alphabet = x.alphabet();
    let k = alphabet.size();
    let depth = spec.deciding_len();
    if v.len() > depth {
        return Err(CompanionError::PrefixTooLong { len: v.len(), decided: depth });
    }
    let xp = x.prefix(depth)?;
    let eps = spec.tolerance();
    let mut hits = 0u64;
    for tail_word in alphabet.words_of_length(depth - v.len()) {
        let mut y = v.to_vec();
        y.extend_from_slice(&tail_word);
        let mut ok = true;
        'tests: for i in 1..=spec.t as u64 {
            let s = config.family.get(i, alphabet);
            for ell in 1..=spec.t as usize {
                for n in spec.n_start as usize..=depth {
                    if !slice_membership(&s, n, ell, &eps, &xp, &y)? {
                        ok = false;
                        break 'tests;
                    }
                }
            }
        }
        hits += ok as u64;
    }
    Ok(Rational::new(BigInt::from(hits), BigInt::from(k).pow(depth as u32)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cutoff {
    pub spec: SliceSpec,
    /// `mu(H_t(N_t)(x))`.
    pub measure: Rational,
}

/// Picks `N_1 < ... < N_T` with `mu(H_t(N_t)) >= 1 - 4^-t` and
/// `N_{t+1} <= N_t^2`, searching smallest windows first and backtracking.
pub fn choose_cutoffs(x: &dyn WordSource, stages: u32, config: &CompanionConfig) -> Result<Vec<Cutoff>, CompanionError> {
    let eval = SliceEvaluator::new(x, config);
    choose_with(&eval, stages, config)
}

fn choose_with(eval: &SliceEvaluator<'_>, stages: u32, config: &CompanionConfig) -> Result<Vec<Cutoff>, CompanionError> {
    if stages == 0 {
        return Ok(Vec::new());
    }
    let depth = match config.lookahead {
        Lookahead::Truncated => stages,
        Lookahead::Nested if stages == 1 => 3,
        Lookahead::Nested => stages + 1,
    };
    let mut search = CutoffSearch { eval, caps: config.caps, depth, memo: HashMap::new(), best: HashMap::new(), deepest: 1 };
    match search.run(1, 1, config.caps.max_window)? {
        Some(mut chain) => {
            chain.truncate(stages as usize);
            Ok(chain)
        }
        None => Err(CompanionError::CutoffNotFound {
            stage: search.deepest,
            max_window: config.caps.max_window,
            best: search.best.remove(&search.deepest),
        }),
    }
}

struct CutoffSearch<'e, 'a> {
    eval: &'e SliceEvaluator<'a>,
    caps: Caps,
    depth: u32,
    memo: HashMap<SliceSpec, Rational>,
    best: HashMap<u32, Rational>,
    deepest: u32,
}

impl CutoffSearch<'_, '_> {
    fn run(&mut self, t: u32, after: u64, upto: u64) -> Result<Option<Vec<Cutoff>>, CompanionError> {
        self.deepest = self.deepest.max(t);
        let k = self.eval.alphabet().size() as u64;
        let target = stage_target(t);
        for n in after + 1..=upto.min(self.caps.max_window) {
            let spec = SliceSpec::new(t, n)?;
            let fits = k.checked_pow(spec.deciding_len() as u32).is_some_and(|e| e <= self.caps.max_enum);
            if !fits {
                break;
            }
            let mu = match self.memo.get(&spec) {
                Some(mu) => mu.clone(),
                None => {
                    let mu = self.eval.measure(&[spec], &[])?;
                    self.memo.insert(spec, mu.clone());
                    mu
                }
            };
            let best = self.best.entry(t).or_insert_with(Rational::zero);
            if mu > *best {
                *best = mu.clone();
            }
            if mu < target {
                continue;
            }
            let here = Cutoff { spec, measure: mu };
            if t == self.depth {
                return Ok(Some(vec![here]));
            }
            if let Some(mut rest) = self.run(t + 1, n, n * n)? {
                rest.insert(0, here);
                return Ok(Some(rest));
            }
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    /// Length of `v` before the step.
    pub ell: usize,
    pub level: u32,
    /// `mu([v] ∩ F_L)`.
    pub mu: Rational,
    pub tail: Rational,
    /// `mu([v a] ∩ F_L)` for every symbol `a`.
    pub children: Vec<Rational>,
    pub chosen: u8,
}

/// Extends `v` one symbol at a time. At each step the least level `L` with
/// `mu([v] ∩ F_L) > k tail(L)` is found, where `F_L` intersects the slices
/// of stages `t <= min(L, T)`, and the least symbol `a` with
/// `mu([v a] ∩ F_L) > tail(L)` is appended.
pub fn extract(
    x: &dyn WordSource,
    specs: &[SliceSpec],
    length: usize,
    config: &CompanionConfig,
) -> Result<(Word, Vec<TraceEntry>), CompanionError> {
    let eval = SliceEvaluator::new(x, config);
    extract_with(&eval, specs, length, config.caps)
}

fn extract_with(
    eval: &SliceEvaluator<'_>,
    specs: &[SliceSpec],
    length: usize,
    caps: Caps,
) -> Result<(Word, Vec<TraceEntry>), CompanionError> {
    let k = eval.alphabet().size();
    let k_q = Rational::from_integer(k.into());
    let stages = specs.len() as u32;
    let mut memo: HashMap<(Word, u32), Rational> = HashMap::new();
    let mut measure = |v: &Word, level: u32| -> Result<Rational, CompanionError> {
        let active = level.min(stages);
        if let Some(mu) = memo.get(&(v.clone(), active)) {
            return Ok(mu.clone());
        }
        let mu = eval.measure(&specs[..active as usize], v)?;
        memo.insert((v.clone(), active), mu.clone());
        Ok(mu)
    };
    let mut v = Word::empty();
    let mut trace = Vec::with_capacity(length);
    for ell in 0..length {
        let mut found = None;
        for level in 0..=caps.max_level {
            let mu = measure(&v, level)?;
            if mu > &k_q * tail(level) {
                found = Some((level, mu));
                break;
            }
        }
        let (level, mu) = found.ok_or(CompanionError::LevelCapExhausted { ell, max_level: caps.max_level })?;
        let threshold = tail(level);
        let children = (0..k as u8).map(|a| measure(&v.extended(a), level)).collect::<Result<Vec<_>, _>>()?;
        let chosen = children
            .iter()
            .position(|c| *c > threshold)
            .expect("children sum above k * tail, so one exceeds tail") as u8;
        v.push(chosen);
        trace.push(TraceEntry { ell, level, mu, tail: threshold, children, chosen });
    }
    Ok((v, trace))
}

/// Recomputes every trace entry from scratch and checks the recorded
/// thresholds, measures, additivity and symbol choices.
pub fn replay_trace(
    x: &dyn WordSource,
    specs: &[SliceSpec],
    y: &[u8],
    trace: &[TraceEntry],
    config: &CompanionConfig,
) -> Result<bool, CompanionError> {
    let eval = SliceEvaluator::new(x, config);
    let k_q = Rational::from_integer(eval.alphabet().size().into());
    let stages = specs.len() as u32;
    for (step, e) in trace.iter().enumerate() {
        if e.ell != step || y.get(step) != Some(&e.chosen) {
            return Ok(false);
        }
        let active = &specs[..e.level.min(stages) as usize];
        let v = &y[..step];
        let sum: Rational = e.children.iter().fold(Rational::zero(), |acc, c| acc + c);
        let least = e.children.iter().position(|c| *c > e.tail);
        let earlier_fail = (0..e.level)
            .map(|l| eval.measure(&specs[..l.min(stages) as usize], v).map(|mu| mu <= &k_q * tail(l)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .all(|failed| failed);
        let ok = e.tail == tail(e.level)
            && e.mu == eval.measure(active, v)?
            && e.mu > &k_q * &e.tail
            && sum == e.mu
            && least == Some(e.chosen as usize)
            && earlier_fail;
        if !ok {
            return Ok(false);
        }
        for (a, c) in e.children.iter().enumerate() {
            let mut va = v.to_vec();
            va.push(a as u8);
            if *c != eval.measure(active, &va)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Member,
    NonMember,
    /// `y` is shorter than `N_t^2`, so the slice does not decide it yet.
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecountEntry {
    pub spec: SliceSpec,
    pub status: Membership,
}

/// Direct membership check of `y` in each decided slice, via
/// [`slice_membership`] alone.
pub fn recount(
    x: &dyn WordSource,
    specs: &[SliceSpec],
    y: &[u8],
    config: &CompanionConfig,
) -> Result<Vec<RecountEntry>, CompanionError> {
    let alphabet = x.alphabet();
    let mut out = Vec::new();
    for spec in specs {
        let depth = spec.deciding_len();
        if y.len() < depth {
            out.push(RecountEntry { spec: *spec, status: Membership::Undecided });
            continue;
        }
        let xp = x.prefix(depth)?;
        let eps = spec.tolerance();
        let mut member = true;
        'tests: for i in 1..=spec.t as u64 {
            let s = config.family.get(i, alphabet);
            for ell in 1..=spec.t as usize {
                for n in spec.n_start as usize..=depth {
                    if !slice_membership(&s, n, ell, &eps, &xp, &y[..depth])? {
                        member = false;
                        break 'tests;
                    }
                }
            }
        }
        let status = if member { Membership::Member } else { Membership::NonMember };
        out.push(RecountEntry { spec: *spec, status });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompanionReport {
    pub k: u32,
    pub source: String,
    pub family: String,
    pub stages: u32,
    pub length: usize,
    pub lookahead: Lookahead,
    pub caps: Caps,
    pub cutoffs: Vec<Cutoff>,
    pub trace: Vec<TraceEntry>,
    pub recount: Vec<RecountEntry>,
    pub enumerated: u64,
}

impl CompanionReport {
    pub fn recount_ok(&self) -> bool {
        self.recount.iter().all(|r| r.status != Membership::NonMember)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# companion k={} source={} family={} stages={} length={} lookahead={:?}",
            self.k, self.source, self.family, self.stages, self.length, self.lookahead
        );
        let _ = writeln!(
            out,
            "# caps max_window={} max_enum={} max_level={}",
            self.caps.max_window, self.caps.max_enum, self.caps.max_level
        );
        for c in &self.cutoffs {
            let _ = writeln!(
                out,
                "CUTOFF {} N={} measure={} target={}",
                c.spec.t,
                c.spec.n_start,
                format_rational(&c.measure),
                format_rational(&stage_target(c.spec.t))
            );
        }
        for e in &self.trace {
            let _ = writeln!(
                out,
                "{} {} mu={} tail={} chose {}",
                e.ell,
                e.level,
                format_rational(&e.mu),
                format_rational(&e.tail),
                Word::from(vec![e.chosen])
            );
        }
        for r in &self.recount {
            let status = match r.status {
                Membership::Member => "member",
                Membership::NonMember => "nonmember",
                Membership::Undecided => "undecided",
            };
            let _ = writeln!(out, "RECOUNT {} N={} {}", r.spec.t, r.spec.n_start, status);
        }
        let _ = writeln!(out, "# counters enumerated={}", self.enumerated);
        out
    }
}

/// Cutoff search, extraction, and a final recount.
pub fn build_companion(
    x: &dyn WordSource,
    stages: u32,
    length: usize,
    config: &CompanionConfig,
) -> Result<(Word, CompanionReport), CompanionError> {
    let eval = SliceEvaluator::new(x, config);
    let cutoffs = choose_with(&eval, stages, config)?;
    let specs: Vec<SliceSpec> = cutoffs.iter().map(|c| c.spec).collect();
    let (y, trace) = extract_with(&eval, &specs, length, config.caps)?;
    let recount = recount(x, &specs, &y, config)?;
    let report = CompanionReport {
        k: x.alphabet().size(),
        source: x.describe(),
        family: config.family.describe(),
        stages,
        length,
        lookahead: config.lookahead,
        caps: config.caps,
        cutoffs,
        trace,
        recount,
        enumerated: eval.enumerated(),
    };
    Ok((y, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffler::Tape;
    use crate::words::{Champernowne, Literal};

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn champ() -> Champernowne {
        Champernowne::new(bin())
    }

    fn cfg() -> CompanionConfig {
        CompanionConfig::default()
    }

    fn y_reader_cfg() -> CompanionConfig {
        CompanionConfig { family: ShufflerFamily::explicit(vec![Shuffler::reader(bin(), Tape::Y)]), ..cfg() }
    }

    #[test]
    fn tail_values() {
        assert_eq!(tail(0), Rational::new(1.into(), 3.into()));
        assert_eq!(tail(1), Rational::new(1.into(), 12.into()));
        for l in 0..10 {
            assert_eq!(tail(l + 1), tail(l) / Rational::from_integer(4.into()));
        }
    }

    #[test]
    fn membership_examples() {
        let x = champ().prefix(16).unwrap();
        let one = Rational::one();
        let quarter = Rational::new(1.into(), 4.into());
        let reader_x = Shuffler::reader(bin(), Tape::X);
        let reader_y = Shuffler::reader(bin(), Tape::Y);
        assert!(slice_membership(&reader_x, 16, 1, &Rational::new(1.into(), 2.into()), &x, &[0; 16]).unwrap());
        assert!(slice_membership(&Shuffler::alternator(bin()), 9, 2, &one, &x, &[1; 16]).unwrap());
        assert!(!slice_membership(&reader_y, 4, 1, &quarter, &x, &[0; 16]).unwrap());
        assert!(slice_membership(&reader_y, 3, 5, &one, &x, &[0; 3]).unwrap());
        assert!(slice_membership(&reader_y, 4, 1, &quarter, &x, &[0; 3]).is_err());
    }

    #[test]
    fn fast_and_naive_measures_agree() {
        let c = champ();
        for config in [cfg(), y_reader_cfg()] {
            for (t, n) in [(1, 2), (1, 3), (2, 2), (2, 3)] {
                let spec = SliceSpec::new(t, n).unwrap();
                for v in [vec![], vec![0], vec![1, 0], vec![0, 1, 1]] {
                    let fast = slice_measure(&spec, &c, &v, &config).unwrap();
                    let naive = naive_slice_measure(&spec, &c, &v, &config).unwrap();
                    assert_eq!(fast, naive, "t={t} N={n} v={v:?}");
                }
            }
        }
    }

    #[test]
    fn measures_are_additive_and_bounded() {
        let c = champ();
        let config = y_reader_cfg();
        let spec = SliceSpec::new(1, 3).unwrap();
        let eval = SliceEvaluator::new(&c, &config);
        for len in 0..spec.deciding_len() {
            for v in bin().words_of_length(len.min(4)) {
                let mu = eval.measure(&[spec], &v).unwrap();
                let kids = eval.measure(&[spec], &v.extended(0)).unwrap() + eval.measure(&[spec], &v.extended(1)).unwrap();
                assert_eq!(mu, kids);
                assert!(mu <= Rational::new(1.into(), BigInt::from(2).pow(v.len() as u32)));
            }
        }
    }

    #[test]
    fn decided_prefixes_are_all_or_nothing() {
        let c = champ();
        let config = y_reader_cfg();
        let spec = SliceSpec::new(1, 2).unwrap();
        let full = Rational::new(1.into(), 16.into());
        for v in bin().words_of_length(4) {
            let mu = slice_measure(&spec, &c, &v, &config).unwrap();
            assert!(mu.is_zero() || mu == full);
        }
        assert!(slice_measure(&spec, &c, &[0; 5], &config).is_err());
    }

    #[test]
    fn enumeration_cap_is_reported() {
        let config = CompanionConfig { caps: Caps { max_enum: 8, ..Caps::default() }, ..cfg() };
        let err = slice_measure(&SliceSpec::new(1, 2).unwrap(), &champ(), &[], &config).unwrap_err();
        assert!(err.is_cap_exhaustion());
    }

    #[test]
    fn single_stage_cutoff_is_the_least_window() {
        let c = champ();
        let cut = choose_cutoffs(&c, 1, &cfg()).unwrap();
        assert_eq!(cut.len(), 1);
        let n = cut[0].spec.n_start;
        for smaller in 2..n {
            let mu = naive_slice_measure(&SliceSpec::new(1, smaller).unwrap(), &c, &[], &cfg()).unwrap();
            assert!(mu < stage_target(1));
        }
        assert!(cut[0].measure >= stage_target(1));
        assert_eq!(cut[0].measure, naive_slice_measure(&cut[0].spec, &c, &[], &cfg()).unwrap());
    }

    #[test]
    fn unreachable_targets_exhaust_the_cap() {
        // a constant ternary x read directly deviates by 2/3 > 1/2
        let ternary = Alphabet::new(3).unwrap();
        let zeros = Literal::new(Word::zeros(64), ternary).unwrap();
        let config = CompanionConfig { caps: Caps { max_window: 2, max_enum: 1 << 12, ..Caps::default() }, ..cfg() };
        let err = choose_cutoffs(&zeros, 1, &config).unwrap_err();
        assert!(err.is_cap_exhaustion());
        assert!(matches!(err, CompanionError::CutoffNotFound { stage: 1, best: Some(_), .. }));
    }

    #[test]
    fn champernowne_second_stage_needs_a_wider_window() {
        // "110111" at n = 6 already deviates by more than 1/4 in single symbols
        let err = choose_cutoffs(&champ(), 2, &cfg()).unwrap_err();
        assert!(matches!(err, CompanionError::CutoffNotFound { stage: 2, .. }));
        let nested = CompanionConfig { lookahead: Lookahead::Nested, ..cfg() };
        assert!(choose_cutoffs(&champ(), 1, &nested).unwrap_err().is_cap_exhaustion());
    }

    #[test]
    fn cutoffs_grow_at_most_quadratically() {
        let alternating = Literal::new(Word::from([0u8, 1].repeat(32)), bin()).unwrap();
        let cut = choose_cutoffs(&alternating, 2, &cfg()).unwrap();
        assert_eq!(cut.len(), 2);
        for pair in cut.windows(2) {
            assert!(pair[0].spec.n_start < pair[1].spec.n_start);
            assert!(pair[1].spec.n_start <= pair[0].spec.n_start.pow(2));
        }
        let (y, report) = build_companion(&alternating, 2, 12, &cfg()).unwrap();
        assert_eq!(y.len(), 12);
        assert!(report.recount.iter().all(|r| r.status == Membership::Member));
    }

    #[test]
    fn no_stages_gives_zeros() {
        let (y, report) = build_companion(&champ(), 0, 12, &cfg()).unwrap();
        assert_eq!(y, Word::zeros(12));
        assert!(report.cutoffs.is_empty());
    }

    #[test]
    fn one_stage_build_replays_and_recounts() {
        let c = champ();
        for config in [cfg(), y_reader_cfg()] {
            let (y, report) = build_companion(&c, 1, 20, &config).unwrap();
            let specs: Vec<_> = report.cutoffs.iter().map(|c| c.spec).collect();
            assert!(replay_trace(&c, &specs, &y, &report.trace, &config).unwrap());
            assert_eq!(report.recount[0].status, Membership::Member);
            let again = build_companion(&c, 1, 20, &config).unwrap();
            assert_eq!(again.1.to_text(), report.to_text());
        }
    }

    #[test]
    fn tampered_trace_fails_replay() {
        let c = champ();
        let config = y_reader_cfg();
        let (y, mut report) = build_companion(&c, 1, 8, &config).unwrap();
        let specs: Vec<_> = report.cutoffs.iter().map(|c| c.spec).collect();
        report.trace[3].mu += Rational::new(1.into(), 1024.into());
        assert!(!replay_trace(&c, &specs, &y, &report.trace, &config).unwrap());
    }
}

//! Greedy construction of a prefix pair `(x, y)` by the method of conditional
//! probabilities.
//!
//! `B_n(u, v)` is the expected number of violated constraints at output
//! length `n` when `X` and `Y` are uniform extensions of `u` and `v`. The
//! potential `Phi_L` sums `B_{N_j}` over the checkpoints active at `L`; each
//! greedy step picks the pair of symbols minimising the next potential.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::exactprob::{count_fails, failure_numerator, format_rational, DistCache, ProbError, Rational};
use crate::schedule::{EpsilonRule, Schedule, ScheduleError};
use crate::shuffler::{Shuffler, ShufflerError, ENCODING_VERSION};
use crate::words::{occ_aligned, Word};

#[derive(Debug, Error)]
pub enum PairError {
    #[error("prefixes have lengths {u} and {v}")]
    UnequalPrefixes { u: usize, v: usize },
    #[error("prefix length {len} exceeds output length {n}")]
    PrefixTooLong { len: usize, n: u64 },
    #[error("checkpoint N_{j} = {n} lies within the build length but exceeds the budget {budget}")]
    BudgetExceeded { j: u64, n: u64, budget: u64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Shuffler(#[from] ShufflerError),
}

impl PairError {
    /// Whether the failure is a resource cap rather than a domain error.
    pub fn is_budget(&self) -> bool {
        matches!(self, PairError::BudgetExceeded { .. } | PairError::Prob(ProbError::BudgetExceeded { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrefixPair {
    u: Word,
    v: Word,
}

impl PrefixPair {
    pub fn new(u: Word, v: Word) -> Result<Self, PairError> {
        if u.len() != v.len() {
            return Err(PairError::UnequalPrefixes { u: u.len(), v: v.len() });
        }
        Ok(PrefixPair { u, v })
    }

    pub fn empty() -> Self {
        PrefixPair { u: Word::empty(), v: Word::empty() }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &Word {
        &self.u
    }

    pub fn v(&self) -> &Word {
        &self.v
    }

    pub fn extended(&self, a: u8, b: u8) -> PrefixPair {
        PrefixPair { u: self.u.extended(a), v: self.v.extended(b) }
    }
}

/// Everything needed to evaluate `B_n`: the schedule plus memo tables.
pub struct Evaluator<'s> {
    sched: &'s Schedule,
    cache: DistCache,
    groups: Mutex<HashMap<u64, Arc<Vec<(Arc<Shuffler>, u64)>>>>,
}

impl<'s> Evaluator<'s> {
    pub fn new(sched: &'s Schedule) -> Self {
        Evaluator { sched, cache: DistCache::new(), groups: Mutex::new(HashMap::new()) }
    }

    pub fn schedule(&self) -> &Schedule {
        self.sched
    }

    pub fn cache(&self) -> &DistCache {
        &self.cache
    }

    fn groups(&self, count: u64) -> Arc<Vec<(Arc<Shuffler>, u64)>> {
        let mut map = self.groups.lock().expect("group table poisoned");
        map.entry(count)
            .or_insert_with(|| Arc::new(self.sched.family().distinct_prefix(count, self.sched.alphabet())))
            .clone()
    }

    /// Exact `B_n(u, v)`.
    pub fn bad_mass(&self, n: u64, pair: &PrefixPair) -> Result<Rational, PairError> {
        let k = self.sched.k();
        let params = self.sched.params_of(n)?;
        if pair.len() as u64 > n {
            return Err(PairError::PrefixTooLong { len: pair.len(), n });
        }
        let n_us = n as usize;
        let mut terms = Vec::new();
        for r in 1..=params.max_block {
            let m = n_us / r;
            // no count can fail: every term is zero
            if !(0..=m).any(|c| count_fails(c, m, k, r, &params.eps)) {
                continue;
            }
            for w in self.sched.alphabet().words_of_length(r) {
                for (s, mult) in self.groups(params.shufflers).iter() {
                    terms.push((s.clone(), *mult, r, w.clone()));
                }
            }
        }
        let numerators: Result<Vec<BigUint>, ProbError> = terms
            .par_iter()
            .map(|(s, mult, r, w)| {
                let dist = self.cache.get_or_compute(s, n_us, *r, w, &pair.u, &pair.v)?;
                Ok(failure_numerator(&dist, &params.eps) * BigUint::from(*mult))
            })
            .collect();
        let total: BigUint = numerators?.into_iter().sum();
        let denom = BigUint::from(k).pow(n as u32);
        Ok(Rational::new(total.into(), denom.into()))
    }

    /// `Phi_L(u, v)` with `L = |u|`, skipping checkpoints above `cap`.
    pub fn potential_capped(&self, pair: &PrefixPair, cap: Option<u64>) -> Result<Rational, PairError> {
        let mut phi = Rational::zero();
        for j in self.sched.active_set(pair.len() as u64) {
            let (nj, _) = self.sched.checkpoints(j)?;
            if cap.is_some_and(|c| nj > c) {
                continue;
            }
            phi += self.bad_mass(nj, pair)?;
        }
        Ok(phi)
    }

    /// `Phi_L(u, v) = sum_{j in J(L)} B_{N_j}(u, v)`.
    pub fn potential(&self, pair: &PrefixPair) -> Result<Rational, PairError> {
        self.potential_capped(pair, None)
    }
}

/// One-shot `B_n(u, v)`.
pub fn bad_mass(n: u64, pair: &PrefixPair, sched: &Schedule) -> Result<Rational, PairError> {
    Evaluator::new(sched).bad_mass(n, pair)
}

/// One-shot `Phi_L(u, v)`.
pub fn potential(pair: &PrefixPair, sched: &Schedule) -> Result<Rational, PairError> {
    Evaluator::new(sched).potential(pair)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Largest checkpoint length whose bad mass may be evaluated.
    pub max_checkpoint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    /// Length before the step.
    pub len: usize,
    pub a: u8,
    pub b: u8,
    /// `Phi_{len+1}` of the chosen extension.
    pub phi: Rational,
    /// `phi` is at most `sum_{j : A_j <= len+1} 1/N_j^2`.
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildEvent {
    /// Checkpoint `j` joined the potential; `mass` is `B_{N_j}` of the
    /// prefixes at that moment.
    Activate { j: u64, n: u64, mass: Rational, bound: Rational, ok: bool },
    /// Checkpoint `j` became active but lies above the budget.
    Defer { j: u64, n: u64, budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub shuffler: u64,
    pub r: usize,
    pub w: Word,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointResult {
    pub j: u64,
    pub n: u64,
    pub violations: Vec<Violation>,
}

impl CheckpointResult {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub k: u32,
    pub m0: u64,
    pub eps: String,
    pub family: String,
    pub budget: Option<u64>,
    pub steps: Vec<StepRecord>,
    /// Events tagged with the step (prefix length) at which they occurred.
    pub events: Vec<(usize, BuildEvent)>,
    pub checkpoints: Vec<CheckpointResult>,
    pub dp_evaluations: u64,
    pub cache_hits: u64,
}

impl BuildReport {
    pub fn all_activations_ok(&self) -> bool {
        self.events.iter().all(|(_, e)| !matches!(e, BuildEvent::Activate { ok: false, .. }))
    }

    pub fn max_phi(&self) -> Option<&Rational> {
        self.steps.iter().map(|s| &s.phi).max()
    }

    pub fn phi_below_one(&self) -> bool {
        self.steps.iter().all(|s| s.phi < Rational::one())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# pair build k={} m0={} eps={} family={} encoding={}", self.k, self.m0, self.eps, self.family, ENCODING_VERSION);
        let _ = writeln!(out, "# budget={}", self.budget.map_or("none".to_string(), |b| b.to_string()));
        let _ = writeln!(out, "# step lines: L a* b* Phi_(L+1); where eps_n exceeds 1 every constraint holds automatically");
        let mut events = self.events.iter().peekable();
        for step in &self.steps {
            while let Some((_, e)) = events.next_if(|(at, _)| *at == step.len) {
                write_event(&mut out, e);
            }
            let _ = writeln!(
                out,
                "{} {} {} {}",
                step.len,
                Word::from(vec![step.a]),
                Word::from(vec![step.b]),
                format_rational(&step.phi)
            );
            if step.phi >= Rational::one() {
                let _ = writeln!(out, "VIOLATION {} phi>=1", step.len);
            }
            if !step.within_budget {
                let _ = writeln!(out, "BUDGET {} phi exceeds sum of 1/N_j^2", step.len);
            }
        }
        for (_, e) in events {
            write_event(&mut out, e);
        }
        for c in &self.checkpoints {
            let _ = write!(out, "CHECKPOINT {} {}", c.j, if c.passed() { "pass" } else { "fail" });
            if !c.passed() {
                let list: Vec<String> = c
                    .violations
                    .iter()
                    .map(|v| format!("i={} r={} w={} count={}", v.shuffler, v.r, v.w, v.count))
                    .collect();
                let _ = write!(out, " [{}]", list.join("; "));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# counters dp_evaluations={} cache_hits={}", self.dp_evaluations, self.cache_hits);
        out
    }
}

fn write_event(out: &mut String, e: &BuildEvent) {
    match e {
        BuildEvent::Activate { j, mass, bound, ok, .. } => {
            let _ = writeln!(
                out,
                "ACTIVATE {} B={} bound={} {}",
                j,
                format_rational(mass),
                format_rational(bound),
                if *ok { "ok" } else { "violated" }
            );
        }
        BuildEvent::Defer { j, n, budget } => {
            let _ = writeln!(out, "DEFER {j} N={n} budget={budget}");
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOutcome {
    pub x: Word,
    pub y: Word,
    pub report: BuildReport,
}

fn describe_eps(sched: &Schedule) -> String {
    match sched.rule() {
        EpsilonRule::Formula => format!("formula/2^-{}", sched.eps_bits()),
        EpsilonRule::Fixed(e) => format!("fixed/{}", format_rational(e)),
    }
}

/// Runs the greedy loop for `n_out` steps.
pub fn greedy_build(n_out: usize, sched: &Schedule, opts: &BuildOptions) -> Result<BuildOutcome, PairError> {
    if let Some(budget) = opts.max_checkpoint {
        if let Some(&j) = sched.checkpoints_within(n_out as u64).iter().find(|&&j| sched.checkpoint_len(j) > budget) {
            return Err(PairError::BudgetExceeded { j, n: sched.checkpoint_len(j), budget });
        }
    }
    let k = sched.k() as u8;
    let mut pair = PrefixPair::empty();
    let mut steps = Vec::with_capacity(n_out);
    let mut events = Vec::new();
    let mut dp_evaluations = 0;
    let mut cache_hits = 0;
    for len in 0..n_out {
        // prefixes change every step, so memo entries never carry over
        let eval = Evaluator::new(sched);
        for j in sched.activated_at(len as u64 + 1) {
            let nj = sched.checkpoint_len(j);
            match opts.max_checkpoint {
                Some(budget) if nj > budget => events.push((len, BuildEvent::Defer { j, n: nj, budget })),
                _ => {
                    let mass = eval.bad_mass(nj, &pair)?;
                    let bound = Rational::new(BigInt::one(), BigInt::from(nj) * BigInt::from(nj));
                    let ok = mass <= bound;
                    events.push((len, BuildEvent::Activate { j, n: nj, mass, bound, ok }));
                }
            }
        }
        let mut best: Option<(Rational, u8, u8)> = None;
        for a in 0..k {
            for b in 0..k {
                let phi = eval.potential_capped(&pair.extended(a, b), opts.max_checkpoint)?;
                if best.as_ref().map_or(true, |(p, _, _)| phi < *p) {
                    best = Some((phi, a, b));
                }
            }
        }
        let (phi, a, b) = best.expect("alphabet has at least two symbols");
        let within_budget = phi <= sched.potential_budget(len as u64 + 1);
        steps.push(StepRecord { len, a, b, phi, within_budget });
        pair = pair.extended(a, b);
        let stats = eval.cache().stats();
        dp_evaluations += stats.misses;
        cache_hits += stats.hits;
    }
    let checkpoints = verify_checkpoints(&pair.u, &pair.v, sched)?;
    let report = BuildReport {
        k: sched.k(),
        m0: sched.m0(),
        eps: describe_eps(sched),
        family: sched.family().describe(),
        budget: opts.max_checkpoint,
        steps,
        events,
        checkpoints,
        dp_evaluations,
        cache_hits,
    };
    Ok(BuildOutcome { x: pair.u, y: pair.v, report })
}

/// Recounts every constraint at each checkpoint `N_j <= |x|` by running the
/// shufflers directly on the prefixes. Independent of the dynamic program.
pub fn verify_checkpoints(x: &[u8], y: &[u8], sched: &Schedule) -> Result<Vec<CheckpointResult>, PairError> {
    if x.len() != y.len() {
        return Err(PairError::UnequalPrefixes { u: x.len(), v: y.len() });
    }
    let k = sched.k();
    let mut results = Vec::new();
    for j in sched.checkpoints_within(x.len() as u64) {
        let n = sched.checkpoint_len(j);
        let params = sched.params_of(n)?;
        let mut violations = Vec::new();
        for i in 1..=params.shufflers {
            let s = sched.family().get(i, sched.alphabet());
            let out = s.output(x, y, n as usize)?;
            for r in 1..=params.max_block {
                let m = n as usize / r;
                for w in sched.alphabet().words_of_length(r) {
                    let count = occ_aligned(&out, &w, r).expect("block length matches");
                    if count_fails(count as usize, m, k, r, &params.eps) {
                        violations.push(Violation { shuffler: i, r, w, count });
                    }
                }
            }
        }
        results.push(CheckpointResult { j, n, violations });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffler::{ShufflerFamily, Tape};
    use crate::words::Alphabet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bin() -> Alphabet {
        Alphabet::new(2).unwrap()
    }

    fn formula(m0: u64) -> Schedule {
        Schedule::new(bin(), m0, 1, 64).unwrap()
    }

    fn fixed(eps: (i64, i64), family: Vec<Shuffler>) -> Schedule {
        formula(1)
            .with_epsilon(EpsilonRule::Fixed(Rational::new(eps.0.into(), eps.1.into())))
            .unwrap()
            .with_family(ShufflerFamily::explicit(family))
    }

    fn pair(u: &str, v: &str) -> PrefixPair {
        PrefixPair::new(Word::parse(u, bin()).unwrap(), Word::parse(v, bin()).unwrap()).unwrap()
    }

    #[test]
    fn formula_tolerance_makes_desk_scale_mass_vanish() {
        let s = formula(1);
        for n in [16, 81] {
            assert!(bad_mass(n, &pair("0110", "1111"), &s).unwrap().is_zero());
        }
    }

    #[test]
    fn tower_identity_with_a_tight_tolerance() {
        let s = fixed((1, 8), vec![Shuffler::alternator(bin()), Shuffler::reader(bin(), Tape::Y)]);
        let eval = Evaluator::new(&s);
        let base = pair("01", "11");
        let lhs = eval.bad_mass(12, &base).unwrap();
        let mut rhs = Rational::zero();
        for a in 0..2 {
            for b in 0..2 {
                rhs += eval.bad_mass(12, &base.extended(a, b)).unwrap();
            }
        }
        assert!(!lhs.is_zero());
        assert_eq!(lhs, rhs / Rational::from_integer(4.into()));
    }

    #[test]
    fn full_prefix_mass_is_an_integer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = fixed((1, 4), vec![Shuffler::random(&mut rng, bin(), 3), Shuffler::alternator(bin())]);
        for _ in 0..10 {
            let u: Vec<u8> = (0..9).map(|_| rng.gen_range(0..2)).collect();
            let v: Vec<u8> = (0..9).map(|_| rng.gen_range(0..2)).collect();
            let p = PrefixPair::new(Word::from(u), Word::from(v)).unwrap();
            assert!(bad_mass(9, &p, &s).unwrap().is_integer());
        }
    }

    #[test]
    fn prefix_longer_than_n_is_rejected() {
        assert!(matches!(
            bad_mass(3, &pair("0000", "0000"), &formula(1)),
            Err(PairError::PrefixTooLong { .. })
        ));
        assert!(PrefixPair::new(Word::zeros(2), Word::zeros(3)).is_err());
    }

    #[test]
    fn potential_examples() {
        let s = fixed((1, 4), vec![Shuffler::reader(bin(), Tape::X)]);
        assert!(potential(&pair("010", "110"), &s).unwrap().is_zero());
        let p = pair("0111", "0000");
        assert_eq!(potential(&p, &s).unwrap(), bad_mass(16, &p, &s).unwrap());
    }

    #[test]
    fn early_steps_tie_at_zero() {
        let out = greedy_build(3, &formula(1), &BuildOptions::default()).unwrap();
        assert_eq!(out.x.to_string(), "000");
        assert_eq!(out.y.to_string(), "000");
        assert!(out.report.steps.iter().all(|s| s.phi.is_zero()));
    }

    #[test]
    fn empty_build_has_empty_body() {
        let out = greedy_build(0, &formula(1), &BuildOptions::default()).unwrap();
        assert!(out.x.is_empty() && out.y.is_empty());
        assert!(out.report.to_text().lines().all(|l| l.starts_with('#')));
    }

    #[test]
    fn budget_rejects_reached_checkpoints_and_defers_the_rest() {
        let opts = BuildOptions { max_checkpoint: Some(10) };
        assert!(greedy_build(16, &formula(1), &opts).unwrap_err().is_budget());
        let opts = BuildOptions { max_checkpoint: Some(16) };
        let out = greedy_build(10, &formula(1), &opts).unwrap();
        assert!(out.report.events.iter().any(|(_, e)| matches!(e, BuildEvent::Defer { j: 2, .. })));
        assert!(out.report.to_text().contains("DEFER 2 N=81 budget=16"));
    }

    #[test]
    fn tight_build_keeps_potential_below_one_and_passes() {
        let s = fixed((1, 2), vec![Shuffler::alternator(bin()), Shuffler::reader(bin(), Tape::Y)]);
        let out = greedy_build(16, &s, &BuildOptions { max_checkpoint: Some(16) }).unwrap();
        let rep = &out.report;
        assert!(rep.events.iter().any(|(_, e)| matches!(e, BuildEvent::Activate { j: 1, .. })));
        if rep.all_activations_ok() {
            assert!(rep.phi_below_one());
            assert!(rep.steps.iter().all(|s| s.within_budget));
        }
        if rep.steps.last().unwrap().phi < Rational::one() {
            assert!(rep.checkpoints[0].passed());
        }
    }

    #[test]
    fn corrupted_prefix_is_caught_by_the_recount() {
        let s = fixed((1, 4), vec![Shuffler::reader(bin(), Tape::Y)]);
        let x = crate::words::champernowne_prefix(2, 16);
        let res = verify_checkpoints(&x, &Word::zeros(16), &s).unwrap();
        assert_eq!(res.len(), 1);
        assert!(!res[0].passed());
        let v = &res[0].violations[0];
        assert_eq!((v.shuffler, v.r, v.w.to_string(), v.count), (1, 1, "0".to_string(), 16));
    }

    #[test]
    fn short_prefixes_have_no_checkpoints() {
        assert!(verify_checkpoints(&[0; 5], &[1; 5], &formula(1)).unwrap().is_empty());
    }
}

//! Randomised invariant checks against independent oracles. Each check is
//! seeded, so a run is reproducible, and reports how many cases it covered
//! plus a description of every failure.

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::companion::{build_companion, replay_trace, CompanionConfig, Membership, SliceEvaluator};
use crate::exactprob::{brute_force_distribution, chernoff_bound, dp_count_distribution, format_rational, Rational};
use crate::pairbuilder::{Evaluator, PrefixPair};
use crate::schedule::{EpsilonRule, Schedule};
use crate::shuffler::{Shuffler, ShufflerFamily};
use crate::words::{Alphabet, Word, WordSource};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: u64,
    /// Cases where the checked quantity was not trivially zero.
    pub nontrivial: u64,
    pub failures: Vec<String>,
}

impl CheckOutcome {
    fn new(name: &str) -> Self {
        CheckOutcome { name: name.to_string(), cases: 0, nontrivial: 0, failures: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let mut line = format!("{verdict} {} cases={} nontrivial={}", self.name, self.cases, self.nontrivial);
        if let Some(first) = self.failures.first() {
            line.push_str(&format!(" first_failure=\"{first}\""));
        }
        line
    }

    fn fail(&mut self, msg: String) {
        self.failures.push(msg);
    }
}

fn binary() -> Alphabet {
    Alphabet::new(2).expect("k = 2 is valid")
}

fn random_word<R: Rng>(rng: &mut R, k: u32, len: usize) -> Word {
    Word::from((0..len).map(|_| rng.gen_range(0..k) as u8).collect::<Vec<u8>>())
}

/// Tolerances used to make bad mass non-trivial at small `n`.
fn random_schedule<R: Rng>(rng: &mut R, max_states: usize) -> Schedule {
    let alphabet = binary();
    let count = rng.gen_range(1..=3);
    let family: Vec<Shuffler> = (0..count).map(|_| Shuffler::random(rng, alphabet, max_states)).collect();
    let rule = match rng.gen_range(0..5) {
        0 => EpsilonRule::Formula,
        1 => EpsilonRule::Fixed(Rational::new(1.into(), 8.into())),
        2 => EpsilonRule::Fixed(Rational::new(1.into(), 4.into())),
        3 => EpsilonRule::Fixed(Rational::new(1.into(), 3.into())),
        _ => EpsilonRule::Fixed(Rational::new(1.into(), 2.into())),
    };
    Schedule::new(alphabet, 1, 1, 64)
        .expect("m0 = 1 is admissible")
        .with_epsilon(rule)
        .expect("tolerances are non-negative")
        .with_family(ShufflerFamily::explicit(family))
}

fn random_pair<R: Rng>(rng: &mut R, len: usize) -> PrefixPair {
    PrefixPair::new(random_word(rng, 2, len), random_word(rng, 2, len)).expect("equal lengths")
}

/// Dynamic program against brute-force enumeration, `k = 2`, every
/// `n <= max_n`, every prefix length, every `r <= max_r` and block `w`.
pub fn dp_matches_oracle(seed: u64, shufflers: usize, max_n: usize, max_states: usize, max_r: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("dp-oracle-equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = binary();
    for _ in 0..shufflers {
        let s = Shuffler::random(&mut rng, alphabet, max_states);
        for n in 1..=max_n {
            for len in 0..=n {
                let u = random_word(&mut rng, 2, len);
                let v = random_word(&mut rng, 2, len);
                for r in 1..=max_r.min(n) {
                    for w in alphabet.words_of_length(r) {
                        out.cases += 1;
                        let dp = dp_count_distribution(&s, n, r, &w, &u, &v);
                        let oracle = brute_force_distribution(&s, n, r, &w, &u, &v, 1 << 20);
                        match (dp, oracle) {
                            (Ok(a), Ok(b)) if a == b => {
                                out.nontrivial += (a.mass.iter().filter(|m| !m.is_zero()).count() > 1) as u64;
                            }
                            (a, b) => out.fail(format!(
                                "{} n={n} r={r} w={w} u={u} v={v}: dp={:?} oracle={:?}",
                                s.encode(),
                                a.map(|d| d.mass),
                                b.map(|d| d.mass)
                            )),
                        }
                    }
                }
            }
        }
    }
    out
}

/// `B_n(u, v) = k^-2 sum_{a,b} B_n(ua, vb)`, exactly.
pub fn tower_identity(seed: u64, instances: usize, max_n: u64, max_len: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("tower-identity");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let sched = random_schedule(&mut rng, 4);
        let n = rng.gen_range(8.min(max_n)..=max_n);
        let len = rng.gen_range(0..=max_len.min(n as usize - 1));
        let pair = random_pair(&mut rng, len);
        let eval = Evaluator::new(&sched);
        let check = || -> Result<(Rational, Rational), String> {
            let lhs = eval.bad_mass(n, &pair).map_err(|e| e.to_string())?;
            let mut sum = Rational::zero();
            for a in 0..2 {
                for b in 0..2 {
                    sum += eval.bad_mass(n, &pair.extended(a, b)).map_err(|e| e.to_string())?;
                }
            }
            Ok((lhs, sum / Rational::from_integer(4.into())))
        };
        out.cases += 1;
        match check() {
            Ok((lhs, rhs)) if lhs == rhs => out.nontrivial += !lhs.is_zero() as u64,
            Ok((lhs, rhs)) => out.fail(format!(
                "n={n} u={} v={}: {} != {}",
                pair.u(),
                pair.v(),
                format_rational(&lhs),
                format_rational(&rhs)
            )),
            Err(e) => out.fail(e),
        }
    }
    out
}

/// With the whole prefix fixed (`L = n`), `B_n` is an integer.
pub fn integrality(seed: u64, instances: usize, max_n: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("integrality");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let sched = random_schedule(&mut rng, 4);
        let n = rng.gen_range(8.min(max_n)..=max_n);
        let pair = random_pair(&mut rng, n as usize);
        out.cases += 1;
        match crate::pairbuilder::bad_mass(n, &pair, &sched) {
            Ok(b) if b.is_integer() => out.nontrivial += !b.is_zero() as u64,
            Ok(b) => out.fail(format!("n={n} u={} v={}: B={}", pair.u(), pair.v(), format_rational(&b))),
            Err(e) => out.fail(e.to_string()),
        }
    }
    out
}

/// `min_{a,b} Phi_{L+1}(ua, vb) <= sum_{j in J(L+1)} B_{N_j}(u, v)`.
pub fn one_step_bound(seed: u64, instances: usize, max_len: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("one-step-bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let sched = random_schedule(&mut rng, 3);
        let len = rng.gen_range(3..=max_len);
        let pair = random_pair(&mut rng, len);
        let eval = Evaluator::new(&sched);
        let check = || -> Result<(Rational, Rational), String> {
            let mut avg = Rational::zero();
            for j in sched.active_set(len as u64 + 1) {
                avg += eval.bad_mass(sched.checkpoint_len(j), &pair).map_err(|e| e.to_string())?;
            }
            let mut best: Option<Rational> = None;
            for a in 0..2 {
                for b in 0..2 {
                    let phi = eval.potential(&pair.extended(a, b)).map_err(|e| e.to_string())?;
                    if best.as_ref().map_or(true, |p| phi < *p) {
                        best = Some(phi);
                    }
                }
            }
            Ok((best.expect("four candidates"), avg))
        };
        out.cases += 1;
        match check() {
            Ok((min, avg)) if min <= avg => out.nontrivial += !avg.is_zero() as u64,
            Ok((min, avg)) => out.fail(format!(
                "L={len} u={} v={}: min {} > bound {}",
                pair.u(),
                pair.v(),
                format_rational(&min),
                format_rational(&avg)
            )),
            Err(e) => out.fail(e),
        }
    }
    out
}

/// Encode/decode round trips for random shufflers with up to `max_states`
/// states, over alphabets of size 2 to 4.
pub fn encoding_round_trip(seed: u64, count: usize, max_states: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("encoding-round-trip");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let alphabet = Alphabet::new(rng.gen_range(2..=4)).expect("small alphabet");
        let s = Shuffler::random(&mut rng, alphabet, max_states);
        let bits = s.encode();
        out.cases += 1;
        match Shuffler::decode(&bits, alphabet) {
            Some(back) if back == s && back.encode() == bits => out.nontrivial += (s.num_states() > 1) as u64,
            other => out.fail(format!("{bits} decoded to {other:?}")),
        }
    }
    out
}

/// `run_n` on two pairs of inputs that agree on their first `n` symbols
/// gives the same output.
pub fn prefix_determinism(seed: u64, trials: usize, max_states: usize) -> CheckOutcome {
    let mut out = CheckOutcome::new("prefix-determinism");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = binary();
    for _ in 0..trials {
        let s = Shuffler::random(&mut rng, alphabet, max_states);
        let n = rng.gen_range(0..=32);
        let x = random_word(&mut rng, 2, n);
        let y = random_word(&mut rng, 2, n);
        let extend = |rng: &mut ChaCha8Rng, w: &Word| {
            let extra = rng.gen_range(0..=16);
            let mut longer = w.to_vec();
            longer.extend(random_word(rng, 2, extra).iter());
            longer
        };
        let (x1, y1) = (extend(&mut rng, &x), extend(&mut rng, &y));
        let (x2, y2) = (extend(&mut rng, &x), extend(&mut rng, &y));
        out.cases += 1;
        match (s.output(&x1, &y1, n), s.output(&x2, &y2, n)) {
            (Ok(a), Ok(b)) if a == b && a.len() == n => out.nontrivial += (n > 0) as u64,
            (a, b) => out.fail(format!("{} n={n}: {a:?} vs {b:?}", s.encode())),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChernoffSample {
    pub trials: u64,
    pub p: Rational,
    pub delta: Rational,
    pub samples: u64,
    pub empirical: f64,
    pub bound: f64,
}

/// Monte Carlo estimate of `Pr[|X - Mp| >= delta M p]` for `X ~ Bin(M, p)`.
pub fn chernoff_sample(seed: u64, trials: u64, p: (u32, u32), delta: (u32, u32), samples: u64) -> ChernoffSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p_q = Rational::new(p.0.into(), p.1.into());
    let delta_q = Rational::new(delta.0.into(), delta.1.into());
    let mean = &p_q * Rational::from_integer(trials.into());
    let gap = &delta_q * &mean;
    let mut hits = 0u64;
    for _ in 0..samples {
        let x = (0..trials).filter(|_| rng.gen_ratio(p.0, p.1)).count() as u64;
        let dev = Rational::from_integer(x.into()) - &mean;
        let dev = if dev < Rational::zero() { -dev } else { dev };
        hits += (dev >= gap) as u64;
    }
    let bound = chernoff_bound(trials, &p_q, &delta_q).expect("parameters in range");
    ChernoffSample { trials, p: p_q, delta: delta_q, samples, empirical: hits as f64 / samples as f64, bound }
}

pub fn chernoff_sanity(seed: u64, samples: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("chernoff-sanity");
    for (i, (m, p, d)) in [(100, (1, 2), (1, 2)), (60, (1, 4), (1, 1))].into_iter().enumerate() {
        let s = chernoff_sample(seed + i as u64, m, p, d, samples);
        out.cases += 1;
        out.nontrivial += (s.bound < 1.0) as u64;
        if s.empirical > s.bound {
            out.fail(format!("M={m}: empirical {} > bound {}", s.empirical, s.bound));
        }
    }
    out
}

/// Builds a companion, replays its trace, checks additivity, monotonicity
/// and shrinking intersections on every cylinder the trace touched, and the
/// final recount.
pub fn companion_invariants(x: &dyn WordSource, stages: u32, length: usize, config: &CompanionConfig) -> CheckOutcome {
    let mut out = CheckOutcome::new("companion-invariants");
    let (y, report) = match build_companion(x, stages, length, config) {
        Ok(r) => r,
        Err(e) => {
            out.fail(e.to_string());
            return out;
        }
    };
    let specs: Vec<_> = report.cutoffs.iter().map(|c| c.spec).collect();
    let k = x.alphabet().size();
    let eval = SliceEvaluator::new(x, config);
    for e in &report.trace {
        out.cases += 1;
        let v = &y[..e.ell];
        let cylinder = Rational::new(BigInt::one(), BigInt::from(k).pow(e.ell as u32));
        let sum = e.children.iter().fold(Rational::zero(), |acc, c| acc + c);
        if sum != e.mu {
            out.fail(format!("additivity at ell={}", e.ell));
        }
        if e.mu > cylinder {
            out.fail(format!("monotonicity at ell={}", e.ell));
        }
        let upto = (e.level as usize).min(specs.len());
        for level in 0..upto {
            let wider = eval.measure(&specs[..level], v);
            let narrower = eval.measure(&specs[..level + 1], v);
            match (wider, narrower) {
                (Ok(a), Ok(b)) if b <= a => {}
                (a, b) => out.fail(format!("shrinking at ell={} level={level}: {a:?} {b:?}", e.ell)),
            }
        }
        out.nontrivial += (e.mu < cylinder) as u64;
    }
    match replay_trace(x, &specs, &y, &report.trace, config) {
        Ok(true) => {}
        Ok(false) => out.fail("trace replay mismatch".into()),
        Err(e) => out.fail(e.to_string()),
    }
    for r in &report.recount {
        if r.status == Membership::NonMember {
            out.fail(format!("recount: y is outside stage {}", r.spec.t));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// A few seconds.
    Quick,
    /// The full sizes used by the acceptance suite.
    Full,
}

/// Every suite at the given scale.
pub fn run_all(seed: u64, scale: Scale) -> Vec<CheckOutcome> {
    let full = scale == Scale::Full;
    let pick = |quick: usize, big: usize| if full { big } else { quick };
    let champ = crate::words::Champernowne::new(binary());
    vec![
        dp_matches_oracle(seed, pick(5, 50), pick(6, 8), 4, 2),
        tower_identity(seed, pick(20, 100), 16, 6),
        integrality(seed, pick(10, 50), 12),
        one_step_bound(seed, pick(10, 100), pick(8, 14)),
        encoding_round_trip(seed, pick(200, 1000), 8),
        prefix_determinism(seed, pick(50, 200), 8),
        chernoff_sanity(seed, pick(5_000, 100_000) as u64),
        companion_invariants(&champ, 1, pick(12, 32), &CompanionConfig::default()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass() {
        for outcome in run_all(7, Scale::Quick) {
            assert!(outcome.passed(), "{}", outcome.summary());
            assert!(outcome.cases > 0, "{}", outcome.summary());
        }
    }

    #[test]
    fn random_schedules_produce_nontrivial_mass() {
        let t = tower_identity(3, 20, 16, 6);
        assert!(t.nontrivial > 0, "{}", t.summary());
    }

    #[test]
    fn summary_marks_failures() {
        let mut o = CheckOutcome::new("demo");
        o.cases = 2;
        assert!(o.summary().starts_with("PASS demo"));
        o.fail("broken".into());
        assert!(o.summary().starts_with("FAIL demo") && o.summary().contains("broken"));
    }
}

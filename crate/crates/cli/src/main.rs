//! `fsi`: shufflers, block statistics, exact probabilities, pair building
//! and companion extraction from the command line.
//!
//! Exit status: 0 success, 1 domain error, 2 cap or budget exhausted,
//! 64 usage error.

mod config;
mod error;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use fsi_core::companion::{build_companion, Caps, CompanionConfig, Lookahead};
use fsi_core::exactprob::{
    brute_force_distribution, chernoff_bound, conditional_failure_bound, dp_count_distribution, format_rational,
    parse_rational, CountDistribution,
};
use fsi_core::pairbuilder::{greedy_build, verify_checkpoints, BuildOptions};
use fsi_core::schedule::{EpsilonRule, DEFAULT_EPS_BITS};
use fsi_core::shuffler::{binary_string, enumerate, ENCODING_VERSION};
use fsi_core::verify::{run_all, Scale};
use fsi_core::words::{max_deviation, occ_overlapping, Champernowne, Literal};
use fsi_core::{Alphabet, Rational, Schedule, Shuffler, Word, WordSource};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "fsi", version, about = "Exact constructions of finite-state independent normal words")]
struct Cli {
    /// Worker threads for parallel evaluation (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// File of `key=value` lines supplying defaults for flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Group,
}

#[derive(Subcommand)]
enum Group {
    /// Inspect, decode and run shufflers.
    #[command(subcommand)]
    Shuffler(ShufflerCmd),
    /// Block-frequency statistics of a word.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Exact count laws and tail bounds.
    #[command(subcommand)]
    Prob(ProbCmd),
    /// Greedy construction of a prefix pair and checkpoint recounts.
    #[command(subcommand)]
    Pair(PairCmd),
    /// Companion extraction for a fixed computable word.
    #[command(subcommand)]
    Companion(CompanionCmd),
    /// Invariant suites.
    #[command(subcommand)]
    Verify(VerifyCmd),
}

#[derive(Subcommand)]
enum ShufflerCmd {
    /// The first shufflers of the canonical enumeration.
    List {
        #[arg(long)]
        k: u32,
        #[arg(long, default_value_t = 16)]
        count: u64,
    },
    /// Decode a bit string into the text format.
    Decode {
        bits: String,
        #[arg(long)]
        k: u32,
    },
    /// Run a shuffler on two input words.
    Run {
        #[command(flatten)]
        shuffler: ShufflerArg,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Output length; defaults to as many symbols as the inputs allow.
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Args)]
struct ShufflerArg {
    /// Shuffler in the text format.
    #[arg(long, conflicts_with_all = ["bits", "index"])]
    shuffler: Option<PathBuf>,
    /// Shuffler given by its bit encoding.
    #[arg(long, conflicts_with = "index")]
    bits: Option<String>,
    /// `S_i` from the canonical enumeration.
    #[arg(long)]
    index: Option<u64>,
    /// Alphabet size; required with --bits and --index.
    #[arg(long)]
    k: Option<u32>,
}

impl ShufflerArg {
    fn load(&self) -> Result<Shuffler, CliError> {
        let need_k = || self.k.ok_or_else(|| CliError::Usage("--k is required with --bits and --index".into()));
        let s = if let Some(path) = &self.shuffler {
            Shuffler::from_text(&read(path)?)?
        } else if let Some(bits) = &self.bits {
            let alphabet = Alphabet::new(need_k()?)?;
            Shuffler::decode(bits, alphabet)
                .ok_or_else(|| CliError::Domain(format!("`{bits}` is not a valid {ENCODING_VERSION} encoding")))?
        } else if let Some(i) = self.index {
            if i == 0 {
                return Err(CliError::Usage("--index starts at 1".into()));
            }
            enumerate(i, Alphabet::new(need_k()?)?)
        } else {
            return Err(CliError::Usage("one of --shuffler, --bits, --index is required".into()));
        };
        if let Some(k) = self.k {
            if k != s.alphabet().size() {
                return Err(CliError::Domain(format!("shuffler is over k = {}, not {k}", s.alphabet().size())));
            }
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Overlapping block counts as CSV.
    Freq {
        #[command(flatten)]
        source: SourceArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
    },
    /// Block-frequency test `Delta_m <= eps`, optionally with a deviation curve.
    Test {
        #[command(flatten)]
        source: SourceArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        eps: String,
        /// Also write `n,delta` rows every this many symbols to --curve.
        #[arg(long, requires = "curve")]
        curve_step: Option<usize>,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SourceArg {
    /// `champernowne`, `file:<path>` or `literal:<word>`.
    #[arg(long)]
    source: String,
    #[arg(long)]
    k: u32,
}

impl SourceArg {
    fn open(&self) -> Result<Box<dyn WordSource>, CliError> {
        open_source(&self.source, Alphabet::new(self.k)?)
    }
}

fn open_source(spec: &str, alphabet: Alphabet) -> Result<Box<dyn WordSource>, CliError> {
    if spec == "champernowne" {
        Ok(Box::new(Champernowne::new(alphabet)))
    } else if let Some(path) = spec.strip_prefix("file:") {
        Ok(Box::new(Literal::from_file(Path::new(path), alphabet)?))
    } else if let Some(text) = spec.strip_prefix("literal:") {
        Ok(Box::new(Literal::parse(text, alphabet)?))
    } else {
        Err(CliError::Usage(format!("unknown source `{spec}`")))
    }
}

#[derive(Args)]
struct LawArgs {
    #[command(flatten)]
    shuffler: ShufflerArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    w: String,
    #[arg(long, default_value = "")]
    prefix_x: String,
    #[arg(long, default_value = "")]
    prefix_y: String,
    /// Also write the raw distribution (numerators over k^n) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ProbCmd {
    /// Count law by dynamic programming.
    Dp(LawArgs),
    /// Count law by enumerating every completion of the prefixes.
    Oracle {
        #[command(flatten)]
        law: LawArgs,
        /// Largest number of completions to enumerate.
        #[arg(long, default_value_t = 1 << 24)]
        budget: u64,
    },
    /// Tail bound `2 exp(-delta^2 M p / 3)`, or the conditional bound with --eps.
    Bound {
        #[arg(long)]
        trials: u64,
        #[arg(long, required_unless_present = "eps")]
        p: Option<String>,
        #[arg(long, required_unless_present = "eps")]
        delta: Option<String>,
        /// Conditional failure bound for tolerance eps (needs --k, --r, --prefix-len).
        #[arg(long, requires_all = ["k", "r"])]
        eps: Option<String>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, default_value_t = 0)]
        prefix_len: usize,
    },
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    k: u32,
    #[arg(long, conflicts_with = "auto_m0")]
    m0: Option<u64>,
    /// Pick the least admissible m0 for --n0.
    #[arg(long)]
    auto_m0: bool,
    #[arg(long, default_value_t = 1)]
    n0: u64,
    #[arg(long, default_value_t = DEFAULT_EPS_BITS)]
    eps_bits: u32,
    /// Use this tolerance at every length instead of the formula.
    #[arg(long)]
    eps_fixed: Option<String>,
}

impl ScheduleArgs {
    fn build(&self) -> Result<Schedule, CliError> {
        let alphabet = Alphabet::new(self.k)?;
        let sched = match (self.m0, self.auto_m0) {
            (Some(m0), _) => Schedule::new(alphabet, m0, self.n0, self.eps_bits)?,
            (None, true) => Schedule::auto(alphabet, self.n0, self.eps_bits)?,
            (None, false) => return Err(CliError::Usage("one of --m0 or --auto-m0 is required".into())),
        };
        Ok(match &self.eps_fixed {
            Some(text) => sched.with_epsilon(EpsilonRule::Fixed(rational(text, "--eps-fixed")?))?,
            None => sched,
        })
    }
}

#[derive(Subcommand)]
enum PairCmd {
    /// Greedy prefix pair of length N.
    Build {
        #[arg(long = "N")]
        n: usize,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Largest checkpoint length evaluated; larger active ones are deferred.
        #[arg(long)]
        max_checkpoint: Option<u64>,
        #[arg(long)]
        out_x: PathBuf,
        #[arg(long)]
        out_y: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Recount every checkpoint constraint reached by a prefix pair.
    Verify {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LookaheadArg {
    Truncated,
    Nested,
}

#[derive(Subcommand)]
enum CompanionCmd {
    /// Choose cutoffs, extract a companion prefix and recount.
    Build {
        #[command(flatten)]
        source: SourceArg,
        #[arg(long)]
        stages: u32,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 4)]
        max_window: u64,
        #[arg(long, default_value_t = 1 << 16)]
        max_enum: u64,
        #[arg(long, default_value_t = 1024)]
        max_level: u32,
        #[arg(long, value_enum, default_value = "truncated")]
        lookahead: LookaheadArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Run every invariant suite.
    All {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Acceptance-sized runs instead of quick ones.
        #[arg(long)]
        full: bool,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn word_file(word: &Word) -> String {
    if word.is_empty() {
        String::new()
    } else {
        format!("{word}\n")
    }
}

fn rational(text: &str, flag: &str) -> Result<Rational, CliError> {
    parse_rational(text).ok_or_else(|| CliError::Usage(format!("{flag}: `{text}` is not a rational like 3/8")))
}

fn law_lines(dist: &CountDistribution) -> String {
    let mut out = String::new();
    for c in 0..dist.mass.len() {
        let _ = writeln!(out, "{c} {}", format_rational(&dist.prob(c).to_rational(dist.k)));
    }
    out
}

fn run_law(args: &LawArgs, oracle_budget: Option<u64>) -> Result<String, CliError> {
    let s = args.shuffler.load()?;
    let alphabet = s.alphabet();
    let w = Word::parse(&args.w, alphabet)?;
    let xp = Word::parse(&args.prefix_x, alphabet)?;
    let yp = Word::parse(&args.prefix_y, alphabet)?;
    let dist = match oracle_budget {
        None => dp_count_distribution(&s, args.n, args.r, &w, &xp, &yp)?,
        Some(budget) => brute_force_distribution(&s, args.n, args.r, &w, &xp, &yp, budget)?,
    };
    if let Some(path) = &args.out {
        write(path, &dist.to_text())?;
    }
    Ok(law_lines(&dist))
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Group::Shuffler(cmd) => shuffler_cmd(cmd),
        Group::Stats(cmd) => stats_cmd(cmd),
        Group::Prob(cmd) => prob_cmd(cmd),
        Group::Pair(cmd) => pair_cmd(cmd),
        Group::Companion(cmd) => companion_cmd(cmd),
        Group::Verify(cmd) => verify_cmd(cmd),
    }
}

fn shuffler_cmd(cmd: ShufflerCmd) -> Result<String, CliError> {
    match cmd {
        ShufflerCmd::List { k, count } => {
            let alphabet = Alphabet::new(k)?;
            let mut out = format!("# encoding={ENCODING_VERSION} k={k}\n");
            for i in 1..=count {
                let bits = binary_string(i);
                let valid = Shuffler::decode(&bits, alphabet).is_some();
                let s = enumerate(i, alphabet);
                let shown = if bits.is_empty() { "-" } else { &bits };
                let _ = writeln!(
                    out,
                    "{i} {shown} {} states={} encoding={}",
                    if valid { "valid" } else { "fallback" },
                    s.num_states(),
                    s.encode()
                );
            }
            Ok(out)
        }
        ShufflerCmd::Decode { bits, k } => {
            let s = Shuffler::decode(&bits, Alphabet::new(k)?)
                .ok_or_else(|| CliError::Domain(format!("`{bits}` is not a valid {ENCODING_VERSION} encoding")))?;
            Ok(s.to_text())
        }
        ShufflerCmd::Run { shuffler, x, y, n } => {
            let s = shuffler.load()?;
            let xw = Word::parse(&x, s.alphabet())?;
            let yw = Word::parse(&y, s.alphabet())?;
            let out = match n {
                Some(n) => s.output(&xw, &yw, n)?,
                None => {
                    // run until a tape would be read past its end
                    let mut state = s.start_run();
                    while s.step(&mut state, &xw, &yw).is_ok() {}
                    state.out
                }
            };
            Ok(format!("{out}\n"))
        }
    }
}

fn stats_cmd(cmd: StatsCmd) -> Result<String, CliError> {
    match cmd {
        StatsCmd::Freq { source, n, m } => {
            let src = source.open()?;
            let u = src.prefix(n)?;
            let alphabet = src.alphabet();
            let mut out = String::from("block,count,frequency\n");
            for w in alphabet.words_of_length(m) {
                let count = occ_overlapping(&u, &w)?;
                let freq = Rational::new(count.into(), (n.max(1) as u64).into());
                let _ = writeln!(out, "{w},{count},{}", format_rational(&freq));
            }
            Ok(out)
        }
        StatsCmd::Test { source, n, m, eps, curve_step, curve } => {
            let src = source.open()?;
            let eps = rational(&eps, "--eps")?;
            let u = src.prefix(n)?;
            let k = src.alphabet().size();
            let delta = max_deviation(&u, m, k)?;
            if let (Some(step), Some(path)) = (curve_step, curve) {
                let mut csv = String::from("n,delta\n");
                let mut len = step.max(m);
                while len <= n {
                    let d = max_deviation(&u[..len], m, k)?;
                    let _ = writeln!(csv, "{len},{}", format_rational(&d));
                    len += step.max(1);
                }
                write(&path, &csv)?;
            }
            let verdict = if delta <= eps { "pass" } else { "fail" };
            Ok(format!("{verdict} delta={} eps={}\n", format_rational(&delta), format_rational(&eps)))
        }
    }
}

fn prob_cmd(cmd: ProbCmd) -> Result<String, CliError> {
    match cmd {
        ProbCmd::Dp(args) => run_law(&args, None),
        ProbCmd::Oracle { law, budget } => run_law(&law, Some(budget)),
        ProbCmd::Bound { trials, p, delta, eps, k, r, prefix_len } => {
            if let Some(eps) = eps {
                let eps = rational(&eps, "--eps")?;
                let (k, r) = (k.expect("clap enforces --k"), r.expect("clap enforces --r"));
                let m = trials as usize;
                return Ok(match conditional_failure_bound(&eps, m, k, r, prefix_len) {
                    Some(b) => format!("{b:e}\n"),
                    None => "inapplicable: needs 4L <= eps m and eps k^r <= 1\n".to_string(),
                });
            }
            let p = rational(&p.expect("clap enforces --p"), "--p")?;
            let delta = rational(&delta.expect("clap enforces --delta"), "--delta")?;
            Ok(format!("{:e}\n", chernoff_bound(trials, &p, &delta)?))
        }
    }
}

fn pair_cmd(cmd: PairCmd) -> Result<String, CliError> {
    match cmd {
        PairCmd::Build { n, schedule, max_checkpoint, out_x, out_y, report } => {
            let sched = schedule.build()?;
            let start = Instant::now();
            let outcome = greedy_build(n, &sched, &BuildOptions { max_checkpoint })?;
            eprintln!("pair build: {n} steps in {:.2}s", start.elapsed().as_secs_f64());
            write(&out_x, &word_file(&outcome.x))?;
            write(&out_y, &word_file(&outcome.y))?;
            write(&report, &outcome.report.to_text())?;
            let rep = &outcome.report;
            let failed = rep.checkpoints.iter().filter(|c| !c.passed()).count();
            Ok(format!(
                "steps={} max_phi={} activations_ok={} checkpoints={} failed={failed}\n",
                rep.steps.len(),
                rep.max_phi().map_or("-".to_string(), format_rational),
                rep.all_activations_ok(),
                rep.checkpoints.len()
            ))
        }
        PairCmd::Verify { x, y, schedule } => {
            let sched = schedule.build()?;
            let xw = Word::parse(&read(&x)?, sched.alphabet())?;
            let yw = Word::parse(&read(&y)?, sched.alphabet())?;
            let results = verify_checkpoints(&xw, &yw, &sched)?;
            if results.is_empty() {
                return Ok("# no checkpoint within the prefix length\n".to_string());
            }
            let mut out = String::new();
            for c in &results {
                let _ = write!(out, "CHECKPOINT {} N={} {}", c.j, c.n, if c.passed() { "pass" } else { "fail" });
                for v in &c.violations {
                    let _ = write!(out, " i={},r={},w={},count={}", v.shuffler, v.r, v.w, v.count);
                }
                out.push('\n');
            }
            if results.iter().all(|c| c.passed()) {
                Ok(out)
            } else {
                Err(CliError::Domain(out.trim_end().to_string()))
            }
        }
    }
}

fn companion_cmd(cmd: CompanionCmd) -> Result<String, CliError> {
    let CompanionCmd::Build { source, stages, length, max_window, max_enum, max_level, lookahead, out, report } = cmd;
    let src = source.open()?;
    let config = CompanionConfig {
        caps: Caps { max_window, max_enum, max_level },
        lookahead: match lookahead {
            LookaheadArg::Truncated => Lookahead::Truncated,
            LookaheadArg::Nested => Lookahead::Nested,
        },
        ..CompanionConfig::default()
    };
    let start = Instant::now();
    let (y, rep) = build_companion(src.as_ref(), stages, length, &config)?;
    eprintln!("companion build: {length} symbols in {:.2}s", start.elapsed().as_secs_f64());
    write(&out, &word_file(&y))?;
    write(&report, &rep.to_text())?;
    if !rep.recount_ok() {
        return Err(CliError::Domain("recount found the companion outside a decided slice".into()));
    }
    let cutoffs: Vec<String> = rep.cutoffs.iter().map(|c| c.spec.n_start.to_string()).collect();
    Ok(format!("cutoffs=[{}] length={} recount=ok\n", cutoffs.join(","), y.len()))
}

fn verify_cmd(cmd: VerifyCmd) -> Result<String, CliError> {
    let VerifyCmd::All { seed, full } = cmd;
    let outcomes = run_all(seed, if full { Scale::Full } else { Scale::Quick });
    let text: String = outcomes.iter().map(|o| o.summary() + "\n").collect();
    if outcomes.iter().all(|o| o.passed()) {
        Ok(text)
    } else {
        Err(CliError::Domain(text.trim_end().to_string()))
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge(argv, &Cli::command()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

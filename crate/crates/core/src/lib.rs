//! Exact, deterministic constructions of finite-state independent normal
//! words.
//!
//! Two constructions are provided:
//!
//! * [`pairbuilder`] greedily extends a pair of prefixes `(x, y)` one symbol
//!   at a time, choosing the extension that minimises a rolling potential
//!   made of exact conditional failure probabilities.
//! * [`companion`] takes a computable word `x` and extracts a companion `y`
//!   by exact cylinder-measure threshold searches over clopen test slices.
//!
//! Both rest on [`shuffler`] automata, the count-law dynamic program in
//! [`exactprob`], and the block statistics in [`words`].

pub mod certified;
pub mod companion;
pub mod exactprob;
pub mod pairbuilder;
pub mod schedule;
pub mod shuffler;
pub mod verify;
pub mod words;

pub use exactprob::{CountDistribution, Rational};
pub use schedule::Schedule;
pub use shuffler::{Shuffler, ShufflerFamily, Tape};
pub use words::{Alphabet, Word, WordSource};

use fsi_core::words::{champernowne_prefix, max_deviation};
use fsi_core::Rational;

#[test]
fn champernowne_million_symbol_deviations_are_frozen() {
    let u = champernowne_prefix(2, 1_000_000);
    assert_eq!(max_deviation(&u, 1, 2).unwrap(), Rational::new(30_199.into(), 1_000_000.into()));
    assert_eq!(max_deviation(&u, 2, 2).unwrap(), Rational::new(31_177.into(), 1_000_000.into()));
}

#[test]
fn leading_digit_bias_shrinks_slowly() {
    let d = |n: usize| max_deviation(&champernowne_prefix(2, n), 1, 2).unwrap();
    assert!(d(1 << 20) < d(1 << 12));
    assert!(d(1 << 12) > Rational::new(1.into(), 100.into()));
}

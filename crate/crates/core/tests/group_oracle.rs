//! Word evaluation compared against products of permutation matrices.

mod common;

use common::{exhaustive_s5, matrix_oracle, random_s10};

#[test]
fn all_short_words_in_s5() {
    let (words, bad) = exhaustive_s5();
    assert_eq!(words, 1 + 25 + 625 + 15_625 + 390_625);
    assert_eq!(bad, 0);
}

#[test]
fn random_words_in_s10() {
    assert_eq!(random_s10(100_000, 10), 0);
}

#[test]
fn matrix_oracle_examples() {
    assert_eq!(matrix_oracle(3, &[(1, 2), (2, 3)]), vec![2, 3, 1]);
    assert_eq!(matrix_oracle(3, &[(1, 1)]), vec![1, 2, 3]);
    assert_eq!(matrix_oracle(4, &[(1, 4), (1, 4)]), vec![1, 2, 3, 4]);
}

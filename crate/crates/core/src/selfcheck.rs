//! Built-in invariant suites behind `symword selfcheck`.

use crate::model::build_mask;
use crate::perm::{Permutation, Transposition, Word};
use crate::tokenizer::TokenScheme;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, cases: usize, failure: Option<String>) -> Self {
        Self {
            name: name.into(),
            passed: failure.is_none(),
            cases,
            detail: failure.unwrap_or_default(),
        }
    }
}

/// All permutations of `S_n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Permutation> {
    let mut cur: Vec<usize> = (1..=n).collect();
    let mut out = Vec::new();
    loop {
        out.push(Permutation::from_one_line(cur.clone()).expect("valid permutation"));
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

fn adjacent(ks: &[usize]) -> Word {
    Word::new(ks.iter().map(|&k| Transposition::adjacent(k)).collect())
}

/// `s(i,j) = s_i s_{i+1} ⋯ s_{j−2} s_{j−1} s_{j−2} ⋯ s_i` for `i < j`.
pub fn decomposition(i: usize, j: usize) -> Word {
    let mut ks: Vec<usize> = (i..j).collect();
    ks.extend((i..j - 1).rev());
    adjacent(&ks)
}

/// Compares two words as group elements, acting on every permutation in
/// `starts`.
fn same_action(u: &Word, v: &Word, starts: &[Permutation]) -> bool {
    starts.iter().all(|s| {
        let act = |w: &Word| {
            let mut p = s.clone();
            for &t in w.factors() {
                p.apply_transposition_in_place(t).expect("index within degree");
            }
            p
        };
        act(u) == act(v)
    })
}

/// Starting points for relation checks: the whole group for small `n`, the
/// identity otherwise (the right action is faithful, so the identity already
/// decides equality of group elements).
fn starts(n: usize) -> Vec<Permutation> {
    if n <= 6 {
        all_permutations(n)
    } else {
        vec![Permutation::identity(n).expect("n ≥ 1")]
    }
}

/// Involution, braid, commutation and transposition decomposition for every
/// degree `2..=max_n`.
pub fn relation_suite(max_n: usize) -> Vec<CheckResult> {
    let mut involution = (0, None);
    let mut braid = (0, None);
    let mut commute = (0, None);
    let mut decomp = (0, None);
    for n in 2..=max_n {
        let st = starts(n);
        let id = Word::new(Vec::new());
        for i in 1..=n {
            for j in 1..=n {
                if i == j {
                    continue;
                }
                involution.0 += 1;
                let w = Word::new(vec![Transposition::new(i, j); 2]);
                if involution.1.is_none() && !same_action(&w, &id, &st) {
                    involution.1 = Some(format!("s({i},{j})² ≠ 1 in S{n}"));
                }
                if i < j {
                    decomp.0 += 1;
                    let lhs = Word::new(vec![Transposition::new(i, j)]);
                    if decomp.1.is_none() && !same_action(&lhs, &decomposition(i, j), &st) {
                        decomp.1 = Some(format!("decomposition of s({i},{j}) fails in S{n}"));
                    }
                }
            }
        }
        for i in 1..n.saturating_sub(1) {
            braid.0 += 1;
            if braid.1.is_none() && !same_action(&adjacent(&[i, i + 1, i]), &adjacent(&[i + 1, i, i + 1]), &st) {
                braid.1 = Some(format!("braid relation at i = {i} fails in S{n}"));
            }
        }
        for i in 1..n {
            for j in 1..n {
                if i.abs_diff(j) >= 2 {
                    commute.0 += 1;
                    if commute.1.is_none() && !same_action(&adjacent(&[i, j]), &adjacent(&[j, i]), &st) {
                        commute.1 = Some(format!("s{i} s{j} ≠ s{j} s{i} in S{n}"));
                    }
                }
            }
        }
    }
    vec![
        CheckResult::new("involution s(i,j)² = 1", involution.0, involution.1),
        CheckResult::new("braid s_i s_i+1 s_i = s_i+1 s_i s_i+1", braid.0, braid.1),
        CheckResult::new("commutation s_i s_j = s_j s_i, |i−j| ≥ 2", commute.0, commute.1),
        CheckResult::new("s(i,j) as a product of adjacent transpositions", decomp.0, decomp.1),
    ]
}

/// The attention mask has the word/prediction block structure for every
/// scheme with `n` in `2..=max_n` and for the two full-size configurations.
pub fn mask_suite(max_n: usize) -> Vec<CheckResult> {
    let mut schemes = Vec::new();
    for n in 2..=max_n {
        schemes.push(TokenScheme::general(n).expect("valid n"));
        schemes.push(TokenScheme::adjacent(n).expect("valid n"));
    }
    schemes.push(TokenScheme::general(25).expect("valid n"));
    schemes.push(TokenScheme::adjacent(16).expect("valid n"));
    let mut failure = None;
    let mut cases = 0;
    for scheme in &schemes {
        let word_len = scheme.word_len();
        let c = scheme.context_len();
        let mask = build_mask(word_len, c - word_len);
        cases += 1;
        if mask.size() != c {
            failure.get_or_insert(format!("{scheme:?}: mask size {} ≠ context {c}", mask.size()));
        }
        for r in 0..c {
            for col in 0..c {
                let want = col < word_len || (r >= word_len && col <= r);
                if mask.allows(r, col) != want {
                    failure.get_or_insert(format!("{scheme:?}: entry ({r}, {col}) wrong"));
                }
            }
        }
    }
    vec![CheckResult::new("attention mask block structure", cases, failure)]
}

pub fn run_all() -> Vec<CheckResult> {
    let mut out = relation_suite(8);
    out.extend(mask_suite(8));
    out
}

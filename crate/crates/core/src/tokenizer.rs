//! Token layouts for the two word presentations and context-window assembly.
//!
//! Vocabulary layout, shared by both schemes:
//!
//! ```text
//! [0, t)            transposition tokens (t = n² general, t = n adjacent)
//! [t, t + n)        permutation values 1..=n
//! t + n             separator Δ
//! t + n + 1         PAD (reserved, never emitted by the generators)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::{Transposition, Word};

pub type Token = u16;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    General,
    Adjacent,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::General => "general",
            SchemeKind::Adjacent => "adjacent",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(SchemeKind::General),
            "adjacent" | "elementary" => Ok(SchemeKind::Adjacent),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

/// A word presentation for `S_n` together with its vocabulary layout.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct TokenScheme {
    pub kind: SchemeKind,
    pub n: usize,
}

impl TokenScheme {
    pub fn new(kind: SchemeKind, n: usize) -> Result<Self> {
        let scheme = Self { kind, n };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn general(n: usize) -> Result<Self> {
        Self::new(SchemeKind::General, n)
    }

    pub fn adjacent(n: usize) -> Result<Self> {
        Self::new(SchemeKind::Adjacent, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "degree {} too small for a word scheme",
                self.n
            )));
        }
        if self.vocab_size() > Token::MAX as usize + 1 {
            return Err(Error::Config(format!(
                "vocabulary of {} tokens does not fit 16-bit tokens",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// Fixed word length `N`: the longest reduced word, `n − 1` for general
    /// transpositions and `n(n − 1)/2` for adjacent ones.
    pub fn word_len(&self) -> usize {
        match self.kind {
            SchemeKind::General => self.n - 1,
            SchemeKind::Adjacent => self.n * (self.n - 1) / 2,
        }
    }

    pub fn transposition_tokens(&self) -> usize {
        match self.kind {
            SchemeKind::General => self.n * self.n,
            SchemeKind::Adjacent => self.n,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.transposition_tokens() + self.n + 2
    }

    /// Maximum context length `C = N + n + 1`.
    pub fn context_len(&self) -> usize {
        self.word_len() + self.n + 1
    }

    pub fn separator(&self) -> Token {
        (self.transposition_tokens() + self.n) as Token
    }

    pub fn pad(&self) -> Token {
        (self.transposition_tokens() + self.n + 1) as Token
    }

    pub fn perm_token(&self, value: usize) -> Result<Token> {
        if value == 0 || value > self.n {
            return Err(Error::IndexOutOfRange {
                index: value,
                n: self.n,
            });
        }
        Ok((self.transposition_tokens() + value - 1) as Token)
    }

    /// Inverse of [`perm_token`](Self::perm_token); `None` for tokens outside
    /// the permutation block.
    pub fn perm_value(&self, token: Token) -> Option<usize> {
        let t = token as usize;
        let lo = self.transposition_tokens();
        (lo..lo + self.n).contains(&t).then(|| t - lo + 1)
    }

    pub fn is_transposition_token(&self, token: Token) -> bool {
        (token as usize) < self.transposition_tokens()
    }

    /// Interprets a single transposition token as a factor.
    pub fn decode_token(&self, token: Token) -> Result<Transposition> {
        match self.kind {
            SchemeKind::General => {
                let (i, j) = decode_general(token, self.n)?;
                Ok(Transposition::new(i, j))
            }
            SchemeKind::Adjacent => {
                let k = token as usize;
                if k >= self.n {
                    return Err(Error::TokenOutOfRange {
                        token: k,
                        limit: self.n,
                    });
                }
                Ok(if k == 0 {
                    Transposition::IDENTITY
                } else {
                    Transposition::adjacent(k)
                })
            }
        }
    }

    /// Decodes any number of transposition tokens into a word.
    pub fn decode_word(&self, tokens: &[Token]) -> Result<Word> {
        tokens.iter().map(|&t| self.decode_token(t)).collect()
    }

    pub fn check_word(&self, tokens: &[Token]) -> Result<()> {
        if tokens.len() != self.word_len() {
            return Err(Error::WordLength {
                expected: self.word_len(),
                actual: tokens.len(),
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| !self.is_transposition_token(t)) {
            return Err(Error::TokenOutOfRange {
                token: bad as usize,
                limit: self.transposition_tokens(),
            });
        }
        Ok(())
    }
}

/// `x = i − 1 + n(j − 1)`.
pub fn encode_general(i: usize, j: usize, n: usize) -> Result<Token> {
    for idx in [i, j] {
        if idx == 0 || idx > n {
            return Err(Error::IndexOutOfRange { index: idx, n });
        }
    }
    let x = i - 1 + n * (j - 1);
    Token::try_from(x).map_err(|_| Error::TokenOutOfRange {
        token: x,
        limit: Token::MAX as usize + 1,
    })
}

/// `(1 + ⌊x/n⌋, 1 + (x mod n))`. The pair is read as an unordered
/// transposition, so it names the same action as the encoded `(i, j)`.
pub fn decode_general(x: Token, n: usize) -> Result<(usize, usize)> {
    let x = x as usize;
    if n == 0 || x >= n * n {
        return Err(Error::TokenOutOfRange {
            token: x,
            limit: n * n,
        });
    }
    Ok((1 + x / n, 1 + x % n))
}

/// Adjacent generator `s_i` (with `s_0 ≡ 1`) is its own token.
pub fn encode_adjacent(i: usize, n: usize) -> Result<Token> {
    if i >= n {
        return Err(Error::TokenOutOfRange { token: i, limit: n });
    }
    Ok(i as Token)
}

pub fn vocab_size(scheme: &TokenScheme) -> usize {
    scheme.vocab_size()
}

/// Model input `(x₁, …, x_N, Δ, p₁, …, p_k)`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ContextWindow {
    tokens: Vec<Token>,
    word_len: usize,
}

impl ContextWindow {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn word_len(&self) -> usize {
        self.word_len
    }

    /// Number of permutation values already placed after the separator.
    pub fn prefix_len(&self) -> usize {
        self.tokens.len() - self.word_len - 1
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }
}

pub fn build_context(
    word_tokens: &[Token],
    perm_prefix: &[usize],
    scheme: &TokenScheme,
) -> Result<ContextWindow> {
    scheme.check_word(word_tokens)?;
    if perm_prefix.len() > scheme.n {
        return Err(Error::PrefixTooLong {
            len: perm_prefix.len(),
            n: scheme.n,
        });
    }
    let mut tokens = Vec::with_capacity(word_tokens.len() + 1 + perm_prefix.len());
    tokens.extend_from_slice(word_tokens);
    tokens.push(scheme.separator());
    for &v in perm_prefix {
        tokens.push(scheme.perm_token(v)?);
    }
    Ok(ContextWindow {
        tokens,
        word_len: word_tokens.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_encoding_values() {
        assert_eq!(encode_general(1, 1, 25).unwrap(), 0);
        assert_eq!(encode_general(2, 3, 25).unwrap(), 51);
        assert_eq!(encode_general(25, 25, 25).unwrap(), 624);
        assert!(encode_general(0, 1, 25).is_err());
        assert!(encode_general(1, 26, 25).is_err());
    }

    #[test]
    fn general_decoding_values() {
        assert_eq!(decode_general(0, 25).unwrap(), (1, 1));
        assert_eq!(decode_general(51, 25).unwrap(), (3, 2));
        assert_eq!(decode_general(624, 25).unwrap(), (25, 25));
        assert!(matches!(
            decode_general(625, 25),
            Err(Error::TokenOutOfRange { token: 625, .. })
        ));
    }

    #[test]
    fn general_round_trip_same_action() {
        for n in 1..=30 {
            for i in 1..=n {
                for j in 1..=n {
                    let x = encode_general(i, j, n).unwrap();
                    assert!((x as usize) < n * n);
                    let (a, b) = decode_general(x, n).unwrap();
                    assert!(Transposition::new(a, b).same_action(&Transposition::new(i, j)));
                }
            }
        }
    }

    #[test]
    fn adjacent_encoding_values() {
        assert_eq!(encode_adjacent(0, 16).unwrap(), 0);
        assert_eq!(encode_adjacent(7, 16).unwrap(), 7);
        assert_eq!(encode_adjacent(15, 16).unwrap(), 15);
        assert!(encode_adjacent(16, 16).is_err());
    }

    #[test]
    fn vocab_and_context_sizes() {
        let g25 = TokenScheme::general(25).unwrap();
        let a16 = TokenScheme::adjacent(16).unwrap();
        assert_eq!(vocab_size(&g25), 652);
        assert_eq!(vocab_size(&a16), 34);
        assert_eq!(vocab_size(&TokenScheme::general(2).unwrap()), 8);
        assert_eq!(g25.context_len(), 50);
        assert_eq!(a16.context_len(), 137);
        assert_eq!(g25.word_len(), 24);
        assert_eq!(a16.word_len(), 120);
    }

    #[test]
    fn token_ranges_are_disjoint() {
        for scheme in [
            TokenScheme::general(5).unwrap(),
            TokenScheme::adjacent(6).unwrap(),
        ] {
            let mut owner = vec![0u8; scheme.vocab_size()];
            for t in 0..scheme.transposition_tokens() {
                owner[t] += 1;
            }
            for v in 1..=scheme.n {
                owner[scheme.perm_token(v).unwrap() as usize] += 1;
            }
            owner[scheme.separator() as usize] += 1;
            owner[scheme.pad() as usize] += 1;
            assert!(owner.iter().all(|&c| c == 1), "{scheme:?}: {owner:?}");
        }
    }

    #[test]
    fn build_context_layout() {
        let g3 = TokenScheme::general(3).unwrap();
        let ctx = build_context(&[0, 4], &[], &g3).unwrap();
        assert_eq!(ctx.tokens(), &[0, 4, g3.separator()]);
        let ctx = build_context(&[0, 4], &[2], &g3).unwrap();
        // 9 transposition tokens, so value 2 sits at 9 + 1.
        assert_eq!(ctx.tokens(), &[0, 4, 12, 10]);
        let full = build_context(&[0, 4], &[3, 1, 2], &g3).unwrap();
        assert_eq!(full.len(), g3.context_len());
        assert_eq!(full.prefix_len(), 3);
    }

    #[test]
    fn build_context_errors() {
        let g3 = TokenScheme::general(3).unwrap();
        assert!(matches!(
            build_context(&[0], &[], &g3),
            Err(Error::WordLength { expected: 2, actual: 1 })
        ));
        assert!(build_context(&[0, 9], &[], &g3).is_err());
        assert!(build_context(&[0, 1], &[4], &g3).is_err());
        assert!(build_context(&[0, 1], &[1, 2, 3, 1], &g3).is_err());
    }

    #[test]
    fn perm_value_inverts_perm_token() {
        let a = TokenScheme::adjacent(8).unwrap();
        for v in 1..=8 {
            assert_eq!(a.perm_value(a.perm_token(v).unwrap()), Some(v));
        }
        assert_eq!(a.perm_value(a.separator()), None);
        assert_eq!(a.perm_value(3), None);
    }

    #[test]
    fn decode_adjacent_word() {
        let a = TokenScheme::adjacent(4).unwrap();
        let w = a.decode_word(&[0, 1, 3]).unwrap();
        assert!(w.factors()[0].is_identity());
        assert_eq!(w.factors()[2], Transposition::new(3, 4));
        assert!(a.decode_word(&[4]).is_err());
    }
}

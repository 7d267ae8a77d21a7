use serde::{Deserialize, Serialize};

use super::{gaussian_vector, keyed_rng};
use crate::error::{ensure_dim, Error, Result};
use crate::{Matrix, Real, Vector};

/// Ordered token vectors of uniform dimension.
///
/// `prompt` remembers the text the trailing tokens were produced from, and
/// `prefix_len` counts learned tokens prepended in front of it.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: Vec<Vector>,
    prompt: Option<String>,
    prefix_len: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Vector>) -> Result<Self> {
        let first = tokens
            .first()
            .ok_or_else(|| Error::contract("token sequence must not be empty"))?;
        let d = first.dim();
        for t in &tokens {
            ensure_dim("token dimension", d, t.dim())?;
        }
        Ok(TokenSequence {
            tokens,
            prompt: None,
            prefix_len: 0,
        })
    }

    /// Prepends `prefix` tokens, keeping the prompt provenance.
    pub fn with_prefix(&self, prefix: Vec<Vector>) -> Result<Self> {
        for t in &prefix {
            ensure_dim("prefix token dimension", self.token_dim(), t.dim())?;
        }
        let prefix_len = self.prefix_len + prefix.len();
        let mut tokens = prefix;
        tokens.extend(self.tokens.iter().cloned());
        Ok(TokenSequence {
            tokens,
            prompt: self.prompt.clone(),
            prefix_len,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens[0].dim()
    }

    pub fn tokens(&self) -> &[Vector] {
        &self.tokens
    }

    pub fn prompt(&self) -> Option<&str> {
        self.prompt.as_deref()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }
}

/// Weight of a token `r` positions before the end of the sequence.
///
/// Counting from the end keeps the weights of existing tokens unchanged when a
/// token is prepended.
pub fn position_weight(r: usize) -> Real {
    1.0 / ((r + 1) as Real).sqrt()
}

/// Whitespace tokenizer whose token vectors are derived from a seeded hash of
/// each word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub seed: u64,
    pub d_tok: usize,
}

impl Tokenizer {
    pub fn token(&self, word: &str) -> Vector {
        let mut rng = keyed_rng(self.seed, "token", word.as_bytes());
        gaussian_vector(self.d_tok, 1.0 / (self.d_tok as Real).sqrt(), &mut rng)
    }

    pub fn tokenize(&self, prompt: &str) -> Result<TokenSequence> {
        let words: Vec<&str> = prompt.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::contract("prompt must not be empty"));
        }
        let mut seq = TokenSequence::new(words.iter().map(|w| self.token(w)).collect())?;
        seq.prompt = Some(words.join(" "));
        Ok(seq)
    }
}

/// Frozen linear text map: `Σ_p position_weight(len-1-p) · B′ tok_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextMap {
    /// `B′`, shape `d_e × d_tok`.
    pub projection: Matrix,
}

impl TextMap {
    pub fn d_e(&self) -> usize {
        self.projection.rows()
    }

    pub fn d_tok(&self) -> usize {
        self.projection.cols()
    }

    /// Encodes the tokens in `range` as they sit inside a sequence of `len` tokens.
    fn encode_range(&self, seq: &TokenSequence, range: std::ops::Range<usize>) -> Result<Vector> {
        ensure_dim("text encoder token", self.d_tok(), seq.token_dim())?;
        let len = seq.len();
        let mut acc = Vector::zeros(self.d_tok());
        for p in range {
            acc.axpy(position_weight(len - 1 - p), &seq.tokens[p])?;
        }
        self.projection.matvec(&acc)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vector> {
        self.encode_range(seq, 0..seq.len())
    }

    /// Contribution of the prepended tokens only.
    pub fn encode_prefix(&self, seq: &TokenSequence) -> Result<Vector> {
        self.encode_range(seq, 0..seq.prefix_len)
    }

    pub fn token_grad(
        &self,
        seq: &TokenSequence,
        position: usize,
        upstream: &Vector,
    ) -> Result<Vector> {
        if position >= seq.len() {
            return Err(Error::contract(format!(
                "token position {position} out of range for length {}",
                seq.len()
            )));
        }
        ensure_dim("text encoder upstream", self.d_e(), upstream.dim())?;
        let w = position_weight(seq.len() - 1 - position);
        Ok(self.projection.matvec_transposed(upstream)?.scale(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokenizer() -> Tokenizer {
        Tokenizer { seed: 7, d_tok: 8 }
    }

    #[test]
    fn one_token_per_word() {
        let seq = tokenizer().tokenize("a photo of a happy face").unwrap();
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.tokens()[0], seq.tokens()[3]);
        assert!(tokenizer().tokenize("   ").is_err());
    }

    #[test]
    fn emotion_word_is_the_only_difference() {
        let a = tokenizer().tokenize("a photo of a happy face").unwrap();
        let b = tokenizer().tokenize("a photo of a sad face").unwrap();
        for p in 0..6 {
            assert_eq!(a.tokens()[p] == b.tokens()[p], p != 4);
        }
    }

    #[test]
    fn prefix_keeps_prompt() {
        let seq = tokenizer().tokenize("a b").unwrap();
        let pre = seq.with_prefix(vec![Vector::zeros(8)]).unwrap();
        assert_eq!(pre.len(), 3);
        assert_eq!(pre.prefix_len(), 1);
        assert_eq!(pre.prompt(), Some("a b"));
    }
}

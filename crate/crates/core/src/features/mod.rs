//! Model inputs: TF-IDF bags of n-grams and capped token-id sequences.

mod embeddings;
mod ngrams;

use serde::{Deserialize, Serialize};

pub use embeddings::{init_random_embeddings, load_embeddings, parse_embeddings, EmbeddingTable};
pub use ngrams::{fit_ngram_vocab, NGramVocabulary};

pub const DEFAULT_MAX_LEN: usize = 250;

/// Lower-cased maximal runs of Unicode letters and digits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub lowercase: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer { lowercase: true }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect()
    }
}

/// Token ids of one document, at most `max_len` long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence(pub Vec<usize>);

/// Drops out-of-vocabulary tokens, then keeps the first `max_len` ids.
pub fn encode_sequence(
    text: &str,
    table: &EmbeddingTable,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> TokenSequence {
    encode_with(text, |t| table.index_of(t), tokenizer, max_len)
}

/// [`encode_sequence`] with an arbitrary word lookup.
pub fn encode_with<F>(text: &str, lookup: F, tokenizer: &Tokenizer, max_len: usize) -> TokenSequence
where
    F: Fn(&str) -> Option<usize>,
{
    TokenSequence(
        tokenizer
            .tokenize(text)
            .iter()
            .filter_map(|t| lookup(t))
            .take(max_len)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("Credit-Risk Models"), vec!["credit", "risk", "models"]);
        assert!(t.tokenize("").is_empty());
        assert_eq!(t.tokenize("β-blockers 2017"), vec!["β", "blockers", "2017"]);
        let keep_case = Tokenizer { lowercase: false };
        assert_eq!(keep_case.tokenize("GloVe 840B"), vec!["GloVe", "840B"]);
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_on_joined_output(s in "\\PC{0,60}") {
            let t = Tokenizer::default();
            let once = t.tokenize(&s);
            prop_assert_eq!(t.tokenize(&once.join(" ")), once);
        }
    }

    fn table(words: &[&str]) -> EmbeddingTable {
        EmbeddingTable::new(
            words.iter().map(|w| w.to_string()).collect(),
            Tensor::zeros(&[words.len(), 2]),
        )
        .unwrap()
    }

    #[test]
    fn sequence_caps_length() {
        let emb = table(&["w"]);
        let text = vec!["w"; 300].join(" ");
        let seq = encode_sequence(&text, &emb, &Tokenizer::default(), DEFAULT_MAX_LEN);
        assert_eq!(seq.0.len(), 250);
    }

    #[test]
    fn sequence_discards_oov_before_capping() {
        let emb = table(&["x", "y"]);
        let tok = Tokenizer::default();
        assert_eq!(encode_sequence("x q y", &emb, &tok, 250).0, vec![0, 1]);
        assert!(encode_sequence("q r s", &emb, &tok, 250).0.is_empty());
        // OOV tokens do not use up the window
        assert_eq!(encode_sequence("q q q x y", &emb, &tok, 2).0, vec![0, 1]);
    }
}

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::Tokenizer;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::tensor::SparseVector;

/// Most frequent unigrams and bigrams of a training split, with the
/// document frequencies needed for IDF weighting.
///
/// Feature indices list unigrams first, then bigrams, each block ordered by
/// descending document frequency with lexicographic ties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct NGramVocabulary {
    tokenizer: Tokenizer,
    n_unigrams: usize,
    n_bigrams: usize,
    n_train_docs: usize,
    /// `(ngram, document frequency)`, in feature-index order.
    entries: Vec<(String, usize)>,
    n_unigram_entries: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokenizer: Tokenizer,
    n_unigrams: usize,
    n_bigrams: usize,
    n_train_docs: usize,
    n_unigram_entries: usize,
    entries: Vec<(String, usize)>,
}

impl From<VocabRepr> for NGramVocabulary {
    fn from(r: VocabRepr) -> Self {
        let index = r
            .entries
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (g.clone(), i))
            .collect();
        NGramVocabulary {
            tokenizer: r.tokenizer,
            n_unigrams: r.n_unigrams,
            n_bigrams: r.n_bigrams,
            n_train_docs: r.n_train_docs,
            entries: r.entries,
            n_unigram_entries: r.n_unigram_entries,
            index,
        }
    }
}

impl From<NGramVocabulary> for VocabRepr {
    fn from(v: NGramVocabulary) -> Self {
        VocabRepr {
            tokenizer: v.tokenizer,
            n_unigrams: v.n_unigrams,
            n_bigrams: v.n_bigrams,
            n_train_docs: v.n_train_docs,
            n_unigram_entries: v.n_unigram_entries,
            entries: v.entries,
        }
    }
}

fn doc_ngrams(tokens: &[String], with_bigrams: bool) -> Vec<String> {
    let mut grams: Vec<String> = tokens.to_vec();
    if with_bigrams {
        grams.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    grams
}

fn top_by_df(df: HashMap<String, usize>, cap: usize) -> Vec<(String, usize)> {
    let mut entries: Vec<(String, usize)> = df.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(cap);
    entries
}

/// Keeps the `n_uni` unigrams and `n_bi` bigrams with the highest document
/// frequency. `n_bi = 0` yields a unigram-only vocabulary.
pub fn fit_ngram_vocab<'a, I>(
    train: I,
    tokenizer: &Tokenizer,
    n_uni: usize,
    n_bi: usize,
) -> Result<NGramVocabulary>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut uni_df: HashMap<String, usize> = HashMap::new();
    let mut bi_df: HashMap<String, usize> = HashMap::new();
    let mut n_docs = 0;
    for doc in train {
        n_docs += 1;
        let tokens = tokenizer.tokenize(&doc.text);
        let unis: HashSet<&String> = tokens.iter().collect();
        for u in unis {
            *uni_df.entry(u.clone()).or_default() += 1;
        }
        if n_bi > 0 {
            let bis: HashSet<String> = tokens
                .windows(2)
                .map(|w| format!("{} {}", w[0], w[1]))
                .collect();
            for b in bis {
                *bi_df.entry(b).or_default() += 1;
            }
        }
    }
    if n_docs == 0 {
        return Err(Error::Validation("cannot fit a vocabulary on no documents".into()));
    }
    let unigrams = top_by_df(uni_df, n_uni);
    let n_unigram_entries = unigrams.len();
    let mut entries = unigrams;
    entries.extend(top_by_df(bi_df, n_bi));
    Ok(VocabRepr {
        tokenizer: tokenizer.clone(),
        n_unigrams: n_uni,
        n_bigrams: n_bi,
        n_train_docs: n_docs,
        n_unigram_entries,
        entries,
    }
    .into())
}

impl NGramVocabulary {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn n_train_docs(&self) -> usize {
        self.n_train_docs
    }

    pub fn n_unigram_entries(&self) -> usize {
        self.n_unigram_entries
    }

    pub fn n_bigram_entries(&self) -> usize {
        self.entries.len() - self.n_unigram_entries
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn index_of(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn document_frequency(&self, ngram: &str) -> Option<usize> {
        self.index_of(ngram).map(|i| self.entries[i].1)
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        let n = self.n_train_docs as f64;
        let df = self.entries[index].1 as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Raw term count times IDF over in-vocabulary n-grams, L2-normalised.
    pub fn tfidf_encode(&self, text: &str) -> SparseVector {
        let tokens = self.tokenizer.tokenize(text);
        let mut tf: HashMap<usize, f64> = HashMap::new();
        for g in doc_ngrams(&tokens, self.n_bigram_entries() > 0) {
            if let Some(i) = self.index_of(&g) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut pairs: Vec<(usize, f64)> =
            tf.into_iter().map(|(i, c)| (i, c * self.idf(i))).collect();
        let norm = pairs.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            pairs.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        SparseVector::new(self.dim(), pairs).expect("indices are in range and unique")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::doc;
    use proptest::prelude::*;

    fn fit(texts: &[&str], n_uni: usize, n_bi: usize) -> NGramVocabulary {
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| doc(&i.to_string(), t, &["l"]))
            .collect();
        fit_ngram_vocab(&docs, &Tokenizer::default(), n_uni, n_bi).unwrap()
    }

    #[test]
    fn keeps_everything_under_capacity() {
        let v = fit(&["a b c"], 25_000, 0);
        assert_eq!(v.dim(), 3);
    }

    #[test]
    fn document_frequencies_by_hand() {
        let v = fit(&["a b", "a c"], 25_000, 25_000);
        assert_eq!(v.document_frequency("a"), Some(2));
        assert_eq!(v.document_frequency("b"), Some(1));
        assert_eq!(v.document_frequency("c"), Some(1));
        assert_eq!(v.document_frequency("a b"), Some(1));
        assert_eq!(v.n_train_docs(), 2);
        assert_eq!(v.index_of("a"), Some(0));
        assert!(v.index_of("a b").unwrap() >= v.n_unigram_entries());
    }

    #[test]
    fn capacity_keeps_most_frequent() {
        let v = fit(&["a b", "a c"], 1, 0);
        assert_eq!(v.dim(), 1);
        assert_eq!(v.index_of("a"), Some(0));
    }

    #[test]
    fn no_in_vocab_tokens_gives_zero_vector() {
        let v = fit(&["a b"], 10, 10);
        let e = v.tfidf_encode("zzz");
        assert_eq!(e.nnz(), 0);
        assert_eq!(e.dim(), v.dim());
    }

    #[test]
    fn single_feature_normalises_to_one() {
        // N = 2, df = 1: idf = ln(3/2) + 1
        let v = fit(&["a", "b"], 10, 0);
        assert!((v.idf(v.index_of("a").unwrap()) - 1.405_465_108).abs() < 1e-9);
        let e = v.tfidf_encode("a");
        assert_eq!(e.pairs().len(), 1);
        assert!((e.pairs()[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn term_counts_weight_features() {
        // [a a b], df(a) = df(b) = 1, N = 2: raw (2·idf, 1·idf), normalised (2, 1)/√5
        let v = fit(&["a", "b"], 10, 0);
        let e = v.tfidf_encode("a a b");
        let a = e.pairs().iter().find(|p| p.0 == v.index_of("a").unwrap()).unwrap().1;
        let b = e.pairs().iter().find(|p| p.0 == v.index_of("b").unwrap()).unwrap().1;
        assert!((a - 0.894_427_191).abs() < 1e-9);
        assert!((b - 0.447_213_595).abs() < 1e-9);
    }

    #[test]
    fn unigrams_and_bigrams_share_one_normalisation() {
        let v = fit(&["x y", "x z"], 10, 10);
        let e = v.tfidf_encode("x y");
        assert_eq!(e.nnz(), 3);
        assert!((e.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoding_never_mutates_vocabulary() {
        let v = fit(&["a b", "b c"], 10, 10);
        let before = v.clone();
        let _ = v.tfidf_encode("totally new words a");
        assert_eq!(v, before);
    }

    #[test]
    fn serde_round_trip() {
        let v = fit(&["a b", "b c d"], 10, 10);
        let json = serde_json::to_string(&v).unwrap();
        let back: NGramVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    proptest! {
        #[test]
        fn norm_is_zero_or_one(words in prop::collection::vec("[a-e]", 0..12)) {
            let v = fit(&["a b c", "b d", "e a"], 10, 10);
            let norm = v.tfidf_encode(&words.join(" ")).l2_norm();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
        }

        #[test]
        fn fit_is_order_invariant(mut texts in prop::collection::vec("[a-f]( [a-f]){0,5}", 1..8)) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let a = fit(&refs, 4, 4);
            texts.reverse();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let b = fit(&refs, 4, 4);
            prop_assert_eq!(a, b);
        }
    }
}

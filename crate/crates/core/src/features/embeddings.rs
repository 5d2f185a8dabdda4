use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tokenizer;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Word vectors, one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, matrix: Tensor) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() != words.len() {
            return Err(Error::Shape(format!(
                "{} words for an embedding matrix of shape {:?}",
                words.len(),
                matrix.shape()
            )));
        }
        if !matrix.all_finite() {
            return Err(Error::Validation("non-finite embedding value".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate embedding word `{w}`")));
            }
        }
        Ok(EmbeddingTable {
            words,
            index,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_parts(self) -> (Vec<String>, Tensor) {
        (self.words, self.matrix)
    }

    /// Keeps only rows for words that occur in `docs`, preserving table order.
    pub fn restrict_to<'a, I>(&self, docs: I, tokenizer: &Tokenizer) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut keep = vec![false; self.words.len()];
        for doc in docs {
            for t in tokenizer.tokenize(&doc.text) {
                if let Some(i) = self.index_of(&t) {
                    keep[i] = true;
                }
            }
        }
        let dim = self.dim();
        let mut words = Vec::new();
        let mut data = Vec::new();
        for (i, w) in self.words.iter().enumerate() {
            if keep[i] {
                words.push(w.clone());
                data.extend_from_slice(self.matrix.row(i));
            }
        }
        let rows = words.len();
        EmbeddingTable::new(words, Tensor::new(vec![rows, dim], data)?)
    }
}

/// Reads a GloVe-style text file: `word v1 v2 ... vd` per line.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), path)
}

pub fn parse_embeddings<R: BufRead>(reader: R, path: &Path) -> Result<EmbeddingTable> {
    let mut words = Vec::new();
    let mut data = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        let values = parts
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("invalid number `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.is_empty() || values.len() != expected {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        if let Some(first) = seen.get(word) {
            warn!(
                "{}:{lineno}: duplicate embedding for `{word}`, keeping line {first}",
                path.display()
            );
            continue;
        }
        seen.insert(word.to_string(), lineno);
        words.push(word.to_string());
        data.extend(values);
    }
    let Some(dim) = dim else {
        return Err(Error::parse(path, 0, "no embeddings"));
    };
    let rows = words.len();
    EmbeddingTable::new(words, Tensor::new(vec![rows, dim], data)?)
}

/// Random table over the training vocabulary (descending frequency, ties
/// lexicographic), entries uniform in `[-0.05, 0.05]`.
pub fn init_random_embeddings<'a, I>(
    docs: I,
    tokenizer: &Tokenizer,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable>
where
    I: IntoIterator<Item = &'a Document>,
{
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        for t in tokenizer.tokenize(&doc.text) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut words: Vec<(String, usize)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let words: Vec<String> = words.into_iter().map(|(w, _)| w).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..words.len() * dim)
        .map(|_| rng.gen_range(-0.05..=0.05))
        .collect();
    let rows = words.len();
    EmbeddingTable::new(words, Tensor::new(vec![rows, dim], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::doc;

    fn parse(s: &str) -> Result<EmbeddingTable> {
        parse_embeddings(s.as_bytes(), Path::new("emb.txt"))
    }

    #[test]
    fn two_by_three() {
        let t = parse("the 0.1 0.2 0.3\ncat -1 0 1\n").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.matrix().row(1), &[-1.0, 0.0, 1.0]);
        assert_eq!(t.index_of("cat"), Some(1));
    }

    #[test]
    fn inconsistent_dimension_names_line() {
        match parse("a 1 2 3\nb 1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse("").unwrap_err().to_string();
        assert!(err.contains("no embeddings"), "{err}");
    }

    #[test]
    fn duplicate_word_keeps_first() {
        let t = parse("a 1 2\na 3 4\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.matrix().row(0), &[1.0, 2.0]);
    }

    #[test]
    fn random_init_is_seeded_and_bounded() {
        let docs = vec![doc("1", "alpha beta beta", &["x"]), doc("2", "gamma", &["x"])];
        let tok = Tokenizer::default();
        let a = init_random_embeddings(&docs, &tok, 300, 4).unwrap();
        let b = init_random_embeddings(&docs, &tok, 300, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 300);
        assert_eq!(a.words()[0], "beta");
        assert!(a.matrix().data().iter().all(|v| (-0.05..=0.05).contains(v)));
        assert!(init_random_embeddings(&docs, &tok, 0, 4).is_err());
    }

    #[test]
    fn restrict_keeps_training_words() {
        let t = parse("a 1 1\nb 2 2\nc 3 3\n").unwrap();
        let docs = vec![doc("1", "c a z", &["x"])];
        let r = t.restrict_to(&docs, &Tokenizer::default()).unwrap();
        assert_eq!(r.words(), &["a".to_string(), "c".to_string()]);
        assert_eq!(r.matrix().row(1), &[3.0, 3.0]);
    }
}

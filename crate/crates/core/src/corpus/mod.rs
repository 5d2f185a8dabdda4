//! Labeled documents, label spaces and the cross-validation ladder.

mod ladder;
mod synth;
mod tsv;

use std::collections::{BTreeSet, HashMap, HashSet};

pub use ladder::{assemble_ladder, make_folds, FoldPlan, LadderSplit, Rung, DEFAULT_RUNGS};
pub use synth::{synth_generate, SynthConfig};
pub use tsv::{load_tsv, parse_tsv, write_tsv};

use crate::error::{Error, Result};
use crate::features::Tokenizer;
use crate::metrics::LabelSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub labels: BTreeSet<String>,
    pub has_fulltext: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Fulltext,
    Title,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    documents: Vec<Document>,
    provenance: Provenance,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids, empty texts and empty label sets.
    pub fn new(documents: Vec<Document>, provenance: Provenance) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.text.trim().is_empty() {
                return Err(Error::Validation(format!("document `{}` has empty text", doc.id)));
            }
            if doc.labels.is_empty() {
                return Err(Error::Validation(format!("document `{}` has no labels", doc.id)));
            }
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate document id `{}`", doc.id)));
            }
        }
        Ok(Dataset {
            documents,
            provenance,
            by_id,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }

    /// Documents for `ids`, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Document>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Validation(format!("unknown document id `{id}`")))
            })
            .collect()
    }

    /// Sets `has_fulltext` on every document whose id occurs in `fulltexts`.
    pub fn mark_fulltexts(&mut self, fulltexts: &Dataset) {
        for doc in &mut self.documents {
            doc.has_fulltext = fulltexts.contains(&doc.id);
        }
    }
}

/// Dense, zero-based index over the labels of a training split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    /// Orders labels by descending document frequency, ties lexicographic.
    pub fn build<'a, I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut df: HashMap<&str, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            for l in &doc.labels {
                *df.entry(l.as_str()).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Validation("cannot build a label space from no documents".into()));
        }
        let mut entries: Vec<(&str, usize)> = df.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_labels(entries.into_iter().map(|(l, _)| l.to_string()).collect()))
    }

    /// Label space with the given index order.
    pub fn from_labels(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelSpace { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label_of(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Sorted indices of the known labels in `labels`; unknown labels are dropped.
    pub fn encode<'a, I>(&self, labels: I) -> LabelSet
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut set: Vec<usize> = labels.into_iter().filter_map(|l| self.index_of(l)).collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

pub fn build_label_space(train: &Dataset) -> Result<LabelSpace> {
    LabelSpace::build(train.documents())
}

/// Dataset characteristics.
#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub n_docs: usize,
    pub n_labels: usize,
    pub total_assignments: usize,
    /// Average number of documents per label.
    pub docs_per_label: f64,
    /// Average number of labels per document.
    pub labels_per_doc: f64,
    pub vocab_size: usize,
    pub words_per_doc: f64,
}

/// `labels` supplies |L|; every label assignment in `data` counts towards the
/// totals, so `docs_per_label · |L| == labels_per_doc · |D|` exactly.
pub fn dataset_stats(data: &Dataset, labels: &LabelSpace, tokenizer: &Tokenizer) -> Stats {
    let mut total = 0;
    let mut words = 0;
    let mut vocab: HashSet<String> = HashSet::new();
    for doc in data.documents() {
        total += doc.labels.len();
        let tokens = tokenizer.tokenize(&doc.text);
        words += tokens.len();
        vocab.extend(tokens);
    }
    let n_docs = data.len();
    let n_labels = labels.len();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Stats {
        n_docs,
        n_labels,
        total_assignments: total,
        docs_per_label: ratio(total, n_labels),
        labels_per_doc: ratio(total, n_docs),
        vocab_size: vocab.len(),
        words_per_doc: ratio(words, n_docs),
    }
}

#[cfg(test)]
pub(crate) fn doc(id: &str, text: &str, labels: &[&str]) -> Document {
    Document {
        id: id.to_string(),
        text: text.to_string(),
        labels: labels.iter().map(|l| l.to_string()).collect(),
        has_fulltext: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_space_orders_by_frequency_then_name() {
        let docs = vec![doc("1", "x", &["a", "b"]), doc("2", "y", &["b"])];
        let ls = LabelSpace::build(&docs).unwrap();
        assert_eq!(ls.len(), 2);
        assert_eq!(ls.index_of("b"), Some(0));
        assert_eq!(ls.index_of("a"), Some(1));
        assert_eq!(ls.label_of(1), Some("a"));

        let tie = vec![doc("1", "x", &["z", "m"])];
        let ls = LabelSpace::build(&tie).unwrap();
        assert_eq!(ls.labels(), &["m".to_string(), "z".to_string()]);
    }

    #[test]
    fn label_space_single_and_empty() {
        let ls = LabelSpace::build(&[doc("1", "x", &["x"])]).unwrap();
        assert_eq!(ls.len(), 1);
        assert!(LabelSpace::build(&[]).is_err());
    }

    #[test]
    fn test_only_labels_are_unknown() {
        let train = Dataset::new(vec![doc("1", "x", &["a"])], Provenance::Title).unwrap();
        let ls = build_label_space(&train).unwrap();
        assert_eq!(ls.index_of("new"), None);
        let labels: BTreeSet<String> = ["a".to_string(), "new".to_string()].into();
        assert_eq!(ls.encode(&labels), vec![0]);
    }

    #[test]
    fn dataset_rejects_invalid_documents() {
        let dup = vec![doc("d1", "x", &["a"]), doc("d1", "y", &["b"])];
        let err = Dataset::new(dup, Provenance::Title).unwrap_err().to_string();
        assert!(err.contains("d1"));
        assert!(Dataset::new(vec![doc("d", "  ", &["a"])], Provenance::Title).is_err());
        assert!(Dataset::new(vec![doc("d", "t", &[])], Provenance::Title).is_err());
    }

    #[test]
    fn stats_hand_counts() {
        let data = Dataset::new(
            vec![
                doc("1", "alpha beta", &["a", "b"]),
                doc("2", "beta gamma delta", &["a", "b", "c", "d"]),
            ],
            Provenance::Title,
        )
        .unwrap();
        let ls = LabelSpace::from_labels(vec!["a".into(), "b".into(), "c".into()]);
        let s = dataset_stats(&data, &ls, &Tokenizer::default());
        assert_eq!(s.total_assignments, 6);
        assert_eq!(s.labels_per_doc, 3.0);
        assert_eq!(s.docs_per_label, 2.0);
        assert_eq!(s.vocab_size, 4);
        assert_eq!(s.words_per_doc, 2.5);
        assert_eq!(
            s.docs_per_label * s.n_labels as f64,
            s.labels_per_doc * s.n_docs as f64
        );
    }

    #[test]
    fn stats_single_document() {
        let data = Dataset::new(vec![doc("1", "word", &["a"])], Provenance::Title).unwrap();
        let ls = build_label_space(&data).unwrap();
        let s = dataset_stats(&data, &ls, &Tokenizer::default());
        assert_eq!(
            (s.n_docs, s.n_labels, s.docs_per_label, s.labels_per_doc, s.vocab_size, s.words_per_doc),
            (1, 1, 1.0, 1.0, 1, 1.0)
        );
    }
}

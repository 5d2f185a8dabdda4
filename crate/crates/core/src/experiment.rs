//! One (model, split) run: fit feature spaces on the training documents,
//! build the model, train, evaluate.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabelSpace};
use crate::error::{Error, Result};
use crate::features::{
    encode_with, fit_ngram_vocab, init_random_embeddings, EmbeddingTable, NGramVocabulary,
    TokenSequence, Tokenizer, DEFAULT_MAX_LEN,
};
use crate::metrics::{LabelSet, Report};
use crate::models::{Architecture, Inputs, Model, ModelConfig, ModelKind, Preset};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::training::{train, Labeled, TrainConfig, TrainedModel};

/// Fitted input encoding of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureState {
    Ngrams {
        vocab: NGramVocabulary,
    },
    Sequences {
        tokenizer: Tokenizer,
        max_len: usize,
        words: Vec<String>,
    },
}

impl FeatureState {
    /// Width of the TF-IDF vectors or size of the embedding vocabulary.
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureState::Ngrams { vocab } => vocab.dim(),
            FeatureState::Sequences { words, .. } => words.len(),
        }
    }

    pub fn encode(&self, docs: &[&Document]) -> Inputs {
        match self {
            FeatureState::Ngrams { vocab } => Inputs::Sparse {
                dim: vocab.dim(),
                rows: docs.iter().map(|d| vocab.tfidf_encode(&d.text)).collect(),
            },
            FeatureState::Sequences {
                tokenizer,
                max_len,
                words,
            } => {
                let index: HashMap<&str, usize> =
                    words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
                Inputs::Sequences(
                    docs.iter()
                        .map(|d| -> TokenSequence {
                            encode_with(&d.text, |t| index.get(t).copied(), tokenizer, *max_len)
                        })
                        .collect(),
                )
            }
        }
    }
}

/// Everything fitted on a training split before the model sees data.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub features: FeatureState,
    pub labels: LabelSpace,
    pub config: ModelConfig,
    pub learning_rate: f64,
    /// Initial embedding matrix for sequence models.
    pub embeddings: Option<Tensor>,
}

/// Fits features and the label space on `train_docs` and resolves the
/// preset. Sequence models start from `pretrained` restricted to the
/// training vocabulary, or from random vectors when none is given.
pub fn prepare(
    kind: ModelKind,
    preset: Preset,
    train_docs: &[&Document],
    pretrained: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<Prepared> {
    if train_docs.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let tokenizer = Tokenizer::default();
    let labels = LabelSpace::build(train_docs.iter().copied())?;
    let (features, embeddings) = if kind.uses_bag_of_ngrams() {
        let (n_uni, n_bi) = kind.ngram_capacity();
        let vocab = fit_ngram_vocab(train_docs.iter().copied(), &tokenizer, n_uni, n_bi)?;
        (FeatureState::Ngrams { vocab }, None)
    } else {
        let table = match pretrained {
            Some(t) => t.restrict_to(train_docs.iter().copied(), &tokenizer)?,
            None => init_random_embeddings(
                train_docs.iter().copied(),
                &tokenizer,
                preset.embedding_dim(),
                derive_seed(seed, "embeddings", 0),
            )?,
        };
        if table.is_empty() {
            return Err(Error::Validation(
                "no training token has an embedding vector".into(),
            ));
        }
        let (words, matrix) = table.into_parts();
        let features = FeatureState::Sequences {
            tokenizer: tokenizer.clone(),
            max_len: DEFAULT_MAX_LEN,
            words,
        };
        (features, Some(matrix))
    };
    let mut arch = preset.architecture(kind, features.input_dim());
    // pretrained vectors dictate the embedding width
    match (&embeddings, &mut arch) {
        (Some(m), Architecture::Cnn(s)) => s.embedding_dim = m.cols(),
        (Some(m), Architecture::Lstm(s)) => s.embedding_dim = m.cols(),
        _ => {}
    }
    Ok(Prepared {
        config: ModelConfig::new(arch, labels.len(), derive_seed(seed, "model", 0)),
        learning_rate: preset.learning_rate(kind),
        features,
        labels,
        embeddings,
    })
}

/// Gold label indices of `docs`. Labels outside `space` get indices from
/// `space.len()` upwards, so they count as misses but are never predicted.
pub fn gold_sets(space: &LabelSpace, docs: &[&Document]) -> Vec<LabelSet> {
    let mut unseen: HashMap<&str, usize> = HashMap::new();
    docs.iter()
        .map(|d| {
            let mut set: LabelSet = d
                .labels
                .iter()
                .map(|l| {
                    space.index_of(l).unwrap_or_else(|| {
                        let next = space.len() + unseen.len();
                        *unseen.entry(l.as_str()).or_insert(next)
                    })
                })
                .collect();
            set.sort_unstable();
            set
        })
        .collect()
}

/// Result of [`run`].
#[derive(Debug)]
pub struct RunOutcome {
    pub prepared: Prepared,
    pub trained: TrainedModel,
    pub report: Report,
}

/// Prepares, trains on `train_docs` with early stopping on `val_docs`, and
/// evaluates on `test_docs`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    kind: ModelKind,
    preset: Preset,
    train_cfg: &TrainConfig,
    train_docs: &[&Document],
    val_docs: &[&Document],
    test_docs: &[&Document],
    pretrained: Option<&EmbeddingTable>,
    log: Option<&mut dyn Write>,
) -> Result<RunOutcome> {
    let prepared = prepare(kind, preset, train_docs, pretrained, train_cfg.seed)?;
    let model = Model::build(prepared.config.clone(), prepared.embeddings.as_ref())?;
    let x_train = prepared.features.encode(train_docs);
    let y_train = gold_sets(&prepared.labels, train_docs);
    let x_val = prepared.features.encode(val_docs);
    let y_val = gold_sets(&prepared.labels, val_docs);
    let trained = train(
        model,
        Labeled::new(&x_train, &y_train)?,
        Labeled::new(&x_val, &y_val)?,
        train_cfg,
        log,
    )?;
    let x_test = prepared.features.encode(test_docs);
    let y_test = gold_sets(&prepared.labels, test_docs);
    let report = crate::metrics::evaluate(&trained, &x_test, &y_test)?;
    Ok(RunOutcome {
        prepared,
        trained,
        report,
    })
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BaseMlp,
    Mlp,
    Cnn,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::BaseMlp, ModelKind::Mlp, ModelKind::Cnn, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BaseMlp => "base-mlp",
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
            ModelKind::Lstm => "lstm",
        }
    }

    /// Whether the model consumes TF-IDF vectors rather than token sequences.
    pub fn uses_bag_of_ngrams(self) -> bool {
        matches!(self, ModelKind::BaseMlp | ModelKind::Mlp)
    }

    /// Unigram and bigram capacities of the TF-IDF vocabulary.
    pub fn ngram_capacity(self) -> (usize, usize) {
        match self {
            ModelKind::BaseMlp => (25_000, 0),
            _ => (25_000, 25_000),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base-mlp" | "basemlp" | "base_mlp" => Ok(ModelKind::BaseMlp),
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected base-mlp, mlp, cnn or lstm)"
            ))),
        }
    }
}

/// Layer layout of the MLP: A is one wide hidden layer with dropout, B is
/// two hidden layers with batch normalisation and no dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlpPreset {
    A,
    B,
}

impl FromStr for MlpPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(MlpPreset::A),
            "B" | "b" => Ok(MlpPreset::B),
            other => Err(Error::Config(format!("unknown MLP preset `{other}` (expected A or B)"))),
        }
    }
}

impl MlpPreset {
    pub fn spec(self, input_dim: usize) -> MlpSpec {
        match self {
            MlpPreset::A => MlpSpec {
                input_dim,
                hidden: vec![2000],
                keep: 0.5,
                batchnorm: false,
            },
            MlpPreset::B => MlpSpec {
                input_dim,
                hidden: vec![1000, 1000],
                keep: 1.0,
                batchnorm: true,
            },
        }
    }
}

/// Named hyperparameter settings per dataset and text type. The `desk`
/// presets shrink every width for CPU-sized corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    EconbizTitle,
    EconbizFull,
    PubmedTitle,
    PubmedFull,
    Desk,
    DeskFull,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::EconbizTitle,
        Preset::EconbizFull,
        Preset::PubmedTitle,
        Preset::PubmedFull,
        Preset::Desk,
        Preset::DeskFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::EconbizTitle => "econbiz-title",
            Preset::EconbizFull => "econbiz-full",
            Preset::PubmedTitle => "pubmed-title",
            Preset::PubmedFull => "pubmed-full",
            Preset::Desk => "desk",
            Preset::DeskFull => "desk-full",
        }
    }

    pub fn is_fulltext(self) -> bool {
        matches!(self, Preset::EconbizFull | Preset::PubmedFull | Preset::DeskFull)
    }

    fn is_desk(self) -> bool {
        matches!(self, Preset::Desk | Preset::DeskFull)
    }

    pub fn embedding_dim(self) -> usize {
        if self.is_desk() {
            32
        } else {
            300
        }
    }

    pub fn learning_rate(self, kind: ModelKind) -> f64 {
        match (self, kind) {
            (Preset::EconbizFull, ModelKind::Lstm) => 0.01,
            (Preset::Desk | Preset::DeskFull, _) => 0.01,
            _ => 0.001,
        }
    }

    pub fn mlp_preset(self) -> MlpPreset {
        match self {
            Preset::PubmedTitle => MlpPreset::B,
            _ => MlpPreset::A,
        }
    }

    /// Architecture for `kind`; `input_dim` is the TF-IDF width for MLPs and
    /// the embedding vocabulary size for sequence models.
    pub fn architecture(self, kind: ModelKind, input_dim: usize) -> Architecture {
        let desk = self.is_desk();
        match kind {
            ModelKind::BaseMlp => Architecture::BaseMlp(MlpSpec {
                input_dim,
                hidden: vec![if desk { 64 } else { 1000 }],
                keep: 0.5,
                batchnorm: false,
            }),
            ModelKind::Mlp => {
                let mut spec = self.mlp_preset().spec(input_dim);
                if desk {
                    spec.hidden = vec![128];
                }
                Architecture::Mlp(spec)
            }
            ModelKind::Cnn => {
                let full = self.is_fulltext();
                Architecture::Cnn(CnnSpec {
                    vocab_size: input_dim,
                    embedding_dim: self.embedding_dim(),
                    windows: vec![2, 3, 4, 5, 8],
                    filters: match self {
                        Preset::PubmedFull => 100,
                        _ if desk => 16,
                        _ => 400,
                    },
                    chunks: if full { 3 } else { 1 },
                    bottleneck: match (desk, full) {
                        (true, _) => 32,
                        (false, true) => 1000,
                        (false, false) => 500,
                    },
                    keep: 0.75,
                })
            }
            ModelKind::Lstm => Architecture::Lstm(LstmSpec {
                vocab_size: input_dim,
                embedding_dim: self.embedding_dim(),
                hidden: match self {
                    Preset::EconbizTitle | Preset::PubmedTitle => 1536,
                    Preset::PubmedFull => 1024,
                    Preset::EconbizFull => 512,
                    Preset::Desk | Preset::DeskFull => 16,
                },
                attention_dim: None,
                keep: if self == Preset::PubmedTitle { 0.5 } else { 0.75 },
                peephole: false,
            }),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Dropout keep probability after each hidden layer; 1 disables dropout.
    pub keep: f64,
    pub batchnorm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub windows: Vec<usize>,
    /// Feature maps per window size.
    pub filters: usize,
    /// Max-pooling chunks per feature map.
    pub chunks: usize,
    pub bottleneck: usize,
    pub keep: f64,
}

impl CnnSpec {
    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    /// Width of the concatenated pooled features.
    pub fn pooled_width(&self) -> usize {
        self.windows.len() * self.chunks * self.filters
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Memory cell size of each direction.
    pub hidden: usize,
    /// Attention projection width; `None` means `2 · hidden`.
    pub attention_dim: Option<usize>,
    pub keep: f64,
    pub peephole: bool,
}

impl LstmSpec {
    pub fn attention_width(&self) -> usize {
        self.attention_dim.unwrap_or(2 * self.hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum Architecture {
    BaseMlp(MlpSpec),
    Mlp(MlpSpec),
    Cnn(CnnSpec),
    Lstm(LstmSpec),
}

impl Architecture {
    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::BaseMlp(_) => ModelKind::BaseMlp,
            Architecture::Mlp(_) => ModelKind::Mlp,
            Architecture::Cnn(_) => ModelKind::Cnn,
            Architecture::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub(crate) fn embedding_shape(&self) -> Option<(usize, usize)> {
        match self {
            Architecture::Cnn(s) => Some((s.vocab_size, s.embedding_dim)),
            Architecture::Lstm(s) => Some((s.vocab_size, s.embedding_dim)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub n_labels: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Architecture, n_labels: usize, seed: u64) -> Self {
        ModelConfig {
            arch,
            n_labels,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        let keep_ok = |k: f64| {
            if k > 0.0 && k <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("keep probability {k} outside (0, 1]")))
            }
        };
        positive("number of labels", self.n_labels)?;
        match &self.arch {
            Architecture::BaseMlp(s) | Architecture::Mlp(s) => {
                positive("input dimension", s.input_dim)?;
                if s.hidden.is_empty() {
                    return Err(Error::Config("MLP needs at least one hidden layer".into()));
                }
                for &h in &s.hidden {
                    positive("hidden width", h)?;
                }
                keep_ok(s.keep)
            }
            Architecture::Cnn(s) => {
                positive("vocabulary size", s.vocab_size)?;
                positive("embedding dimension", s.embedding_dim)?;
                positive("filters", s.filters)?;
                positive("chunks", s.chunks)?;
                positive("bottleneck", s.bottleneck)?;
                if s.windows.is_empty() || s.windows.contains(&0) {
                    return Err(Error::Config("CNN window sizes must be positive".into()));
                }
                keep_ok(s.keep)
            }
            Architecture::Lstm(s) => {
                positive("vocabulary size", s.vocab_size)?;
                positive("embedding dimension", s.embedding_dim)?;
                positive("hidden size", s.hidden)?;
                positive("attention width", s.attention_width())?;
                keep_ok(s.keep)
            }
        }
    }

    /// Number of trainable scalars, from layer sizes alone.
    pub fn parameter_count(&self) -> usize {
        let l = self.n_labels;
        match &self.arch {
            Architecture::BaseMlp(s) | Architecture::Mlp(s) => {
                let mut total = 0;
                let mut prev = s.input_dim;
                for &h in &s.hidden {
                    total += prev * h + h;
                    if s.batchnorm {
                        total += 2 * h;
                    }
                    prev = h;
                }
                total + prev * l + l
            }
            Architecture::Cnn(s) => {
                let d = s.embedding_dim;
                let convs: usize = s.windows.iter().map(|w| w * d * s.filters + s.filters).sum();
                s.vocab_size * d
                    + convs
                    + s.pooled_width() * s.bottleneck
                    + s.bottleneck
                    + s.bottleneck * l
                    + l
            }
            Architecture::Lstm(s) => {
                let (d, h, u) = (s.embedding_dim, s.hidden, s.attention_width());
                let peep = if s.peephole { 3 * h } else { 0 };
                let direction = d * 4 * h + h * 4 * h + 4 * h + peep;
                s.vocab_size * d + 2 * direction + 2 * h * u + u + u + 2 * h * l + l
            }
        }
    }
}

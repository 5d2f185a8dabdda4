//! Desk-scale synthetic corpus with planted label keywords.
//!
//! Every label owns a private keyword vocabulary. A title mentions two
//! keywords of each of its labels (frequent keywords more often) mixed with
//! shared filler words; a full-text repeats its title and adds more keywords
//! and many filler words.

use std::collections::{BTreeSet, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Document, Provenance};
use crate::error::{Error, Result};

const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "mu", "te", "sa", "lo", "vi", "ne", "du", "fa", "gi", "po", "ze", "ha",
    "ly", "qua", "to", "ser", "mon", "tal", "rin", "dor", "vek", "nul", "pra", "sti", "cor",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_fulltext: usize,
    pub title_multiplier: usize,
    pub n_labels: usize,
    pub keywords_per_label: usize,
    pub filler_vocab: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_fulltext: usize, title_multiplier: usize, n_labels: usize, seed: u64) -> Self {
        SynthConfig {
            n_fulltext,
            title_multiplier,
            n_labels,
            keywords_per_label: 8,
            filler_vocab: 300,
            seed,
        }
    }
}

/// Generates `n_fulltext · title_multiplier` titles and `n_fulltext`
/// full-texts; full-text ids are the first `n_fulltext` title ids.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    if cfg.n_fulltext == 0
        || cfg.title_multiplier == 0
        || cfg.n_labels == 0
        || cfg.keywords_per_label == 0
        || cfg.filler_vocab == 0
    {
        return Err(Error::Config("synthetic corpus sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let keywords: Vec<Vec<String>> = (0..cfg.n_labels)
        .map(|_| {
            (0..cfg.keywords_per_label)
                .map(|_| fresh_word(&mut rng, &mut used, 3))
                .collect()
        })
        .collect();
    let filler: Vec<String> = (0..cfg.filler_vocab)
        .map(|_| fresh_word(&mut rng, &mut used, 2))
        .collect();
    let labels: Vec<String> = (0..cfg.n_labels).map(|l| format!("subject{l:03}")).collect();

    let label_weights = WeightedIndex::new((0..cfg.n_labels).map(|l| 1.0 / ((l + 1) as f64).sqrt()))
        .expect("positive weights");
    let keyword_weights = WeightedIndex::new((0..cfg.keywords_per_label).map(|j| 1.0 / (j + 1) as f64))
        .expect("positive weights");

    let n_titles = cfg.n_fulltext * cfg.title_multiplier;
    let mut titles = Vec::with_capacity(n_titles);
    let mut fulltexts = Vec::with_capacity(cfg.n_fulltext);
    for i in 0..n_titles {
        let n_doc_labels = match rng.gen_range(0..10) {
            0..=3 => 1,
            4..=7 => 2,
            _ => 3,
        }
        .min(cfg.n_labels);
        let mut chosen = BTreeSet::new();
        while chosen.len() < n_doc_labels {
            chosen.insert(label_weights.sample(&mut rng));
        }

        let mut title_words: Vec<&str> = Vec::new();
        for &l in &chosen {
            for _ in 0..2 {
                title_words.push(&keywords[l][keyword_weights.sample(&mut rng)]);
            }
        }
        for _ in 0..rng.gen_range(2..=5) {
            title_words.push(filler.choose(&mut rng).expect("non-empty filler"));
        }
        title_words.shuffle(&mut rng);
        let title = capitalize(&title_words.join(" "));

        let id = format!("doc{i:06}");
        let doc_labels: BTreeSet<String> = chosen.iter().map(|&l| labels[l].clone()).collect();
        let has_fulltext = i < cfg.n_fulltext;
        if has_fulltext {
            let mut body: Vec<&str> = Vec::new();
            for &l in &chosen {
                for _ in 0..3 {
                    body.push(&keywords[l][keyword_weights.sample(&mut rng)]);
                }
            }
            for _ in 0..rng.gen_range(20..=40) {
                body.push(filler.choose(&mut rng).expect("non-empty filler"));
            }
            body.shuffle(&mut rng);
            fulltexts.push(Document {
                id: id.clone(),
                text: format!("{title}. {}.", body.join(" ")),
                labels: doc_labels.clone(),
                has_fulltext: true,
            });
        }
        titles.push(Document {
            id,
            text: title,
            labels: doc_labels,
            has_fulltext,
        });
    }
    Ok((
        Dataset::new(titles, Provenance::Title)?,
        Dataset::new(fulltexts, Provenance::Fulltext)?,
    ))
}

fn fresh_word<R: Rng>(rng: &mut R, used: &mut HashSet<String>, syllables: usize) -> String {
    loop {
        let n = syllables + rng.gen_range(0..2);
        let word: String = (0..n)
            .map(|_| *SYLLABLES.choose(rng).expect("syllables"))
            .collect();
        if used.insert(word.clone()) {
            return word;
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// One training-set size of the experiment: full-texts, `x` times as many
/// titles, or all titles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rung {
    FullText,
    Titles(usize),
    AllTitles,
}

pub const DEFAULT_RUNGS: [Rung; 6] = [
    Rung::Titles(1),
    Rung::Titles(2),
    Rung::Titles(4),
    Rung::Titles(8),
    Rung::AllTitles,
    Rung::FullText,
];

impl Rung {
    pub fn is_title(self) -> bool {
        !matches!(self, Rung::FullText)
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rung::FullText => f.write_str("full"),
            Rung::Titles(x) => write!(f, "{x}"),
            Rung::AllTitles => f.write_str("all"),
        }
    }
}

impl FromStr for Rung {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "full" | "fulltext" => Ok(Rung::FullText),
            "all" | "tall" | "t_all" => Ok(Rung::AllTitles),
            other => {
                let digits = other.strip_prefix('t').unwrap_or(other);
                match digits.parse::<usize>() {
                    Ok(x) if x >= 1 => Ok(Rung::Titles(x)),
                    _ => Err(Error::Config(format!(
                        "unknown multiplier `{s}` (expected 1, 2, 4, 8, all or full)"
                    ))),
                }
            }
        }
    }
}

/// Assignment of full-text documents to cross-validation folds.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    folds: Vec<Vec<String>>,
    fold_of: HashMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    /// Members of one fold, in input order.
    pub fn fold(&self, index: usize) -> &[String] {
        &self.folds[index]
    }

    pub fn folds(&self) -> &[Vec<String>] {
        &self.folds
    }

    /// Rebuilds a plan from explicit `(id, fold)` pairs.
    pub fn from_assignments(k: usize, seed: u64, pairs: Vec<(String, usize)>) -> Result<Self> {
        let mut folds = vec![Vec::new(); k];
        let mut fold_of = HashMap::new();
        for (id, f) in pairs {
            if f >= k {
                return Err(Error::Validation(format!("fold {f} out of range for k = {k}")));
            }
            if fold_of.insert(id.clone(), f).is_some() {
                return Err(Error::Validation(format!("`{id}` assigned to two folds")));
            }
            folds[f].push(id);
        }
        Ok(FoldPlan {
            k,
            seed,
            folds,
            fold_of,
        })
    }
}

/// Balanced random partition of `ids` into `k` folds.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if ids.len() < k {
        return Err(Error::Config(format!(
            "cannot split {} documents into {k} folds",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", 0)));
    let mut assigned = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        assigned[i] = pos % k;
    }
    let pairs = ids.iter().cloned().zip(assigned).collect();
    FoldPlan::from_assignments(k, seed, pairs)
}

/// Train/validation/test ids of one (fold, rung) experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderSplit {
    pub rung: Rung,
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl LadderSplit {
    /// Training pool before the validation carve-out.
    pub fn pool(&self) -> HashSet<&str> {
        self.train_ids
            .iter()
            .chain(&self.val_ids)
            .map(String::as_str)
            .collect()
    }
}

/// Builds the split for `fold` at `rung`.
///
/// The test set is the fold's full-texts (as titles for title rungs). The
/// pool is the other folds' full-text ids, extended for `Titles(x)` with
/// `(x - 1)` times as many title-only documents taken from one seeded
/// shuffle, so pools are nested across rungs. `AllTitles` uses every title
/// outside the test fold. `val_fraction` of the pool, drawn with a
/// fold-derived seed, becomes the validation set.
pub fn assemble_ladder(
    fold: usize,
    rung: Rung,
    titles: &Dataset,
    fulltexts: &Dataset,
    plan: &FoldPlan,
    val_fraction: f64,
    seed: u64,
) -> Result<LadderSplit> {
    if fold >= plan.k {
        return Err(Error::Config(format!("fold {fold} out of range for k = {}", plan.k)));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    if let Some(missing) = fulltexts.ids().find(|id| !titles.contains(id)) {
        return Err(Error::Validation(format!(
            "full-text document `{missing}` has no title record"
        )));
    }
    if let Some(missing) = fulltexts.ids().find(|id| plan.fold_of(id).is_none()) {
        return Err(Error::Validation(format!(
            "full-text document `{missing}` is not assigned to a fold"
        )));
    }

    let test_ids: Vec<String> = fulltexts
        .ids()
        .filter(|id| plan.fold_of(id) == Some(fold))
        .map(str::to_string)
        .collect();
    let base: Vec<String> = fulltexts
        .ids()
        .filter(|id| plan.fold_of(id) != Some(fold))
        .map(str::to_string)
        .collect();

    let pool: Vec<String> = match rung {
        Rung::FullText | Rung::Titles(1) => base,
        Rung::Titles(0) => return Err(Error::Config("multiplier must be positive".into())),
        Rung::Titles(x) => {
            let extra = title_only_pool(titles, fulltexts, seed);
            let wanted = (x - 1) * base.len();
            if extra.len() < wanted {
                let max = 1 + extra.len() / base.len().max(1);
                return Err(Error::Validation(format!(
                    "multiplier {x} needs {wanted} title-only documents but only {} exist; \
                     the largest achievable multiplier is {max}",
                    extra.len()
                )));
            }
            base.into_iter().chain(extra.into_iter().take(wanted)).collect()
        }
        Rung::AllTitles => {
            let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
            titles
                .ids()
                .filter(|id| !test.contains(id))
                .map(str::to_string)
                .collect()
        }
    };

    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        "validation",
        fold as u64,
    )));
    let mut is_val = vec![false; pool.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = pool
        .into_iter()
        .zip(is_val)
        .partition(|(_, v)| *v);

    Ok(LadderSplit {
        rung,
        fold,
        train_ids: train.into_iter().map(|(id, _)| id).collect(),
        val_ids: val.into_iter().map(|(id, _)| id).collect(),
        test_ids,
    })
}

/// Title-only documents in one seeded order shared by all rungs and folds.
fn title_only_pool(titles: &Dataset, fulltexts: &Dataset, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = titles
        .ids()
        .filter(|id| !fulltexts.contains(id))
        .map(str::to_string)
        .collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "title-pool", 0)));
    ids
}

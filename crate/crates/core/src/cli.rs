//! `deepindex prepare|train|evaluate|report|synth`.
//!
//! Every command also accepts `--config FILE` holding `key = value` lines
//! named like the long flags; flags given on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    assemble_ladder, load_tsv, make_folds, synth_generate, write_tsv, Dataset, Document,
    LabelSpace, LadderSplit, Provenance, Rung, SynthConfig,
};
use crate::error::{Error, Result};
use crate::experiment::{self, gold_sets, FeatureState};
use crate::features::load_embeddings;
use crate::metrics::Report;
use crate::models::{Model, ModelConfig, ModelKind, Preset};
use crate::report::{parse_results, Table, RESULTS_HEADER};
use crate::training::{predict, StopReason, TrainConfig, TrainedModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const EXPERIMENT_FILE: &str = "experiment.conf";

#[derive(Parser, Debug)]
#[command(name = "deepindex", version, about = "Subject indexing experiments on titles and full-texts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign full-texts to folds and write the split manifests.
    Prepare(PrepareArgs),
    /// Train one model per requested (model, multiplier, fold).
    Train(TrainArgs),
    /// Score checkpoints on their test folds and append to results.csv.
    Evaluate(EvaluateArgs),
    /// Aggregate results.csv into a table and a learning-curve chart.
    Report(ReportArgs),
    /// Write a synthetic titles.tsv / fulltexts.tsv pair.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file with defaults for the long flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    titles: PathBuf,
    #[arg(long)]
    fulltexts: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, env = "DEEPINDEX_SEED", default_value_t = 0)]
    seed: u64,
    /// Comma-separated rungs: 1, 2, 4, 8, all, full.
    #[arg(long, default_value = "1,2,4,8,all,full")]
    multipliers: String,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value = "desk")]
    preset: String,
}

#[derive(Args, Debug)]
struct RunSelection {
    /// Experiment directory written by `prepare`.
    #[arg(long)]
    dir: PathBuf,
    /// Comma-separated: base-mlp, mlp, cnn, lstm.
    #[arg(long)]
    model: String,
    /// Comma-separated rungs.
    #[arg(long)]
    mult: String,
    /// Comma-separated fold indices; all folds when omitted.
    #[arg(long)]
    fold: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    runs: RunSelection,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Mini-batches between validation events (default: one epoch).
    #[arg(long)]
    eval_every: Option<usize>,
    /// Overrides the preset's learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    runs: RunSelection,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Experiment directory holding results.csv.
    #[arg(long)]
    dir: PathBuf,
    /// Output directory for table.csv and curve.svg (default: --dir).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_fulltext: usize,
    /// Titles per full-text.
    #[arg(long, default_value_t = 10)]
    mult: usize,
    #[arg(long, default_value_t = 40)]
    n_labels: usize,
    #[arg(long, env = "DEEPINDEX_SEED", default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Parse { .. } => EXIT_USAGE,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

/// Appends `--key value` for every config-file entry whose flag is absent
/// from the command line.
fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config");
    let inline = args
        .iter()
        .find_map(|a| a.to_str().and_then(|s| s.strip_prefix("--config=")).map(PathBuf::from));
    let path = match (pos, inline) {
        (Some(p), _) => match args.get(p + 1) {
            Some(v) => PathBuf::from(v),
            None => return Ok(args),
        },
        (None, Some(p)) => p,
        (None, None) => return Ok(args),
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let given: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    for (key, value) in parse_key_values(&text, &path)? {
        if key == "config" || given.contains(&key) {
            continue;
        }
        args.push(format!("--{key}").into());
        args.push(value.into());
    }
    Ok(args)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("empty list `{s}`")));
    }
    Ok(items)
}

/// Settings written by `prepare` and read by the later commands.
#[derive(Clone, Debug, PartialEq)]
struct Experiment {
    titles: PathBuf,
    fulltexts: PathBuf,
    folds: usize,
    seed: u64,
    rungs: Vec<Rung>,
    val_fraction: f64,
    preset: Preset,
}

impl Experiment {
    fn to_text(&self) -> String {
        let rungs: Vec<String> = self.rungs.iter().map(Rung::to_string).collect();
        format!(
            "titles = {}\nfulltexts = {}\nfolds = {}\nseed = {}\nmultipliers = {}\nval-fraction = {}\npreset = {}\n",
            self.titles.display(),
            self.fulltexts.display(),
            self.folds,
            self.seed,
            rungs.join(","),
            self.val_fraction,
            self.preset
        )
    }

    fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(EXPERIMENT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let map = parse_key_values(&text, &path)?;
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::Validation(format!("{}: missing `{k}`", path.display())))
        };
        let num = |k: &str| -> Result<String> { get(k).cloned() };
        Ok(Experiment {
            titles: PathBuf::from(get("titles")?),
            fulltexts: PathBuf::from(get("fulltexts")?),
            folds: num("folds")?
                .parse()
                .map_err(|_| Error::Validation(format!("{}: bad `folds`", path.display())))?,
            seed: num("seed")?
                .parse()
                .map_err(|_| Error::Validation(format!("{}: bad `seed`", path.display())))?,
            rungs: parse_list(get("multipliers")?)?,
            val_fraction: num("val-fraction")?
                .parse()
                .map_err(|_| Error::Validation(format!("{}: bad `val-fraction`", path.display())))?,
            preset: get("preset")?.parse()?,
        })
    }

    fn datasets(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            load_tsv(&self.titles, Provenance::Title)?,
            load_tsv(&self.fulltexts, Provenance::Fulltext)?,
        ))
    }
}

fn manifest_path(dir: &Path, fold: usize, rung: Rung) -> PathBuf {
    dir.join("splits").join(format!("fold{fold}_{rung}.tsv"))
}

fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    let rungs: Vec<Rung> = parse_list(&a.multipliers)?;
    let preset: Preset = a.preset.parse()?;
    let titles = load_tsv(&a.titles, Provenance::Title)?;
    let fulltexts = load_tsv(&a.fulltexts, Provenance::Fulltext)?;
    let ids: Vec<String> = fulltexts.ids().map(str::to_string).collect();
    let plan = make_folds(&ids, a.folds, a.seed)?;

    let mut folds = String::from("id\tfold\n");
    for (k, members) in plan.folds().iter().enumerate() {
        for id in members {
            folds.push_str(&format!("{id}\t{k}\n"));
        }
    }
    write_file(&a.out_dir.join("folds.tsv"), &folds)?;
    for fold in 0..a.folds {
        for &rung in &rungs {
            let split =
                assemble_ladder(fold, rung, &titles, &fulltexts, &plan, a.val_fraction, a.seed)?;
            write_file(&manifest_path(&a.out_dir, fold, rung), &split_manifest(&split))?;
        }
    }
    let absolute = |p: &Path| fs::canonicalize(p).map_err(|e| Error::io(p, e));
    let exp = Experiment {
        titles: absolute(&a.titles)?,
        fulltexts: absolute(&a.fulltexts)?,
        folds: a.folds,
        seed: a.seed,
        rungs,
        val_fraction: a.val_fraction,
        preset,
    };
    write_file(&a.out_dir.join(EXPERIMENT_FILE), &exp.to_text())?;
    info!(
        "prepared {} folds × {} rungs in {}",
        a.folds,
        exp.rungs.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn split_manifest(split: &LadderSplit) -> String {
    let mut s = String::from("id\tsplit\n");
    for (ids, name) in [
        (&split.train_ids, "train"),
        (&split.val_ids, "val"),
        (&split.test_ids, "test"),
    ] {
        for id in ids {
            s.push_str(&format!("{id}\t{name}\n"));
        }
    }
    s
}

/// Reads a manifest back into `(train, val, test)` ids.
fn read_manifest(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().skip(1) {
        let (id, split) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `id<TAB>split`"))?;
        match split {
            "train" => train.push(id.to_string()),
            "val" => val.push(id.to_string()),
            "test" => test.push(id.to_string()),
            other => return Err(Error::parse(path, i + 1, format!("unknown split `{other}`"))),
        }
    }
    Ok((train, val, test))
}

/// Expands a [`RunSelection`] into concrete runs.
fn selected_runs(sel: &RunSelection, exp: &Experiment) -> Result<Vec<(ModelKind, Rung, usize)>> {
    let models: Vec<ModelKind> = parse_list(&sel.model)?;
    let rungs: Vec<Rung> = parse_list(&sel.mult)?;
    let folds: Vec<usize> = match &sel.fold {
        Some(list) => list
            .split(',')
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid fold `{f}`")))
            })
            .collect::<Result<_>>()?,
        None => (0..exp.folds).collect(),
    };
    if let Some(f) = folds.iter().find(|&&f| f >= exp.folds) {
        return Err(Error::Config(format!("fold {f} out of range for {} folds", exp.folds)));
    }
    if let Some(r) = rungs.iter().find(|r| !exp.rungs.contains(r)) {
        return Err(Error::Config(format!("multiplier {r} was not prepared")));
    }
    let mut runs = Vec::new();
    for &m in &models {
        for &r in &rungs {
            for &f in &folds {
                runs.push((m, r, f));
            }
        }
    }
    Ok(runs)
}

fn run_stem(dir: &Path, model: ModelKind, rung: Rung, fold: usize) -> PathBuf {
    dir.join("runs").join(format!("{model}_{rung}_fold{fold}"))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// JSON written next to every checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelConfig,
    pub preset: Preset,
    pub theta: f64,
    pub labels: Vec<String>,
    pub features: FeatureState,
    pub train: TrainConfig,
    pub best_val_f1: Option<f64>,
    pub stopped: String,
}

fn docs_for<'a>(
    titles: &'a Dataset,
    fulltexts: &'a Dataset,
    rung: Rung,
    ids: &[String],
) -> Result<Vec<&'a Document>> {
    match rung {
        Rung::FullText => fulltexts.select(ids),
        _ => titles.select(ids),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let exp = Experiment::load(&a.runs.dir)?;
    let runs = selected_runs(&a.runs, &exp)?;
    let preset: Preset = match &a.preset {
        Some(p) => p.parse()?,
        None => exp.preset,
    };
    let pretrained = a.embeddings.as_deref().map(load_embeddings).transpose()?;
    let (titles, fulltexts) = exp.datasets()?;
    for (kind, rung, fold) in runs {
        let (train_ids, val_ids, test_ids) = read_manifest(&manifest_path(&a.runs.dir, fold, rung))?;
        let train_docs = docs_for(&titles, &fulltexts, rung, &train_ids)?;
        let val_docs = docs_for(&titles, &fulltexts, rung, &val_ids)?;
        let test_docs = docs_for(&titles, &fulltexts, rung, &test_ids)?;
        let cfg = TrainConfig {
            learning_rate: a.lr.unwrap_or_else(|| preset.learning_rate(kind)),
            batch_size: a.batch_size,
            patience: a.patience,
            eval_every: a.eval_every,
            max_epochs: a.max_epochs,
            seed: exp.seed,
        };
        let stem = run_stem(&a.runs.dir, kind, rung, fold);
        let log_path = with_ext(&stem, "log");
        if let Some(parent) = log_path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(log_file);
        writeln!(log, "step\tsplit\tloss\ttheta\tsample_f1").map_err(|e| Error::io(&log_path, e))?;
        info!("training {kind} at {rung} on fold {fold} ({} documents)", train_docs.len());
        let outcome = experiment::run(
            kind,
            preset,
            &cfg,
            &train_docs,
            &val_docs,
            &test_docs,
            pretrained.as_ref(),
            Some(&mut log),
        )?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        save_run(&stem, preset, &cfg, &outcome.prepared.labels, &outcome.prepared.features, &outcome.trained)?;
        if let StopReason::Diverged(msg) = &outcome.trained.stop {
            return Err(Error::Divergence(format!(
                "{kind} at {rung}, fold {fold}: {msg}; last good checkpoint saved"
            )));
        }
    }
    Ok(())
}

fn save_run(
    stem: &Path,
    preset: Preset,
    cfg: &TrainConfig,
    labels: &LabelSpace,
    features: &FeatureState,
    trained: &TrainedModel,
) -> Result<()> {
    let ckpt = with_ext(stem, "ckpt");
    let mut out = BufWriter::new(File::create(&ckpt).map_err(|e| Error::io(&ckpt, e))?);
    trained
        .model
        .save_checkpoint(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&ckpt, e))?;
    let sidecar = Sidecar {
        model: trained.model.config().clone(),
        preset,
        theta: trained.theta,
        labels: labels.labels().to_vec(),
        features: features.clone(),
        train: cfg.clone(),
        best_val_f1: trained.best_val_f1(),
        stopped: format!("{:?}", trained.stop),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    write_file(&with_ext(stem, "json"), &json)
}

/// Loads a trained run written by `train`.
pub fn load_run(stem: &Path) -> Result<(Sidecar, TrainedModel)> {
    let json_path = with_ext(stem, "json");
    let ckpt = with_ext(stem, "ckpt");
    if !ckpt.exists() {
        return Err(Error::Validation(format!("missing checkpoint {}", ckpt.display())));
    }
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    let mut reader = std::io::BufReader::new(File::open(&ckpt).map_err(|e| Error::io(&ckpt, e))?);
    let model = Model::load_checkpoint(sidecar.model.clone(), &mut reader)
        .map_err(|e| Error::Format(format!("{}: {e}", ckpt.display())))?;
    let trained = TrainedModel {
        model,
        theta: sidecar.theta,
        history: Vec::new(),
        stop: StopReason::MaxEpochs,
    };
    Ok((sidecar, trained))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let exp = Experiment::load(&a.runs.dir)?;
    let runs = selected_runs(&a.runs, &exp)?;
    let (titles, fulltexts) = exp.datasets()?;
    // every run must exist before anything is appended
    let mut loaded = Vec::with_capacity(runs.len());
    for &(kind, rung, fold) in &runs {
        loaded.push(load_run(&run_stem(&a.runs.dir, kind, rung, fold))?);
    }
    let results = a.runs.dir.join("results.csv");
    let fresh = !results.exists();
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results)
        .map_err(|e| Error::io(&results, e))?;
    if fresh {
        writeln!(out, "{RESULTS_HEADER}").map_err(|e| Error::io(&results, e))?;
    }
    for ((kind, rung, fold), (sidecar, trained)) in runs.into_iter().zip(loaded) {
        let (_, _, test_ids) = read_manifest(&manifest_path(&a.runs.dir, fold, rung))?;
        let docs = docs_for(&titles, &fulltexts, rung, &test_ids)?;
        let space = LabelSpace::from_labels(sidecar.labels.clone());
        let gold = gold_sets(&space, &docs);
        let inputs = sidecar.features.encode(&docs);
        let (probs, _) = predict(&trained, &inputs)?;
        let report = Report::from_predictions(&probs, &gold, trained.theta)?;
        // one write per row keeps concurrent appends line-atomic
        let row = format!("{kind},{rung},{fold},{}\n", report.csv_fields());
        out.write_all(row.as_bytes()).map_err(|e| Error::io(&results, e))?;
        info!("{kind} {rung} fold {fold}: sample F1 {:.4}", report.sample_f1);
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let results = a.dir.join("results.csv");
    let text = fs::read_to_string(&results).map_err(|e| Error::io(&results, e))?;
    let table = Table::from_rows(&parse_results(&text)?)?;
    let out = a.out_dir.as_deref().unwrap_or(&a.dir);
    write_file(&out.join("table.csv"), &table.to_csv())?;
    write_file(&out.join("curve.svg"), &table.to_svg())?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig::new(a.n_fulltext, a.mult, a.n_labels, a.seed);
    let (titles, fulltexts) = synth_generate(&cfg)?;
    for (name, data) in [("titles.tsv", &titles), ("fulltexts.tsv", &fulltexts)] {
        let path = a.out_dir.join(name);
        let mut buf = Vec::new();
        write_tsv(&mut buf, data)?;
        write_file(&path, std::str::from_utf8(&buf).expect("TSV output is UTF-8"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_with_comments() {
        let m = parse_key_values("# header\nfolds = 3\nval_fraction=0.1 # tail\n\n", Path::new("c"))
            .unwrap();
        assert_eq!(m["folds"], "3");
        assert_eq!(m["val-fraction"], "0.1");
        assert!(parse_key_values("nonsense", Path::new("c")).is_err());
    }

    #[test]
    fn config_file_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "folds = 3\nseed = 9\n").unwrap();
        let args: Vec<OsString> = ["deepindex", "prepare", "--seed", "1", "--config"]
            .iter()
            .map(OsString::from)
            .chain([path.clone().into_os_string()])
            .collect();
        let out = expand_config(args).unwrap();
        let text: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert!(text.windows(2).any(|w| w[0] == "--folds" && w[1] == "3"));
        assert!(!text.iter().any(|a| a == "9"));
    }

    #[test]
    fn experiment_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment {
            titles: "/data/t.tsv".into(),
            fulltexts: "/data/f.tsv".into(),
            folds: 3,
            seed: 4,
            rungs: vec![Rung::Titles(1), Rung::AllTitles, Rung::FullText],
            val_fraction: 0.2,
            preset: Preset::Desk,
        };
        write_file(&dir.path().join(EXPERIMENT_FILE), &exp.to_text()).unwrap();
        assert_eq!(Experiment::load(dir.path()).unwrap(), exp);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Divergence("x".into())), EXIT_RUNTIME);
        assert_eq!(exit_code(&Error::Format("x".into())), EXIT_RUNTIME);
        let missing = Error::io("a", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(exit_code(&missing), EXIT_USAGE);
    }
}

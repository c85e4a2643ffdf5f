//! Command-line front end. Every subcommand is a thin wrapper over the
//! library; `run` returns the process exit code (0 ok, 1 runtime failure,
//! 2 usage or configuration error).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{build_code_vocabulary, valid_length};
use crate::embedding::{train_embeddings, EmbeddingTable, W2vMode, Word2VecConfig};
use crate::eval::{evaluate, load_dataset, scan_commits, split_indices, Dataset};
use crate::lexer::lex;
use crate::message::{build_message_vocabulary, message_stems};
use crate::model::{train, History, ModelConfig, PatchRnn, TwinSummary};
use crate::patch::parse_patch_bytes;
use crate::pipeline::{CachedSample, PipelineOptions, PreparedSample};
use crate::vocab::Vocabulary;

pub const CODE_VOCAB_FILE: &str = "code_vocab.tsv";
pub const MSG_VOCAB_FILE: &str = "msg_vocab.tsv";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const CDF_REPORT_FILE: &str = "cdf_report.txt";
pub const FAILURES_FILE: &str = "failures.tsv";
pub const CODE_EMB_FILE: &str = "code_w2v.txt";
pub const MSG_EMB_FILE: &str = "msg_w2v.txt";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(
    name = "patchrnn",
    version,
    about = "Identify security patches from diff code and commit messages"
)]
pub struct Cli {
    /// Seed for every random draw (initialization, shuffling, splitting, word2vec).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch prediction.
    #[arg(long, global = true, env = "PATCHRNN_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// key=value file with hyperparameters; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a dataset: vocabularies, sample cache and a sequence-length CDF report.
    Preprocess {
        dataset: PathBuf,
        out_dir: PathBuf,
        /// Keep non C/C++ files when rebuilding code.
        #[arg(long)]
        include_all_files: bool,
        #[arg(long)]
        code_len: Option<usize>,
        #[arg(long)]
        msg_len: Option<usize>,
    },
    /// Train word2vec tables for code tokens and message stems.
    Embed {
        /// Directory written by `preprocess`.
        cache_dir: PathBuf,
        /// Output directory (defaults to the cache directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        w2v: W2vArgs,
    },
    /// Train a model and write a checkpoint plus a `<checkpoint>.json` sidecar.
    Train {
        /// Dataset root or a `samples.jsonl` cache.
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        code_emb: Option<PathBuf>,
        #[arg(long)]
        msg_emb: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Confusion matrix and rates of a checkpoint on a dataset.
    Evaluate {
        checkpoint: PathBuf,
        /// Dataset root or a `samples.jsonl` cache.
        data: PathBuf,
        /// Use every sample instead of the test split recorded at training time.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// One `<path> <label> <probability>` line per patch.
    Predict {
        checkpoint: PathBuf,
        #[arg(required = true)]
        patches: Vec<PathBuf>,
    },
    /// Classify every file under a directory.
    Scan {
        checkpoint: PathBuf,
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print `kind<TAB>text` for every token of a source file (`-` for stdin).
    Lex { input: PathBuf },
    /// Print the stems of a commit message (`-` for stdin).
    PreprocessMsg {
        input: PathBuf,
        /// Read the input as a patch and use its message.
        #[arg(long)]
        patch: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    #[arg(long)]
    pub code_len: Option<usize>,
    #[arg(long)]
    pub msg_len: Option<usize>,
    /// Fraction of samples used for training; the rest is the recorded test split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub freeze_embeddings: bool,
    /// Loss weights `non_security,security`.
    #[arg(long)]
    pub class_weights: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct W2vArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negative: Option<usize>,
    #[arg(long = "w2v-epochs")]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub cbow: bool,
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub w2v: Word2VecConfig,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        RunConfig {
            w2v: Word2VecConfig {
                seed: model.seed,
                ..Word2VecConfig::default()
            },
            seed: model.seed,
            model,
            train_fraction: 0.8,
        }
    }
}

fn parse_dims(v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn parse_weights(v: &str) -> Result<[f64; 2], String> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b] => Ok([a, b]),
        _ => Err("expected two comma-separated weights".into()),
    }
}

impl RunConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        let m = &mut self.model;
        let w = &mut self.w2v;
        match key {
            "code_seq_len" => m.code_seq_len = p(value)?,
            "msg_seq_len" => m.msg_seq_len = p(value)?,
            "embed_dim" => m.embed_dim = p(value)?,
            "lstm_hidden" => m.lstm_hidden = p(value)?,
            "code_lstm_layers" => m.code_lstm_layers = p(value)?,
            "code_fc_dims" => m.code_fc_dims = parse_dims(value)?,
            "msg_fc_dims" => m.msg_fc_dims = parse_dims(value)?,
            "fusion_fc_dims" => m.fusion_fc_dims = parse_dims(value)?,
            "twin_summary" => {
                m.twin_summary = match value {
                    "all_layers" => TwinSummary::AllLayers,
                    "top_layer" => TwinSummary::TopLayer,
                    _ => return Err(format!("unknown twin_summary {value:?}")),
                }
            }
            "batch_size" => m.batch_size = p(value)?,
            "lr" => m.lr = p(value)?,
            "epochs" => m.epochs = p(value)?,
            "embedding_trainable" => m.embedding_trainable = p(value)?,
            "class_weights" => m.class_weights = Some(parse_weights(value)?),
            "seed" => self.seed = p(value)?,
            "train_fraction" => self.train_fraction = p(value)?,
            "w2v_dim" => w.dim = p(value)?,
            "w2v_window" => w.window = p(value)?,
            "w2v_negative" => w.negative_samples = p(value)?,
            "w2v_epochs" => w.epochs = p(value)?,
            "w2v_lr" => w.initial_lr = p(value)?,
            "w2v_min_count" => w.min_count = p(value)?,
            "w2v_mode" => {
                w.mode = match value {
                    "skipgram" | "skip_gram" => W2vMode::SkipGram,
                    "cbow" => W2vMode::Cbow,
                    _ => return Err(format!("unknown w2v_mode {value:?}")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn read_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("{}:{}: expected key=value", path.display(), n + 1));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    fn apply_model_args(&mut self, a: &ModelArgs) -> CliResult<()> {
        let m = &mut self.model;
        if let Some(v) = a.epochs {
            m.epochs = v;
        }
        if let Some(v) = a.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = a.lr {
            m.lr = v;
        }
        if let Some(v) = a.lstm_hidden {
            m.lstm_hidden = v;
            // keep the head widths tied to the hidden size
            let twin = 2 * m.twin_summary_dim();
            m.code_fc_dims[0] = twin;
            m.msg_fc_dims[0] = 2 * v;
        }
        if let Some(v) = a.embed_dim {
            m.embed_dim = v;
        }
        if let Some(v) = a.code_len {
            m.code_seq_len = v;
        }
        if let Some(v) = a.msg_len {
            m.msg_seq_len = v;
        }
        if a.freeze_embeddings {
            m.embedding_trainable = false;
        }
        if let Some(w) = &a.class_weights {
            m.class_weights = Some(
                parse_weights(w).map_err(|e| CliError::Usage(format!("--class-weights: {e}")))?,
            );
        }
        if let Some(f) = a.train_fraction {
            self.train_fraction = f;
        }
        Ok(())
    }

    fn apply_w2v_args(&mut self, a: &W2vArgs) {
        let w = &mut self.w2v;
        if let Some(v) = a.dim {
            w.dim = v;
        }
        if let Some(v) = a.window {
            w.window = v;
        }
        if let Some(v) = a.negative {
            w.negative_samples = v;
        }
        if let Some(v) = a.epochs {
            w.epochs = v;
        }
        if let Some(v) = a.min_count {
            w.min_count = v;
        }
        if a.cbow {
            w.mode = W2vMode::Cbow;
        }
    }

    fn finish(&mut self, seed: Option<u64>) -> CliResult<()> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.model.seed = self.seed;
        self.w2v.seed = self.seed;
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return usage("train_fraction must be within [0, 1]");
        }
        self.model
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.w2v
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Training sidecar written next to a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub model_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub split: SplitRecord,
    pub history: History,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub train_fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        usage(format!("{what} {} does not exist", path.display()))
    }
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        return Ok(buf);
    }
    require_exists(path, "input")?;
    Ok(fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

fn read_samples_cache(path: &Path) -> anyhow::Result<Vec<PreparedSample>> {
    let r =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: CachedSample =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        out.push(PreparedSample::from_cached(c));
    }
    Ok(out)
}

fn load_dataset_checked(root: &Path) -> CliResult<Dataset> {
    require_exists(root, "dataset root")?;
    let ds = load_dataset(root).map_err(|e| CliError::Runtime(e.into()))?;
    for f in &ds.failures {
        log::warn!("skipped {}: {}", f.path.display(), f.reason);
    }
    Ok(ds)
}

/// Samples from a dataset root or a `samples.jsonl` cache.
fn load_samples(data: &Path, opts: &PipelineOptions) -> CliResult<Vec<PreparedSample>> {
    require_exists(data, "data path")?;
    if data.is_file() {
        return Ok(read_samples_cache(data)?);
    }
    let ds = load_dataset_checked(data)?;
    Ok(ds.prepare(data, opts))
}

fn load_model(path: &Path) -> CliResult<PatchRnn> {
    require_exists(path, "checkpoint")?;
    PatchRnn::load(path).map_err(|e| CliError::Runtime(anyhow!("loading {}: {e}", path.display())))
}

fn write_vocab(path: &Path, v: &Vocabulary) -> anyhow::Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    v.write_tsv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Smallest length that covers `q` of `lengths`.
pub fn coverage_cutoff(lengths: &[usize], q: f64) -> usize {
    if lengths.is_empty() {
        return 0;
    }
    let mut v = lengths.to_vec();
    v.sort_unstable();
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

fn cdf_report(lengths: &[usize], configured: usize) -> String {
    let mut s = String::new();
    s.push_str(&format!("samples\t{}\n", lengths.len()));
    s.push_str("coverage\tlength\n");
    for q in [0.5, 0.75, 0.9, 0.95, 0.99, 1.0] {
        s.push_str(&format!(
            "{:.0}%\t{}\n",
            q * 100.0,
            coverage_cutoff(lengths, q)
        ));
    }
    let covered = lengths.iter().filter(|&&l| l <= configured).count();
    s.push_str(&format!(
        "95% of samples have at most {} code tokens\n",
        coverage_cutoff(lengths, 0.95)
    ));
    s.push_str(&format!(
        "configured length {configured} covers {covered} of {} samples\n",
        lengths.len()
    ));
    s
}

fn cmd_preprocess(
    cfg: &RunConfig,
    dataset: &Path,
    out_dir: &Path,
    include_all_files: bool,
) -> CliResult<()> {
    let ds = load_dataset_checked(dataset)?;
    let mut opts = cfg.model.pipeline_options();
    opts.reconstruct.include_all_files = include_all_files;
    let samples = ds.prepare(dataset, &opts);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let code_vocab = build_code_vocabulary(
        samples
            .iter()
            .flat_map(|s| [&s.unpatched[..], &s.patched[..]]),
    );
    let msg_vocab = build_message_vocabulary(samples.iter().map(|s| &s.message));
    write_vocab(&out_dir.join(CODE_VOCAB_FILE), &code_vocab)?;
    write_vocab(&out_dir.join(MSG_VOCAB_FILE), &msg_vocab)?;

    let mut w = BufWriter::new(File::create(out_dir.join(SAMPLES_FILE))?);
    for s in &samples {
        serde_json::to_writer(&mut w, &s.to_cached()).map_err(anyhow::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let lengths: Vec<usize> = samples.iter().map(|s| s.raw_code_len).collect();
    fs::write(
        out_dir.join(CDF_REPORT_FILE),
        cdf_report(&lengths, cfg.model.code_seq_len),
    )?;
    if !ds.failures.is_empty() {
        let body: String = ds
            .failures
            .iter()
            .map(|f| {
                format!(
                    "{}\t{}\n",
                    f.path.display(),
                    f.reason.replace(['\t', '\n'], " ")
                )
            })
            .collect();
        fs::write(out_dir.join(FAILURES_FILE), body)?;
    }
    log::info!(
        "preprocessed {} samples ({} failures): code vocab {}, message vocab {}",
        samples.len(),
        ds.failures.len(),
        code_vocab.len(),
        msg_vocab.len()
    );
    Ok(())
}

fn cmd_embed(cfg: &RunConfig, cache_dir: &Path, out_dir: &Path) -> CliResult<()> {
    let cache = cache_dir.join(SAMPLES_FILE);
    require_exists(&cache, "sample cache")?;
    let samples = read_samples_cache(&cache)?;
    let code: Vec<Vec<String>> = samples
        .iter()
        .flat_map(|s| [&s.unpatched, &s.patched])
        .map(|side| {
            side[..valid_length(side)]
                .iter()
                .map(|t| t.text.clone())
                .collect::<Vec<_>>()
        })
        .filter(|v| !v.is_empty())
        .collect();
    let msgs: Vec<Vec<String>> = samples
        .iter()
        .map(|s| s.message.stems().to_vec())
        .filter(|v| !v.is_empty())
        .collect();
    fs::create_dir_all(out_dir)?;
    for (corpus, file) in [(&code, CODE_EMB_FILE), (&msgs, MSG_EMB_FILE)] {
        let table = train_embeddings(corpus, &cfg.w2v)
            .map_err(|e| CliError::Runtime(anyhow!("{file}: {e}")))?;
        let mut w = BufWriter::new(File::create(out_dir.join(file))?);
        table.write(&mut w)?;
        w.flush()?;
        log::info!("{file}: {} vectors of dim {}", table.len(), table.dim());
    }
    Ok(())
}

fn read_table(path: &Path) -> CliResult<EmbeddingTable> {
    require_exists(path, "embedding file")?;
    let r = BufReader::new(File::open(path)?);
    EmbeddingTable::read(r).map_err(|e| CliError::Runtime(anyhow!("{}: {e}", path.display())))
}

fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    code_emb: Option<&Path>,
    msg_emb: Option<&Path>,
) -> CliResult<()> {
    let code_table = code_emb.map(read_table).transpose()?;
    let msg_table = msg_emb.map(read_table).transpose()?;
    let samples = load_samples(data, &cfg.model.pipeline_options())?;
    let (tr, te) = split_indices(samples.len(), cfg.train_fraction, cfg.seed);
    let train_set: Vec<PreparedSample> = tr.iter().map(|&i| samples[i].clone()).collect();
    log::info!(
        "training on {} samples, {} held out for testing",
        tr.len(),
        te.len()
    );
    let (model, history) = train(
        &train_set,
        None,
        cfg.model.clone(),
        code_table.as_ref(),
        msg_table.as_ref(),
    )
    .map_err(|e| CliError::Runtime(e.into()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model.save(out).map_err(|e| CliError::Runtime(e.into()))?;
    let record = TrainRecord {
        model_version: model.version(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        split: SplitRecord {
            seed: cfg.seed,
            train_fraction: cfg.train_fraction,
            train: tr.iter().map(|&i| samples[i].id.clone()).collect(),
            test: te.iter().map(|&i| samples[i].id.clone()).collect(),
        },
        history,
    };
    let json = serde_json::to_string_pretty(&record).map_err(anyhow::Error::from)?;
    fs::write(sidecar_path(out), json + "\n")?;
    if let Some(last) = record.history.epochs.last() {
        log::info!(
            "epoch {}: loss {:.6}, train accuracy {:.4}",
            last.epoch,
            last.train_loss,
            last.train_accuracy
        );
    }
    log::info!("wrote {} ({})", out.display(), record.model_version);
    Ok(())
}

fn cmd_evaluate(
    threads: usize,
    checkpoint: &Path,
    data: &Path,
    all: bool,
    json: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let model = load_model(checkpoint)?;
    let mut samples = load_samples(data, &model.config().pipeline_options())?;
    let sidecar = sidecar_path(checkpoint);
    if !all && sidecar.is_file() {
        let rec: TrainRecord = serde_json::from_str(&fs::read_to_string(&sidecar)?)
            .map_err(|e| CliError::Runtime(anyhow!("{}: {e}", sidecar.display())))?;
        let test: std::collections::HashSet<&str> =
            rec.split.test.iter().map(String::as_str).collect();
        samples.retain(|s| test.contains(s.id.as_str()));
        if samples.is_empty() {
            return usage(format!(
                "none of the test samples recorded in {} are in {}; pass --all to use every sample",
                sidecar.display(),
                data.display()
            ));
        }
        log::info!(
            "evaluating the {} test samples recorded in {}",
            samples.len(),
            sidecar.display()
        );
    }
    let ev = evaluate(&model, &samples, threads).map_err(|e| CliError::Runtime(e.into()))?;
    write!(out, "{ev}")?;
    if let Some(p) = json {
        let body = serde_json::json!({ "confusion_matrix": ev.matrix, "metrics": ev.metrics, "samples": samples.len() });
        fs::write(
            p,
            serde_json::to_string_pretty(&body).map_err(anyhow::Error::from)? + "\n",
        )?;
    }
    Ok(())
}

fn cmd_predict(checkpoint: &Path, patches: &[PathBuf], out: &mut dyn Write) -> CliResult<()> {
    for p in patches {
        require_exists(p, "patch")?;
    }
    let model = load_model(checkpoint)?;
    for p in patches {
        let bytes = fs::read(p)?;
        let patch = parse_patch_bytes(&bytes)
            .map_err(|e| CliError::Runtime(anyhow!("{}: {e}", p.display())))?;
        let pred = model
            .predict(&patch)
            .map_err(|e| CliError::Runtime(e.into()))?;
        writeln!(
            out,
            "{} {} {:.6}",
            p.display(),
            pred.label.as_str(),
            pred.probability
        )?;
    }
    Ok(())
}

fn files_under(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_scan(
    threads: usize,
    checkpoint: &Path,
    dir: &Path,
    format: ReportFormat,
    json: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    require_exists(dir, "scan directory")?;
    let model = load_model(checkpoint)?;
    let files = files_under(dir)?;
    let report = scan_commits(&model, &files, threads).map_err(|e| CliError::Runtime(e.into()))?;
    match format {
        ReportFormat::Text => write!(out, "{}", report.to_text())?,
        ReportFormat::Json => writeln!(out, "{}", report.to_json())?,
    }
    if let Some(p) = json {
        fs::write(p, report.to_json() + "\n")?;
    }
    Ok(())
}

fn cmd_lex(input: &Path, out: &mut dyn Write) -> CliResult<()> {
    let bytes = read_input(input)?;
    for t in lex(&String::from_utf8_lossy(&bytes)) {
        writeln!(out, "{}\t{}", t.kind.name(), t.text)?;
    }
    Ok(())
}

fn cmd_preprocess_msg(input: &Path, as_patch: bool, out: &mut dyn Write) -> CliResult<()> {
    let bytes = read_input(input)?;
    let message = if as_patch {
        parse_patch_bytes(&bytes)
            .map_err(|e| CliError::Runtime(anyhow!("{}: {e}", input.display())))?
            .message
    } else {
        String::from_utf8_lossy(&bytes).into_owned()
    };
    writeln!(out, "{}", message_stems(&message).join(" "))?;
    Ok(())
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Run a parsed command, writing its primary output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        cfg.read_file(p)?;
    }
    match &cli.command {
        Command::Preprocess {
            code_len, msg_len, ..
        } => {
            cfg.apply_model_args(&ModelArgs {
                code_len: *code_len,
                msg_len: *msg_len,
                ..ModelArgs::default()
            })?;
        }
        Command::Embed { w2v, .. } => cfg.apply_w2v_args(w2v),
        Command::Train { model, .. } => cfg.apply_model_args(model)?,
        _ => {}
    }
    cfg.finish(cli.seed)?;
    if cli.threads == 0 {
        return usage("--threads must be at least 1");
    }
    log::info!(
        "patchrnn {} seed {} config {} threads {}",
        env!("CARGO_PKG_VERSION"),
        cfg.seed,
        cfg.hash(),
        cli.threads
    );

    match &cli.command {
        Command::Preprocess {
            dataset,
            out_dir,
            include_all_files,
            ..
        } => cmd_preprocess(&cfg, dataset, out_dir, *include_all_files),
        Command::Embed {
            cache_dir, out_dir, ..
        } => cmd_embed(&cfg, cache_dir, out_dir.as_deref().unwrap_or(cache_dir)),
        Command::Train {
            data,
            out,
            code_emb,
            msg_emb,
            ..
        } => cmd_train(&cfg, data, out, code_emb.as_deref(), msg_emb.as_deref()),
        Command::Evaluate {
            checkpoint,
            data,
            all,
            json,
        } => cmd_evaluate(cli.threads, checkpoint, data, *all, json.as_deref(), out),
        Command::Predict {
            checkpoint,
            patches,
        } => cmd_predict(checkpoint, patches, out),
        Command::Scan {
            checkpoint,
            dir,
            format,
            json,
        } => cmd_scan(cli.threads, checkpoint, dir, *format, json.as_deref(), out),
        Command::Lex { input } => cmd_lex(input, out),
        Command::PreprocessMsg { input, patch } => cmd_preprocess_msg(input, *patch, out),
    }
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(&cli);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use proofkit::corpus::io::{read_corpus, read_jsonl, read_lines, with_ext, write_corpus, write_jsonl, write_lines};
use proofkit::corpus::{
    build_vocab, clean_and_filter, lexical_align, tokenize, FilterConfig, SentencePair, Truecaser,
};
use proofkit::correct::{Correction, TranslationMemory};
use proofkit::eval::{
    bleu_score, corpus_bleu, mask_timing, render_report, BleuConfig, BleuResult, DetectionMetrics, Format,
    MetricReport, RegressionAccumulator, ReportRow,
};
use proofkit::lattice::{ErrorTag, LabelRecord, TagLattice};
use proofkit::model::Model;
use proofkit::synth::{corrupt_corpus, generate_toy_parallel, ErrorSpec, Lexicon};
use proofkit::train::{self, Checkpoint, LossWeights, OptimizerKind, SweepAxis, TrainConfig, TrainPair};
use proofkit::{Error, ErrorClass, Rng};

/// Translation proofreading toolkit: detect and correct errors in translated text.
#[derive(Parser, Debug)]
#[command(name = "proofkit", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic parallel corpus with injected, labelled errors.
    GenData(GenDataArgs),
    /// Tokenise, truecase, filter and align a raw parallel corpus.
    Preprocess(PreprocessArgs),
    /// Train a model on labelled data and write a checkpoint.
    Train(TrainArgs),
    /// Tag each target sentence with error labels.
    Detect(DetectArgs),
    /// Rewrite target sentences from a labels file.
    Correct(CorrectArgs),
    /// Detect then correct in one pass.
    Proofread(ProofreadArgs),
    /// Score hypotheses with BLEU and/or predicted labels against gold labels.
    Evaluate(EvaluateArgs),
    /// Train one model per kernel size or batch size and report dev metrics.
    Sweep(SweepArgs),
    /// Build a tokenised translation memory from raw parallel files.
    TmBuild(TmBuildArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Tsv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => Format::Tsv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum ErrorMode {
    /// One corruption attempt per sentence.
    Sentence,
    /// One corruption attempt per target token.
    Token,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    KernelSize,
    BatchSize,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::KernelSize => SweepAxis::KernelSize,
            AxisArg::BatchSize => SweepAxis::BatchSize,
        }
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output prefix; writes PREFIX.src, .tgt, .ref, .ref.align and .labels.jsonl
    #[arg(long)]
    out: PathBuf,
    /// Number of sentence pairs
    #[arg(long)]
    pairs: Option<usize>,
    /// Words per language in the toy lexicon
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Corruption probability per attempt, split evenly over the four error kinds
    #[arg(long)]
    error_rate: Option<f64>,
    /// Whether attempts are made per sentence or per token
    #[arg(long, value_enum)]
    error_mode: Option<ErrorMode>,
    /// Comma list of split sizes; splits are written as PREFIX.train, PREFIX.dev, PREFIX.test
    #[arg(long)]
    splits: Option<String>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw source file, one sentence per line
    #[arg(long)]
    src: PathBuf,
    /// Raw target file, line-aligned with --src
    #[arg(long)]
    tgt: PathBuf,
    /// Output prefix; writes PREFIX.src, .tgt, .vocab and .align
    #[arg(long)]
    out: PathBuf,
    /// Minimum tokens per side
    #[arg(long)]
    min_len: Option<usize>,
    /// Maximum tokens per side
    #[arg(long)]
    max_len: Option<usize>,
    /// Maximum length ratio between the longer and shorter side
    #[arg(long)]
    max_ratio: Option<f64>,
    /// Skip truecasing of sentence-initial tokens
    #[arg(long)]
    no_truecase: bool,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Labelled training data prefix (PREFIX.src, .tgt, .labels.jsonl)
    #[arg(long)]
    data: PathBuf,
    /// Labelled dev data prefix used for early stopping
    #[arg(long)]
    dev: PathBuf,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum number of epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Pairs per optimiser step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma list of convolution widths, e.g. 1,2,3,4,5
    #[arg(long)]
    kernel_sizes: Option<String>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Maximum tokens the decoder emits for one flagged slot
    #[arg(long)]
    max_len: Option<usize>,
    /// Re-corrupt training pairs every epoch (needs PREFIX.ref and PREFIX.ref.align)
    #[arg(long)]
    resample: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Checkpoint path to write
    #[arg(long)]
    checkpoint: PathBuf,
    /// Epoch log (JSON lines); printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Tokenised source file
    #[arg(long)]
    src: PathBuf,
    /// Tokenised target file
    #[arg(long)]
    tgt: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labels file (JSON lines); printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CorrectFlags {
    /// Tokenised source file
    #[arg(long)]
    src: PathBuf,
    /// Tokenised target file
    #[arg(long)]
    tgt: PathBuf,
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Translation memory prefix (PREFIX.src and PREFIX.tgt)
    #[arg(long)]
    tm: Option<PathBuf>,
    /// Minimum memory similarity for a memory fill
    #[arg(long)]
    threshold: Option<f64>,
    /// Maximum tokens the decoder emits for one flagged slot
    #[arg(long)]
    max_len: Option<usize>,
    /// Output prefix; writes PREFIX.tgt and PREFIX.edits.jsonl
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorrectArgs {
    #[command(flatten)]
    flags: CorrectFlags,
    /// Predicted labels from `detect`
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug)]
struct ProofreadArgs {
    #[command(flatten)]
    flags: CorrectFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Hypothesis target file for BLEU
    #[arg(long, requires = "reference")]
    hyp: Option<PathBuf>,
    /// Reference target file for BLEU
    #[arg(long = "ref", id = "reference", requires = "hyp")]
    reference: Option<PathBuf>,
    /// Predicted labels file
    #[arg(long, requires = "gold")]
    pred: Option<PathBuf>,
    /// Gold labels file
    #[arg(long, requires = "pred")]
    gold: Option<PathBuf>,
    /// Add-one smoothing for n-gram orders above one
    #[arg(long)]
    smooth: bool,
    /// Report format
    #[arg(long, value_enum, default_value = "tsv")]
    format: FormatArg,
    /// Report path; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Hyperparameter to vary
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma list of values for the axis
    #[arg(long)]
    values: String,
    /// Report format
    #[arg(long, value_enum, default_value = "tsv")]
    format: FormatArg,
    /// Report path; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace wall-clock seconds with a fixed placeholder
    #[arg(long)]
    mask_timing: bool,
}

#[derive(Args, Debug)]
struct TmBuildArgs {
    /// Raw source file
    #[arg(long)]
    src: PathBuf,
    /// Raw target file
    #[arg(long)]
    tgt: PathBuf,
    /// Output prefix; writes PREFIX.src and PREFIX.tgt
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Values from a flat `key = value` file.
#[derive(Debug, Default)]
struct FileConfig(BTreeMap<String, String>);

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch_size",
    "kernel_sizes",
    "lr",
    "max_len",
    "threshold",
    "patience",
    "clip_norm",
    "optimizer",
    "lambda_align",
    "lambda_crf",
    "lambda_corr",
    "d_model",
    "n_layers",
    "n_heads",
    "d_ff",
    "filters_per_kernel",
    "emb_dim",
    "hidden",
    "beam",
    "resample",
    "pairs",
    "vocab_size",
    "error_rate",
    "error_mode",
    "min_len",
    "max_ratio",
];

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(usage(format!("config line {}: unknown key `{k}`", n + 1)));
            }
            map.insert(k, v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| v.parse().map_err(|_| usage(format!("config key `{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    /// Flag, then file, then default.
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| usage(format!("{what}: `{p}` is not a positive integer"))))
        .collect()
}

fn kernel_list(flag: Option<&str>, file: &FileConfig, default: Vec<usize>) -> Result<Vec<usize>> {
    match flag.map(str::to_string).or(file.0.get("kernel_sizes").cloned()) {
        Some(s) => parse_list(&s, "kernel sizes"),
        None => Ok(default),
    }
}

fn build_train_config(f: &TrainFlags, file: &FileConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        seed: file.pick(f.seed, "seed", d.seed)?,
        epochs: file.pick(f.epochs, "epochs", d.epochs)?,
        batch_size: file.pick(f.batch_size, "batch_size", d.batch_size)?,
        learning_rate: file.pick(f.lr, "lr", d.learning_rate)?,
        weights: LossWeights {
            align: file.pick(None, "lambda_align", d.weights.align)?,
            crf: file.pick(None, "lambda_crf", d.weights.crf)?,
            corr: file.pick(None, "lambda_corr", d.weights.corr)?,
        },
        patience: file.pick(None, "patience", d.patience)?,
        clip_norm: file.pick(None, "clip_norm", d.clip_norm)?,
        optimizer: match file.0.get("optimizer").map(String::as_str) {
            None | Some("adam") => OptimizerKind::Adam,
            Some("sgd") => OptimizerKind::Sgd,
            Some(o) => return Err(usage(format!("unknown optimizer `{o}`"))),
        },
        ..d
    };
    let enc = &mut cfg.model.encoder;
    enc.kernel_sizes = kernel_list(f.kernel_sizes.as_deref(), file, enc.kernel_sizes.clone())?;
    enc.d_model = file.pick(None, "d_model", enc.d_model)?;
    enc.n_layers = file.pick(None, "n_layers", enc.n_layers)?;
    enc.n_heads = file.pick(None, "n_heads", enc.n_heads)?;
    enc.d_ff = file.pick(None, "d_ff", enc.d_ff)?;
    enc.filters_per_kernel = file.pick(None, "filters_per_kernel", enc.filters_per_kernel)?;
    if enc.n_heads > 0 {
        enc.d_k = enc.d_model / enc.n_heads;
    }
    let dec = &mut cfg.model.decoder;
    dec.max_len = file.pick(f.max_len, "max_len", dec.max_len)?;
    dec.emb_dim = file.pick(None, "emb_dim", dec.emb_dim)?;
    dec.hidden = file.pick(None, "hidden", dec.hidden)?;
    dec.beam = file.pick(None, "beam", dec.beam)?;
    if f.resample || file.pick(None, "resample", false)? {
        let rate = file.pick(None, "error_rate", 0.30)?;
        cfg.resample = Some(error_spec(rate, error_mode(file)?, cfg.seed)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn error_mode(file: &FileConfig) -> Result<ErrorMode> {
    match file.0.get("error_mode").map(String::as_str) {
        None | Some("sentence") => Ok(ErrorMode::Sentence),
        Some("token") => Ok(ErrorMode::Token),
        Some(o) => Err(usage(format!("unknown error_mode `{o}`"))),
    }
}

fn error_spec(rate: f64, mode: ErrorMode, seed: u64) -> Result<ErrorSpec> {
    let spec = match mode {
        ErrorMode::Sentence => ErrorSpec::uniform(rate, 1, seed),
        ErrorMode::Token => ErrorSpec::per_token(rate, seed),
    };
    spec.validate()?;
    Ok(spec)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(io_data),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn io_data(e: anyhow::Error) -> anyhow::Error {
    match e.downcast::<std::io::Error>() {
        Ok(io) => Error::Io(io).into(),
        Err(e) => e,
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let seed = file.pick(a.seed, "seed", 0)?;
    let n = file.pick(a.pairs, "pairs", 2000)?;
    let vocab = file.pick(a.vocab_size, "vocab_size", 28)?;
    let rate = file.pick(a.error_rate, "error_rate", 0.30)?;
    let mode = match a.error_mode {
        Some(m) => m,
        None => error_mode(&file)?,
    };
    if n == 0 {
        return Err(usage("--pairs must be at least 1"));
    }
    let lex = Lexicon::new(vocab)?;
    let clean = generate_toy_parallel(n, vocab, &mut Rng::new(seed))?;
    let spec = error_spec(rate, mode, Rng::derive(seed, 1).next_u64())?;
    let corrupted = corrupt_corpus(&clean, &spec, lex.target_words())?;
    let splits: Vec<(String, usize)> = match &a.splits {
        None => vec![(String::new(), n)],
        Some(s) => {
            let sizes = parse_list(s, "splits")?;
            if sizes.iter().sum::<usize>() != n {
                return Err(usage(format!("split sizes {s} do not sum to --pairs {n}")));
            }
            let names = ["train", "dev", "test"];
            if sizes.len() > names.len() {
                return Err(usage("at most three splits (train, dev, test)"));
            }
            names.iter().zip(sizes).map(|(nm, k)| (nm.to_string(), k)).collect()
        }
    };
    let mut start = 0;
    for (name, k) in splits {
        let prefix = if name.is_empty() { a.out.clone() } else { with_ext(&a.out, &name) };
        let part = &corrupted[start..start + k];
        let pairs: Vec<SentencePair> = part.iter().map(|c| c.pair.clone()).collect();
        write_corpus(&with_ext(&prefix, "src"), &with_ext(&prefix, "tgt"), &pairs)?;
        let refs: Vec<String> = part.iter().map(|c| c.reference.join(" ")).collect();
        write_lines(&with_ext(&prefix, "ref"), &refs)?;
        let aligns: Vec<String> = clean[start..start + k]
            .iter()
            .map(|p| proofkit::corpus::io::format_alignment(p.alignment.as_deref().unwrap_or(&[])))
            .collect();
        write_lines(&with_ext(&prefix, "ref.align"), &aligns)?;
        let labels: Vec<LabelRecord> = part.iter().map(|c| c.label_record()).collect();
        write_jsonl(&with_ext(&prefix, "labels.jsonl"), &labels)?;
        eprintln!("wrote {} pairs to {}.*", k, prefix.display());
        start += k;
    }
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let d = FilterConfig::default();
    let cfg = FilterConfig {
        min_len: file.pick(a.min_len, "min_len", d.min_len)?,
        max_len: file.pick(a.max_len, "max_len", d.max_len)?,
        max_ratio: file.pick(a.max_ratio, "max_ratio", d.max_ratio)?,
    };
    let lines = proofkit::corpus::io::read_parallel_lines(&a.src, &a.tgt)?;
    let mut pairs: Vec<SentencePair> = lines
        .iter()
        .enumerate()
        .map(|(i, (s, t))| SentencePair::new((i + 1).to_string(), tokenize(s), tokenize(t)))
        .collect();
    if !a.no_truecase {
        let src_tc = Truecaser::train(pairs.iter().map(|p| p.source.as_slice()));
        let tgt_tc = Truecaser::train(pairs.iter().map(|p| p.target.as_slice()));
        for p in &mut pairs {
            p.source = src_tc.truecase(&p.source);
            p.target = tgt_tc.truecase(&p.target);
        }
    }
    let (kept, summary) = clean_and_filter(pairs, &cfg)?;
    let aligned = if kept.is_empty() { kept } else { lexical_align(&kept) };
    write_corpus(&with_ext(&a.out, "src"), &with_ext(&a.out, "tgt"), &aligned)?;
    let vocab = build_vocab(&aligned, 1, usize::MAX);
    fs::write(with_ext(&a.out, "vocab"), vocab.to_text())?;
    let aligns: Vec<String> = aligned
        .iter()
        .map(|p| proofkit::corpus::io::format_alignment(p.alignment.as_deref().unwrap_or(&[])))
        .collect();
    write_lines(&with_ext(&a.out, "align"), &aligns)?;
    println!("{}", serde_json::to_string_pretty(&json!({ "filter": summary, "vocab_size": vocab.len() }))?);
    Ok(())
}

/// Pairs from PREFIX.src/.tgt with gold labels, references and alignments.
fn load_labelled(prefix: &Path, with_clean: bool) -> Result<Vec<TrainPair>> {
    let pairs = read_corpus(&with_ext(prefix, "src"), &with_ext(prefix, "tgt"))?;
    let labels: Vec<LabelRecord> = read_jsonl(&with_ext(prefix, "labels.jsonl"))?;
    if labels.len() != pairs.len() {
        return Err(Error::Data(format!(
            "{}: {} sentence pairs but {} label records",
            prefix.display(),
            pairs.len(),
            labels.len()
        ))
        .into());
    }
    let clean = if with_clean {
        let refs = read_lines(&with_ext(prefix, "ref"))?;
        let aligns = read_lines(&with_ext(prefix, "ref.align"))?;
        if refs.len() != pairs.len() || aligns.len() != pairs.len() {
            return Err(Error::Data(format!("{}: .ref/.ref.align line counts differ from the corpus", prefix.display())).into());
        }
        Some((refs, aligns))
    } else {
        None
    };
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (mut p, rec)) in pairs.into_iter().zip(labels).enumerate() {
        let lattice = rec.lattice()?;
        if lattice.target_len() != p.target.len() {
            return Err(Error::Data(format!("record {}: labels cover {} tokens, target has {}", rec.id, lattice.target_len(), p.target.len())).into());
        }
        p.id = rec.id.clone();
        p.gold_tags = Some(lattice);
        p.alignment = rec.alignment.clone();
        let mut tp = TrainPair {
            pair: p,
            reference: rec.reference.clone(),
            clean: None,
        };
        if let Some((refs, aligns)) = &clean {
            let mut c = SentencePair::new(rec.id.clone(), tp.pair.source.clone(), tokenize(&refs[i]));
            c.alignment = Some(proofkit::corpus::io::parse_alignment(&aligns[i])?);
            tp = tp.with_clean(c);
        }
        out.push(tp);
    }
    Ok(out)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let file = FileConfig::load(a.flags.config.as_deref())?;
    let mut cfg = build_train_config(&a.flags, &file)?;
    cfg.checkpoint = Some(a.checkpoint.clone());
    let train_set = load_labelled(&a.flags.data, cfg.resample.is_some())?;
    let dev = load_labelled(&a.flags.dev, false)?;
    let outcome = train::train(&cfg, &train_set, &dev)?;
    let mut log = String::new();
    for l in &outcome.log {
        log.push_str(&serde_json::to_string(l)?);
        log.push('\n');
    }
    emit(a.out.as_deref(), &log)?;
    eprintln!(
        "best epoch {} of {}; checkpoint written to {}",
        outcome.best_epoch,
        outcome.log.len(),
        a.checkpoint.display()
    );
    Ok(())
}

fn load_model(path: &Path, max_len: Option<usize>, file: &FileConfig) -> Result<Model> {
    let mut model = Checkpoint::load(path)?.to_model()?;
    model.config.decoder.max_len = file.pick(max_len, "max_len", model.config.decoder.max_len)?;
    model.config.decoder.beam = file.pick(None, "beam", model.config.decoder.beam)?;
    model.config.decoder.validate()?;
    Ok(model)
}

fn detect_records(model: &Model, pairs: &[SentencePair]) -> Result<Vec<LabelRecord>> {
    pairs
        .iter()
        .map(|p| {
            let d = model.detect(&p.source, &p.target)?;
            Ok(LabelRecord {
                id: p.id.clone(),
                slots: d.tagging.lattice.labels().to_vec(),
                reference: None,
                alignment: None,
                scores: Some(d.tagging.scores),
            })
        })
        .collect()
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let model = load_model(&a.checkpoint, None, &FileConfig::default())?;
    let pairs = read_corpus(&a.src, &a.tgt)?;
    let records = detect_records(&model, &pairs)?;
    match &a.out {
        Some(p) => write_jsonl(p, &records)?,
        None => {
            let mut out = std::io::stdout().lock();
            for r in &records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn correct_all(f: &CorrectFlags, pairs: &[SentencePair], lattices: &[TagLattice]) -> Result<Vec<Correction>> {
    let file = FileConfig::load(f.config.as_deref())?;
    let model = load_model(&f.checkpoint, f.max_len, &file)?;
    let threshold = file.pick(f.threshold, "threshold", 0.8)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage(format!("--threshold must lie in [0, 1], got {threshold}")));
    }
    let tm = f
        .tm
        .as_ref()
        .map(|p| TranslationMemory::load(&with_ext(p, "src"), &with_ext(p, "tgt")))
        .transpose()?;
    pairs
        .iter()
        .zip(lattices)
        .map(|(p, lat)| {
            let mut det = model.detect(&p.source, &p.target)?;
            det.tagging.lattice = lat.clone();
            Ok(model.correct(&p.id, &p.source, &p.target, &det, tm.as_ref(), threshold)?)
        })
        .collect()
}

fn write_corrections(out: &Path, corrections: &[Correction]) -> Result<()> {
    let lines: Vec<String> = corrections.iter().map(|c| c.corrected.join(" ")).collect();
    write_lines(&with_ext(out, "tgt"), &lines)?;
    write_jsonl(&with_ext(out, "edits.jsonl"), corrections)?;
    Ok(())
}

fn correct_cmd(a: CorrectArgs) -> Result<()> {
    let pairs = read_corpus(&a.flags.src, &a.flags.tgt)?;
    let records: Vec<LabelRecord> = read_jsonl(&a.labels)?;
    if records.len() != pairs.len() {
        return Err(Error::Data(format!("{} label records for {} sentence pairs", records.len(), pairs.len())).into());
    }
    let lattices = records.iter().map(LabelRecord::lattice).collect::<proofkit::Result<Vec<_>>>()?;
    let corrections = correct_all(&a.flags, &pairs, &lattices)?;
    write_corrections(&a.flags.out, &corrections)
}

fn proofread_cmd(a: ProofreadArgs) -> Result<()> {
    let start = Instant::now();
    let f = &a.flags;
    let pairs = read_corpus(&f.src, &f.tgt)?;
    let model = load_model(&f.checkpoint, None, &FileConfig::default())?;
    let records = detect_records(&model, &pairs)?;
    write_jsonl(&with_ext(&f.out, "labels.jsonl"), &records)?;
    let lattices = records.iter().map(LabelRecord::lattice).collect::<proofkit::Result<Vec<_>>>()?;
    let corrections = correct_all(f, &pairs, &lattices)?;
    write_corrections(&f.out, &corrections)?;
    let mut tags: BTreeMap<&str, usize> = ErrorTag::ALL[1..].iter().map(|t| (t.name(), 0)).collect();
    for l in &lattices {
        for t in l.labels().iter().filter(|t| t.is_error()) {
            *tags.entry(t.name()).or_default() += 1;
        }
    }
    let changed = corrections.iter().zip(&pairs).filter(|(c, p)| c.corrected != p.target).count();
    let summary = json!({
        "sentences": pairs.len(),
        "changed": changed,
        "unchanged": pairs.len() - changed,
        "truncated": corrections.iter().filter(|c| c.truncated).count(),
        "tags": tags,
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
    });
    fs::write(with_ext(&f.out, "summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

fn bleu_table(r: &BleuResult, format: Format) -> Result<String> {
    let header = ["BLEU", "BP", "P1", "P2", "P3", "P4", "hyp_length", "ref_length"];
    let pct = |v: f64| format!("{:.2}", v * 100.0);
    let mut vals = vec![pct(r.bleu), format!("{:.6}", r.brevity_penalty)];
    for n in 0..4 {
        vals.push(r.precisions.get(n).map_or("-".into(), |p| pct(*p)));
    }
    vals.push(r.hyp_length.to_string());
    vals.push(r.ref_length.to_string());
    Ok(match format {
        Format::Tsv => format!("{}\n{}\n", header.join("\t"), vals.join("\t")),
        Format::Json => {
            let obj: serde_json::Map<String, serde_json::Value> = header
                .iter()
                .zip(&vals)
                .map(|(h, v)| (h.to_string(), json!(v)))
                .chain([("zero_order".to_string(), json!(r.zero_order))])
                .collect();
            serde_json::to_string_pretty(&obj)? + "\n"
        }
    })
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let format: Format = a.format.into();
    let mut parts = Vec::new();
    if a.hyp.is_none() && a.pred.is_none() {
        return Err(usage("give --hyp/--ref for BLEU and/or --pred/--gold for detection"));
    }
    if let (Some(h), Some(r)) = (&a.hyp, &a.reference) {
        let lines = proofkit::corpus::io::read_parallel_lines(h, r)?;
        let hyps: Vec<Vec<String>> = lines.iter().map(|(h, _)| h.split_whitespace().map(String::from).collect()).collect();
        let refs: Vec<Vec<String>> = lines.iter().map(|(_, r)| r.split_whitespace().map(String::from).collect()).collect();
        let cfg = BleuConfig {
            smooth: a.smooth,
            ..BleuConfig::default()
        };
        let res = if hyps.len() == 1 {
            bleu_score(&hyps[0], &[&refs[0][..]], cfg)
        } else {
            corpus_bleu(&hyps, &refs, cfg)
        };
        parts.push(bleu_table(&res, format)?);
    }
    if let (Some(p), Some(g)) = (&a.pred, &a.gold) {
        let pred: Vec<LabelRecord> = read_jsonl(p)?;
        let gold: Vec<LabelRecord> = read_jsonl(g)?;
        if pred.len() != gold.len() {
            return Err(Error::Data(format!("{} predicted records but {} gold records", pred.len(), gold.len())).into());
        }
        let mut det = DetectionMetrics::default();
        let mut reg = RegressionAccumulator::default();
        for (pr, gr) in pred.iter().zip(&gold) {
            let (pl, gl) = (pr.lattice()?, gr.lattice()?);
            if pl.len() != gl.len() {
                return Err(Error::Data(format!("record {}: {} predicted slots vs {} gold", pr.id, pl.len(), gl.len())).into());
            }
            det.add(&pl, &gl);
            for (s, (pt, gt)) in pl.labels().iter().zip(gl.labels()).enumerate() {
                let probs = match &pr.scores {
                    Some(sc) => sc.get(s).cloned().ok_or_else(|| Error::Data(format!("record {}: missing scores for slot {s}", pr.id)))?,
                    None => (0..proofkit::lattice::NUM_TAGS).map(|i| f64::from(u8::from(i == pt.index()))).collect(),
                };
                reg.add(&probs, *gt);
            }
        }
        let row = ReportRow {
            label: "eval".into(),
            metrics: MetricReport::new(&det, reg.finish(), start.elapsed().as_secs_f64()),
        };
        parts.push(render_report("run", &[row], format));
    }
    emit(a.out.as_deref(), &parts.join("\n"))
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let file = FileConfig::load(a.flags.config.as_deref())?;
    let cfg = build_train_config(&a.flags, &file)?;
    let values = parse_list(&a.values, "--values")?;
    let train_set = load_labelled(&a.flags.data, cfg.resample.is_some())?;
    let dev = load_labelled(&a.flags.dev, false)?;
    let axis: SweepAxis = a.axis.into();
    let rows = train::sweep(axis, &values, &cfg, &train_set, &dev)?;
    let mut text = render_report(axis.column(), &rows, a.format.into());
    if a.mask_timing {
        text = mask_timing(&text);
    }
    emit(a.out.as_deref(), &text)
}

fn tm_build(a: TmBuildArgs) -> Result<()> {
    let lines = proofkit::corpus::io::read_parallel_lines(&a.src, &a.tgt)?;
    let mut tm = TranslationMemory::new();
    let mut seen = std::collections::BTreeSet::new();
    for (s, t) in &lines {
        let (s, t) = (tokenize(s), tokenize(t));
        if s.is_empty() || t.is_empty() || !seen.insert(s.clone()) {
            continue;
        }
        tm.add(s, t);
    }
    let pairs: Vec<SentencePair> = tm
        .entries()
        .iter()
        .enumerate()
        .map(|(i, (s, t))| SentencePair::new(i.to_string(), s.clone(), t.clone()))
        .collect();
    write_corpus(&with_ext(&a.out, "src"), &with_ext(&a.out, "tgt"), &pairs)?;
    eprintln!("{} memory entries from {} lines", tm.len(), lines.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Correct(a) => correct_cmd(a),
        Command::Proofread(a) => proofread_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::TmBuild(a) => tm_build(a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if let Some(pe) = e.downcast_ref::<Error>() {
        return match pe.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Runtime => 3,
        };
    }
    if e.downcast_ref::<std::io::Error>().is_some() || e.downcast_ref::<serde_json::Error>().is_some() {
        return 2;
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

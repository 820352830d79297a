//! `codemix`: batch commands for the code-mixed sentiment pipeline.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input errors,
//! 3 when training or inference produces a non-finite value.

mod settings;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use codemix::corpus::{generate_synthetic, read_conll_file, split, write_conll, write_conll_file};
use codemix::metrics::evaluate;
use codemix::model::predict_batch;
use codemix::trainer::{finetune_multitask, pretrain_mlm};
use codemix::vocab::{build_vocabulary, encode};
use codemix::{
    EmojiTable, Error, FilterPolicy, LangTag, ModelConfig, ModelWeights, ParamGroup, Preprocessor, Sentiment,
    SyntheticSpec, TrainConfig, TrainOutcome, TweetRecord, Vocabulary,
};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "codemix", version, about = "Code-mixed tweet sentiment with a miniature BERT")]
struct Cli {
    /// Flat `key = value` file; command-line flags win over it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed; required by commands that sample.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Substitute emoji and filter characters token by token.
    Preprocess(PreprocessArgs),
    /// Build a TF-IDF pruned vocabulary from a dataset.
    BuildVocab(BuildVocabArgs),
    /// Masked-token pretraining.
    Pretrain(PretrainArgs),
    /// Joint sentiment and language-id fine-tuning.
    Finetune(FinetuneArgs),
    /// Score one or more checkpoints on a labeled dataset.
    Eval(EvalArgs),
    /// Write predicted sentiment and language tags in dataset format.
    Predict(PredictArgs),
    /// Generate a seeded synthetic corpus.
    GenSynthetic(GenArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Dataset in tagged-token format.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Emoji table to use instead of the built-in one.
    #[arg(long, value_name = "PATH")]
    emoji_table: Option<PathBuf>,
    /// Treat the input as raw text, one tweet per line.
    #[arg(long)]
    plain: bool,
}

#[derive(Args, Debug)]
struct BuildVocabArgs {
    /// Dataset in tagged-token format.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Vocabulary size including the five special tokens [default: 1024].
    #[arg(long)]
    max_size: Option<usize>,
    /// Tokens whose best TF-IDF score is below this are dropped [default: 0].
    #[arg(long)]
    tfidf_floor: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Embedding rows; defaults to the vocabulary size.
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Global gradient norm limit; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Per-epoch training log.
    #[arg(long, value_name = "PATH")]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Training dataset.
    #[arg(long, value_name = "PATH")]
    train: Option<PathBuf>,
    /// Vocabulary file.
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    /// Share of content positions selected for prediction [default: 0.15].
    #[arg(long)]
    mask_prob: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainArgs,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    /// Training dataset.
    #[arg(long, value_name = "PATH")]
    train: Option<PathBuf>,
    /// Vocabulary file.
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    /// Starting weights; a fresh model is initialized when absent.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Labeled dev set scored after every epoch.
    #[arg(long, value_name = "PATH")]
    dev: Option<PathBuf>,
    #[arg(long)]
    sentiment_weight: Option<f64>,
    #[arg(long)]
    langid_weight: Option<f64>,
    /// Keep embeddings and encoder layers fixed and train only the heads.
    #[arg(long)]
    freeze_encoder: bool,
    /// Comma-separated parameter groups to freeze.
    #[arg(long, value_delimiter = ',')]
    freeze: Option<Vec<String>>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    training: TrainArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Labeled dataset to score.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Vocabulary file.
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    /// Repeat to compare several checkpoints on the same data.
    #[arg(long, value_name = "PATH")]
    checkpoint: Vec<PathBuf>,
    /// Also write the structured report as JSON.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Dataset in tagged-token format.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Vocabulary file.
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Number of records [default: 1000].
    #[arg(long)]
    records: Option<usize>,
    #[arg(long)]
    code_mix_ratio: Option<f64>,
    #[arg(long)]
    univ_rate: Option<f64>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Train,dev,test fractions; `--out` then names a directory that
    /// receives train.conll, dev.conll and test.conll.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
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

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::NonFinite(_))));
    if numeric {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = Settings::load(cli.config.as_deref())?;
    let seed = cfg.pick("seed", cli.seed)?;
    let out: Option<PathBuf> = cfg.pick("out", cli.out)?;
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, out, cfg),
        Command::BuildVocab(a) => cmd_build_vocab(a, out, cfg),
        Command::Pretrain(a) => cmd_pretrain(a, seed, out, cfg),
        Command::Finetune(a) => cmd_finetune(a, seed, out, cfg),
        Command::Eval(a) => cmd_eval(a, out, cfg),
        Command::Predict(a) => cmd_predict(a, out, cfg),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a, seed, out, cfg),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("--{flag} is required"))
}

fn read_records(path: &Path) -> Result<Vec<TweetRecord>> {
    read_conll_file(path).with_context(|| format!("reading {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn load_weights(path: &Path) -> Result<ModelWeights> {
    ModelWeights::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// Writes to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn write_log(path: Option<&Path>, outcome: &TrainOutcome) -> Result<()> {
    if let Some(path) = path {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening log {}", path.display()))?;
        file.write_all(outcome.log_lines().as_bytes())?;
    }
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let input = required(cfg.pick("input", a.input)?, "input")?;
    let table_path: Option<PathBuf> = cfg.pick("emoji_table", a.emoji_table)?;
    let plain = cfg.switch("plain", a.plain)?;
    cfg.finish()?;
    let loaded;
    let table = match &table_path {
        Some(p) => {
            loaded = EmojiTable::load(p).with_context(|| format!("reading emoji table {}", p.display()))?;
            &loaded
        }
        None => EmojiTable::builtin(),
    };
    let pre = Preprocessor::new(table, FilterPolicy::default())?;
    if plain {
        let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
        let out_text: String = text.lines().map(|l| pre.apply(l) + "\n").collect();
        return emit(out.as_deref(), out_text.as_bytes());
    }
    let records = read_records(&input)?;
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for (token, &tag) in r.tokens.iter().zip(&r.tags) {
            for word in pre.apply_token(token) {
                tokens.push(word);
                tags.push(tag);
            }
        }
        if tokens.is_empty() {
            warn!("record {} is empty after preprocessing; dropped", r.id);
            continue;
        }
        kept.push(TweetRecord::new(r.id, tokens, tags, r.sentiment)?);
    }
    let mut buf = Vec::new();
    write_conll(&kept, &mut buf)?;
    emit(out.as_deref(), &buf)
}

fn cmd_build_vocab(a: BuildVocabArgs, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let input = required(cfg.pick("input", a.input)?, "input")?;
    let max_size = cfg.pick_or("max_size", a.max_size, 1024)?;
    let floor = cfg.pick_or("tfidf_floor", a.tfidf_floor, 0.0)?;
    cfg.finish()?;
    let records = read_records(&input)?;
    let vocab = build_vocabulary(&records, max_size, floor)?;
    info!("vocabulary of {} entries", vocab.len());
    let mut buf = Vec::new();
    vocab.write(&mut buf)?;
    emit(out.as_deref(), &buf)
}

fn model_config(m: &ModelArgs, vocab: &Vocabulary, seed: u64, mask_prob: f64, cfg: &mut Settings) -> Result<ModelConfig> {
    let vocab_size = cfg.pick_or("vocab_size", m.vocab_size, vocab.len())?;
    if vocab_size < vocab.len() {
        bail!("vocab_size {vocab_size} is smaller than the vocabulary ({})", vocab.len());
    }
    let mut c = ModelConfig::desk_scale(vocab_size);
    c.max_len = cfg.pick_or("max_len", m.max_len, c.max_len)?;
    c.d_model = cfg.pick_or("d_model", m.d_model, c.d_model)?;
    c.num_layers = cfg.pick_or("num_layers", m.num_layers, c.num_layers)?;
    c.num_heads = cfg.pick_or("num_heads", m.num_heads, c.num_heads)?;
    c.d_ff = cfg.pick_or("d_ff", m.d_ff, c.d_ff)?;
    c.dropout_rate = cfg.pick_or("dropout", m.dropout, c.dropout_rate)?;
    c.mask_prob = mask_prob;
    c.seed = seed;
    c.validate()?;
    Ok(c)
}

fn model_flags_given(m: &ModelArgs, cfg: &Settings) -> Option<&'static str> {
    let given = [
        ("vocab_size", m.vocab_size.is_some()),
        ("max_len", m.max_len.is_some()),
        ("d_model", m.d_model.is_some()),
        ("num_layers", m.num_layers.is_some()),
        ("num_heads", m.num_heads.is_some()),
        ("d_ff", m.d_ff.is_some()),
        ("dropout", m.dropout.is_some()),
    ];
    given
        .into_iter()
        .find(|&(key, flag)| flag || cfg.contains(key))
        .map(|(key, _)| key)
}

fn train_config(t: &TrainArgs, seed: u64, cfg: &mut Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let clip = cfg.pick_or("clip_norm", t.clip_norm, d.clip_norm.unwrap_or(0.0))?;
    Ok(TrainConfig {
        epochs: cfg.pick_or("epochs", t.epochs, d.epochs)?,
        batch_size: cfg.pick_or("batch_size", t.batch_size, d.batch_size)?,
        lr: cfg.pick_or("lr", t.lr, d.lr)?,
        max_steps: cfg.pick("max_steps", t.max_steps)?,
        clip_norm: (clip > 0.0).then_some(clip),
        seed,
        ..d
    })
}

fn cmd_pretrain(a: PretrainArgs, seed: Option<u64>, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let seed = required(seed, "seed")?;
    let train = required(cfg.pick("train", a.train)?, "train")?;
    let vocab_path = required(cfg.pick("vocab", a.vocab)?, "vocab")?;
    let out = required(out, "out")?;
    let log: Option<PathBuf> = cfg.pick("log", a.training.log.clone())?;
    let vocab = load_vocab(&vocab_path)?;
    let mask_prob = cfg.pick_or("mask_prob", a.mask_prob, TrainConfig::default().mask_prob)?;
    let model_cfg = model_config(&a.model, &vocab, seed, mask_prob, &mut cfg)?;
    let mut train_cfg = train_config(&a.training, seed, &mut cfg)?;
    train_cfg.mask_prob = mask_prob;
    cfg.finish()?;
    train_cfg.validate()?;

    let corpus = read_records(&train)?;
    let weights = ModelWeights::init(model_cfg)?;
    let outcome = pretrain_mlm(weights, &corpus, &vocab, &train_cfg)?;
    info!("{} steps, {} clipped", outcome.steps(), outcome.clipped_steps);
    write_log(log.as_deref(), &outcome)?;
    outcome.weights.save(&out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs, seed: Option<u64>, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let seed = required(seed, "seed")?;
    let train = required(cfg.pick("train", a.train)?, "train")?;
    let vocab_path = required(cfg.pick("vocab", a.vocab)?, "vocab")?;
    let out = required(out, "out")?;
    let checkpoint: Option<PathBuf> = cfg.pick("checkpoint", a.checkpoint)?;
    let dev_path: Option<PathBuf> = cfg.pick("dev", a.dev)?;
    let log: Option<PathBuf> = cfg.pick("log", a.training.log.clone())?;
    let vocab = load_vocab(&vocab_path)?;

    let weights = match &checkpoint {
        Some(path) => {
            if let Some(key) = model_flags_given(&a.model, &cfg) {
                bail!("{key} cannot be changed when starting from a checkpoint");
            }
            let w = load_weights(path)?;
            if vocab.len() > w.config().vocab_size {
                bail!(
                    "vocabulary of {} does not fit checkpoint vocab_size {}",
                    vocab.len(),
                    w.config().vocab_size
                );
            }
            w
        }
        None => {
            let mask_prob = TrainConfig::default().mask_prob;
            ModelWeights::init(model_config(&a.model, &vocab, seed, mask_prob, &mut cfg)?)?
        }
    };

    let mut train_cfg = train_config(&a.training, seed, &mut cfg)?;
    train_cfg.sentiment_weight = cfg.pick_or("sentiment_weight", a.sentiment_weight, train_cfg.sentiment_weight)?;
    train_cfg.langid_weight = cfg.pick_or("langid_weight", a.langid_weight, train_cfg.langid_weight)?;
    let mut frozen: Vec<ParamGroup> = Vec::new();
    if cfg.switch("freeze_encoder", a.freeze_encoder)? {
        frozen.extend([ParamGroup::Embeddings, ParamGroup::EncoderLayers]);
    }
    let named: Option<String> = cfg.pick("freeze", a.freeze.map(|v| v.join(",")))?;
    for name in named.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        frozen.push(name.parse()?);
    }
    frozen.sort();
    frozen.dedup();
    train_cfg.freeze_groups = frozen;
    cfg.finish()?;
    train_cfg.validate()?;

    let labeled = read_records(&train)?;
    let dev = dev_path.as_deref().map(read_records).transpose()?;
    let outcome = finetune_multitask(weights, &labeled, &vocab, &train_cfg, dev.as_deref())?;
    info!("{} steps, {} clipped", outcome.steps(), outcome.clipped_steps);
    write_log(log.as_deref(), &outcome)?;
    outcome.weights.save(&out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_eval(a: EvalArgs, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let data = required(cfg.pick("data", a.data)?, "data")?;
    let vocab_path = required(cfg.pick("vocab", a.vocab)?, "vocab")?;
    let from_file: Option<PathBuf> = cfg.pick("checkpoint", None)?;
    let json_path: Option<PathBuf> = cfg.pick("json", a.json)?;
    cfg.finish()?;
    let checkpoints = if a.checkpoint.is_empty() {
        from_file.into_iter().collect()
    } else {
        a.checkpoint
    };
    if checkpoints.is_empty() {
        bail!("--checkpoint is required");
    }
    let vocab = load_vocab(&vocab_path)?;
    let dataset = read_records(&data)?;

    let mut reports = Vec::with_capacity(checkpoints.len());
    for path in &checkpoints {
        let weights = load_weights(path)?;
        reports.push((display_name(path), evaluate(&weights, &dataset, &vocab)?));
    }
    let (text, json) = if let [(_, report)] = &reports[..] {
        (report.to_kv(), report.to_json())
    } else {
        let mut text = String::new();
        for (i, (name, report)) in reports.iter().enumerate() {
            if i > 0 {
                text.push('\n');
            }
            text.push_str(&format!("checkpoint {name}\n{}", report.to_kv()));
            eprintln!("{name} macro_f1 {:.6}", report.macro_f1);
        }
        let entries: Vec<_> = reports
            .iter()
            .map(|(name, r)| serde_json::json!({ "checkpoint": name, "report": r }))
            .collect();
        (text, serde_json::to_string_pretty(&entries)?)
    };
    if let Some(path) = json_path {
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    emit(out.as_deref(), text.as_bytes())
}

fn cmd_predict(a: PredictArgs, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let input = required(cfg.pick("input", a.input)?, "input")?;
    let vocab_path = required(cfg.pick("vocab", a.vocab)?, "vocab")?;
    let checkpoint = required(cfg.pick("checkpoint", a.checkpoint)?, "checkpoint")?;
    cfg.finish()?;
    let vocab = load_vocab(&vocab_path)?;
    let weights = load_weights(&checkpoint)?;
    let records = read_records(&input)?;
    let max_len = weights.config().max_len;
    let inputs: Vec<_> = records
        .iter()
        .map(|r| {
            let e = encode(&r.tokens, &vocab, max_len);
            (e.ids, e.attention_mask)
        })
        .collect();
    let preds = predict_batch(&weights, &inputs)?;
    let mut tagged = Vec::with_capacity(records.len());
    for (r, p) in records.into_iter().zip(preds) {
        let covered = p.langids.len().saturating_sub(2);
        if covered < r.tokens.len() {
            warn!(
                "record {}: {} tokens beyond max_len tagged univ",
                r.id,
                r.tokens.len() - covered
            );
        }
        let tags = (0..r.tokens.len())
            .map(|i| match p.langids.get(i + 1).filter(|_| i < covered) {
                Some(&id) => LangTag::from_id(id).unwrap_or(LangTag::Univ),
                None => LangTag::Univ,
            })
            .collect();
        tagged.push(TweetRecord::new(r.id, r.tokens, tags, Sentiment::from_id(p.sentiment))?);
    }
    let mut buf = Vec::new();
    write_conll(&tagged, &mut buf)?;
    emit(out.as_deref(), &buf)
}

fn cmd_gen_synthetic(a: GenArgs, seed: Option<u64>, out: Option<PathBuf>, mut cfg: Settings) -> Result<()> {
    let seed = required(seed, "seed")?;
    let records = cfg.pick_or("records", a.records, 1000)?;
    let mut spec = SyntheticSpec::with_default_lexicons(seed, records);
    spec.code_mix_ratio = cfg.pick_or("code_mix_ratio", a.code_mix_ratio, spec.code_mix_ratio)?;
    spec.univ_rate = cfg.pick_or("univ_rate", a.univ_rate, spec.univ_rate)?;
    spec.min_len = cfg.pick_or("min_tokens", a.min_tokens, spec.min_len)?;
    spec.max_len = cfg.pick_or("max_tokens", a.max_tokens, spec.max_len)?;
    let fractions: Option<String> = cfg.pick(
        "split",
        a.split.map(|v| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
    )?;
    cfg.finish()?;
    let corpus = generate_synthetic(&spec)?;

    let Some(fractions) = fractions else {
        let mut buf = Vec::new();
        write_conll(&corpus, &mut buf)?;
        return emit(out.as_deref(), &buf);
    };
    let parts = fractions
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .context("split fractions must be numbers")?;
    let Ok(parts) = <[f64; 3]>::try_from(parts) else {
        bail!("split needs exactly three fractions");
    };
    let dir = required(out, "out")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let (train, dev, test) = split(&corpus, parts, seed)?;
    for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let path = dir.join(format!("{name}.conll"));
        write_conll_file(part, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    info!("wrote {} / {} / {} records", train.len(), dev.len(), test.len());
    Ok(())
}

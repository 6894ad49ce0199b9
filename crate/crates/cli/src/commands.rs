use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

use cner_core::char_lm::{self, train_char_lm};
use cner_core::container::Checkpoint;
use cner_core::corpus::{
    bio_normalize, corpus_stats, filter_case_reports, parse_bio_file, render_stats_kv, render_stats_tables,
    split_documents, tokenize, tokenize_bytes, DocumentMode, LabeledSentence,
};
use cner_core::embeddings::parse_stack_spec;
use cner_core::eval::{micro_f1, render_report, render_report_kv};
use cner_core::tagger::train_tagger;
use cner_core::word_lm::{self, parse_filters, train_word_lm};
use cner_core::{
    CharLmConfig, EmbedderStack, Error, LayerMixing, SeededRng, Sentence, TagSet, TaggerModel, TaggerTrainConfig,
    TrainLog, WordLmConfig,
};

use crate::config::{key, required, Key, RunConfig, UsageError};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(UsageError),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "{e}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(inner) if is_kind_mismatch(inner) => Failure::Usage(UsageError(format!("{e:#}"))),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn is_kind_mismatch(e: &Error) -> bool {
    match e {
        Error::KindMismatch { .. } => true,
        Error::Member { source, .. } => is_kind_mismatch(source),
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    PretrainChar,
    PretrainWord,
    Train,
    Predict,
    Eval,
    Embed,
    Stats,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::PretrainChar => "pretrain-char",
            Command::PretrainWord => "pretrain-word",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::Embed => "embed",
            Command::Stats => "stats",
        }
    }

    pub fn schema(self) -> Vec<Key> {
        let seed = key("seed", 1, "random seed");
        match self {
            Command::PretrainChar => {
                let d = CharLmConfig::default();
                let mut s = corpus_keys();
                s.extend([
                    seed,
                    key("hidden_size", d.hidden_size, "LSTM units per direction"),
                    key("sequence_length", d.sequence_length, "characters per truncated window"),
                    key("batch_size", d.batch_size, "parallel stream rows"),
                    key("char_embed_dim", d.char_embed_dim, "character embedding width"),
                    key("lr", d.lr, "initial learning rate"),
                    key("anneal_factor", d.anneal_factor, "learning-rate divisor on plateau"),
                    key("patience", d.patience, "epochs without improvement before annealing"),
                    key("clip_norm", d.clip_norm, "global gradient-norm clip"),
                    key("max_epochs", d.max_epochs, "epoch limit"),
                    key("min_count", d.min_count, "minimum character frequency"),
                ]);
                s
            }
            Command::PretrainWord => {
                let d = WordLmConfig::default();
                let filters: Vec<String> = d.cnn_filters.iter().map(|(w, n)| format!("{w}x{n}")).collect();
                let mut s = corpus_keys();
                s.extend([
                    seed,
                    key("hidden_size", d.hidden_size, "LSTM units per layer and direction"),
                    key("projection_dim", d.projection_dim, "LSTM projection width"),
                    key("layers", d.layers, "recurrent layers per direction"),
                    key("max_word_chars", d.max_word_chars, "characters kept per token"),
                    key("char_embed_dim", d.char_embed_dim, "character embedding width"),
                    key("cnn_filters", filters.join(","), "convolution banks as WIDTHxCOUNT list"),
                    key("vocab_size", d.vocab_size, "output vocabulary size including markers"),
                    key("softmax", d.softmax, "output layer policy"),
                    key("lr", d.lr, "initial learning rate"),
                    key("anneal_factor", d.anneal_factor, "learning-rate divisor on plateau"),
                    key("patience", d.patience, "epochs without improvement before annealing"),
                    key("clip_norm", d.clip_norm, "global gradient-norm clip"),
                    key("batch_size", d.batch_size, "sentences per update"),
                    key("max_epochs", d.max_epochs, "epoch limit"),
                    key("min_count", d.min_count, "minimum word frequency"),
                ]);
                s
            }
            Command::Train => {
                let d = TaggerTrainConfig::default();
                vec![
                    required("train", "training BIO file"),
                    key("dev", "", "development BIO file"),
                    required("stack", "embedder stack kind:path[:option];..."),
                    required("output", "tagger checkpoint to write"),
                    key("log", "", "training log (default: OUTPUT.log)"),
                    key("seed", d.seed, "random seed"),
                    key("hidden_size", d.hidden_size, "encoder units per direction"),
                    key("dropout", d.dropout, "drop probability on embeddings"),
                    key("lr", d.lr, "initial learning rate"),
                    key("anneal_factor", d.anneal_factor, "learning-rate divisor on plateau"),
                    key("batch_size", d.batch_size, "sentences per update"),
                    key("max_epochs", d.max_epochs, "epoch limit"),
                    key("patience", d.patience, "epochs without improvement before annealing"),
                    key("clip_norm", d.clip_norm, "global gradient-norm clip"),
                    key("eval_train", d.eval_train, "log training-set F1 every epoch"),
                ]
            }
            Command::Predict => vec![
                required("model", "tagger checkpoint"),
                required("input", "BIO or plain-text file"),
                key("input_format", "bio", "bio or text"),
                key("format", "columns", "columns or spans"),
                key("stack", "", "override the stack recorded in the model"),
                key("output", "-", "output file, - for stdout"),
                seed,
            ],
            Command::Eval => vec![
                required("gold", "gold BIO file"),
                key("pred", "", "prediction file (tag in the last column)"),
                key("model", "", "tagger checkpoint to predict with instead"),
                key("stack", "", "override the stack recorded in the model"),
                key("format", "table", "table or kv"),
                seed,
            ],
            Command::Embed => vec![
                required("input", "plain-text file"),
                key("model", "", "char_lm or word_lm checkpoint"),
                key("stack", "", "embedder stack instead of a single model"),
                key("mixing", "mean", "word_lm layer mixing: mean, top or weights=a,b,..."),
                key("output", "-", "output file, - for stdout"),
                seed,
            ],
            Command::Stats => vec![
                key("train", "", "training BIO file"),
                key("dev", "", "development BIO file"),
                key("test", "", "test BIO file"),
                key("name", "dataset", "dataset name in the report"),
                key("format", "tables", "tables or kv"),
                seed,
            ],
        }
    }
}

fn corpus_keys() -> Vec<Key> {
    vec![
        required("train", "plain-text training corpus"),
        key("dev", "", "plain-text development corpus"),
        required("output", "checkpoint to write"),
        key("log", "", "training log (default: OUTPUT.log)"),
        key("documents", "lines", "lines (one document per line) or file"),
        key("keywords", "", "comma-separated document filter; empty keeps all"),
    ]
}

pub fn run(cmd: Command, rc: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    stderr.write_all(rc.render().as_bytes())?;
    match cmd {
        Command::PretrainChar => pretrain_char(rc, stderr),
        Command::PretrainWord => pretrain_word(rc, stderr),
        Command::Train => train(rc, stderr),
        Command::Predict => predict(rc, stdout),
        Command::Eval => eval(rc, stdout),
        Command::Embed => embed(rc, stdout),
        Command::Stats => stats(rc, stdout),
    }
}

fn read_corpus(rc: &RunConfig, path: &Path) -> Result<Vec<Sentence>, Failure> {
    let mode = match rc.raw("documents") {
        "lines" => DocumentMode::Lines,
        "file" => DocumentMode::File,
        other => return Err(UsageError(format!("documents must be lines or file, got {other:?}")).into()),
    };
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        offset: e.utf8_error().valid_up_to(),
    })?;
    let docs = split_documents(&path.display().to_string(), &text, mode);
    let keywords: Vec<&str> = rc.raw("keywords").split(',').map(str::trim).filter(|k| !k.is_empty()).collect();
    let docs: Vec<(String, String)> = if keywords.is_empty() {
        docs
    } else {
        filter_case_reports(docs, &keywords).collect()
    };
    Ok(docs.iter().flat_map(|(_, t)| tokenize(t)).collect())
}

fn read_bio(path: &Path) -> Result<(Vec<LabeledSentence>, usize), Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_bio_file(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok((parsed.sentences, parsed.repaired))
}

fn open_output<'a>(spec: &str, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, Failure> {
    if spec == "-" {
        Ok(Box::new(stdout))
    } else {
        let f = fs::File::create(spec).with_context(|| format!("creating {spec}"))?;
        Ok(Box::new(std::io::BufWriter::new(f)))
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes the resolved config, extra notes and epoch records to the log
/// file, and a digest line to stderr.
fn finish_training(
    rc: &RunConfig,
    output: &Path,
    notes: &[String],
    log: &TrainLog,
    stderr: &mut dyn Write,
) -> Result<(), Failure> {
    let log_path = rc
        .optional("log")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", output.display())));
    let digest = sha256_file(output)?;
    let mut text = rc.render();
    for n in notes {
        text.push_str(&format!("# {n}\n"));
    }
    text.push_str(&log.render());
    text.push_str(&format!("# checkpoint_sha256 = {digest}\n"));
    fs::write(&log_path, &text).with_context(|| format!("writing {}", log_path.display()))?;
    stderr.write_all(log.render().as_bytes())?;
    writeln!(stderr, "wrote {} sha256={digest}", output.display())?;
    Ok(())
}

fn pretrain_char(rc: &RunConfig, stderr: &mut dyn Write) -> Result<(), Failure> {
    let train_path = rc.input_path("train")?;
    let dev_path = rc.optional_input_path("dev")?;
    let config = CharLmConfig {
        hidden_size: rc.get("hidden_size")?,
        sequence_length: rc.get("sequence_length")?,
        batch_size: rc.get("batch_size")?,
        char_embed_dim: rc.get("char_embed_dim")?,
        lr: rc.get("lr")?,
        anneal_factor: rc.get("anneal_factor")?,
        patience: rc.get("patience")?,
        clip_norm: rc.get("clip_norm")?,
        max_epochs: rc.get("max_epochs")?,
        min_count: rc.get("min_count")?,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = read_corpus(rc, &train_path)?;
    let dev = dev_path.map(|p| read_corpus(rc, &p)).transpose()?.unwrap_or_default();
    let output = PathBuf::from(rc.raw("output"));
    let mut rng = SeededRng::new(rc.get("seed")?);
    let (model, log) = train_char_lm(&corpus, &dev, &config, &mut rng, Some(&output))?;
    model.save(&output)?;
    let notes = vec![
        format!("kind = {}", char_lm::KIND),
        format!("train_sentences = {}", corpus.len()),
        format!("dev_sentences = {}", dev.len()),
    ];
    finish_training(rc, &output, &notes, &log, stderr)
}

fn pretrain_word(rc: &RunConfig, stderr: &mut dyn Write) -> Result<(), Failure> {
    let train_path = rc.input_path("train")?;
    let dev_path = rc.optional_input_path("dev")?;
    let config = WordLmConfig {
        hidden_size: rc.get("hidden_size")?,
        projection_dim: rc.get("projection_dim")?,
        layers: rc.get("layers")?,
        max_word_chars: rc.get("max_word_chars")?,
        char_embed_dim: rc.get("char_embed_dim")?,
        cnn_filters: parse_filters(rc.raw("cnn_filters")).map_err(|e| UsageError(format!("cnn_filters: {e}")))?,
        vocab_size: rc.get("vocab_size")?,
        softmax: rc.get("softmax")?,
        lr: rc.get("lr")?,
        anneal_factor: rc.get("anneal_factor")?,
        patience: rc.get("patience")?,
        clip_norm: rc.get("clip_norm")?,
        batch_size: rc.get("batch_size")?,
        max_epochs: rc.get("max_epochs")?,
        min_count: rc.get("min_count")?,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let corpus = read_corpus(rc, &train_path)?;
    let dev = dev_path.map(|p| read_corpus(rc, &p)).transpose()?.unwrap_or_default();
    let output = PathBuf::from(rc.raw("output"));
    let mut rng = SeededRng::new(rc.get("seed")?);
    let (model, log) = train_word_lm(&corpus, &dev, &config, &mut rng, Some(&output))?;
    model.save(&output)?;
    let notes = vec![
        format!("kind = {}", word_lm::KIND),
        format!("train_sentences = {}", corpus.len()),
        format!("dev_sentences = {}", dev.len()),
        format!("word_vocabulary = {}", model.words.len()),
    ];
    finish_training(rc, &output, &notes, &log, stderr)
}

/// Loads a stack after checking that every member file exists.
fn load_stack(spec: &str) -> Result<EmbedderStack, Failure> {
    let members = parse_stack_spec(spec).map_err(|e| UsageError(format!("stack: {e}")))?;
    for (i, m) in members.iter().enumerate() {
        if !m.path.exists() {
            return Err(UsageError(format!("stack member {i} ({}): no such file {:?}", m.kind, m.path)).into());
        }
    }
    Ok(EmbedderStack::from_spec(spec)?)
}

fn train(rc: &RunConfig, stderr: &mut dyn Write) -> Result<(), Failure> {
    let train_path = rc.input_path("train")?;
    let dev_path = rc.optional_input_path("dev")?;
    let config = TaggerTrainConfig {
        hidden_size: rc.get("hidden_size")?,
        dropout: rc.get("dropout")?,
        lr: rc.get("lr")?,
        anneal_factor: rc.get("anneal_factor")?,
        batch_size: rc.get("batch_size")?,
        max_epochs: rc.get("max_epochs")?,
        patience: rc.get("patience")?,
        clip_norm: rc.get("clip_norm")?,
        seed: rc.get("seed")?,
        eval_train: rc.get("eval_train")?,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let stack = load_stack(rc.raw("stack"))?;
    let (train, train_repaired) = read_bio(&train_path)?;
    let (dev, dev_repaired) = match dev_path {
        Some(p) => read_bio(&p)?,
        None => (Vec::new(), 0),
    };
    let tagset = TagSet::from_data(&train);
    let output = PathBuf::from(rc.raw("output"));
    let out = train_tagger(&train, &dev, &stack, &tagset, &config, Some(&output))?;
    out.model.save(&output)?;
    if out.unseen_tags > 0 {
        writeln!(stderr, "warning: {} gold tags outside the tag set were mapped to O", out.unseen_tags)?;
    }
    let notes = vec![
        format!("kind = {}", cner_core::tagger::KIND),
        format!("stack_dim = {}", stack.dim()),
        format!("tagset = {}", tagset.tags().join(",")),
        format!("train_sentences = {}", train.len()),
        format!("dev_sentences = {}", dev.len()),
        format!("bio_repaired = {}", train_repaired + dev_repaired),
        format!("unseen_tags = {}", out.unseen_tags),
    ];
    finish_training(rc, &output, &notes, &out.log, stderr)
}

fn load_tagger(rc: &RunConfig) -> Result<(TaggerModel, EmbedderStack), Failure> {
    let path = rc.input_path("model")?;
    let model = TaggerModel::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let spec = rc.optional("stack").unwrap_or(&model.stack_spec).to_string();
    let stack = load_stack(&spec)?;
    model.check_stack(&stack)?;
    Ok((model, stack))
}

fn predict(rc: &RunConfig, stdout: &mut dyn Write) -> Result<(), Failure> {
    let input = rc.input_path("input")?;
    let (labeled, sentences): (Option<Vec<LabeledSentence>>, Vec<Sentence>) = match rc.raw("input_format") {
        "bio" => {
            let (data, _) = read_bio(&input)?;
            let s = data.iter().map(|l| l.sentence.clone()).collect();
            (Some(data), s)
        }
        "text" => (None, tokenize_bytes(&fs::read(&input)?)?),
        other => return Err(UsageError(format!("input_format must be bio or text, got {other:?}")).into()),
    };
    let spans_format = match rc.raw("format") {
        "columns" => false,
        "spans" => true,
        other => return Err(UsageError(format!("format must be columns or spans, got {other:?}")).into()),
    };
    let (model, stack) = load_tagger(rc)?;
    let mut out = open_output(rc.raw("output"), stdout)?;
    for (i, s) in sentences.iter().enumerate() {
        let (tags, spans) = model.predict(&stack, s)?;
        if spans_format {
            for sp in spans {
                writeln!(out, "{i}\t{}\t{}\t{}", sp.entity_type, sp.start, sp.end)?;
            }
            continue;
        }
        for (t, (w, p)) in s.words().zip(&tags).enumerate() {
            match &labeled {
                Some(l) => writeln!(out, "{w}\t{}\t{p}", l[i].tags[t])?,
                None => writeln!(out, "{w}\t{p}")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Tag sequences from a tab-separated file, taking the last column of
/// every non-blank line.
fn read_predicted(path: &Path) -> Result<Vec<Vec<String>>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    let mut cur: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(bio_normalize(&std::mem::take(&mut cur)));
            }
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next_back()) {
            (Some(_), Some(tag)) => cur.push(tag.to_string()),
            _ => {
                return Err(Failure::Runtime(anyhow::anyhow!(
                    "{}: line {} has no tag column",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if !cur.is_empty() {
        out.push(bio_normalize(&cur));
    }
    Ok(out)
}

fn eval(rc: &RunConfig, stdout: &mut dyn Write) -> Result<(), Failure> {
    let (gold, _) = read_bio(&rc.input_path("gold")?)?;
    let pred = match (rc.optional("pred"), rc.optional("model")) {
        (Some(_), None) => read_predicted(&rc.input_path("pred")?)?,
        (None, Some(_)) => {
            let (model, stack) = load_tagger(rc)?;
            gold.iter()
                .map(|g| Ok(model.predict(&stack, &g.sentence)?.0))
                .collect::<Result<Vec<_>, Failure>>()?
        }
        _ => return Err(UsageError("eval needs exactly one of --pred or --model".into()).into()),
    };
    let report = micro_f1(&gold, &pred)?;
    let text = match rc.raw("format") {
        "table" => render_report(&report),
        "kv" => render_report_kv(&report),
        other => return Err(UsageError(format!("format must be table or kv, got {other:?}")).into()),
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn embed(rc: &RunConfig, stdout: &mut dyn Write) -> Result<(), Failure> {
    let input = rc.input_path("input")?;
    let spec = match (rc.optional("model"), rc.optional("stack")) {
        (Some(_), None) => {
            let path = rc.input_path("model")?;
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            match ckpt.kind() {
                Some(char_lm::KIND) => format!("char_lm:{}", path.display()),
                Some(word_lm::KIND) => {
                    let mixing: LayerMixing = rc.get("mixing")?;
                    format!("word_lm:{}:{mixing}", path.display())
                }
                other => {
                    return Err(Error::KindMismatch {
                        expected: format!("{} or {}", char_lm::KIND, word_lm::KIND),
                        found: other.unwrap_or("unknown").to_string(),
                    }
                    .into())
                }
            }
        }
        (None, Some(s)) => s.to_string(),
        _ => return Err(UsageError("embed needs exactly one of --model or --stack".into()).into()),
    };
    let stack = load_stack(&spec)?;
    let sentences = tokenize_bytes(&fs::read(&input)?)?;
    let mut out = open_output(rc.raw("output"), stdout)?;
    writeln!(out, "# dim={} stack={}", stack.dim(), stack.spec())?;
    for s in &sentences {
        let vectors = stack.embed(s)?;
        for (w, v) in s.words().zip(&vectors) {
            let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{w}\t{}", values.join(" "))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn stats(rc: &RunConfig, stdout: &mut dyn Write) -> Result<(), Failure> {
    let mut splits = Vec::new();
    for split in ["train", "dev", "test"] {
        if let Some(p) = rc.optional_input_path(split)? {
            splits.push((split, corpus_stats(&read_bio(&p)?.0)));
        }
    }
    if splits.is_empty() {
        return Err(UsageError("stats needs at least one of --train, --dev, --test".into()).into());
    }
    let refs: Vec<(&str, &_)> = splits.iter().map(|(n, s)| (*n, s)).collect();
    let text = match rc.raw("format") {
        "tables" => render_stats_tables(rc.raw("name"), &refs),
        "kv" => render_stats_kv(rc.raw("name"), &refs),
        other => return Err(UsageError(format!("format must be tables or kv, got {other:?}")).into()),
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

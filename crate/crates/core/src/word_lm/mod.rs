//! Word-level bidirectional language model over character-CNN token
//! encodings, with stacked projected LSTMs per direction and one softmax
//! shared by both directions.
//!
//! Every sentence is framed as `<S> w1 .. wN </S>`. The forward stack reads
//! positions `0..=N` and predicts `1..=N+1`; the backward stack does the
//! same on the reversed frame. Contextual embeddings mix layer 0 (the
//! encoder output, duplicated) with the `[forward; backward]` outputs of
//! each recurrent layer at the token's position.

pub mod encoder;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use encoder::{ConvBank, EncoderCache, TokenEncoder};

use crate::container::Checkpoint;
use crate::corpus::{build_char_vocab, CharVocabulary, Sentence};
use crate::error::{Error, Result};
use crate::nn::ops::{add_assign, affine, matvec_t_acc, outer_acc, softmax_xent, softmax_xent_grad};
use crate::nn::{
    sgd_step, AnnealEvent, EpochRecord, LstmCache, LstmParams, MetricDirection, Parameter, Params, Real,
    SeededRng, SgdState, TrainLog,
};

pub const KIND: &str = "word_lm";
pub const UNK: &str = "<UNK>";
pub const BOS: &str = "<S>";
pub const EOS: &str = "</S>";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxPolicy {
    Full,
}

impl fmt::Display for SoftmaxPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("full")
    }
}

impl FromStr for SoftmaxPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SoftmaxPolicy::Full),
            other => Err(Error::InvalidArgument(format!("unsupported softmax policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordLmConfig {
    pub hidden_size: usize,
    pub projection_dim: usize,
    pub layers: usize,
    pub max_word_chars: usize,
    pub char_embed_dim: usize,
    /// `(width, count)` per convolution bank.
    pub cnn_filters: Vec<(usize, usize)>,
    /// Corpus words kept besides the reserved `<UNK>`, `<S>`, `</S>`.
    pub vocab_size: usize,
    pub softmax: SoftmaxPolicy,
    pub lr: f64,
    pub anneal_factor: f64,
    pub patience: usize,
    pub clip_norm: f64,
    /// Sentences per update.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_count: usize,
}

impl Default for WordLmConfig {
    fn default() -> Self {
        WordLmConfig {
            hidden_size: 2048,
            projection_dim: 256,
            layers: 2,
            max_word_chars: 50,
            char_embed_dim: 16,
            cnn_filters: vec![(1, 32), (2, 32), (3, 64), (4, 64), (5, 64)],
            vocab_size: 25_000,
            softmax: SoftmaxPolicy::Full,
            lr: 1.0,
            anneal_factor: 4.0,
            patience: 1,
            clip_norm: 5.0,
            batch_size: 32,
            max_epochs: 10,
            min_count: 1,
        }
    }
}

fn filters_to_string(f: &[(usize, usize)]) -> String {
    f.iter().map(|(w, c)| format!("{w}x{c}")).collect::<Vec<_>>().join(",")
}

/// Parses `1x32,2x32,...` filter specs.
pub fn parse_filters(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (w, c) = part
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::InvalidArgument(format!("filter {part:?} is not WIDTHxCOUNT")))?;
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("filter {part:?} is not WIDTHxCOUNT")))
            };
            Ok((parse(w)?, parse(c)?))
        })
        .collect()
}

impl WordLmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("projection_dim", self.projection_dim),
            ("layers", self.layers),
            ("max_word_chars", self.max_word_chars),
            ("char_embed_dim", self.char_embed_dim),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("min_count", self.min_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.projection_dim > self.hidden_size {
            return Err(Error::InvalidArgument("projection_dim must not exceed hidden_size".into()));
        }
        if self.cnn_filters.is_empty() || self.cnn_filters.iter().any(|&(w, c)| w == 0 || c == 0) {
            return Err(Error::InvalidArgument("cnn_filters need positive widths and counts".into()));
        }
        if !(self.lr > 0.0) || !(self.anneal_factor > 1.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("need lr > 0, anneal_factor > 1, clip_norm > 0".into()));
        }
        Ok(())
    }

    /// Width of an extracted word embedding.
    pub fn embedding_dim(&self) -> usize {
        2 * self.projection_dim
    }

    fn write(&self, c: &mut Checkpoint) {
        c.set("hidden_size", self.hidden_size);
        c.set("projection_dim", self.projection_dim);
        c.set("layers", self.layers);
        c.set("max_word_chars", self.max_word_chars);
        c.set("char_embed_dim", self.char_embed_dim);
        c.set("cnn_filters", filters_to_string(&self.cnn_filters));
        c.set("vocab_size", self.vocab_size);
        c.set("softmax", self.softmax);
        c.set("lr", self.lr);
        c.set("anneal_factor", self.anneal_factor);
        c.set("patience", self.patience);
        c.set("clip_norm", self.clip_norm);
        c.set("batch_size", self.batch_size);
        c.set("max_epochs", self.max_epochs);
        c.set("min_count", self.min_count);
    }

    fn read(c: &Checkpoint) -> Result<Self> {
        Ok(WordLmConfig {
            hidden_size: c.parse("hidden_size")?,
            projection_dim: c.parse("projection_dim")?,
            layers: c.parse("layers")?,
            max_word_chars: c.parse("max_word_chars")?,
            char_embed_dim: c.parse("char_embed_dim")?,
            cnn_filters: parse_filters(c.get("cnn_filters")?)?,
            vocab_size: c.parse("vocab_size")?,
            softmax: c.get("softmax")?.parse()?,
            lr: c.parse("lr")?,
            anneal_factor: c.parse("anneal_factor")?,
            patience: c.parse("patience")?,
            clip_norm: c.parse("clip_norm")?,
            batch_size: c.parse("batch_size")?,
            max_epochs: c.parse("max_epochs")?,
            min_count: c.parse("min_count")?,
        })
    }
}

/// Closed word vocabulary: `<UNK>`, `<S>`, `</S>` then corpus words by
/// descending count, ties lexicographic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordVocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl WordVocabulary {
    pub const UNKNOWN: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;

    pub fn from_words(corpus_words: Vec<String>) -> Result<Self> {
        let mut words = vec![UNK.to_string(), BOS.to_string(), EOS.to_string()];
        words.extend(corpus_words);
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(WordVocabulary { words, index })
    }

    pub fn build(corpus: &[Sentence], max_size: usize, min_count: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in corpus.iter().flat_map(Sentence::words) {
            *counts.entry(w).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, n)| n >= min_count && ![UNK, BOS, EOS].contains(&w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size);
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Length-prefixed list `<bytes>:<word>` of the corpus words.
    pub fn to_metadata(&self) -> String {
        self.words[3..].iter().map(|w| format!("{}:{w}", w.len())).collect()
    }

    pub fn from_metadata(mut s: &str) -> Result<Self> {
        let bad = || Error::Container("malformed word vocabulary".into());
        let mut words = Vec::new();
        while !s.is_empty() {
            let (len, rest) = s.split_once(':').ok_or_else(bad)?;
            let len: usize = len.parse().map_err(|_| bad())?;
            let word = rest.get(..len).ok_or_else(bad)?;
            words.push(word.to_string());
            s = &rest[len..];
        }
        Self::from_words(words)
    }

    pub fn digest(&self) -> String {
        crate::corpus::vocab::hex_digest(self.to_metadata().as_bytes())
    }
}

/// How recurrent layers are combined into one token vector.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerMixing {
    Mean,
    Top,
    /// One weight per layer, layer 0 first.
    Weights(Vec<f64>),
}

impl fmt::Display for LayerMixing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerMixing::Mean => f.write_str("mean"),
            LayerMixing::Top => f.write_str("top"),
            LayerMixing::Weights(w) => {
                let parts: Vec<String> = w.iter().map(f64::to_string).collect();
                write!(f, "weights={}", parts.join(","))
            }
        }
    }
}

impl FromStr for LayerMixing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LayerMixing::Mean),
            "top" => Ok(LayerMixing::Top),
            _ => {
                let list = s
                    .strip_prefix("weights=")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown layer mixing {s:?}")))?;
                list.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad mixing weight {v:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(LayerMixing::Weights)
            }
        }
    }
}

impl LayerMixing {
    pub fn weights(&self, layers: usize) -> Result<Vec<f64>> {
        let n = layers + 1;
        match self {
            LayerMixing::Mean => Ok(vec![1.0 / n as f64; n]),
            LayerMixing::Top => Ok((0..n).map(|l| if l == layers { 1.0 } else { 0.0 }).collect()),
            LayerMixing::Weights(w) if w.len() == n => Ok(w.clone()),
            LayerMixing::Weights(w) => Err(Error::InvalidArgument(format!(
                "{} mixing weights for {n} layers",
                w.len()
            ))),
        }
    }
}

/// Mean nats per predicted token, per direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BilmLoss {
    pub forward: f64,
    pub backward: f64,
    /// Predictions per direction.
    pub predictions: usize,
    /// Empty sentences ignored.
    pub skipped: usize,
}

impl BilmLoss {
    pub fn mean(&self) -> f64 {
        0.5 * (self.forward + self.backward)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordLmModel<T = f32> {
    pub config: WordLmConfig,
    pub chars: CharVocabulary,
    pub words: WordVocabulary,
    pub encoder: TokenEncoder<T>,
    pub forward: Vec<LstmParams<T>>,
    pub backward: Vec<LstmParams<T>>,
    pub softmax_w: Parameter<T>,
    pub softmax_b: Parameter<T>,
}

impl<T: Real> Params<T> for WordLmModel<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.encoder.visit(f);
        for l in self.forward.iter().chain(&self.backward) {
            l.visit(f);
        }
        f(&self.softmax_w);
        f(&self.softmax_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.encoder.visit_mut(f);
        for l in self.forward.iter_mut().chain(&mut self.backward) {
            l.visit_mut(f);
        }
        f(&mut self.softmax_w);
        f(&mut self.softmax_b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Forward,
    Backward,
}

fn run_stack<T: Real>(stack: &[LstmParams<T>], mut xs: Vec<Vec<T>>) -> Vec<Vec<LstmCache<T>>> {
    let mut out = Vec::with_capacity(stack.len());
    for layer in stack {
        let caches = layer.run(&xs, None);
        xs = caches.iter().map(|c| c.h.clone()).collect();
        out.push(caches);
    }
    out
}

impl<T: Real> WordLmModel<T> {
    pub fn new(chars: CharVocabulary, words: WordVocabulary, config: WordLmConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let p = config.projection_dim;
        let encoder = TokenEncoder::new(
            chars.len(),
            config.char_embed_dim,
            &config.cnn_filters,
            p,
            config.max_word_chars,
            rng,
        );
        let mut stack = |dir: &str| -> Vec<LstmParams<T>> {
            (0..config.layers)
                .map(|l| LstmParams::new(&format!("{dir}.layer{l}"), p, config.hidden_size, Some(p), rng))
                .collect()
        };
        let forward = stack("forward");
        let backward = stack("backward");
        let v = words.len();
        Ok(WordLmModel {
            softmax_w: Parameter::uniform("softmax.w", &[v, p], p, rng),
            softmax_b: Parameter::uniform("softmax.b", &[v], p, rng),
            config,
            chars,
            words,
            encoder,
            forward,
            backward,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.config.projection_dim
    }

    pub fn cast<U: Real>(&self) -> WordLmModel<U> {
        WordLmModel {
            config: self.config.clone(),
            chars: self.chars.clone(),
            words: self.words.clone(),
            encoder: self.encoder.cast(),
            forward: self.forward.iter().map(LstmParams::cast).collect(),
            backward: self.backward.iter().map(LstmParams::cast).collect(),
            softmax_w: self.softmax_w.cast(),
            softmax_b: self.softmax_b.cast(),
        }
    }

    fn frame<'a>(words: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
        let mut f = vec![BOS];
        f.extend(words);
        f.push(EOS);
        f
    }

    fn target_id(&self, word: &str) -> usize {
        match word {
            BOS => WordVocabulary::BOS,
            EOS => WordVocabulary::EOS,
            w => self.words.id(w),
        }
    }

    /// Context-independent vectors, one per token.
    pub fn encode_tokens(&self, sentence: &Sentence) -> Vec<Vec<T>> {
        sentence.words().map(|w| self.encoder.encode(&self.chars, w)).collect()
    }

    /// Positions of the frame read by a direction, in reading order.
    fn order(n_framed: usize, dir: Direction) -> Vec<usize> {
        match dir {
            Direction::Forward => (0..n_framed).collect(),
            Direction::Backward => (0..n_framed).rev().collect(),
        }
    }

    fn stack(&self, dir: Direction) -> &[LstmParams<T>] {
        match dir {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// Per-layer hidden outputs of each direction over the framed sentence
    /// `<S> words </S>`, indexed `[layer][frame position]`; backward states
    /// are re-indexed to frame positions.
    pub fn direction_states(&self, words: &[&str]) -> (Vec<Vec<Vec<T>>>, Vec<Vec<Vec<T>>>) {
        let framed = Self::frame(words.iter().copied());
        let enc: Vec<Vec<T>> = framed.iter().map(|w| self.encoder.encode(&self.chars, w)).collect();
        let n = framed.len();
        let mut out = Vec::with_capacity(2);
        for dir in [Direction::Forward, Direction::Backward] {
            let order = Self::order(n, dir);
            let caches = run_stack(self.stack(dir), order.iter().map(|&p| enc[p].clone()).collect());
            let layers: Vec<Vec<Vec<T>>> = caches
                .iter()
                .map(|layer| {
                    let mut by_pos = vec![Vec::new(); n];
                    for (i, c) in layer.iter().enumerate() {
                        by_pos[order[i]] = c.h.clone();
                    }
                    by_pos
                })
                .collect();
            out.push(layers);
        }
        let bwd = out.pop().unwrap_or_default();
        let fwd = out.pop().unwrap_or_default();
        (fwd, bwd)
    }

    /// Layer 0 (encoder output, duplicated) and each recurrent layer's
    /// `[forward; backward]` output, indexed `[layer][token]`.
    pub fn layer_representations(&self, sentence: &Sentence) -> Result<Vec<Vec<Vec<T>>>> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let words: Vec<&str> = sentence.words().collect();
        let n = words.len();
        let (fwd, bwd) = self.direction_states(&words);
        let mut layers = Vec::with_capacity(self.config.layers + 1);
        layers.push(
            self.encode_tokens(sentence)
                .into_iter()
                .map(|e| {
                    let mut v = e.clone();
                    v.extend(e);
                    v
                })
                .collect(),
        );
        for l in 0..self.config.layers {
            layers.push(
                (1..=n)
                    .map(|k| {
                        let mut v = fwd[l][k].clone();
                        v.extend_from_slice(&bwd[l][k]);
                        v
                    })
                    .collect(),
            );
        }
        Ok(layers)
    }

    /// Per-token vectors of width `2 × projection_dim`.
    pub fn embed_words(&self, sentence: &Sentence, mixing: &LayerMixing) -> Result<Vec<Vec<T>>> {
        let weights = mixing.weights(self.config.layers)?;
        let layers = self.layer_representations(sentence)?;
        let dim = self.embedding_dim();
        Ok((0..sentence.len())
            .map(|k| {
                let mut v = vec![T::zero(); dim];
                for (layer, &w) in layers.iter().zip(&weights) {
                    if w != 0.0 {
                        let w = T::lit(w);
                        for (a, b) in v.iter_mut().zip(&layer[k]) {
                            *a += w * *b;
                        }
                    }
                }
                v
            })
            .collect())
    }

    /// Summed nats per direction for one non-empty sentence.
    fn sentence_loss(&self, words: &[&str]) -> (f64, f64) {
        let framed = Self::frame(words.iter().copied());
        let enc: Vec<Vec<T>> = framed.iter().map(|w| self.encoder.encode(&self.chars, w)).collect();
        let n = framed.len();
        let mut sums = [0.0; 2];
        for (d, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
            let order = Self::order(n, dir);
            let caches = run_stack(self.stack(dir), order[..n - 1].iter().map(|&p| enc[p].clone()).collect());
            let top = caches.last().map(Vec::as_slice).unwrap_or_default();
            for (i, c) in top.iter().enumerate() {
                let logits = affine(self.softmax_w.value.data(), self.softmax_b.value.data(), &c.h);
                sums[d] += softmax_xent(&logits, self.target_id(framed[order[i + 1]])).as_f64();
            }
        }
        (sums[0], sums[1])
    }

    /// As `sentence_loss`, accumulating `scale ×` the gradient.
    fn sentence_loss_grad(&mut self, words: &[&str], scale: T) -> (f64, f64) {
        let framed = Self::frame(words.iter().copied());
        let n = framed.len();
        let p = self.config.projection_dim;
        let enc: Vec<EncoderCache<T>> = framed
            .iter()
            .map(|w| self.encoder.forward(&self.encoder.char_ids(&self.chars, w)))
            .collect();
        let mut d_enc = vec![vec![T::zero(); p]; n];
        let mut sums = [0.0; 2];
        for (d, dir) in [Direction::Forward, Direction::Backward].into_iter().enumerate() {
            let order = Self::order(n, dir);
            let xs = order[..n - 1].iter().map(|&q| enc[q].output.clone()).collect();
            let caches = run_stack(self.stack(dir), xs);
            let top = caches.last().map(Vec::as_slice).unwrap_or_default();
            let mut dhs = Vec::with_capacity(top.len());
            for (i, c) in top.iter().enumerate() {
                let mut logits = affine(self.softmax_w.value.data(), self.softmax_b.value.data(), &c.h);
                let target = self.target_id(framed[order[i + 1]]);
                sums[d] += softmax_xent_grad(&mut logits, target, scale).as_f64();
                outer_acc(self.softmax_w.grad.data_mut(), p, &logits, &c.h);
                add_assign(self.softmax_b.grad.data_mut(), &logits);
                let mut dh = vec![T::zero(); p];
                matvec_t_acc(self.softmax_w.value.data(), logits.len(), p, &logits, &mut dh);
                dhs.push(dh);
            }
            let stack = match dir {
                Direction::Forward => &mut self.forward,
                Direction::Backward => &mut self.backward,
            };
            for (layer, layer_caches) in stack.iter_mut().zip(&caches).rev() {
                dhs = layer.backward_seq(layer_caches, &dhs);
            }
            for (i, dx) in dhs.iter().enumerate() {
                add_assign(&mut d_enc[order[i]], dx);
            }
        }
        for (cache, d) in enc.iter().zip(&d_enc) {
            self.encoder.backward(cache, d);
        }
        (sums[0], sums[1])
    }

    fn counts(batch: &[Sentence]) -> (usize, usize) {
        let predictions = batch.iter().filter(|s| !s.is_empty()).map(|s| s.len() + 1).sum();
        let skipped = batch.iter().filter(|s| s.is_empty()).count();
        (predictions, skipped)
    }

    /// Mean nats per predicted token for each direction.
    pub fn bilm_loss(&self, batch: &[Sentence]) -> BilmLoss {
        let (predictions, skipped) = Self::counts(batch);
        let (mut f, mut b) = (0.0, 0.0);
        for s in batch.iter().filter(|s| !s.is_empty()) {
            let words: Vec<&str> = s.words().collect();
            let (sf, sb) = self.sentence_loss(&words);
            f += sf;
            b += sb;
        }
        let denom = predictions.max(1) as f64;
        BilmLoss {
            forward: f / denom,
            backward: b / denom,
            predictions,
            skipped,
        }
    }

    /// [`WordLmModel::bilm_loss`] and accumulates the gradient of its
    /// [`BilmLoss::mean`].
    pub fn bilm_loss_grad(&mut self, batch: &[Sentence]) -> BilmLoss {
        let (predictions, skipped) = Self::counts(batch);
        let denom = predictions.max(1) as f64;
        let scale = T::lit(0.5 / denom);
        let (mut f, mut b) = (0.0, 0.0);
        for s in batch.iter().filter(|s| !s.is_empty()) {
            let words: Vec<&str> = s.words().collect();
            let (sf, sb) = self.sentence_loss_grad(&words, scale);
            f += sf;
            b += sb;
        }
        BilmLoss {
            forward: f / denom,
            backward: b / denom,
            predictions,
            skipped,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(KIND);
        self.config.write(&mut c);
        c.set("char_vocab", self.chars.to_metadata());
        c.set("char_vocab_hash", self.chars.digest());
        c.set("word_vocab", self.words.to_metadata());
        c.set("word_vocab_hash", self.words.digest());
        c.put_params(self);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(KIND)?;
        let config = WordLmConfig::read(c)?;
        let chars = CharVocabulary::from_metadata(c.get("char_vocab")?)?;
        let words = WordVocabulary::from_metadata(c.get("word_vocab")?)?;
        if c.get("char_vocab_hash")? != chars.digest() || c.get("word_vocab_hash")? != words.digest() {
            return Err(Error::Container("vocabulary hash mismatch".into()));
        }
        let mut model = Self::new(chars, words, config, &mut SeededRng::new(0))?;
        c.take_params(&mut model)?;
        Ok(model)
    }
}

impl WordLmModel<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Builds the character and word vocabularies for a corpus. The marker
/// spellings are counted so they encode distinctly.
pub fn build_vocabularies(corpus: &[Sentence], config: &WordLmConfig) -> Result<(CharVocabulary, WordVocabulary)> {
    let markers = Sentence::from_words(&[UNK, BOS, EOS]);
    let chars = build_char_vocab(corpus.iter().chain([&markers]), config.min_count)?;
    let words = WordVocabulary::build(corpus, config.vocab_size, config.min_count)?;
    Ok((chars, words))
}

/// Trains the biLM with seeded per-epoch shuffling of sentences, annealing
/// on development loss and keeping the best-development snapshot. When
/// `dev` is empty the training loss drives annealing and selection.
pub fn train_word_lm(
    corpus: &[Sentence],
    dev: &[Sentence],
    config: &WordLmConfig,
    rng: &mut SeededRng,
    checkpoint: Option<&Path>,
) -> Result<(WordLmModel, TrainLog)> {
    config.validate()?;
    if corpus.iter().all(Sentence::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let (chars, words) = build_vocabularies(corpus, config)?;
    let mut model = WordLmModel::<f32>::new(chars, words, config.clone(), rng)?;
    let mut sgd = SgdState::new(
        config.lr,
        config.anneal_factor,
        config.patience,
        config.clip_norm,
        MetricDirection::LowerIsBetter,
    )?;
    let mut best = model.clone();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = sgd.lr;
        rng.shuffle(&mut order);
        let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sentence> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            model.zero_grad();
            let loss = model.bilm_loss_grad(&batch);
            sum += loss.mean() * loss.predictions as f64;
            count += loss.predictions;
            skipped += loss.skipped;
            if loss.predictions > 0 {
                sgd_step(&mut model, lr, config.clip_norm)?;
            }
        }
        let train = sum / count.max(1) as f64;
        let dev_loss = if dev.is_empty() { train } else { model.bilm_loss(dev).mean() };
        let event = sgd.maybe_anneal(dev_loss);
        if event == AnnealEvent::Improved {
            best = model.clone();
            if let Some(path) = checkpoint {
                best.save(path)?;
            }
        }
        log.push(EpochRecord {
            epoch,
            lr,
            metrics: vec![
                ("train_nats".into(), train),
                ("dev_nats".into(), dev_loss),
                ("skipped".into(), skipped as f64),
            ],
            event: event.to_string(),
        });
        if matches!(event, AnnealEvent::Stop { .. }) {
            break;
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;

    fn sentences(texts: &[&str]) -> Vec<Sentence> {
        texts
            .iter()
            .map(|t| Sentence::from_words(&t.split(' ').collect::<Vec<_>>()))
            .collect()
    }

    fn tiny_config() -> WordLmConfig {
        WordLmConfig {
            hidden_size: 5,
            projection_dim: 3,
            layers: 2,
            char_embed_dim: 3,
            cnn_filters: vec![(1, 2), (2, 3)],
            ..WordLmConfig::default()
        }
    }

    fn tiny<T: Real>(corpus: &[Sentence], seed: u64) -> WordLmModel<T> {
        let config = tiny_config();
        let (c, w) = build_vocabularies(corpus, &config).unwrap();
        WordLmModel::new(c, w, config, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn vocabulary_order_and_metadata() {
        let corpus = sentences(&["b a a", "c b a"]);
        let v = WordVocabulary::build(&corpus, 2, 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.word(3), Some("a"));
        assert_eq!(v.word(4), Some("b"));
        assert_eq!(v.id("c"), WordVocabulary::UNKNOWN);
        let odd = WordVocabulary::from_words(vec!["x:y".into(), "é".into()]).unwrap();
        assert_eq!(WordVocabulary::from_metadata(&odd.to_metadata()).unwrap(), odd);
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let words: Vec<String> = (0..97).map(|i| format!("w{i}")).collect();
        let corpus: Vec<Sentence> = words.chunks(10).map(Sentence::from_words).collect();
        let config = WordLmConfig {
            hidden_size: 16,
            projection_dim: 8,
            char_embed_dim: 4,
            cnn_filters: vec![(1, 4), (2, 4)],
            ..WordLmConfig::default()
        };
        let (c, w) = build_vocabularies(&corpus, &config).unwrap();
        assert_eq!(w.len(), 100);
        let model: WordLmModel = WordLmModel::new(c, w, config, &mut SeededRng::new(1)).unwrap();
        let loss = model.bilm_loss(&corpus);
        let uniform = 100f64.ln();
        assert!((loss.forward - uniform).abs() < 0.5, "{loss:?}");
        assert!((loss.backward - uniform).abs() < 0.5, "{loss:?}");
    }

    #[test]
    fn single_token_and_empty_sentences() {
        let corpus = sentences(&["x"]);
        let model: WordLmModel = tiny(&corpus, 1);
        let loss = model.bilm_loss(&[corpus[0].clone(), Sentence::from_words::<&str>(&[])]);
        assert_eq!(loss.predictions, 2);
        assert_eq!(loss.skipped, 1);
        assert!(loss.forward.is_finite() && loss.backward.is_finite());
    }

    #[test]
    fn gradient_check_f64() {
        let corpus = sentences(&["the cat sat", "a dog"]);
        let mut model: WordLmModel<f64> = tiny(&corpus, 7);
        // Evaluated at twice the initial parameter scale.
        model.visit_mut(&mut |p| p.value.data_mut().iter_mut().for_each(|v| *v *= 2.0));
        let report = grad_check(
            &mut model,
            |m: &mut WordLmModel<f64>| Ok(m.bilm_loss_grad(&corpus).mean()),
            1e-4,
            300,
            &mut SeededRng::new(3),
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn softmax_is_shared_between_directions() {
        let corpus = sentences(&["p q r"]);
        let mut model: WordLmModel<f64> = tiny(&corpus, 2);
        let before = model.bilm_loss(&corpus);
        for v in model.softmax_w.value.row_mut(WordVocabulary::EOS) {
            *v += 0.5;
        }
        let after = model.bilm_loss(&corpus);
        assert_ne!(before.forward, after.forward);
        assert_ne!(before.backward, after.backward);
        let mut names = Vec::new();
        model.visit(&mut |p| names.push(p.name.clone()));
        assert_eq!(names.iter().filter(|n| n.starts_with("softmax.")).count(), 2);
    }

    #[test]
    fn embedding_dims_and_layer_zero_selection() {
        let corpus = sentences(&["one two three"]);
        let model: WordLmModel = tiny(&corpus, 3);
        let s = &corpus[0];
        let mean = model.embed_words(s, &LayerMixing::Mean).unwrap();
        assert!(mean.iter().all(|v| v.len() == 6));
        let layer0 = model.embed_words(s, &LayerMixing::Weights(vec![1.0, 0.0, 0.0])).unwrap();
        for (k, enc) in model.encode_tokens(s).into_iter().enumerate() {
            let mut dup = enc.clone();
            dup.extend(enc);
            assert_eq!(layer0[k], dup);
        }
        assert!(model.embed_words(s, &LayerMixing::Weights(vec![1.0])).is_err());
        let top = model.embed_words(s, &LayerMixing::Top).unwrap();
        assert_ne!(top, mean);
    }

    #[test]
    fn mixing_parses() {
        assert_eq!("mean".parse::<LayerMixing>().unwrap(), LayerMixing::Mean);
        assert_eq!(
            "weights=1,0,0".parse::<LayerMixing>().unwrap(),
            LayerMixing::Weights(vec![1.0, 0.0, 0.0])
        );
        let w = LayerMixing::Weights(vec![0.5, 0.25]);
        assert_eq!(w.to_string().parse::<LayerMixing>().unwrap(), w);
        assert!("median".parse::<LayerMixing>().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = sentences(&["alpha beta", "gamma"]);
        let model: WordLmModel = tiny(&corpus, 4);
        let bytes = model.to_checkpoint().to_bytes().unwrap();
        let back = WordLmModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn causality(words in proptest::collection::vec("[a-d]{1,4}", 2..7), j_seed in 0usize..100, repl in "[e-h]{1,4}") {
            let corpus = vec![Sentence::from_words(&words)];
            let model: WordLmModel<f64> = tiny(&corpus, 5);
            let j = j_seed % words.len();
            let mut changed = words.clone();
            changed[j] = repl;
            let a: Vec<&str> = words.iter().map(String::as_str).collect();
            let b: Vec<&str> = changed.iter().map(String::as_str).collect();
            let (fa, ba) = model.direction_states(&a);
            let (fb, bb) = model.direction_states(&b);
            // Frame position of token j is j + 1.
            let pos = j + 1;
            for l in 0..fa.len() {
                for q in 0..pos {
                    prop_assert_eq!(&fa[l][q], &fb[l][q]);
                }
                for q in pos + 1..ba[l].len() {
                    prop_assert_eq!(&ba[l][q], &bb[l][q]);
                }
                prop_assert_ne!(&fa[l][pos], &fb[l][pos]);
            }
        }
    }
}

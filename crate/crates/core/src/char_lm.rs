//! Character-level forward and backward language models and contextual
//! word embeddings read from their hidden states.
//!
//! Sentences are rendered as their tokens joined by single spaces and framed
//! by the `BOUNDARY` symbol. A word spanning rendered positions `s..=e` is
//! embedded as the forward state after position `e + 1` concatenated with
//! the backward state after position `s - 1`; boundary framing guarantees
//! both positions exist.

use std::path::Path;

use crate::container::Checkpoint;
use crate::corpus::{build_char_vocab, CharVocabulary, Sentence};
use crate::error::{Error, Result};
use crate::nn::ops::{affine, matvec_t_acc, outer_acc, softmax_xent, softmax_xent_grad};
use crate::nn::{
    sgd_step, AnnealEvent, EpochRecord, LstmCache, LstmParams, MetricDirection, Parameter, Params, Real,
    SeededRng, SgdState, TrainLog,
};

pub const KIND: &str = "char_lm";

#[derive(Clone, Debug, PartialEq)]
pub struct CharLmConfig {
    pub hidden_size: usize,
    /// Truncated-backpropagation window, in characters.
    pub sequence_length: usize,
    /// Number of parallel rows the training stream is split into.
    pub batch_size: usize,
    pub char_embed_dim: usize,
    pub lr: f64,
    pub anneal_factor: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub min_count: usize,
}

impl Default for CharLmConfig {
    fn default() -> Self {
        CharLmConfig {
            hidden_size: 2048,
            sequence_length: 250,
            batch_size: 100,
            char_embed_dim: 64,
            lr: 20.0,
            anneal_factor: 4.0,
            patience: 1,
            clip_norm: 5.0,
            max_epochs: 20,
            min_count: 1,
        }
    }
}

impl CharLmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("sequence_length", self.sequence_length),
            ("batch_size", self.batch_size),
            ("char_embed_dim", self.char_embed_dim),
            ("max_epochs", self.max_epochs),
            ("min_count", self.min_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.anneal_factor > 1.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("need lr > 0, anneal_factor > 1, clip_norm > 0".into()));
        }
        Ok(())
    }

    /// Width of an extracted word embedding.
    pub fn embedding_dim(&self) -> usize {
        2 * self.hidden_size
    }

    fn write(&self, c: &mut Checkpoint) {
        c.set("hidden_size", self.hidden_size);
        c.set("sequence_length", self.sequence_length);
        c.set("batch_size", self.batch_size);
        c.set("char_embed_dim", self.char_embed_dim);
        c.set("lr", self.lr);
        c.set("anneal_factor", self.anneal_factor);
        c.set("patience", self.patience);
        c.set("clip_norm", self.clip_norm);
        c.set("max_epochs", self.max_epochs);
        c.set("min_count", self.min_count);
    }

    fn read(c: &Checkpoint) -> Result<Self> {
        Ok(CharLmConfig {
            hidden_size: c.parse("hidden_size")?,
            sequence_length: c.parse("sequence_length")?,
            batch_size: c.parse("batch_size")?,
            char_embed_dim: c.parse("char_embed_dim")?,
            lr: c.parse("lr")?,
            anneal_factor: c.parse("anneal_factor")?,
            patience: c.parse("patience")?,
            clip_norm: c.parse("clip_norm")?,
            max_epochs: c.parse("max_epochs")?,
            min_count: c.parse("min_count")?,
        })
    }
}

/// Character ids of a corpus with `BOUNDARY` before, between and after
/// sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharStream {
    pub ids: Vec<usize>,
    /// `(sentence index, char offset in the rendered sentence)` for every
    /// non-boundary position.
    pub origin: Vec<Option<(usize, usize)>>,
}

impl CharStream {
    pub fn new(vocab: &CharVocabulary, sentences: &[Sentence]) -> Self {
        let mut ids = vec![CharVocabulary::BOUNDARY];
        let mut origin = vec![None];
        for (si, s) in sentences.iter().enumerate() {
            for (ci, c) in s.rendered().chars().enumerate() {
                ids.push(vocab.id(c));
                origin.push(Some((si, ci)));
            }
            ids.push(CharVocabulary::BOUNDARY);
            origin.push(None);
        }
        CharStream { ids, origin }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Splits the stream's transitions into contiguous rows, each row holding
/// its inputs followed by the final target.
fn batchify(ids: &[usize], rows: usize) -> Vec<Vec<usize>> {
    let transitions = ids.len().saturating_sub(1);
    if transitions == 0 {
        return Vec::new();
    }
    let rows = rows.min(transitions).max(1);
    let (base, extra) = (transitions / rows, transitions % rows);
    let mut out = Vec::with_capacity(rows);
    let mut start = 0;
    for r in 0..rows {
        let len = base + usize::from(r < extra);
        out.push(ids[start..=start + len].to_vec());
        start += len;
    }
    out
}

/// A stream cut into rows for both directions and windowed for truncated
/// backpropagation.
#[derive(Clone, Debug)]
pub struct CharBatches {
    forward: Vec<Vec<usize>>,
    backward: Vec<Vec<usize>>,
    sequence_length: usize,
}

/// One window: per direction, `(row, ids)` where `ids` holds the window's
/// inputs plus one trailing target.
#[derive(Clone, Debug)]
pub struct CharWindow<'a> {
    pub forward: Vec<(usize, &'a [usize])>,
    pub backward: Vec<(usize, &'a [usize])>,
}

impl CharBatches {
    pub fn new(stream: &CharStream, batch_size: usize, sequence_length: usize) -> Self {
        let reversed: Vec<usize> = stream.ids.iter().rev().copied().collect();
        CharBatches {
            forward: batchify(&stream.ids, batch_size),
            backward: batchify(&reversed, batch_size),
            sequence_length: sequence_length.max(1),
        }
    }

    pub fn rows(&self) -> usize {
        self.forward.len()
    }

    pub fn windows(&self) -> usize {
        self.forward
            .iter()
            .map(|r| (r.len() - 1).div_ceil(self.sequence_length))
            .max()
            .unwrap_or(0)
    }

    pub fn window(&self, w: usize) -> CharWindow<'_> {
        CharWindow {
            forward: cut(&self.forward, w, self.sequence_length),
            backward: cut(&self.backward, w, self.sequence_length),
        }
    }
}

fn cut(rows: &[Vec<usize>], w: usize, len: usize) -> Vec<(usize, &[usize])> {
    rows.iter()
        .enumerate()
        .filter_map(|(r, ids)| {
            let lo = w * len;
            let hi = ((w + 1) * len).min(ids.len() - 1);
            (lo < hi).then(|| (r, &ids[lo..=hi]))
        })
        .collect()
}

type State<T> = (Vec<T>, Vec<T>);

/// Hidden state carried between consecutive windows, per direction and row.
#[derive(Clone, Debug, Default)]
pub struct CarryState<T> {
    forward: Vec<Option<State<T>>>,
    backward: Vec<Option<State<T>>>,
}

impl<T: Real> CarryState<T> {
    pub fn new(rows: usize) -> Self {
        CarryState {
            forward: vec![None; rows],
            backward: vec![None; rows],
        }
    }
}

/// Mean nats per predicted character, per direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DirectionalLoss {
    pub forward: f64,
    pub backward: f64,
}

impl DirectionalLoss {
    /// Training objective: the sum over both directions.
    pub fn total(&self) -> f64 {
        self.forward + self.backward
    }

    /// Average over both directions.
    pub fn mean(&self) -> f64 {
        0.5 * self.total()
    }
}

/// Embedding, LSTM and softmax for one reading direction.
#[derive(Clone, Debug, PartialEq)]
pub struct CharRnn<T = f32> {
    pub embedding: Parameter<T>,
    pub lstm: LstmParams<T>,
    pub out_w: Parameter<T>,
    pub out_b: Parameter<T>,
}

impl<T: Real> CharRnn<T> {
    fn new(prefix: &str, vocab: usize, embed: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        CharRnn {
            embedding: Parameter::uniform(format!("{prefix}.embedding"), &[vocab, embed], 1, rng),
            lstm: LstmParams::new(&format!("{prefix}.lstm"), embed, hidden, None, rng),
            out_w: Parameter::uniform(format!("{prefix}.out_w"), &[vocab, hidden], hidden, rng),
            out_b: Parameter::uniform(format!("{prefix}.out_b"), &[vocab], hidden, rng),
        }
    }

    fn vocab(&self) -> usize {
        self.out_b.value.len()
    }

    fn embed(&self, ids: &[usize]) -> Vec<Vec<T>> {
        ids.iter().map(|&i| self.embedding.value.row(i).to_vec()).collect()
    }

    fn run(&self, ids: &[usize], init: Option<&State<T>>) -> Vec<LstmCache<T>> {
        self.lstm.run(&self.embed(ids), init.map(|(h, c)| (h.as_slice(), c.as_slice())))
    }

    /// Summed nats over `ids[1..]`, advancing `state`.
    fn loss(&self, ids: &[usize], state: &mut Option<State<T>>) -> f64 {
        let n = ids.len() - 1;
        let caches = self.run(&ids[..n], state.as_ref());
        let mut sum = 0.0;
        for (t, cache) in caches.iter().enumerate() {
            let logits = affine(self.out_w.value.data(), self.out_b.value.data(), &cache.h);
            sum += softmax_xent(&logits, ids[t + 1]).as_f64();
        }
        if let Some(last) = caches.last() {
            *state = Some((last.h.clone(), last.c.clone()));
        }
        sum
    }

    /// As [`CharRnn::loss`] and accumulates `scale ×` its gradient.
    fn loss_grad(&mut self, ids: &[usize], state: &mut Option<State<T>>, scale: T) -> f64 {
        let n = ids.len() - 1;
        let hidden = self.lstm.output_dim();
        let caches = self.run(&ids[..n], state.as_ref());
        let mut sum = 0.0;
        let mut dhs = Vec::with_capacity(n);
        for (t, cache) in caches.iter().enumerate() {
            let mut logits = affine(self.out_w.value.data(), self.out_b.value.data(), &cache.h);
            sum += softmax_xent_grad(&mut logits, ids[t + 1], scale).as_f64();
            outer_acc(self.out_w.grad.data_mut(), hidden, &logits, &cache.h);
            crate::nn::ops::add_assign(self.out_b.grad.data_mut(), &logits);
            let mut dh = vec![T::zero(); hidden];
            matvec_t_acc(self.out_w.value.data(), logits.len(), hidden, &logits, &mut dh);
            dhs.push(dh);
        }
        let dxs = self.lstm.backward_seq(&caches, &dhs);
        for (t, dx) in dxs.iter().enumerate() {
            crate::nn::ops::add_assign(self.embedding.grad.row_mut(ids[t]), dx);
        }
        if let Some(last) = caches.last() {
            *state = Some((last.h.clone(), last.c.clone()));
        }
        sum
    }

    fn cast<U: Real>(&self) -> CharRnn<U> {
        CharRnn {
            embedding: self.embedding.cast(),
            lstm: self.lstm.cast(),
            out_w: self.out_w.cast(),
            out_b: self.out_b.cast(),
        }
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.embedding);
        self.lstm.visit(f);
        f(&self.out_w);
        f(&self.out_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.embedding);
        self.lstm.visit_mut(f);
        f(&mut self.out_w);
        f(&mut self.out_b);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharLmModel<T = f32> {
    pub vocab: CharVocabulary,
    pub forward: CharRnn<T>,
    pub backward: CharRnn<T>,
    pub config: CharLmConfig,
}

impl<T: Real> Params<T> for CharLmModel<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.forward.visit(f);
        self.backward.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
    }
}

/// Rendered positions `(forward read, backward read)` for each token, in a
/// sequence where index 0 is the leading `BOUNDARY`.
pub fn flair_read_positions(sentence: &Sentence) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(sentence.len());
    let mut pos = 1;
    for (k, t) in sentence.tokens.iter().enumerate() {
        if k > 0 {
            pos += 1;
        }
        let start = pos;
        let end = pos + t.text.chars().count() - 1;
        out.push((end + 1, start - 1));
        pos = end + 1;
    }
    out
}

impl<T: Real> CharLmModel<T> {
    pub fn new(vocab: CharVocabulary, config: CharLmConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let v = vocab.len();
        let forward = CharRnn::new("forward", v, config.char_embed_dim, config.hidden_size, rng);
        let backward = CharRnn::new("backward", v, config.char_embed_dim, config.hidden_size, rng);
        Ok(CharLmModel {
            vocab,
            forward,
            backward,
            config,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.config.hidden_size
    }

    pub fn cast<U: Real>(&self) -> CharLmModel<U> {
        CharLmModel {
            vocab: self.vocab.clone(),
            forward: self.forward.cast(),
            backward: self.backward.cast(),
            config: self.config.clone(),
        }
    }

    fn check_ids(&self, window: &CharWindow<'_>) -> Result<()> {
        let v = self.forward.vocab();
        for (_, ids) in window.forward.iter().chain(&window.backward) {
            if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
                return Err(Error::TargetOutOfRange { target: bad, size: v });
            }
        }
        Ok(())
    }

    fn grow(carry: &mut CarryState<T>, rows: usize) {
        if carry.forward.len() < rows {
            carry.forward.resize(rows, None);
            carry.backward.resize(rows, None);
        }
    }

    /// Mean nats per character over one window, per direction, carrying
    /// hidden state across windows.
    pub fn char_lm_loss(&self, window: &CharWindow<'_>, carry: &mut CarryState<T>) -> Result<DirectionalLoss> {
        self.check_ids(window)?;
        let rows = window.forward.iter().chain(&window.backward).map(|(r, _)| r + 1).max().unwrap_or(0);
        Self::grow(carry, rows);
        let mut out = DirectionalLoss::default();
        for (rnn, part, states, slot) in [
            (&self.forward, &window.forward, &mut carry.forward, &mut out.forward),
            (&self.backward, &window.backward, &mut carry.backward, &mut out.backward),
        ] {
            let count: usize = part.iter().map(|(_, ids)| ids.len() - 1).sum();
            let sum: f64 = part.iter().map(|(r, ids)| rnn.loss(ids, &mut states[*r])).sum();
            *slot = if count == 0 { 0.0 } else { sum / count as f64 };
        }
        Ok(out)
    }

    /// [`CharLmModel::char_lm_loss`] and accumulates the gradient of the
    /// summed objective `forward + backward`.
    pub fn char_lm_loss_grad(&mut self, window: &CharWindow<'_>, carry: &mut CarryState<T>) -> Result<DirectionalLoss> {
        self.check_ids(window)?;
        let rows = window.forward.iter().chain(&window.backward).map(|(r, _)| r + 1).max().unwrap_or(0);
        Self::grow(carry, rows);
        let mut out = DirectionalLoss::default();
        for (rnn, part, states, slot) in [
            (&mut self.forward, &window.forward, &mut carry.forward, &mut out.forward),
            (&mut self.backward, &window.backward, &mut carry.backward, &mut out.backward),
        ] {
            let count: usize = part.iter().map(|(_, ids)| ids.len() - 1).sum();
            if count == 0 {
                continue;
            }
            let scale = T::lit(1.0 / count as f64);
            let sum: f64 = part.iter().map(|(r, ids)| rnn.loss_grad(ids, &mut states[*r], scale)).sum();
            *slot = sum / count as f64;
        }
        Ok(out)
    }

    /// Loss over a whole stream read in one pass from a zero state.
    pub fn evaluate(&self, stream: &CharStream) -> Result<DirectionalLoss> {
        let batches = CharBatches::new(stream, 1, stream.len().max(1));
        let mut carry = CarryState::new(1);
        match batches.windows() {
            0 => Ok(DirectionalLoss::default()),
            _ => self.char_lm_loss(&batches.window(0), &mut carry),
        }
    }

    /// `exp` of the mean nats per character, averaged over both directions.
    pub fn perplexity(&self, heldout: &[Sentence]) -> Result<f64> {
        if heldout.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let stream = CharStream::new(&self.vocab, heldout);
        Ok(self.evaluate(&stream)?.mean().exp())
    }

    /// Per-token vectors of width `2 × hidden_size`.
    pub fn embed_words(&self, sentence: &Sentence) -> Result<Vec<Vec<T>>> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut ids = vec![CharVocabulary::BOUNDARY];
        ids.extend(self.vocab.encode(&sentence.rendered()));
        ids.push(CharVocabulary::BOUNDARY);
        let last = ids.len() - 1;

        let fwd = self.forward.run(&ids, None);
        let rev: Vec<usize> = ids.iter().rev().copied().collect();
        let bwd = self.backward.run(&rev, None);

        Ok(flair_read_positions(sentence)
            .into_iter()
            .map(|(f, b)| {
                let mut v = fwd[f].h.clone();
                v.extend_from_slice(&bwd[last - b].h);
                v
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(KIND);
        self.config.write(&mut c);
        c.set("char_vocab", self.vocab.to_metadata());
        c.set("vocab_hash", self.vocab.digest());
        c.put_params(self);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(KIND)?;
        let config = CharLmConfig::read(c)?;
        let vocab = CharVocabulary::from_metadata(c.get("char_vocab")?)?;
        if c.get("vocab_hash")? != vocab.digest() {
            return Err(Error::Container("char vocabulary hash mismatch".into()));
        }
        let mut model = Self::new(vocab, config, &mut SeededRng::new(0))?;
        c.take_params(&mut model)?;
        Ok(model)
    }
}

impl CharLmModel<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Trains both directions on `corpus`, annealing on development loss and
/// keeping the best-development snapshot. When `dev` is empty the training
/// loss drives annealing and selection instead.
pub fn train_char_lm(
    corpus: &[Sentence],
    dev: &[Sentence],
    config: &CharLmConfig,
    rng: &mut SeededRng,
    checkpoint: Option<&Path>,
) -> Result<(CharLmModel, TrainLog)> {
    config.validate()?;
    if corpus.iter().all(Sentence::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let vocab = build_char_vocab(corpus, config.min_count)?;
    let mut model = CharLmModel::<f32>::new(vocab, config.clone(), rng)?;
    let train_stream = CharStream::new(&model.vocab, corpus);
    let dev_stream = (!dev.is_empty()).then(|| CharStream::new(&model.vocab, dev));
    let batches = CharBatches::new(&train_stream, config.batch_size, config.sequence_length);

    let mut sgd = SgdState::new(
        config.lr,
        config.anneal_factor,
        config.patience,
        config.clip_norm,
        MetricDirection::LowerIsBetter,
    )?;
    let mut best = model.clone();
    let mut log = TrainLog::default();

    for epoch in 1..=config.max_epochs {
        let lr = sgd.lr;
        let mut carry = CarryState::new(batches.rows());
        let (mut fsum, mut bsum, mut fcount, mut bcount) = (0.0, 0.0, 0usize, 0usize);
        for w in 0..batches.windows() {
            let window = batches.window(w);
            model.zero_grad();
            let loss = model.char_lm_loss_grad(&window, &mut carry)?;
            let nf: usize = window.forward.iter().map(|(_, ids)| ids.len() - 1).sum();
            let nb: usize = window.backward.iter().map(|(_, ids)| ids.len() - 1).sum();
            fsum += loss.forward * nf as f64;
            bsum += loss.backward * nb as f64;
            fcount += nf;
            bcount += nb;
            sgd_step(&mut model, lr, config.clip_norm)?;
        }
        let train = DirectionalLoss {
            forward: fsum / fcount.max(1) as f64,
            backward: bsum / bcount.max(1) as f64,
        };
        let dev_loss = match &dev_stream {
            Some(s) => model.evaluate(s)?,
            None => train,
        };
        let event = sgd.maybe_anneal(dev_loss.mean());
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
                ("train_nats".into(), train.mean()),
                ("dev_nats".into(), dev_loss.mean()),
                ("dev_forward_nats".into(), dev_loss.forward),
                ("dev_backward_nats".into(), dev_loss.backward),
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

    fn small_config(hidden: usize) -> CharLmConfig {
        CharLmConfig {
            hidden_size: hidden,
            sequence_length: 16,
            batch_size: 2,
            char_embed_dim: 8,
            lr: 1.0,
            max_epochs: 3,
            ..CharLmConfig::default()
        }
    }

    #[test]
    fn stream_framing() {
        let corpus = sentences(&["ab c", "d"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let s = CharStream::new(&vocab, &corpus);
        let b = CharVocabulary::BOUNDARY;
        assert_eq!(s.ids.len(), 1 + 4 + 1 + 1 + 1);
        assert_eq!(s.ids[0], b);
        assert_eq!(s.ids[5], b);
        assert_eq!(*s.ids.last().unwrap(), b);
        assert_eq!(s.origin[3], Some((0, 2)));
        assert_eq!(s.origin[6], Some((1, 0)));
        assert!(s.ids.iter().zip(&s.origin).all(|(&i, o)| (i == b) == o.is_none()));
    }

    #[test]
    fn batchify_covers_every_transition_once() {
        let ids: Vec<usize> = (0..11).collect();
        let rows = batchify(&ids, 3);
        assert_eq!(rows.len(), 3);
        let transitions: Vec<(usize, usize)> = rows.iter().flat_map(|r| r.windows(2).map(|w| (w[0], w[1]))).collect();
        assert_eq!(transitions, (0..10).map(|i| (i, i + 1)).collect::<Vec<_>>());
    }

    #[test]
    fn windows_respect_sequence_length() {
        let corpus = sentences(&["abcdefghij klmnop"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let stream = CharStream::new(&vocab, &corpus);
        let b = CharBatches::new(&stream, 1, 5);
        assert_eq!(b.windows(), (stream.len() - 1).div_ceil(5));
        let w = b.window(0);
        assert_eq!(w.forward[0].1.len(), 6);
        assert_eq!(w.forward[0].1, &stream.ids[..6]);
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let alphabet: String = ('a'..='z').chain(['.', ',']).collect();
        let corpus = sentences(&[alphabet.as_str()]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let v = vocab.len();
        assert_eq!(v, 31);
        let model: CharLmModel = CharLmModel::new(vocab, small_config(32), &mut SeededRng::new(1)).unwrap();
        let loss = model.evaluate(&CharStream::new(&model.vocab, &corpus)).unwrap();
        let uniform = (v as f64).ln();
        assert!((loss.forward - uniform).abs() < 0.3, "{loss:?} vs {uniform}");
        assert!((loss.backward - uniform).abs() < 0.3);
        let ppl = model.perplexity(&corpus).unwrap();
        assert!((ppl / v as f64 - 1.0).abs() < 0.35, "ppl {ppl}");
    }

    #[test]
    fn single_character_window_is_finite() {
        let corpus = sentences(&["a"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let model: CharLmModel = CharLmModel::new(vocab, small_config(4), &mut SeededRng::new(1)).unwrap();
        let stream = CharStream::new(&model.vocab, &corpus);
        let b = CharBatches::new(&stream, 1, 1);
        let mut carry = CarryState::new(1);
        let l = model.char_lm_loss(&b.window(0), &mut carry).unwrap();
        assert!(l.forward.is_finite() && l.backward.is_finite());
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let corpus = sentences(&["ab"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let model: CharLmModel = CharLmModel::new(vocab, small_config(4), &mut SeededRng::new(1)).unwrap();
        let ids = [0usize, 99];
        let w = CharWindow {
            forward: vec![(0, &ids[..])],
            backward: vec![],
        };
        assert!(matches!(
            model.char_lm_loss(&w, &mut CarryState::new(1)),
            Err(Error::TargetOutOfRange { target: 99, .. })
        ));
    }

    #[test]
    fn palindrome_with_mirrored_init_has_equal_directions() {
        let corpus = sentences(&["abc cba"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let mut model: CharLmModel<f64> = CharLmModel::new(vocab, small_config(8), &mut SeededRng::new(5)).unwrap();
        let mut mirrored = model.forward.clone();
        mirrored.visit_mut(&mut |p| p.name = p.name.replacen("forward", "backward", 1));
        model.backward = mirrored;
        let stream = CharStream::new(&model.vocab, &corpus);
        let b = CharBatches::new(&stream, 2, 4);
        let mut carry = CarryState::new(b.rows());
        for w in 0..b.windows() {
            let l = model.char_lm_loss(&b.window(w), &mut carry).unwrap();
            assert!((l.forward - l.backward).abs() < 1e-5);
        }
    }

    #[test]
    fn gradient_check_f64() {
        let corpus = sentences(&["ab ba", "cab"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let mut model: CharLmModel<f64> = CharLmModel::new(vocab, small_config(5), &mut SeededRng::new(3)).unwrap();
        let stream = CharStream::new(&model.vocab, &corpus);
        let batches = CharBatches::new(&stream, 2, 4);
        // Second window so carried state enters the check.
        let mut warm = CarryState::new(batches.rows());
        model.char_lm_loss(&batches.window(0), &mut warm).unwrap();
        let window = batches.window(1);
        let report = grad_check(
            &mut model,
            |m: &mut CharLmModel<f64>| {
                let mut carry = warm.clone();
                Ok(m.char_lm_loss_grad(&window, &mut carry)?.total())
            },
            1e-5,
            200,
            &mut SeededRng::new(9),
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = sentences(&["xy z"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let model: CharLmModel = CharLmModel::new(vocab, small_config(4), &mut SeededRng::new(2)).unwrap();
        let bytes = model.to_checkpoint().to_bytes().unwrap();
        let back = CharLmModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn embedding_width_and_purity() {
        let corpus = sentences(&["a bc"]);
        let vocab = build_char_vocab(&corpus, 1).unwrap();
        let model: CharLmModel = CharLmModel::new(vocab, small_config(8), &mut SeededRng::new(2)).unwrap();
        let one = sentences(&["a"]);
        let e = model.embed_words(&one[0]).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].len(), 16);
        assert_eq!(flair_read_positions(&one[0]), vec![(2, 0)]);
        assert_eq!(model.embed_words(&corpus[0]).unwrap(), model.embed_words(&corpus[0]).unwrap());
        assert!(matches!(model.embed_words(&Sentence::from_words::<&str>(&[])), Err(Error::EmptySentence)));
    }

    proptest! {
        #[test]
        fn read_positions_bracket_each_token(words in proptest::collection::vec("[a-z]{1,7}", 1..8)) {
            let s = Sentence::from_words(&words);
            let rendered_len = s.rendered().chars().count();
            let positions = flair_read_positions(&s);
            let mut pos = 1;
            for (k, (f, b)) in positions.into_iter().enumerate() {
                let len = words[k].chars().count();
                let (ts, te) = (pos, pos + len - 1);
                prop_assert!(f > te && f == te + 1);
                prop_assert!(b < ts && b + 1 == ts);
                prop_assert!(f <= rendered_len + 1);
                pos = te + 2;
            }
        }
    }
}

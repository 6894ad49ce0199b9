//! BiLSTM-CRF sequence labeler over frozen stacked embeddings.

pub mod crf;

use std::path::Path;

use crate::container::Checkpoint;
use crate::corpus::{LabeledSentence, Sentence, TagSet};
use crate::embeddings::EmbedderStack;
use crate::error::{Error, Result};
use crate::eval::{micro_f1, spans_from_bio, Span};
use crate::nn::ops::{matvec_acc, matvec_t_acc, outer_acc};
use crate::nn::{
    sgd_step, AnnealEvent, DenseArray, EpochRecord, LstmCache, LstmParams, MetricDirection, Parameter, Params,
    Real, SeededRng, SgdState, TrainLog,
};

pub use crf::{
    bio_transition_allowed, crf_log_partition, crf_marginals, crf_nll, crf_nll_grad, path_score, viterbi_decode,
    CrfParams, Marginals, SENTINEL,
};

pub const KIND: &str = "tagger";

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerTrainConfig {
    /// Encoder units per direction.
    pub hidden_size: usize,
    /// Drop probability on embedder output during training.
    pub dropout: f64,
    pub lr: f64,
    pub anneal_factor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Also decode the training set after every epoch and log its F1.
    pub eval_train: bool,
}

impl Default for TaggerTrainConfig {
    fn default() -> Self {
        TaggerTrainConfig {
            hidden_size: 256,
            dropout: 0.5,
            lr: 0.1,
            anneal_factor: 2.0,
            batch_size: 32,
            max_epochs: 100,
            patience: 3,
            clip_norm: 5.0,
            seed: 1,
            eval_train: false,
        }
    }
}

impl TaggerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.lr > 0.0) || !(self.anneal_factor > 1.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "need lr > 0, anneal_factor > 1 and clip_norm > 0".into(),
            ));
        }
        Ok(())
    }

    fn write(&self, c: &mut Checkpoint) {
        c.set("hidden_size", self.hidden_size);
        c.set("dropout", self.dropout);
        c.set("lr", self.lr);
        c.set("anneal_factor", self.anneal_factor);
        c.set("batch_size", self.batch_size);
        c.set("max_epochs", self.max_epochs);
        c.set("patience", self.patience);
        c.set("clip_norm", self.clip_norm);
        c.set("seed", self.seed);
        c.set("eval_train", self.eval_train);
    }

    fn read(c: &Checkpoint) -> Result<Self> {
        Ok(TaggerTrainConfig {
            hidden_size: c.parse("hidden_size")?,
            dropout: c.parse("dropout")?,
            lr: c.parse("lr")?,
            anneal_factor: c.parse("anneal_factor")?,
            batch_size: c.parse("batch_size")?,
            max_epochs: c.parse("max_epochs")?,
            patience: c.parse("patience")?,
            clip_norm: c.parse("clip_norm")?,
            seed: c.parse("seed")?,
            eval_train: c.parse("eval_train")?,
        })
    }
}

fn encode_types(types: &[String]) -> String {
    types.iter().map(|t| format!("{}:{t}", t.len())).collect()
}

fn decode_types(mut s: &str) -> Result<Vec<String>> {
    let bad = || Error::Container("malformed tag set".into());
    let mut out = Vec::new();
    while !s.is_empty() {
        let (len, rest) = s.split_once(':').ok_or_else(bad)?;
        let len: usize = len.parse().map_err(|_| bad())?;
        out.push(rest.get(..len).ok_or_else(bad)?.to_string());
        s = &rest[len..];
    }
    Ok(out)
}

struct Forward<T> {
    fwd: Vec<LstmCache<T>>,
    bwd: Vec<LstmCache<T>>,
    /// `[h_fwd; h_bwd]` per position.
    states: Vec<Vec<T>>,
    emissions: DenseArray<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel<T = f32> {
    pub tagset: TagSet,
    /// Stack description the model was trained on.
    pub stack_spec: String,
    pub input_dim: usize,
    pub config: TaggerTrainConfig,
    pub forward: LstmParams<T>,
    pub backward: LstmParams<T>,
    /// `K × 2H`.
    pub emission_w: Parameter<T>,
    pub emission_b: Parameter<T>,
    pub crf: CrfParams<T>,
}

impl<T: Real> TaggerModel<T> {
    pub fn new(
        tagset: TagSet,
        stack_spec: impl Into<String>,
        input_dim: usize,
        config: TaggerTrainConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        let h = config.hidden_size;
        let k = tagset.len();
        let forward = LstmParams::new("encoder.forward", input_dim, h, None, rng);
        let backward = LstmParams::new("encoder.backward", input_dim, h, None, rng);
        let emission_w = Parameter::uniform("emission.w", &[k, 2 * h], 2 * h, rng);
        let emission_b = Parameter::zeros("emission.b", &[k]);
        let crf = CrfParams::new(&tagset);
        Ok(TaggerModel {
            tagset,
            stack_spec: stack_spec.into(),
            input_dim,
            config,
            forward,
            backward,
            emission_w,
            emission_b,
            crf,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.tagset.len()
    }

    pub fn cast<U: Real>(&self) -> TaggerModel<U> {
        TaggerModel {
            tagset: self.tagset.clone(),
            stack_spec: self.stack_spec.clone(),
            input_dim: self.input_dim,
            config: self.config.clone(),
            forward: self.forward.cast(),
            backward: self.backward.cast(),
            emission_w: self.emission_w.cast(),
            emission_b: self.emission_b.cast(),
            crf: self.crf.cast(),
        }
    }

    fn run(&self, inputs: &[Vec<T>]) -> Result<Forward<T>> {
        if inputs.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != self.input_dim) {
            return Err(Error::dims("tagger input", &[self.input_dim], &[x.len()]));
        }
        let n = inputs.len();
        let h = self.config.hidden_size;
        let k = self.num_tags();
        let fwd = self.forward.run(inputs, None);
        let reversed: Vec<Vec<T>> = inputs.iter().rev().cloned().collect();
        let bwd = self.backward.run(&reversed, None);
        let mut states = Vec::with_capacity(n);
        let mut emissions = vec![T::zero(); n * k];
        for t in 0..n {
            let mut s = Vec::with_capacity(2 * h);
            s.extend_from_slice(&fwd[t].h);
            s.extend_from_slice(&bwd[n - 1 - t].h);
            let row = &mut emissions[t * k..(t + 1) * k];
            row.copy_from_slice(self.emission_b.value.data());
            matvec_acc(self.emission_w.value.data(), k, 2 * h, &s, row);
            states.push(s);
        }
        Ok(Forward {
            fwd,
            bwd,
            states,
            emissions: DenseArray::from_vec(&[n, k], emissions)?,
        })
    }

    /// Emission scores, `T × K`.
    pub fn emissions(&self, inputs: &[Vec<T>]) -> Result<DenseArray<T>> {
        Ok(self.run(inputs)?.emissions)
    }

    pub fn nll(&self, inputs: &[Vec<T>], gold: &[usize]) -> Result<T> {
        let e = self.emissions(inputs)?;
        crf_nll(&e, &self.crf.transitions.value, gold)
    }

    /// CRF negative log-likelihood of `gold`; accumulates `scale ×` its
    /// gradient. Inputs are treated as constants.
    pub fn nll_grad(&mut self, inputs: &[Vec<T>], gold: &[usize], scale: T) -> Result<T> {
        let f = self.run(inputs)?;
        let (n, k, h) = (inputs.len(), self.num_tags(), self.config.hidden_size);
        let mut de = vec![T::zero(); n * k];
        let loss = crf_nll_grad(
            &f.emissions,
            &self.crf.transitions.value,
            gold,
            scale,
            &mut de,
            self.crf.transitions.grad.data_mut(),
        )?;
        let mut dh_fwd = vec![Vec::new(); n];
        let mut dh_bwd = vec![Vec::new(); n];
        for t in 0..n {
            let d = &de[t * k..(t + 1) * k];
            outer_acc(self.emission_w.grad.data_mut(), 2 * h, d, &f.states[t]);
            for (g, v) in self.emission_b.grad.data_mut().iter_mut().zip(d) {
                *g += *v;
            }
            let mut ds = vec![T::zero(); 2 * h];
            matvec_t_acc(self.emission_w.value.data(), k, 2 * h, d, &mut ds);
            dh_bwd[n - 1 - t] = ds.split_off(h);
            dh_fwd[t] = ds;
        }
        self.forward.backward_seq(&f.fwd, &dh_fwd);
        self.backward.backward_seq(&f.bwd, &dh_bwd);
        Ok(loss)
    }

    /// Viterbi tag ids.
    pub fn decode(&self, inputs: &[Vec<T>]) -> Result<Vec<usize>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let e = self.emissions(inputs)?;
        Ok(viterbi_decode(&e, &self.crf.transitions.value)?.0)
    }

    pub fn decode_tags(&self, inputs: &[Vec<T>]) -> Result<Vec<String>> {
        Ok(self.decode(inputs)?.into_iter().map(|y| self.tagset.tag(y).to_string()).collect())
    }

    /// Gold tag ids; tags outside the tag set become `O` and are counted.
    pub fn gold_ids<S: AsRef<str>>(&self, tags: &[S]) -> (Vec<usize>, usize) {
        let mut unseen = 0;
        let ids = tags
            .iter()
            .map(|t| {
                self.tagset.id(t.as_ref()).unwrap_or_else(|| {
                    unseen += 1;
                    self.tagset.outside()
                })
            })
            .collect();
        (ids, unseen)
    }
}

impl<T: Real> Params<T> for TaggerModel<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.forward.visit(f);
        self.backward.visit(f);
        f(&self.emission_w);
        f(&self.emission_b);
        f(&self.crf.transitions);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
        f(&mut self.emission_w);
        f(&mut self.emission_b);
        f(&mut self.crf.transitions);
    }
}

impl TaggerModel<f32> {
    /// Tags and spans for one sentence.
    pub fn predict(&self, stack: &EmbedderStack, sentence: &Sentence) -> Result<(Vec<String>, Vec<Span>)> {
        if sentence.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        self.check_stack(stack)?;
        let tags = self.decode_tags(&stack.embed(sentence)?)?;
        let spans = spans_from_bio(&tags)?;
        Ok((tags, spans))
    }

    pub fn check_stack(&self, stack: &EmbedderStack) -> Result<()> {
        if stack.dim() != self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "embedder stack {:?} yields {} dimensions but the tagger expects {}",
                stack.spec(),
                stack.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(KIND);
        self.config.write(&mut c);
        c.set("tagset", encode_types(self.tagset.entity_types()));
        c.set("stack_spec", &self.stack_spec);
        c.set("input_dim", self.input_dim);
        c.put_params(self);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(KIND)?;
        let config = TaggerTrainConfig::read(c)?;
        let tagset = TagSet::new(&decode_types(c.get("tagset")?)?);
        let mut model = Self::new(
            tagset,
            c.get("stack_spec")?,
            c.parse("input_dim")?,
            config,
            &mut SeededRng::new(0),
        )?;
        c.take_params(&mut model)?;
        model.crf.clamp();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Result of [`train_tagger`].
#[derive(Clone, Debug)]
pub struct TaggerTraining {
    /// Best-development snapshot.
    pub model: TaggerModel,
    pub log: TrainLog,
    /// Gold tags outside the tag set, mapped to `O` (train and dev).
    pub unseen_tags: usize,
}

fn dropout(x: &[f32], p: f64, rng: &mut SeededRng) -> Vec<f32> {
    if p == 0.0 {
        return x.to_vec();
    }
    let keep = 1.0 - p;
    let scale = (1.0 / keep) as f32;
    x.iter().map(|v| if rng.bernoulli(keep) { v * scale } else { 0.0 }).collect()
}

fn span_f1(model: &TaggerModel, data: &[LabeledSentence], inputs: &[Vec<Vec<f32>>]) -> Result<f64> {
    let pred = inputs.iter().map(|x| model.decode_tags(x)).collect::<Result<Vec<_>>>()?;
    Ok(micro_f1(data, &pred)?.micro.f1())
}

/// Minimizes mean CRF loss over `train` with SGD, annealing on
/// development span micro-F1 and keeping the best-development snapshot.
/// When `dev` is empty, training F1 drives annealing and selection.
pub fn train_tagger(
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    stack: &EmbedderStack,
    tagset: &TagSet,
    config: &TaggerTrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TaggerTraining> {
    config.validate()?;
    let train: Vec<&LabeledSentence> = train.iter().filter(|s| !s.sentence.is_empty()).collect();
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = SeededRng::new(config.seed);
    let mut model = TaggerModel::<f32>::new(tagset.clone(), stack.spec(), stack.dim(), config.clone(), &mut rng)?;

    let mut unseen_tags = 0;
    let mut train_inputs = Vec::with_capacity(train.len());
    let mut train_gold = Vec::with_capacity(train.len());
    for s in &train {
        train_inputs.push(stack.embed(&s.sentence)?);
        let (ids, unseen) = model.gold_ids(&s.tags);
        unseen_tags += unseen;
        train_gold.push(ids);
    }
    let train_data: Vec<LabeledSentence> = train.iter().map(|s| (*s).clone()).collect();
    let dev_inputs = dev.iter().map(|s| stack.embed(&s.sentence)).collect::<Result<Vec<_>>>()?;
    unseen_tags += dev.iter().map(|s| model.gold_ids(&s.tags).1).sum::<usize>();

    let mut sgd = SgdState::new(
        config.lr,
        config.anneal_factor,
        config.patience,
        config.clip_norm,
        MetricDirection::HigherIsBetter,
    )?;
    let mut best = model.clone();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let lr = sgd.lr;
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let inputs: Vec<Vec<f32>> = train_inputs[i].iter().map(|x| dropout(x, config.dropout, &mut rng)).collect();
                loss_sum += model.nll_grad(&inputs, &train_gold[i], scale)? as f64;
            }
            model.crf.clamp();
            sgd_step(&mut model, lr, config.clip_norm)?;
            model.crf.clamp();
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_f1 = if config.eval_train || dev.is_empty() {
            Some(span_f1(&model, &train_data, &train_inputs)?)
        } else {
            None
        };
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(span_f1(&model, dev, &dev_inputs)?)
        };
        let event = sgd.maybe_anneal(dev_f1.or(train_f1).unwrap_or_default());
        if event == AnnealEvent::Improved {
            best = model.clone();
            if let Some(path) = checkpoint {
                best.save(path)?;
            }
        }
        let mut metrics = vec![("train_loss".to_string(), train_loss)];
        metrics.extend(dev_f1.map(|f| ("dev_f1".to_string(), f)));
        metrics.extend(train_f1.map(|f| ("train_f1".to_string(), f)));
        log.push(EpochRecord {
            epoch,
            lr,
            metrics,
            event: event.to_string(),
        });
        if matches!(event, AnnealEvent::Stop { .. }) {
            break;
        }
    }
    Ok(TaggerTraining {
        model: best,
        log,
        unseen_tags,
    })
}

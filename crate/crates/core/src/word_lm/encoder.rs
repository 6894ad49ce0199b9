//! Character-CNN token encoder: character embeddings, convolution banks,
//! max-pooling over time, one highway layer and a linear projection.

use crate::corpus::CharVocabulary;
use crate::nn::ops::{add_assign, affine, matvec_t_acc, outer_acc, sigmoid};
use crate::nn::{Parameter, Real, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank<T = f32> {
    pub width: usize,
    /// `[count × width·embed]`, window-major.
    pub w: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Real> ConvBank<T> {
    fn count(&self) -> usize {
        self.b.value.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenEncoder<T = f32> {
    pub char_embedding: Parameter<T>,
    pub banks: Vec<ConvBank<T>>,
    pub highway_w: Parameter<T>,
    pub highway_b: Parameter<T>,
    pub gate_w: Parameter<T>,
    pub gate_b: Parameter<T>,
    pub proj_w: Parameter<T>,
    pub proj_b: Parameter<T>,
    pub max_word_chars: usize,
}

/// Intermediate values of one encoded token.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    ids: Vec<usize>,
    /// Per bank, per filter: argmax window start.
    argmax: Vec<Vec<usize>>,
    pooled: Vec<T>,
    transform: Vec<T>,
    gate: Vec<T>,
    highway: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Real> TokenEncoder<T> {
    pub fn new(
        chars: usize,
        embed: usize,
        filters: &[(usize, usize)],
        projection: usize,
        max_word_chars: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let banks: Vec<ConvBank<T>> = filters
            .iter()
            .map(|&(width, count)| ConvBank {
                width,
                w: Parameter::uniform(format!("encoder.conv{width}.w"), &[count, width * embed], width * embed, rng),
                b: Parameter::uniform(format!("encoder.conv{width}.b"), &[count], width * embed, rng),
            })
            .collect();
        let d: usize = filters.iter().map(|f| f.1).sum();
        TokenEncoder {
            char_embedding: Parameter::uniform("encoder.char_embedding", &[chars, embed], 1, rng),
            banks,
            highway_w: Parameter::uniform("encoder.highway.w", &[d, d], d, rng),
            highway_b: Parameter::uniform("encoder.highway.b", &[d], d, rng),
            gate_w: Parameter::uniform("encoder.gate.w", &[d, d], d, rng),
            gate_b: Parameter::uniform("encoder.gate.b", &[d], d, rng),
            proj_w: Parameter::uniform("encoder.proj.w", &[projection, d], d, rng),
            proj_b: Parameter::uniform("encoder.proj.b", &[projection], d, rng),
            max_word_chars,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.proj_b.value.len()
    }

    fn embed_dim(&self) -> usize {
        self.char_embedding.value.dims()[1]
    }

    fn pooled_dim(&self) -> usize {
        self.banks.iter().map(ConvBank::count).sum()
    }

    /// Character ids of a word: truncated to `max_word_chars`, framed by
    /// `BOUNDARY` and padded with `PAD` up to the widest filter.
    pub fn char_ids(&self, vocab: &CharVocabulary, word: &str) -> Vec<usize> {
        let mut ids = vec![CharVocabulary::BOUNDARY];
        ids.extend(word.chars().take(self.max_word_chars).map(|c| vocab.id(c)));
        ids.push(CharVocabulary::BOUNDARY);
        let widest = self.banks.iter().map(|b| b.width).max().unwrap_or(1);
        while ids.len() < widest {
            ids.push(CharVocabulary::PAD);
        }
        ids
    }

    pub fn forward(&self, ids: &[usize]) -> EncoderCache<T> {
        let e = self.embed_dim();
        let emb = &self.char_embedding.value;
        let mut pooled = Vec::with_capacity(self.pooled_dim());
        let mut argmax = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let k = bank.width;
            let windows = ids.len() + 1 - k;
            let mut arg = Vec::with_capacity(bank.count());
            for f in 0..bank.count() {
                let wrow = bank.w.value.row(f);
                let mut best = T::neg_infinity();
                let mut best_p = 0;
                for p in 0..windows {
                    let mut s = bank.b.value.data()[f];
                    for j in 0..k {
                        let x = emb.row(ids[p + j]);
                        for (a, b) in wrow[j * e..(j + 1) * e].iter().zip(x) {
                            s += *a * *b;
                        }
                    }
                    if s > best {
                        best = s;
                        best_p = p;
                    }
                }
                pooled.push(best.tanh());
                arg.push(best_p);
            }
            argmax.push(arg);
        }
        let relu = |v: T| if v > T::zero() { v } else { T::zero() };
        let transform: Vec<T> = affine(self.highway_w.value.data(), self.highway_b.value.data(), &pooled)
            .into_iter()
            .map(relu)
            .collect();
        let gate: Vec<T> = affine(self.gate_w.value.data(), self.gate_b.value.data(), &pooled)
            .into_iter()
            .map(sigmoid)
            .collect();
        let highway: Vec<T> = (0..pooled.len())
            .map(|i| gate[i] * transform[i] + (T::one() - gate[i]) * pooled[i])
            .collect();
        let output = affine(self.proj_w.value.data(), self.proj_b.value.data(), &highway);
        EncoderCache {
            ids: ids.to_vec(),
            argmax,
            pooled,
            transform,
            gate,
            highway,
            output,
        }
    }

    pub fn encode(&self, vocab: &CharVocabulary, word: &str) -> Vec<T> {
        self.forward(&self.char_ids(vocab, word)).output
    }

    /// Accumulates parameter gradients for `d_output`.
    pub fn backward(&mut self, cache: &EncoderCache<T>, d_output: &[T]) {
        let d = self.pooled_dim();
        let e = self.embed_dim();
        outer_acc(self.proj_w.grad.data_mut(), d, d_output, &cache.highway);
        add_assign(self.proj_b.grad.data_mut(), d_output);
        let mut d_hw = vec![T::zero(); d];
        matvec_t_acc(self.proj_w.value.data(), d_output.len(), d, d_output, &mut d_hw);

        let mut d_pooled = vec![T::zero(); d];
        let mut d_tpre = vec![T::zero(); d];
        let mut d_gpre = vec![T::zero(); d];
        for i in 0..d {
            let (g, t, x) = (cache.gate[i], cache.transform[i], cache.pooled[i]);
            d_pooled[i] = d_hw[i] * (T::one() - g);
            if t > T::zero() {
                d_tpre[i] = d_hw[i] * g;
            }
            d_gpre[i] = d_hw[i] * (t - x) * g * (T::one() - g);
        }
        outer_acc(self.highway_w.grad.data_mut(), d, &d_tpre, &cache.pooled);
        add_assign(self.highway_b.grad.data_mut(), &d_tpre);
        outer_acc(self.gate_w.grad.data_mut(), d, &d_gpre, &cache.pooled);
        add_assign(self.gate_b.grad.data_mut(), &d_gpre);
        matvec_t_acc(self.highway_w.value.data(), d, d, &d_tpre, &mut d_pooled);
        matvec_t_acc(self.gate_w.value.data(), d, d, &d_gpre, &mut d_pooled);

        let mut offset = 0;
        for (bank, arg) in self.banks.iter_mut().zip(&cache.argmax) {
            let k = bank.width;
            for (f, &p) in arg.iter().enumerate() {
                let y = cache.pooled[offset + f];
                let dm = d_pooled[offset + f] * (T::one() - y * y);
                bank.b.grad.data_mut()[f] += dm;
                for j in 0..k {
                    let id = cache.ids[p + j];
                    let x = self.char_embedding.value.row(id).to_vec();
                    let wrow = bank.w.value.row(f)[j * e..(j + 1) * e].to_vec();
                    for (g, xv) in bank.w.grad.row_mut(f)[j * e..(j + 1) * e].iter_mut().zip(&x) {
                        *g += dm * *xv;
                    }
                    for (g, wv) in self.char_embedding.grad.row_mut(id).iter_mut().zip(&wrow) {
                        *g += dm * *wv;
                    }
                }
            }
            offset += bank.count();
        }
    }

    pub fn cast<U: Real>(&self) -> TokenEncoder<U> {
        TokenEncoder {
            char_embedding: self.char_embedding.cast(),
            banks: self
                .banks
                .iter()
                .map(|b| ConvBank {
                    width: b.width,
                    w: b.w.cast(),
                    b: b.b.cast(),
                })
                .collect(),
            highway_w: self.highway_w.cast(),
            highway_b: self.highway_b.cast(),
            gate_w: self.gate_w.cast(),
            gate_b: self.gate_b.cast(),
            proj_w: self.proj_w.cast(),
            proj_b: self.proj_b.cast(),
            max_word_chars: self.max_word_chars,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.char_embedding);
        for b in &self.banks {
            f(&b.w);
            f(&b.b);
        }
        f(&self.highway_w);
        f(&self.highway_b);
        f(&self.gate_w);
        f(&self.gate_b);
        f(&self.proj_w);
        f(&self.proj_b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.char_embedding);
        for b in &mut self.banks {
            f(&mut b.w);
            f(&mut b.b);
        }
        f(&mut self.highway_w);
        f(&mut self.highway_b);
        f(&mut self.gate_w);
        f(&mut self.gate_b);
        f(&mut self.proj_w);
        f(&mut self.proj_b);
    }
}

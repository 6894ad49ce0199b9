//! Single-layer LSTM with an optional output projection.
//!
//! Gate layout inside the stacked `4H` pre-activation is `[input, forget,
//! cell, output]`:
//!
//! ```text
//! z = W_ih x + W_hh h_prev + b
//! i = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c = f ⊙ c_prev + i ⊙ g
//! m = o ⊙ tanh(c)
//! h = m            (no projection)
//! h = W_proj m     (projected; h then has the projection width)
//! ```

use crate::error::{Error, Result};

use super::ops::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::{DenseArray, Parameter, Real, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T = f32> {
    pub w_ih: Parameter<T>,
    pub w_hh: Parameter<T>,
    pub bias: Parameter<T>,
    pub proj: Option<Parameter<T>>,
}

/// Activations kept from one step for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    gates: Vec<T>,
    tanh_c: Vec<T>,
    m: Vec<T>,
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmParams<T> {
    /// Uniform init with forget-gate bias 1.0.
    pub fn new(
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        projection: Option<usize>,
        rng: &mut SeededRng,
    ) -> Self {
        let rec = projection.unwrap_or(hidden);
        let w_ih = Parameter::uniform(format!("{prefix}.w_ih"), &[4 * hidden, input_dim], input_dim, rng);
        let w_hh = Parameter::uniform(format!("{prefix}.w_hh"), &[4 * hidden, rec], rec, rng);
        let mut bias = Parameter::uniform(format!("{prefix}.bias"), &[4 * hidden], hidden, rng);
        for v in &mut bias.value.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        let proj = projection.map(|p| Parameter::uniform(format!("{prefix}.proj"), &[p, hidden], hidden, rng));
        LstmParams { w_ih, w_hh, bias, proj }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.dims()[1]
    }

    /// Width of the memory cell.
    pub fn hidden_dim(&self) -> usize {
        self.bias.value.len() / 4
    }

    /// Width of the emitted (and recurrent) state.
    pub fn output_dim(&self) -> usize {
        self.w_hh.dims()[1]
    }

    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> LstmCache<T> {
        let hd = self.hidden_dim();
        let mut z = self.bias.value.data().to_vec();
        matvec_acc(self.w_ih.value.data(), 4 * hd, x.len(), x, &mut z);
        matvec_acc(self.w_hh.value.data(), 4 * hd, h_prev.len(), h_prev, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let (i, rest) = z.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let mut c = vec![T::zero(); hd];
        let mut tanh_c = vec![T::zero(); hd];
        let mut m = vec![T::zero(); hd];
        for k in 0..hd {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tanh_c[k] = c[k].tanh();
            m[k] = o[k] * tanh_c[k];
        }
        let h = match &self.proj {
            Some(p) => {
                let mut h = vec![T::zero(); p.dims()[0]];
                matvec_acc(p.value.data(), h.len(), hd, &m, &mut h);
                h
            }
            None => m.clone(),
        };
        LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: z,
            tanh_c,
            m,
            h,
            c,
        }
    }

    /// Accumulates parameter gradients for one step and returns
    /// `(dx, dh_prev, dc_prev)`.
    pub fn backward(&mut self, cache: &LstmCache<T>, dh: &[T], dc: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hd = self.hidden_dim();
        let dm = match &mut self.proj {
            Some(p) => {
                outer_acc(p.grad.data_mut(), hd, dh, &cache.m);
                let mut dm = vec![T::zero(); hd];
                matvec_t_acc(p.value.data(), dh.len(), hd, dh, &mut dm);
                dm
            }
            None => dh.to_vec(),
        };
        let g = &cache.gates;
        let mut dz = vec![T::zero(); 4 * hd];
        let mut dc_prev = vec![T::zero(); hd];
        for k in 0..hd {
            let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let d_o = dm[k] * tc;
            let dct = dc[k] + dm[k] * o * (T::one() - tc * tc);
            dz[k] = dct * gg * i * (T::one() - i);
            dz[hd + k] = dct * cache.c_prev[k] * f * (T::one() - f);
            dz[2 * hd + k] = dct * i * (T::one() - gg * gg);
            dz[3 * hd + k] = d_o * o * (T::one() - o);
            dc_prev[k] = dct * f;
        }
        let in_dim = cache.x.len();
        let rec = cache.h_prev.len();
        outer_acc(self.w_ih.grad.data_mut(), in_dim, &dz, &cache.x);
        outer_acc(self.w_hh.grad.data_mut(), rec, &dz, &cache.h_prev);
        for (b, d) in self.bias.grad.data_mut().iter_mut().zip(&dz) {
            *b += *d;
        }
        let mut dx = vec![T::zero(); in_dim];
        matvec_t_acc(self.w_ih.value.data(), 4 * hd, in_dim, &dz, &mut dx);
        let mut dh_prev = vec![T::zero(); rec];
        matvec_t_acc(self.w_hh.value.data(), 4 * hd, rec, &dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }

    /// Runs a sequence from the given state (zeros when `None`).
    pub fn run(&self, xs: &[Vec<T>], init: Option<(&[T], &[T])>) -> Vec<LstmCache<T>> {
        let zero_h = vec![T::zero(); self.output_dim()];
        let zero_c = vec![T::zero(); self.hidden_dim()];
        let (mut h, mut c) = match init {
            Some((h, c)) => (h.to_vec(), c.to_vec()),
            None => (zero_h, zero_c),
        };
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let cache = self.step(x, &h, &c);
            h.clone_from(&cache.h);
            c.clone_from(&cache.c);
            caches.push(cache);
        }
        caches
    }

    /// Backpropagation through a sequence run. `dhs[t]` is the loss
    /// gradient w.r.t. the output at step `t`; the gradient reaching the
    /// initial state is dropped (truncated backpropagation).
    pub fn backward_seq(&mut self, caches: &[LstmCache<T>], dhs: &[Vec<T>]) -> Vec<Vec<T>> {
        let mut dh_next = vec![T::zero(); self.output_dim()];
        let mut dc_next = vec![T::zero(); self.hidden_dim()];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let mut dh = dhs[t].clone();
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += *b;
            }
            let (dx, dh_prev, dc_prev) = self.backward(&caches[t], &dh, &dc_next);
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        LstmParams {
            w_ih: self.w_ih.cast(),
            w_hh: self.w_hh.cast(),
            bias: self.bias.cast(),
            proj: self.proj.as_ref().map(Parameter::cast),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        f(&self.w_ih);
        f(&self.w_hh);
        f(&self.bias);
        if let Some(p) = &self.proj {
            f(p);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.w_ih);
        f(&mut self.w_hh);
        f(&mut self.bias);
        if let Some(p) = &mut self.proj {
            f(p);
        }
    }
}

impl<T: Real> super::Params<T> for LstmParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        LstmParams::visit(self, f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        LstmParams::visit_mut(self, f)
    }
}

/// One checked LSTM step returning `(h, c)`.
pub fn lstm_step<T: Real>(
    x: &DenseArray<T>,
    h_prev: &DenseArray<T>,
    c_prev: &DenseArray<T>,
    params: &LstmParams<T>,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let expect = |name: &str, a: &DenseArray<T>, n: usize| {
        if a.dims() != [n] {
            Err(Error::dims(name, &[n], a.dims()))
        } else {
            Ok(())
        }
    };
    expect("x", x, params.input_dim())?;
    expect("h_prev", h_prev, params.output_dim())?;
    expect("c_prev", c_prev, params.hidden_dim())?;
    let cache = params.step(x.data(), h_prev.data(), c_prev.data());
    Ok((DenseArray::vector(cache.h), DenseArray::vector(cache.c)))
}

//! Linear-chain CRF over `K` tags with virtual `START` (`K`) and `STOP`
//! (`K + 1`) states. `transitions[i][j]` scores moving from `i` to `j`.

use crate::corpus::{BioTag, TagSet};
use crate::error::{Error, Result};
use crate::nn::ops::log_sum_exp;
use crate::nn::{DenseArray, Parameter, Real};

/// Score given to structurally impossible transitions.
pub const SENTINEL: f64 = -1e4;

fn check<T: Real>(emissions: &DenseArray<T>, transitions: &DenseArray<T>) -> Result<(usize, usize)> {
    let dims = emissions.dims();
    if dims.len() != 2 || dims[0] == 0 || dims[1] == 0 {
        return Err(Error::InvalidArgument(format!(
            "emissions must be a non-empty T×K matrix, got {dims:?}"
        )));
    }
    let (t, k) = (dims[0], dims[1]);
    if transitions.dims() != [k + 2, k + 2] {
        return Err(Error::dims("transitions", &[k + 2, k + 2], transitions.dims()));
    }
    if !emissions.is_finite() {
        return Err(Error::NonFinite("emissions".into()));
    }
    Ok((t, k))
}

fn check_path(path: &[usize], t: usize, k: usize) -> Result<()> {
    if path.len() != t {
        return Err(Error::InvalidArgument(format!("path has {} tags for {t} positions", path.len())));
    }
    if let Some(&bad) = path.iter().find(|&&y| y >= k) {
        return Err(Error::TargetOutOfRange { target: bad, size: k });
    }
    Ok(())
}

/// Forward log-scores `alpha[t][j]`, flattened `T×K`.
fn forward_scores<T: Real>(e: &[T], tr: &[T], t: usize, k: usize) -> Vec<T> {
    let n = k + 2;
    let start = k;
    let mut alpha = vec![T::zero(); t * k];
    for j in 0..k {
        alpha[j] = tr[start * n + j] + e[j];
    }
    let mut scratch = vec![T::zero(); k];
    for s in 1..t {
        for j in 0..k {
            for i in 0..k {
                scratch[i] = alpha[(s - 1) * k + i] + tr[i * n + j];
            }
            alpha[s * k + j] = log_sum_exp(&scratch) + e[s * k + j];
        }
    }
    alpha
}

/// Backward log-scores `beta[t][i]`, flattened `T×K`.
fn backward_scores<T: Real>(e: &[T], tr: &[T], t: usize, k: usize) -> Vec<T> {
    let n = k + 2;
    let stop = k + 1;
    let mut beta = vec![T::zero(); t * k];
    for i in 0..k {
        beta[(t - 1) * k + i] = tr[i * n + stop];
    }
    let mut scratch = vec![T::zero(); k];
    for s in (0..t - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                scratch[j] = tr[i * n + j] + e[(s + 1) * k + j] + beta[(s + 1) * k + j];
            }
            beta[s * k + i] = log_sum_exp(&scratch);
        }
    }
    beta
}

fn log_z_from_alpha<T: Real>(alpha: &[T], tr: &[T], t: usize, k: usize) -> T {
    let n = k + 2;
    let last: Vec<T> = (0..k).map(|j| alpha[(t - 1) * k + j] + tr[j * n + k + 1]).collect();
    log_sum_exp(&last)
}

/// `log Σ_paths exp(score(path))` by the forward algorithm.
pub fn crf_log_partition<T: Real>(emissions: &DenseArray<T>, transitions: &DenseArray<T>) -> Result<T> {
    let (t, k) = check(emissions, transitions)?;
    let alpha = forward_scores(emissions.data(), transitions.data(), t, k);
    Ok(log_z_from_alpha(&alpha, transitions.data(), t, k))
}

/// Emission and transition score of one path, including `START`/`STOP`.
pub fn path_score<T: Real>(emissions: &DenseArray<T>, transitions: &DenseArray<T>, path: &[usize]) -> Result<T> {
    let (t, k) = check(emissions, transitions)?;
    check_path(path, t, k)?;
    let (e, tr, n) = (emissions.data(), transitions.data(), k + 2);
    let mut score = tr[k * n + path[0]];
    for (s, &y) in path.iter().enumerate() {
        score += e[s * k + y];
        if s > 0 {
            score += tr[path[s - 1] * n + y];
        }
    }
    Ok(score + tr[path[t - 1] * n + k + 1])
}

/// `logZ − score(gold)`.
pub fn crf_nll<T: Real>(emissions: &DenseArray<T>, transitions: &DenseArray<T>, gold: &[usize]) -> Result<T> {
    Ok(crf_log_partition(emissions, transitions)? - path_score(emissions, transitions, gold)?)
}

/// Posterior marginals of a CRF instance.
#[derive(Clone, Debug)]
pub struct Marginals<T> {
    /// `p(y_t = j)`, flattened `T×K`.
    pub unary: Vec<T>,
    /// Expected count of each transition, flattened `(K+2)×(K+2)`.
    pub transitions: Vec<T>,
    pub log_z: T,
}

pub fn crf_marginals<T: Real>(emissions: &DenseArray<T>, transitions: &DenseArray<T>) -> Result<Marginals<T>> {
    let (t, k) = check(emissions, transitions)?;
    let (e, tr, n) = (emissions.data(), transitions.data(), k + 2);
    let alpha = forward_scores(e, tr, t, k);
    let beta = backward_scores(e, tr, t, k);
    let log_z = log_z_from_alpha(&alpha, tr, t, k);
    let unary: Vec<T> = alpha.iter().zip(&beta).map(|(a, b)| (*a + *b - log_z).exp()).collect();
    let mut pair = vec![T::zero(); n * n];
    for j in 0..k {
        pair[k * n + j] = unary[j];
        pair[j * n + k + 1] = unary[(t - 1) * k + j];
    }
    for s in 0..t - 1 {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[s * k + i] + tr[i * n + j] + e[(s + 1) * k + j] + beta[(s + 1) * k + j] - log_z;
                pair[i * n + j] += lp.exp();
            }
        }
    }
    Ok(Marginals {
        unary,
        transitions: pair,
        log_z,
    })
}

/// Negative log-likelihood of `gold`; accumulates `scale ×` its gradient
/// into `d_emissions` (`T×K`) and `d_transitions` (`(K+2)×(K+2)`).
pub fn crf_nll_grad<T: Real>(
    emissions: &DenseArray<T>,
    transitions: &DenseArray<T>,
    gold: &[usize],
    scale: T,
    d_emissions: &mut [T],
    d_transitions: &mut [T],
) -> Result<T> {
    let m = crf_marginals(emissions, transitions)?;
    let score = path_score(emissions, transitions, gold)?;
    let (t, k) = (gold.len(), emissions.dims()[1]);
    let n = k + 2;
    for (d, p) in d_emissions.iter_mut().zip(&m.unary) {
        *d += scale * *p;
    }
    for (d, p) in d_transitions.iter_mut().zip(&m.transitions) {
        *d += scale * *p;
    }
    let mut prev = k;
    for (s, &y) in gold.iter().enumerate() {
        d_emissions[s * k + y] -= scale;
        d_transitions[prev * n + y] -= scale;
        prev = y;
    }
    d_transitions[gold[t - 1] * n + k + 1] -= scale;
    Ok(m.log_z - score)
}

/// Highest-scoring path and its score. Ties go to the lowest tag id.
pub fn viterbi_decode<T: Real>(emissions: &DenseArray<T>, transitions: &DenseArray<T>) -> Result<(Vec<usize>, T)> {
    let (t, k) = check(emissions, transitions)?;
    let (e, tr, n) = (emissions.data(), transitions.data(), k + 2);
    let mut delta: Vec<T> = (0..k).map(|j| tr[k * n + j] + e[j]).collect();
    let mut back = vec![0usize; t * k];
    for s in 1..t {
        let mut next = vec![T::zero(); k];
        for j in 0..k {
            let mut best = delta[0] + tr[j];
            let mut arg = 0;
            for i in 1..k {
                let v = delta[i] + tr[i * n + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + e[s * k + j];
            back[s * k + j] = arg;
        }
        delta = next;
    }
    let mut best = delta[0] + tr[k + 1];
    let mut last = 0;
    for j in 1..k {
        let v = delta[j] + tr[j * n + k + 1];
        if v > best {
            best = v;
            last = j;
        }
    }
    let mut path = vec![0; t];
    path[t - 1] = last;
    for s in (1..t).rev() {
        path[s - 1] = back[s * k + path[s]];
    }
    Ok((path, best))
}

/// Whether `to` may follow `from` in a BIO sequence; `None` stands for
/// `START` (as `from`) or `STOP` (as `to`).
pub fn bio_transition_allowed(from: Option<&str>, to: Option<&str>) -> bool {
    let to = match to.map(BioTag::parse) {
        None => return true,
        Some(t) => t,
    };
    match to {
        Some(BioTag::Inside(x)) => matches!(
            from.and_then(BioTag::parse),
            Some(BioTag::Begin(y)) | Some(BioTag::Inside(y)) if y == x
        ),
        _ => true,
    }
}

/// Transition scores for a tag set, with forbidden entries pinned to
/// [`SENTINEL`].
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<T = f32> {
    pub transitions: Parameter<T>,
    forbidden: Vec<bool>,
}

impl<T: Real> CrfParams<T> {
    pub fn new(tagset: &TagSet) -> Self {
        let k = tagset.len();
        let n = k + 2;
        let label = |i: usize| (i < k).then(|| tagset.tag(i));
        let mut forbidden = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                forbidden[i * n + j] = j == k
                    || i == k + 1
                    || (i == k && j == k + 1)
                    || (j < k && !bio_transition_allowed(label(i), label(j)));
            }
        }
        let mut crf = CrfParams {
            transitions: Parameter::zeros("crf.transitions", &[n, n]),
            forbidden,
        };
        crf.clamp();
        crf
    }

    pub fn num_tags(&self) -> usize {
        self.transitions.dims()[0] - 2
    }

    pub fn is_forbidden(&self, from: usize, to: usize) -> bool {
        let n = self.num_tags() + 2;
        self.forbidden[from * n + to]
    }

    /// Pins forbidden entries to the sentinel and drops their gradient.
    pub fn clamp(&mut self) {
        let s = T::lit(SENTINEL);
        for ((v, g), &f) in self
            .transitions
            .value
            .data_mut()
            .iter_mut()
            .zip(self.transitions.grad.data_mut())
            .zip(&self.forbidden)
        {
            if f {
                *v = s;
                *g = T::zero();
            }
        }
    }

    pub fn cast<U: Real>(&self) -> CrfParams<U> {
        CrfParams {
            transitions: self.transitions.cast(),
            forbidden: self.forbidden.clone(),
        }
    }
}

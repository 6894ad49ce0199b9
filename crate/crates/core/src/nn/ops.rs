//! Slice kernels shared by every layer. Matrices are row-major `rows × cols`.

use crate::error::{Error, Result};

use super::{DenseArray, Real};

/// `y += W x`
#[inline]
pub fn matvec_acc<T: Real>(w: &[T], rows: usize, cols: usize, x: &[T], y: &mut [T]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *yi += acc;
    }
}

/// `dx += Wᵀ dy`
#[inline]
pub fn matvec_t_acc<T: Real>(w: &[T], rows: usize, cols: usize, dy: &[T], dx: &mut [T]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(dx.len(), cols);
    for (g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *g == T::zero() {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += *g * *a;
        }
    }
}

/// `dW += dy xᵀ`
#[inline]
pub fn outer_acc<T: Real>(dw: &mut [T], cols: usize, dy: &[T], x: &[T]) {
    debug_assert_eq!(dw.len(), dy.len() * cols);
    for (g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if *g == T::zero() {
            continue;
        }
        for (d, v) in row.iter_mut().zip(x) {
            *d += *g * *v;
        }
    }
}

#[inline]
pub fn add_assign<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Logits `W h + b` for a `V × d` weight matrix.
pub fn affine<T: Real>(w: &[T], b: &[T], h: &[T]) -> Vec<T> {
    let rows = b.len();
    let mut out = b.to_vec();
    matvec_acc(w, rows, h.len(), h, &mut out);
    out
}

/// `softmax(W h + b)` over `V` classes.
pub fn linear_softmax<T: Real>(
    h: &DenseArray<T>,
    w: &DenseArray<T>,
    b: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    let d = h.len();
    let v = b.len();
    if h.rank() != 1 {
        return Err(Error::dims("h", &[d], h.dims()));
    }
    if b.rank() != 1 {
        return Err(Error::dims("b", &[v], b.dims()));
    }
    if w.dims() != [v, d] {
        return Err(Error::dims("W", &[v, d], w.dims()));
    }
    let mut logits = affine(w.data(), b.data(), h.data());
    softmax_in_place(&mut logits);
    Ok(DenseArray::vector(logits))
}

/// Negative log-probability of `target`, in nats.
pub fn cross_entropy<T: Real>(probs: &DenseArray<T>, target: usize) -> Result<T> {
    let p = probs
        .data()
        .get(target)
        .ok_or(Error::TargetOutOfRange {
            target,
            size: probs.len(),
        })?;
    Ok(-p.ln())
}

/// Softmax cross-entropy on raw logits: returns the loss and overwrites
/// `logits` with `d loss / d logits` scaled by `scale`.
pub fn softmax_xent_grad<T: Real>(logits: &mut [T], target: usize, scale: T) -> T {
    softmax_in_place(logits);
    let loss = -logits[target].max(T::min_positive_value()).ln();
    for (i, v) in logits.iter_mut().enumerate() {
        let ind = if i == target { T::one() } else { T::zero() };
        *v = (*v - ind) * scale;
    }
    loss
}

/// Softmax cross-entropy loss on raw logits without gradient.
pub fn softmax_xent<T: Real>(logits: &[T], target: usize) -> T {
    log_sum_exp(logits) - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_weights_give_uniform() {
        let h = DenseArray::vector(vec![0.3f64, -1.0, 2.0]);
        let w = DenseArray::zeros(&[4, 3]);
        let b = DenseArray::zeros(&[4]);
        let p = linear_softmax(&h, &w, &b).unwrap();
        for v in p.data() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_biases_give_proportional_probabilities() {
        let h = DenseArray::vector(vec![1.0f64, 1.0]);
        let w = DenseArray::zeros(&[3, 2]);
        let b = DenseArray::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]);
        let p = linear_softmax(&h, &w, &b).unwrap();
        assert_abs_diff_eq!(p.data()[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.data()[1], 2.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.data()[2], 3.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn huge_logit_spread_stays_finite() {
        let h = DenseArray::vector(vec![1.0f32]);
        let w = DenseArray::from_vec(&[3, 1], vec![1e4, -1e4, 0.0]).unwrap();
        let b = DenseArray::zeros(&[3]);
        let p = linear_softmax(&h, &w, &b).unwrap();
        assert!(p.is_finite());
        assert_abs_diff_eq!(p.data().iter().sum::<f32>(), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn softmax_dimension_mismatch_names_operand() {
        let h = DenseArray::vector(vec![1.0f32, 2.0]);
        let w = DenseArray::zeros(&[3, 3]);
        let b = DenseArray::zeros(&[3]);
        let err = linear_softmax(&h, &w, &b).unwrap_err();
        assert!(err.to_string().contains("W"), "{err}");
    }

    #[test]
    fn cross_entropy_values() {
        let certain = DenseArray::vector(vec![0.0f64, 1.0]);
        assert_abs_diff_eq!(cross_entropy(&certain, 1).unwrap(), 0.0);
        let uniform = DenseArray::vector(vec![0.25f64; 4]);
        assert_abs_diff_eq!(cross_entropy(&uniform, 2).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&uniform, 2).unwrap(), 1.3863, epsilon = 1e-4);
        let p = DenseArray::vector(vec![0.1f64, 0.9]);
        assert_abs_diff_eq!(cross_entropy(&p, 0).unwrap(), -(0.1f64).ln(), epsilon = 1e-12);
        assert!(matches!(
            cross_entropy(&p, 2),
            Err(Error::TargetOutOfRange { target: 2, size: 2 })
        ));
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let v = [0.5f64, -1.0, 2.0];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&v), naive, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-1e4f32..1e4, 1..40)) {
            let mut p = logits.clone();
            softmax_in_place(&mut p);
            proptest::prop_assert!(p.iter().all(|v| v.is_finite()));
            let s: f32 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() <= 1e-5);
        }
    }
}

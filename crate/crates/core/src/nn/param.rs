use super::{DenseArray, Real, SeededRng};

/// A named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: DenseArray<T>,
    pub grad: DenseArray<T>,
}

impl<T: Real> Parameter<T> {
    pub fn zeros(name: impl Into<String>, dims: &[usize]) -> Self {
        Parameter {
            name: name.into(),
            value: DenseArray::zeros(dims),
            grad: DenseArray::zeros(dims),
        }
    }

    /// Uniform initialization in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn uniform(name: impl Into<String>, dims: &[usize], fan_in: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(name, dims);
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        for v in p.value.data_mut() {
            *v = T::lit(rng.uniform(-bound, bound));
        }
        p
    }

    pub fn from_value(name: impl Into<String>, value: DenseArray<T>) -> Self {
        let grad = DenseArray::zeros(value.dims());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn cast<U: Real>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}

/// A model made of named parameters.
///
/// Visiting order must be deterministic; serialization sorts by name
/// independently of it.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad.fill(T::zero()));
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }
}

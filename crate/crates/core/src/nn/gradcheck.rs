use crate::error::{Error, Result};

use super::{Params, Real, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn with_coordinate<T: Real, M: Params<T>>(model: &mut M, target: usize, f: &mut dyn FnMut(&mut T)) {
    let mut offset = 0;
    let mut done = false;
    model.visit_mut(&mut |p| {
        let n = p.value.len();
        if !done && target < offset + n {
            f(&mut p.value.data_mut()[target - offset]);
            done = true;
        }
        offset += n;
    });
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-5, 1e-2]")));
    }
    Ok(())
}

/// Zeroes gradients, runs `loss_and_grad` and rejects a non-finite loss.
fn evaluate<T, M, F>(model: &mut M, loss_and_grad: &mut F) -> Result<f64>
where
    T: Real,
    M: Params<T>,
    F: FnMut(&mut M) -> Result<T>,
{
    model.zero_grad();
    let l = loss_and_grad(model)?.as_f64();
    if !l.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(l)
}

fn analytic_coordinates<T: Real, M: Params<T>>(model: &M) -> Vec<(String, usize, f64)> {
    let mut coords = Vec::new();
    model.visit(&mut |p| {
        for (i, g) in p.grad.data().iter().enumerate() {
            coords.push((p.name.clone(), i, g.as_f64()));
        }
    });
    coords
}

fn compare<T, M, F>(
    coords: &[(String, usize, f64)],
    model: &mut M,
    loss_and_grad: &mut F,
    eps: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<GradCheckReport>
where
    T: Real,
    M: Params<T>,
    F: FnMut(&mut M) -> Result<T>,
{
    let picks = rng.sample_indices(coords.len(), samples);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for flat in picks {
        let mut orig = T::zero();
        with_coordinate(model, flat, &mut |v| orig = *v);
        let plus = orig + T::lit(eps);
        let minus = orig - T::lit(eps);
        with_coordinate(model, flat, &mut |v| *v = plus);
        let f_plus = evaluate(model, loss_and_grad)?;
        with_coordinate(model, flat, &mut |v| *v = minus);
        let f_minus = evaluate(model, loss_and_grad)?;
        with_coordinate(model, flat, &mut |v| *v = orig);

        let numeric = (f_plus - f_minus) / (plus - minus).as_f64();
        let (name, idx, analytic) = &coords[flat];
        let err = relative_error(*analytic, numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((name.clone(), *idx, *analytic, numeric));
        }
    }
    // Leave gradients consistent with the restored parameters.
    evaluate(model, loss_and_grad)?;
    Ok(report)
}

/// Compares the analytic gradient produced by `loss_and_grad` against
/// central differences `(f(θ+ε) − f(θ−ε)) / 2ε` on `samples` randomly drawn
/// coordinates (all coordinates when the model is smaller).
///
/// `loss_and_grad` must return the loss and accumulate its gradient into the
/// model's `grad` buffers; they are zeroed before every call.
pub fn grad_check<T, M, F>(
    model: &mut M,
    mut loss_and_grad: F,
    eps: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<GradCheckReport>
where
    T: Real,
    M: Params<T>,
    F: FnMut(&mut M) -> Result<T>,
{
    check_eps(eps)?;
    evaluate(model, &mut loss_and_grad)?;
    let coords = analytic_coordinates(model);
    compare(&coords, model, &mut loss_and_grad, eps, samples, rng)
}

/// Checks the 32-bit analytic gradient of `model` against central
/// differences taken on `reference`, the same parameters held in 64-bit.
/// Both models must expose parameters in the same order.
pub fn grad_check_f32<M32, M64, F32, F64>(
    model: &mut M32,
    mut loss_and_grad: F32,
    reference: &mut M64,
    mut reference_loss: F64,
    eps: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<GradCheckReport>
where
    M32: Params<f32>,
    M64: Params<f64>,
    F32: FnMut(&mut M32) -> Result<f32>,
    F64: FnMut(&mut M64) -> Result<f64>,
{
    check_eps(eps)?;
    let mut names32 = Vec::new();
    model.visit(&mut |p| names32.push((p.name.clone(), p.value.len())));
    let mut names64 = Vec::new();
    reference.visit(&mut |p| names64.push((p.name.clone(), p.value.len())));
    if names32 != names64 {
        return Err(Error::InvalidArgument("reference model has a different parameter layout".into()));
    }
    evaluate(model, &mut loss_and_grad)?;
    let coords = analytic_coordinates(model);
    compare(&coords, reference, &mut reference_loss, eps, samples, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameter;

    struct One(Parameter<f64>);

    impl Params<f64> for One {
        fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<f64>)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.0)
        }
    }

    struct One32(Parameter<f32>);

    impl Params<f32> for One32 {
        fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<f32>)) {
            f(&self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
            f(&mut self.0)
        }
    }

    fn at(v: f64) -> One {
        let mut p = Parameter::zeros("theta", &[1]);
        p.value.data_mut()[0] = v;
        One(p)
    }

    #[test]
    fn quadratic_at_three() {
        let mut m = at(3.0);
        let r = grad_check(
            &mut m,
            |m: &mut One| {
                let t = m.0.value.data()[0];
                m.0.grad.data_mut()[0] += t;
                Ok(0.5 * t * t)
            },
            1e-4,
            1,
            &mut SeededRng::new(0),
        )
        .unwrap();
        let (_, _, a, n) = r.worst.unwrap();
        assert_eq!(a, 3.0);
        assert!((n - 3.0).abs() < 1e-8);
        assert!(r.max_relative_error < 1e-6);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut m = at(1.0);
        let r = grad_check(&mut m, |_: &mut One| Ok(7.0), 1e-3, 1, &mut SeededRng::new(0)).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut m = at(2.0);
        let r = grad_check(
            &mut m,
            |m: &mut One| {
                let t = m.0.value.data()[0];
                m.0.grad.data_mut()[0] += 2.0 * t;
                Ok(0.5 * t * t)
            },
            1e-4,
            1,
            &mut SeededRng::new(0),
        )
        .unwrap();
        assert!(r.max_relative_error > 0.4);
    }

    #[test]
    fn mixed_precision_quadratic() {
        let mut m32 = One32(Parameter::zeros("theta", &[1]));
        m32.0.value.data_mut()[0] = 3.0;
        let mut m64 = at(3.0);
        let r = grad_check_f32(
            &mut m32,
            |m: &mut One32| {
                let t = m.0.value.data()[0];
                m.0.grad.data_mut()[0] += t;
                Ok(0.5 * t * t)
            },
            &mut m64,
            |m: &mut One| {
                let t = m.0.value.data()[0];
                Ok(0.5 * t * t)
            },
            1e-4,
            1,
            &mut SeededRng::new(0),
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_bad_eps_and_non_finite_loss() {
        let mut m = at(1.0);
        assert!(grad_check(&mut m, |_: &mut One| Ok(0.0), 0.5, 1, &mut SeededRng::new(0)).is_err());
        let err = grad_check(&mut m, |_: &mut One| Ok(f64::NAN), 1e-3, 1, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}

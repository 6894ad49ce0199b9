use cner_core::nn::ops::{matvec_acc, matvec_t_acc, outer_acc, softmax_xent_grad};
use cner_core::nn::{grad_check, grad_check_f32, LstmParams, Parameter, Params, Real, SeededRng};
use cner_core::Result;

/// One LSTM layer feeding a softmax over `classes`, scored by summed
/// cross-entropy along a sequence.
struct Seq<T> {
    lstm: LstmParams<T>,
    out: Parameter<T>,
}

impl<T: Real> Params<T> for Seq<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<T>)) {
        self.lstm.visit(f);
        f(&self.out);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.lstm.visit_mut(f);
        f(&mut self.out);
    }
}

fn loss<T: Real>(m: &mut Seq<T>, xs: &[Vec<T>], targets: &[usize]) -> Result<T> {
    let classes = m.out.dims()[0];
    let h = m.lstm.output_dim();
    let caches = m.lstm.run(xs, None);
    let mut total = T::zero();
    let mut dhs = Vec::new();
    for (c, &y) in caches.iter().zip(targets) {
        let mut logits = vec![T::zero(); classes];
        matvec_acc(m.out.value.data(), classes, h, &c.h, &mut logits);
        total += softmax_xent_grad(&mut logits, y, T::one());
        outer_acc(m.out.grad.data_mut(), h, &logits, &c.h);
        let mut dh = vec![T::zero(); h];
        matvec_t_acc(m.out.value.data(), classes, h, &logits, &mut dh);
        dhs.push(dh);
    }
    m.lstm.backward_seq(&caches, &dhs);
    Ok(total)
}

fn setup(projection: Option<usize>) -> (Seq<f64>, Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = SeededRng::new(17);
    let lstm = LstmParams::new("lstm", 4, 6, projection, &mut rng);
    let out = Parameter::uniform("out", &[5, projection.unwrap_or(6)], 3, &mut rng);
    let xs = (0..5).map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    (Seq { lstm, out }, xs, vec![0, 3, 1, 4, 2])
}

#[test]
fn lstm_cross_entropy_f64() {
    for proj in [None, Some(3)] {
        let (mut m, xs, ys) = setup(proj);
        let r = grad_check(&mut m, |m| loss(m, &xs, &ys), 1e-5, 200, &mut SeededRng::new(1)).unwrap();
        assert!(r.checked >= 50);
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }
}

#[test]
fn lstm_cross_entropy_f32() {
    let (mut m64, xs64, ys) = setup(Some(3));
    let mut m32 = Seq {
        lstm: m64.lstm.cast::<f32>(),
        out: m64.out.cast::<f32>(),
    };
    let xs32: Vec<Vec<f32>> = xs64.iter().map(|x| x.iter().map(|v| *v as f32).collect()).collect();
    let r = grad_check_f32(
        &mut m32,
        |m| loss(m, &xs32, &ys),
        &mut m64,
        |m| loss(m, &xs64, &ys),
        1e-3,
        200,
        &mut SeededRng::new(2),
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

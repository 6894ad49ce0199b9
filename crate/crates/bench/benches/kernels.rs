use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use cner_core::char_lm::{CarryState, CharBatches, CharStream};
use cner_core::corpus::build_char_vocab;
use cner_core::nn::LstmParams;
use cner_core::tagger::{crf_log_partition, viterbi_decode};
use cner_core::{CharLmConfig, CharLmModel, DenseArray, SeededRng, Sentence, TagSet, TaggerModel, TaggerTrainConfig};

fn random(rng: &mut SeededRng, dims: &[usize]) -> DenseArray<f32> {
    let n = dims.iter().product();
    DenseArray::from_vec(dims, (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap()
}

fn crf(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let (t, k) = (40, 13);
    let e = random(&mut rng, &[t, k]);
    let tr = random(&mut rng, &[k + 2, k + 2]);
    c.bench_function("crf_log_partition T40 K13", |b| {
        b.iter(|| crf_log_partition(black_box(&e), black_box(&tr)).unwrap())
    });
    c.bench_function("viterbi_decode T40 K13", |b| {
        b.iter(|| viterbi_decode(black_box(&e), black_box(&tr)).unwrap())
    });
}

fn lstm(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let lstm = LstmParams::<f32>::new("lstm", 100, 256, None, &mut rng);
    let xs: Vec<Vec<f32>> = (0..20)
        .map(|_| (0..100).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())
        .collect();
    c.bench_function("lstm run 20x100 -> 256", |b| b.iter(|| lstm.run(black_box(&xs), None)));
}

fn char_lm(c: &mut Criterion) {
    let corpus: Vec<Sentence> = ["patient denies chest pain", "started metoprolol daily", "fever resolved"]
        .iter()
        .map(|t| Sentence::from_words(&t.split(' ').collect::<Vec<_>>()))
        .collect();
    let vocab = build_char_vocab(&corpus, 1).unwrap();
    let config = CharLmConfig {
        hidden_size: 128,
        char_embed_dim: 16,
        ..CharLmConfig::default()
    };
    let mut model: CharLmModel = CharLmModel::new(vocab, config, &mut SeededRng::new(3)).unwrap();
    let stream = CharStream::new(&model.vocab, &corpus);
    let batches = CharBatches::new(&stream, 2, 25);
    let window = batches.window(0);
    c.bench_function("char_lm_loss_grad H128 seq25 bs2", |b| {
        b.iter(|| {
            let mut carry = CarryState::new(batches.rows());
            model.char_lm_loss_grad(black_box(&window), &mut carry).unwrap()
        })
    });
    c.bench_function("char_lm embed_words", |b| b.iter(|| model.embed_words(black_box(&corpus[0])).unwrap()));
}

fn tagger(c: &mut Criterion) {
    let tagset = TagSet::new(&["Drug", "Procedure", "Sign"]);
    let config = TaggerTrainConfig {
        hidden_size: 128,
        ..TaggerTrainConfig::default()
    };
    let mut rng = SeededRng::new(4);
    let model: TaggerModel = TaggerModel::new(tagset, "bench", 200, config, &mut rng).unwrap();
    let inputs: Vec<Vec<f32>> = (0..30)
        .map(|_| (0..200).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())
        .collect();
    c.bench_function("tagger decode T30 d200 H128", |b| b.iter(|| model.decode(black_box(&inputs)).unwrap()));
}

criterion_group!(benches, crf, lstm, char_lm, tagger);
criterion_main!(benches);

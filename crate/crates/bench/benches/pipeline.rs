use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array2;

use entrysep::experiment::{build_vocab, label_scheme, prepare, ExperimentSettings};
use entrysep::labeling::{align_annotations, AlignConfig};
use entrysep::metrics::evaluate;
use entrysep::model::{forward, loss_and_grad, ModelConfig, Params};
use entrysep::stream::{build_stream, ExperimentConfig};
use entrysep::synth::{apply_ocr_noise, generate_corpus, SynthParams};
use entrysep::tokenizer::encode;
use rand::SeedableRng;

fn corpus() -> entrysep::Corpus {
    generate_corpus(&SynthParams { n_pages: 4, ..SynthParams::default() }, 1).unwrap()
}

fn bench_stream_and_encode(c: &mut Criterion) {
    let corpus = corpus();
    let config = ExperimentConfig::preset("xp-2.1").unwrap();
    let vocab = build_vocab(&corpus, &ExperimentSettings { tokenizer_vocab_size: 500, ..Default::default() }).unwrap();
    c.bench_function("build_stream 320 lines", |b| b.iter(|| build_stream(black_box(&corpus.lines), &config).unwrap()));
    let stream = build_stream(&corpus.lines, &config).unwrap();
    c.bench_function("encode 320 lines", |b| b.iter(|| encode(&vocab, black_box(&stream)).unwrap()));
}

fn bench_align(c: &mut Criterion) {
    let clean = "Dupont (Jean-Baptiste), marchand de vins en gros, rue Saint-Honoré, 142";
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let noisy = apply_ocr_noise(clean, 0.03, &mut rng);
    let spans = [(0, 6), (8, 22), (25, 47), (49, 67), (69, 72)];
    c.bench_function("align entry of 72 chars", |b| {
        b.iter(|| align_annotations(black_box(clean), black_box(&noisy), &spans, &AlignConfig::default()))
    });
}

fn bench_model(c: &mut Criterion) {
    let config = ModelConfig {
        vocab_size: 500,
        n_labels: 14,
        max_seq_len: 128,
        ..ModelConfig::default()
    };
    let params = Params::<f32>::init(&config, 0).unwrap();
    let ids = Array2::from_shape_fn((8, 128), |(i, j)| ((i * 31 + j * 7) % 500) as u32);
    let mask = Array2::from_elem((8, 128), true);
    let labels = Array2::from_shape_fn((8, 128), |(i, j)| ((i + j) % 14) as u16);
    let mut group = c.benchmark_group("model d128");
    group.sample_size(10);
    group.bench_function("forward 8x128", |b| b.iter(|| forward(&params, ids.view(), mask.view()).unwrap()));
    group.bench_function("loss and gradient 8x128", |b| {
        b.iter(|| loss_and_grad(&params, ids.view(), mask.view(), labels.view()).unwrap())
    });
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let corpus = corpus();
    let config = ExperimentConfig::preset("xp-2.2").unwrap();
    let settings = ExperimentSettings { tokenizer_vocab_size: 500, ..Default::default() };
    let vocab = build_vocab(&corpus, &settings).unwrap();
    let scheme = label_scheme(&config, &settings.entity_kinds).unwrap();
    let set = prepare(&corpus, &config, &vocab, &scheme, &settings.align).unwrap();
    let gold = set.gold();
    c.bench_function("evaluate gold against itself", |b| {
        b.iter(|| evaluate(&scheme, black_box(&gold), &gold, set.stats).unwrap())
    });
}

criterion_group!(benches, bench_stream_and_encode, bench_align, bench_model, bench_metrics);
criterion_main!(benches);

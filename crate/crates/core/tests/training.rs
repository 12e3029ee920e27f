use entrysep::experiment::{build_vocab, label_scheme, prepare, run_experiment, ExperimentSettings};
use entrysep::model::{train, ModelConfig, TrainHyper};
use entrysep::stream::ExperimentConfig;
use entrysep::synth::{generate_corpus, SynthParams};

fn small_corpus() -> entrysep::Corpus {
    generate_corpus(
        &SynthParams {
            n_pages: 1,
            target_lines_per_column: 35,
            ..SynthParams::default()
        },
        12,
    )
    .unwrap()
}

fn settings() -> ExperimentSettings {
    ExperimentSettings {
        model: ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            d_ff: 64,
            max_seq_len: 64,
            dropout: 0.1,
            ..ModelConfig::default()
        },
        hyper: TrainHyper {
            learning_rate: 1e-3,
            max_steps: 30,
            eval_every: 10,
            batch_size: 4,
            min_crop: 32,
            seeds: vec![1],
            ..TrainHyper::default()
        },
        tokenizer_vocab_size: 300,
        ..ExperimentSettings::default()
    }
}

#[test]
fn training_loss_decreases_over_first_evaluations() {
    let corpus = small_corpus();
    assert!((40..=60).contains(&corpus.entries.len()), "{} entries", corpus.entries.len());
    let config = ExperimentConfig::preset("xp-1.6").unwrap();
    let s = settings();
    let vocab = build_vocab(&corpus, &s).unwrap();
    let scheme = label_scheme(&config, &s.entity_kinds).unwrap();
    let set = prepare(&corpus, &config, &vocab, &scheme, &s.align).unwrap();
    let data = set.labeled(&scheme).unwrap();
    let model = ModelConfig {
        vocab_size: vocab.len(),
        n_labels: scheme.len(),
        ..s.model.clone()
    };
    let out = train(&model, &s.hyper, &scheme, &data, &data, 1).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
}

#[test]
fn runs_are_reproducible_per_seed() {
    let corpus = generate_corpus(
        &SynthParams {
            n_pages: 4,
            target_lines_per_column: 12,
            ..SynthParams::default()
        },
        12,
    )
    .unwrap();
    let config = ExperimentConfig::preset("xp-2.2").unwrap();
    let mut s = settings();
    s.hyper.max_steps = 10;
    s.split_seed = 4;
    let a = run_experiment("xp-2.2", &config, &corpus, &s).unwrap();
    let b = run_experiment("xp-2.2", &config, &corpus, &s).unwrap();
    assert_eq!(a.runs[0].checkpoint, b.runs[0].checkpoint);
    assert_eq!(a.runs[0].predictions, b.runs[0].predictions);
    assert_eq!(a.aggregate, b.aggregate);
}

//! End-to-end runs: split, stream building, tokenizer training, label
//! projection, one model per seed, evaluation on the test split.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_dataset, Corpus, DatasetSplit, SplitRatios, DEFAULT_ENTITY_KINDS};
use crate::error::{Error, Result};
use crate::labeling::{
    decode_entities, decode_entries, project_labels, AlignConfig, Label, LabelScheme,
    LabeledStream, ProjectionStats,
};
use crate::metrics::{aggregate_runs, evaluate, EvalReport, SummaryRow};
use crate::model::{predict_ids, train, Checkpoint, EvalRecord, ModelConfig, TrainHyper};
use crate::stream::{build_stream_with, BoundaryPolicy, ExperimentConfig, StreamBins, TokenStream};
use crate::tokenizer::{encode, register_specials, train_tokenizer, EncodedStream, SubwordVocab, TrainMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    /// `vocab_size` and `n_labels` are filled in from the data.
    pub model: ModelConfig,
    pub hyper: TrainHyper,
    pub tokenizer_vocab_size: usize,
    pub tokenizer_mode: TrainMode,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub align: AlignConfig,
    pub entity_kinds: Vec<String>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            model: ModelConfig::default(),
            hyper: TrainHyper::default(),
            tokenizer_vocab_size: 1000,
            tokenizer_mode: TrainMode::Merges,
            split: SplitRatios::default(),
            split_seed: 0,
            align: AlignConfig::default(),
            entity_kinds: DEFAULT_ENTITY_KINDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One document turned into labeled model input.
#[derive(Clone, Debug)]
pub struct PreparedDoc {
    pub doc: String,
    pub stream: TokenStream,
    pub encoded: EncodedStream,
    pub labels: Vec<Label>,
}

#[derive(Clone, Debug, Default)]
pub struct PreparedSet {
    pub docs: Vec<PreparedDoc>,
    pub stats: ProjectionStats,
}

impl PreparedSet {
    pub fn labeled(&self, scheme: &LabelScheme) -> Result<Vec<LabeledStream>> {
        self.docs
            .iter()
            .map(|d| LabeledStream::new(d.encoded.ids.clone(), scheme.to_ids(&d.labels)?))
            .collect()
    }

    pub fn gold(&self) -> Vec<Vec<Label>> {
        self.docs.iter().map(|d| d.labels.clone()).collect()
    }
}

pub fn label_scheme(config: &ExperimentConfig, kinds: &[String]) -> Result<LabelScheme> {
    LabelScheme::new(config.boundary_policy, config.ner, kinds.to_vec())
}

/// Tokenizer trained on the line texts of `corpus`, extended with every
/// stream marker.
pub fn build_vocab(corpus: &Corpus, settings: &ExperimentSettings) -> Result<SubwordVocab> {
    let texts: Vec<&str> = corpus.lines.iter().map(|l| l.text.as_str()).collect();
    let vocab = train_tokenizer(&texts, settings.tokenizer_vocab_size, settings.tokenizer_mode)?;
    register_specials(vocab, &StreamBins::default().markers())
}

pub fn prepare(
    corpus: &Corpus,
    config: &ExperimentConfig,
    vocab: &SubwordVocab,
    scheme: &LabelScheme,
    align: &AlignConfig,
) -> Result<PreparedSet> {
    let bins = StreamBins::default();
    let mut out = PreparedSet::default();
    for doc in corpus.documents() {
        let stream = build_stream_with(&doc.lines, config, &bins)?;
        let encoded = encode(vocab, &stream)?;
        let (labels, stats) = project_labels(
            &stream,
            &encoded,
            &doc.entries,
            doc.clean.as_deref(),
            scheme,
            align,
        )?;
        out.stats += stats;
        out.docs.push(PreparedDoc {
            doc: doc.lines.first().map(|l| l.doc_id.clone()).unwrap_or_default(),
            stream,
            encoded,
            labels,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedEntry {
    pub start_line: usize,
    pub end_line: usize,
}

/// Entity span in line coordinates; `end_char` is exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedEntity {
    pub kind: String,
    pub start_line: usize,
    pub start_char: usize,
    pub end_line: usize,
    pub end_char: usize,
}

/// Decoded predictions of one document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub doc_id: String,
    pub entries: Vec<PredictedEntry>,
    pub malformed: usize,
    pub entities: Vec<PredictedEntity>,
}

/// Turns per-token labels back into line ranges and character spans.
/// Entity tokens without a text span (specials) are ignored.
pub fn decode_prediction(
    doc_id: &str,
    stream: &TokenStream,
    encoded: &EncodedStream,
    labels: &[Label],
    scheme: &LabelScheme,
) -> Result<DocPrediction> {
    if labels.len() != encoded.len() {
        return Err(Error::LengthMismatch(labels.len(), encoded.len()));
    }
    let line_of = |pos: usize| stream.tokens[encoded.origin[pos].token].line;
    let (ranges, malformed) = decode_entries(labels.iter().map(|l| l.mark));
    let entries = ranges
        .into_iter()
        .map(|(b, e)| PredictedEntry {
            start_line: line_of(b),
            end_line: line_of(e),
        })
        .collect();
    let mut entities = Vec::new();
    if scheme.ner {
        for (k, s, e) in decode_entities(labels.iter().map(|l| l.tag)) {
            let mut spans = (s..e).filter_map(|p| encoded.origin[p].span.map(|sp| (p, sp)));
            let Some((first, (start_char, _))) = spans.next() else {
                continue;
            };
            let (last, (_, end_char)) = spans.last().unwrap_or((first, encoded.origin[first].span.unwrap_or_default()));
            entities.push(PredictedEntity {
                kind: scheme.kinds[k as usize].clone(),
                start_line: line_of(first),
                start_char,
                end_line: line_of(last),
                end_char,
            });
        }
    }
    Ok(DocPrediction {
        doc_id: doc_id.to_string(),
        entries,
        malformed,
        entities,
    })
}

impl ExperimentResult {
    /// Decoded test-set predictions of one run.
    pub fn decoded_predictions(&self, run: &RunResult) -> Result<Vec<DocPrediction>> {
        self.test
            .docs
            .iter()
            .zip(&run.predictions)
            .map(|(d, ids)| {
                let labels = self.scheme.from_ids(ids)?;
                decode_prediction(&d.doc, &d.stream, &d.encoded, &labels, &self.scheme)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub report: EvalReport,
    pub checkpoint: Checkpoint,
    /// Predicted label ids per test document.
    pub predictions: Vec<Vec<u16>>,
    pub best_step: usize,
    pub stop_step: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub name: String,
    pub config: ExperimentConfig,
    pub split: DatasetSplit,
    pub vocab: SubwordVocab,
    pub scheme: LabelScheme,
    pub test: PreparedSet,
    pub runs: Vec<RunResult>,
    pub aggregate: EvalReport,
}

impl ExperimentResult {
    pub fn summary_row(&self) -> SummaryRow {
        summary_row(&self.name, &self.config, self.aggregate.clone())
    }
}

pub fn summary_row(name: &str, c: &ExperimentConfig, report: EvalReport) -> SummaryRow {
    SummaryRow {
        preset: name.to_string(),
        text: c.use_text,
        breaks: c.use_breaks,
        left: format!("{:?}", c.left_mode),
        right: format!("{:?}", c.right_mode),
        ner: c.ner,
        policy: match c.boundary_policy {
            BoundaryPolicy::TextTokens => "TEXT_TOKENS",
            BoundaryPolicy::SpaceTokens => "SPACE_TOKENS",
            BoundaryPolicy::Joint => "JOINT",
        }
        .to_string(),
        report,
    }
}

/// Scores a trained checkpoint on prepared documents.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    set: &PreparedSet,
    scheme: &LabelScheme,
) -> Result<(EvalReport, Vec<Vec<u16>>)> {
    let params = checkpoint.params()?;
    let mut ids = Vec::with_capacity(set.docs.len());
    let mut pred = Vec::with_capacity(set.docs.len());
    for d in &set.docs {
        let p = predict_ids(&params, &d.encoded.ids)?;
        pred.push(scheme.from_ids(&p)?);
        ids.push(p);
    }
    let report = evaluate(scheme, &pred, &set.gold(), set.stats)?;
    Ok((report, ids))
}

/// Runs one experiment: split by page, tokenizer from the training pages,
/// one model per seed, reports on the test pages.
pub fn run_experiment(
    name: &str,
    config: &ExperimentConfig,
    corpus: &Corpus,
    settings: &ExperimentSettings,
) -> Result<ExperimentResult> {
    config.validate()?;
    if settings.hyper.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let scheme = label_scheme(config, &settings.entity_kinds)?;
    let split = split_dataset(&corpus.pages(), settings.split, settings.split_seed)?;
    let train_c = corpus.subset(&split.train);
    let val_c = corpus.subset(&split.validation);
    let test_c = corpus.subset(&split.test);
    let vocab = build_vocab(&train_c, settings)?;
    let fingerprint = vocab.fingerprint();
    let train_set = prepare(&train_c, config, &vocab, &scheme, &settings.align)?;
    let val_set = prepare(&val_c, config, &vocab, &scheme, &settings.align)?;
    let test_set = prepare(&test_c, config, &vocab, &scheme, &settings.align)?;
    let train_l = train_set.labeled(&scheme)?;
    let val_l = val_set.labeled(&scheme)?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        n_labels: scheme.len(),
        ..settings.model.clone()
    };
    info!(
        "{name}: {} train / {} val / {} test tokens, vocabulary {}, {} labels",
        train_l.iter().map(|s| s.ids.len()).sum::<usize>(),
        val_l.iter().map(|s| s.ids.len()).sum::<usize>(),
        test_set.docs.iter().map(|d| d.encoded.len()).sum::<usize>(),
        vocab.len(),
        scheme.len()
    );
    let runs = settings
        .hyper
        .seeds
        .par_iter()
        .map(|&seed| {
            let outcome = train(&model, &settings.hyper, &scheme, &train_l, &val_l, seed)?;
            let checkpoint = Checkpoint::new(
                &outcome.params,
                scheme.spec(),
                fingerprint.clone(),
                outcome.history,
            );
            let (report, predictions) = evaluate_checkpoint(&checkpoint, &test_set, &scheme)?;
            info!("{name} seed {seed}: test macro F {:.4}", report.macro_f);
            Ok(RunResult {
                seed,
                report,
                checkpoint,
                predictions,
                best_step: outcome.best_step,
                stop_step: outcome.stop_step,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate_runs(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    Ok(ExperimentResult {
        name: name.to_string(),
        config: config.clone(),
        split,
        vocab,
        scheme,
        test: test_set,
        runs,
        aggregate,
    })
}

/// Training history of every run, for reports.
pub fn histories(result: &ExperimentResult) -> Vec<(u64, Vec<EvalRecord>)> {
    result
        .runs
        .iter()
        .map(|r| (r.seed, r.checkpoint.history.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, SynthParams};

    fn small_settings() -> ExperimentSettings {
        ExperimentSettings {
            model: ModelConfig {
                d_model: 16,
                n_heads: 2,
                n_layers: 1,
                d_ff: 32,
                max_seq_len: 64,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            hyper: TrainHyper {
                learning_rate: 1e-3,
                max_steps: 20,
                eval_every: 10,
                batch_size: 2,
                min_crop: 32,
                seeds: vec![1, 2],
                ..TrainHyper::default()
            },
            tokenizer_vocab_size: 300,
            ..ExperimentSettings::default()
        }
    }

    #[test]
    fn runs_every_preset_end_to_end() {
        let corpus = generate_corpus(
            &SynthParams {
                n_pages: 4,
                target_lines_per_column: 12,
                ..SynthParams::default()
            },
            5,
        )
        .unwrap();
        for name in ["xp-1.1", "xp-2.1", "xp-2.2"] {
            let c = ExperimentConfig::preset(name).unwrap();
            let r = run_experiment(name, &c, &corpus, &small_settings()).unwrap();
            assert_eq!(r.runs.len(), 2);
            assert_eq!(r.aggregate.n_runs, 2);
            assert_eq!(r.aggregate.ner_micro.is_some(), c.ner);
            let row = r.summary_row();
            assert_eq!(row.preset, name);
        }
    }

    #[test]
    fn gold_labels_decode_to_gold_entries() {
        let corpus = generate_corpus(
            &SynthParams {
                n_pages: 1,
                noise_rate: 0.0,
                ..SynthParams::default()
            },
            3,
        )
        .unwrap();
        let c = ExperimentConfig::preset("xp-2.2").unwrap();
        let settings = small_settings();
        let vocab = build_vocab(&corpus, &settings).unwrap();
        let scheme = label_scheme(&c, &settings.entity_kinds).unwrap();
        let set = prepare(&corpus, &c, &vocab, &scheme, &settings.align).unwrap();
        let d = &set.docs[0];
        let p = decode_prediction(&d.doc, &d.stream, &d.encoded, &d.labels, &scheme).unwrap();
        let gold: Vec<(usize, usize)> = corpus.entries.iter().map(|e| (e.start_line, e.end_line)).collect();
        let got: Vec<(usize, usize)> = p.entries.iter().map(|e| (e.start_line, e.end_line)).collect();
        assert_eq!(got, gold);
        assert_eq!(p.malformed, 0);
        assert!(!p.entities.is_empty());
        for e in &p.entities {
            assert!(e.start_line < e.end_line || e.start_char < e.end_char);
        }
    }

    #[test]
    fn incompatible_config_fails_before_training() {
        let corpus = generate_corpus(&SynthParams { n_pages: 2, ..SynthParams::default() }, 1).unwrap();
        let mut c = ExperimentConfig::preset("xp-1.1").unwrap();
        c.boundary_policy = BoundaryPolicy::SpaceTokens;
        assert!(run_experiment("bad", &c, &corpus, &small_settings()).is_err());
    }
}

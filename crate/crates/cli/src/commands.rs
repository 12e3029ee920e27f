use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use entrysep::corpus::{load_lines, write_jsonl, Corpus};
use entrysep::experiment::{
    build_vocab, decode_prediction, evaluate_checkpoint, label_scheme, prepare, run_experiment,
    summary_row, ExperimentResult, ExperimentSettings,
};
use entrysep::labeling::LabelScheme;
use entrysep::metrics::{summary_markdown, SummaryRow};
use entrysep::model::Checkpoint;
use entrysep::stream::{build_stream as stream_of, write_stream, ExperimentConfig, PRESET_NAMES};
use entrysep::synth::{generate_corpus, SynthParams};
use entrysep::tokenizer::{encode, SubwordVocab};

use crate::manifest::RunManifest;

/// Bad command-line input not covered by the library's own errors.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text)
        .map_err(entrysep::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn write_json<T: Serialize>(path: &Path, value: &T, manifest: &mut RunManifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Loads a corpus directory; annotations are optional when `need_entries`
/// is false.
fn load_corpus(dir: &Path, need_entries: bool) -> Result<Corpus> {
    let lines = dir.join("lines.jsonl");
    let entries = dir.join("entries.jsonl");
    let clean = dir.join("clean.jsonl");
    if !lines.is_file() {
        return Err(invalid(format!("{} not found", lines.display())));
    }
    if !entries.is_file() {
        if need_entries {
            return Err(invalid(format!("{} not found", entries.display())));
        }
        return Ok(Corpus::new(load_lines(&lines)?, Vec::new(), None)?);
    }
    let clean = clean.is_file().then_some(clean);
    Ok(Corpus::load(&lines, &entries, clean.as_deref())?)
}

/// Preset name, or path of a JSON config named after its file stem.
fn resolve_preset(preset: &str) -> Result<(String, ExperimentConfig)> {
    let config = ExperimentConfig::resolve(preset)?;
    let path = Path::new(preset);
    let name = if path.is_file() {
        path.file_stem().map_or(preset.to_string(), |s| s.to_string_lossy().into_owned())
    } else {
        preset.to_string()
    };
    Ok((name, config))
}

fn load_model(checkpoint: &Path, vocab: &Path, config: &ExperimentConfig) -> Result<(Checkpoint, SubwordVocab, LabelScheme)> {
    let ck = Checkpoint::load(checkpoint)?;
    let vocab = SubwordVocab::load(vocab)?;
    ck.check_fingerprint(&vocab.fingerprint())?;
    let scheme = LabelScheme::from_spec(&ck.scheme)?;
    let expected = label_scheme(config, &scheme.kinds)?;
    if expected != scheme {
        return Err(invalid("checkpoint label scheme does not match the preset"));
    }
    Ok((ck, vocab, scheme))
}

pub fn synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let params: SynthParams = read_json(config)?;
    let corpus = generate_corpus(&params, seed)?;
    create_dir(out)?;
    corpus.save(out)?;
    let mut m = RunManifest::new("synth", out);
    if let Some(c) = config {
        m.config(c)?;
    }
    m.seeds.push(seed);
    for f in ["lines.jsonl", "entries.jsonl", "clean.jsonl"] {
        let p = out.join(f);
        if p.is_file() {
            m.output(&p)?;
        }
    }
    info!("{} lines, {} entries written to {}", corpus.lines.len(), corpus.entries.len(), out.display());
    m.finish()?;
    Ok(())
}

pub fn build_stream(data: &Path, preset: &str, out: &Path) -> Result<()> {
    let (name, config) = resolve_preset(preset)?;
    let corpus = load_corpus(data, false)?;
    let dir = out.join(&name);
    create_dir(&dir)?;
    let mut m = RunManifest::new("build-stream", out);
    m.input_dir(data)?;
    m.presets.push(name);
    for doc in corpus.documents() {
        let doc_id = doc.lines.first().map(|l| l.doc_id.clone()).unwrap_or_default();
        let stream = stream_of(&doc.lines, &config)?;
        let path = dir.join(format!("{doc_id}.stream.jsonl"));
        write_stream(&path, &stream)?;
        m.output(&path)?;
    }
    m.finish()?;
    Ok(())
}

pub fn tokenizer_train(data: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let settings: ExperimentSettings = read_json(config)?;
    let corpus = load_corpus(data, false)?;
    let vocab = build_vocab(&corpus, &settings)?;
    create_dir(out)?;
    let path = out.join("vocab.tsv");
    vocab.save(&path)?;
    let mut m = RunManifest::new("tokenizer-train", out);
    m.input_dir(data)?;
    if let Some(c) = config {
        m.config(c)?;
    }
    m.output(&path)?;
    info!("vocabulary of {} pieces, fingerprint {}", vocab.len(), vocab.fingerprint());
    m.finish()?;
    Ok(())
}

/// Writes checkpoints, reports and decoded predictions of every run under
/// `out/<name>/<seed>/`, and the aggregate report under `out/<name>/`.
fn write_result(result: &ExperimentResult, out: &Path, m: &mut RunManifest) -> Result<()> {
    let dir = out.join(&result.name);
    create_dir(&dir)?;
    let vocab_path = dir.join("vocab.tsv");
    result.vocab.save(&vocab_path)?;
    m.output(&vocab_path)?;
    write_json(&dir.join("split.json"), &result.split, m)?;
    for run in &result.runs {
        let run_dir = dir.join(run.seed.to_string());
        create_dir(&run_dir)?;
        let ck = run_dir.join("checkpoint.json");
        run.checkpoint.save(&ck)?;
        m.output(&ck)?;
        write_json(&run_dir.join("report.json"), &run.report, m)?;
        write_json(&run_dir.join("history.json"), &run.checkpoint.history, m)?;
        let preds = run_dir.join("predictions.jsonl");
        write_jsonl(&preds, &result.decoded_predictions(run)?)?;
        m.output(&preds)?;
    }
    write_json(&dir.join("report.json"), &result.aggregate, m)
}

pub fn train(data: &Path, preset: &str, config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let (name, exp) = resolve_preset(preset)?;
    let mut settings: ExperimentSettings = read_json(config)?;
    settings.hyper.seeds = vec![seed];
    let corpus = load_corpus(data, true)?;
    let mut m = RunManifest::new("train", out);
    m.input_dir(data)?;
    if let Some(c) = config {
        m.config(c)?;
    }
    m.presets.push(name.clone());
    m.seeds.push(seed);
    let result = run_experiment(&name, &exp, &corpus, &settings)?;
    write_result(&result, out, &mut m)?;
    info!("{name} seed {seed}: test macro F {:.4}", result.aggregate.macro_f);
    m.finish()?;
    Ok(())
}

pub fn predict(data: &Path, preset: &str, checkpoint: &Path, vocab: &Path, out: &Path) -> Result<()> {
    let (_, config) = resolve_preset(preset)?;
    let (ck, vocab, scheme) = load_model(checkpoint, vocab, &config)?;
    let params = ck.params()?;
    let corpus = load_corpus(data, false)?;
    create_dir(out)?;
    let mut m = RunManifest::new("predict", out);
    m.input_dir(data)?;
    m.input(checkpoint)?;
    let mut docs = Vec::new();
    for doc in corpus.documents() {
        let doc_id = doc.lines.first().map(|l| l.doc_id.clone()).unwrap_or_default();
        let stream = stream_of(&doc.lines, &config)?;
        let encoded = encode(&vocab, &stream)?;
        let labels = scheme.from_ids(&entrysep::model::predict_ids(&params, &encoded.ids)?)?;
        docs.push(decode_prediction(&doc_id, &stream, &encoded, &labels, &scheme)?);
    }
    let path = out.join("predictions.jsonl");
    write_jsonl(&path, &docs)?;
    m.output(&path)?;
    m.finish()?;
    Ok(())
}

pub fn eval(data: &Path, preset: &str, checkpoint: &Path, vocab: &Path, out: &Path) -> Result<()> {
    let (name, config) = resolve_preset(preset)?;
    let (ck, vocab, scheme) = load_model(checkpoint, vocab, &config)?;
    let corpus = load_corpus(data, true)?;
    let set = prepare(&corpus, &config, &vocab, &scheme, &Default::default())?;
    let (report, _) = evaluate_checkpoint(&ck, &set, &scheme)?;
    create_dir(out)?;
    let mut m = RunManifest::new("eval", out);
    m.input_dir(data)?;
    m.input(checkpoint)?;
    m.presets.push(name);
    write_json(&out.join("report.json"), &report, &mut m)?;
    println!("{}", report.to_json()?);
    m.finish()?;
    Ok(())
}

fn expand_presets(presets: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for p in presets {
        if p == "all" {
            out.extend(PRESET_NAMES.iter().map(|s| s.to_string()));
        } else {
            out.push(p.clone());
        }
    }
    out
}

pub fn experiment(data: &Path, presets: &[String], config: Option<&Path>, seeds: &[u64], out: &Path) -> Result<()> {
    let mut settings: ExperimentSettings = read_json(config)?;
    if !seeds.is_empty() {
        settings.hyper.seeds = seeds.to_vec();
    }
    // Every preset is checked before any training starts.
    let resolved = expand_presets(presets)
        .iter()
        .map(|p| resolve_preset(p))
        .collect::<Result<Vec<_>>>()?;
    let corpus = load_corpus(data, true)?;
    create_dir(out)?;
    let mut m = RunManifest::new("experiment", out);
    m.input_dir(data)?;
    if let Some(c) = config {
        m.config(c)?;
    }
    m.seeds = settings.hyper.seeds.clone();
    let mut rows: Vec<SummaryRow> = Vec::new();
    for (name, exp) in &resolved {
        m.presets.push(name.clone());
        let result = run_experiment(name, exp, &corpus, &settings)?;
        write_result(&result, out, &mut m)?;
        info!("{name}: test macro F {:.4}", result.aggregate.macro_f);
        rows.push(summary_row(name, exp, result.aggregate));
    }
    let md: PathBuf = out.join("summary.md");
    fs::write(&md, summary_markdown(&rows)).with_context(|| format!("writing {}", md.display()))?;
    m.output(&md)?;
    rows.sort_by(|a, b| a.report.macro_f.total_cmp(&b.report.macro_f));
    write_json(&out.join("summary.json"), &rows, &mut m)?;
    m.finish()?;
    Ok(())
}

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{batch_loss_grad, predict_ids, Example};
use super::{ModelConfig, Params, TrainHyper};
use crate::error::{Error, Result};
use crate::labeling::{LabelScheme, LabeledStream, ProjectionStats};
use crate::metrics::evaluate;

/// AdamW with decoupled weight decay applied to every weight.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, wd, eps) = (self.lr as f32, self.weight_decay as f32, self.eps as f32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * params[i]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive evaluations without a strictly
/// better score.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_eval: usize,
    stale: usize,
    evals: usize,
}

/// Where a scripted run of evaluation scores stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceOutcome {
    pub stop_step: usize,
    pub best_step: usize,
    pub evals: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_eval: 0,
            stale: 0,
            evals: 0,
        }
    }

    pub fn observe(&mut self, score: f64) -> StopDecision {
        self.evals += 1;
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_eval = self.evals;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NoImprovement
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// 1-based index of the best evaluation so far.
    pub fn best_eval(&self) -> usize {
        self.best_eval
    }

    /// Replays `trace` as the scores of evaluations at every
    /// `eval_every` steps up to `max_steps`.
    pub fn simulate(trace: &[f64], hyper: &TrainHyper) -> Result<TraceOutcome> {
        let mut es = EarlyStopping::new(hyper.patience);
        let n_evals = hyper.max_steps / hyper.eval_every;
        for i in 0..n_evals {
            let Some(&score) = trace.get(i) else {
                return Err(Error::Validation(format!(
                    "trace has {} scores but the run needs more",
                    trace.len()
                )));
            };
            let decision = es.observe(score);
            if decision == StopDecision::Stop || i + 1 == n_evals {
                return Ok(TraceOutcome {
                    stop_step: (i + 1) * hyper.eval_every,
                    best_step: es.best_eval * hyper.eval_every,
                    evals: i + 1,
                });
            }
        }
        Err(Error::Config("max_steps is shorter than eval_every".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// The score early stopping watches: macro boundary F, averaged with
    /// entity micro F when the scheme has entities.
    pub score: f64,
    pub macro_f: f64,
    pub ner_f: Option<f64>,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the best evaluation.
    pub params: Params<f32>,
    pub history: Vec<EvalRecord>,
    pub best_step: usize,
    pub stop_step: usize,
}

fn check_set(config: &ModelConfig, set: &[LabeledStream], what: &str) -> Result<()> {
    for s in set {
        if s.ids.len() != s.labels.len() {
            return Err(Error::LengthMismatch(s.ids.len(), s.labels.len()));
        }
        if let Some(&id) = s.ids.iter().find(|&&i| i as usize >= config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: id as usize,
                vocab_size: config.vocab_size,
            });
        }
        if let Some(&l) = s.labels.iter().find(|&&l| l as usize >= config.n_labels) {
            return Err(Error::Validation(format!("{what}: label id {l} out of range")));
        }
    }
    Ok(())
}

/// Macro boundary F and entity micro F of `params` on whole streams.
pub(crate) fn validation_scores(
    params: &Params<f32>,
    scheme: &LabelScheme,
    set: &[LabeledStream],
) -> Result<(f64, Option<f64>)> {
    let mut pred = Vec::with_capacity(set.len());
    let mut gold = Vec::with_capacity(set.len());
    for s in set {
        pred.push(scheme.from_ids(&predict_ids(params, &s.ids)?)?);
        gold.push(scheme.from_ids(&s.labels)?);
    }
    let report = evaluate(scheme, &pred, &gold, ProjectionStats::default())?;
    Ok((report.macro_f, report.ner_micro.map(|m| m.f)))
}

/// Trains from a seeded initialization on random crops of the training
/// streams, scoring `val_set` every `eval_every` steps, and returns the
/// weights of the best score.
pub fn train(
    config: &ModelConfig,
    hyper: &TrainHyper,
    scheme: &LabelScheme,
    train_set: &[LabeledStream],
    val_set: &[LabeledStream],
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    hyper.validate(config)?;
    if config.n_labels != scheme.len() {
        return Err(Error::Config(format!(
            "model has {} labels, scheme has {}",
            config.n_labels,
            scheme.len()
        )));
    }
    let streams: Vec<&LabeledStream> = train_set.iter().filter(|s| !s.ids.is_empty()).collect();
    if streams.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_set(config, train_set, "training set")?;
    check_set(config, val_set, "validation set")?;
    let val_set = if val_set.iter().all(|s| s.ids.is_empty()) {
        warn!("empty validation set; evaluating on the training set");
        train_set
    } else {
        val_set
    };

    let mut params = Params::<f32>::init(config, seed)?;
    let mut opt = AdamW::new(params.data.len(), hyper.learning_rate, hyper.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CAFE);
    let total: usize = streams.iter().map(|s| s.ids.len()).sum();
    let max_crop = hyper.max_crop(config);
    let mut stopping = EarlyStopping::new(hyper.patience);
    let mut best = params.data.clone();
    let mut best_step = 0;
    let mut history = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut step = 0;
    while step < hyper.max_steps {
        step += 1;
        let batch: Vec<Example<'_>> = (0..hyper.batch_size)
            .map(|_| {
                // Streams are drawn in proportion to their length.
                let mut r = rng.random_range(0..total);
                let s = streams
                    .iter()
                    .find(|s| {
                        let hit = r < s.ids.len();
                        if !hit {
                            r -= s.ids.len();
                        }
                        hit
                    })
                    .expect("offset within total");
                let len = rng.random_range(hyper.min_crop..=max_crop).min(s.ids.len());
                let start = rng.random_range(0..=s.ids.len() - len);
                Example {
                    ids: &s.ids[start..start + len],
                    targets: s.labels[start..start + len].iter().map(|&l| Some(l)).collect(),
                    keys: None,
                }
            })
            .collect();
        let (loss, mut grads) = batch_loss_grad(&params, &batch, Some(rng.random()));
        if let Some(max_norm) = hyper.max_grad_norm {
            let norm = grads.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
            if norm > max_norm {
                let k = (max_norm / norm) as f32;
                grads.iter_mut().for_each(|g| *g *= k);
            }
        }
        opt.step(&mut params.data, &grads);
        loss_sum += loss as f64;
        loss_n += 1;

        let last = step == hyper.max_steps && history.is_empty();
        if step % hyper.eval_every == 0 || last {
            let (f, ner_f) = validation_scores(&params, scheme, val_set)?;
            let score = ner_f.map_or(f, |n| (f + n) / 2.0);
            let record = EvalRecord {
                step,
                score,
                macro_f: f,
                ner_f,
                train_loss: loss_sum / loss_n as f64,
            };
            info!(
                "seed {seed} step {step}: train loss {:.4}, val macro F {:.4}, val NER F {:?}",
                record.train_loss, f, ner_f
            );
            history.push(record);
            loss_sum = 0.0;
            loss_n = 0;
            match stopping.observe(score) {
                StopDecision::Improved => {
                    best.clone_from(&params.data);
                    best_step = step;
                }
                StopDecision::NoImprovement => {}
                StopDecision::Stop => break,
            }
        }
    }
    params.data = best;
    Ok(TrainOutcome {
        params,
        history,
        best_step,
        stop_step: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> TrainHyper {
        TrainHyper::default()
    }

    #[test]
    fn best_at_second_eval_stops_after_seventh() {
        let trace = [0.5, 0.8, 0.7, 0.8, 0.6, 0.79, 0.8, 0.99];
        let out = EarlyStopping::simulate(&trace, &hyper()).unwrap();
        assert_eq!(out.evals, 7);
        assert_eq!(out.stop_step, 2100);
        assert_eq!(out.best_step, 600);
    }

    #[test]
    fn improving_run_hits_the_step_cap() {
        let trace: Vec<f64> = (0..25).map(|i| i as f64 / 25.0).collect();
        let out = EarlyStopping::simulate(&trace, &hyper()).unwrap();
        assert_eq!(out.stop_step, 7500);
        assert_eq!(out.evals, 25);
        assert_eq!(out.best_step, 7500);
    }

    #[test]
    fn short_trace_is_an_error() {
        assert!(EarlyStopping::simulate(&[0.1, 0.2], &hyper()).is_err());
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = vec![1.0f32, -2.0];
        let mut opt = AdamW::new(2, 0.1, 0.0);
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        let mut q = vec![2.0f32];
        let mut opt = AdamW::new(1, 0.1, 0.5);
        opt.step(&mut q, &[0.0]);
        assert!((q[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-6);
    }
}

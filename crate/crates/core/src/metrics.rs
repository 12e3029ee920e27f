//! Exact-match precision, recall and F-score for entry boundaries and
//! entities, aggregation over runs, and the per-line dummy baseline.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{decode_entities, decode_entries, Label, LabelScheme, Mark, ProjectionStats};
use crate::stream::{BoundaryPolicy, TokenKind, TokenStream};
use crate::tokenizer::EncodedStream;

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl ClassReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ClassReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f: f_score(precision, recall),
        }
    }

    /// Scores from averaged precision and recall; counts are summed.
    fn averaged(parts: &[ClassReport]) -> Self {
        let n = parts.len().max(1) as f64;
        let precision = parts.iter().map(|c| c.precision).sum::<f64>() / n;
        let recall = parts.iter().map(|c| c.recall).sum::<f64>() / n;
        ClassReport {
            tp: parts.iter().map(|c| c.tp).sum(),
            fp: parts.iter().map(|c| c.fp).sum(),
            fn_: parts.iter().map(|c| c.fn_).sum(),
            precision,
            recall,
            f: f_score(precision, recall),
        }
    }
}

fn class_report(pred: impl Iterator<Item = bool>, gold: impl Iterator<Item = bool>) -> ClassReport {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    ClassReport::from_counts(tp, fp, fn_)
}

/// Position-exact scores for EBEGIN and EEND, in that order.
pub fn boundary_metrics(pred: &[Mark], gold: &[Mark]) -> Result<(ClassReport, ClassReport)> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    let begin = class_report(pred.iter().map(|m| m.is_begin()), gold.iter().map(|m| m.is_begin()));
    let end = class_report(pred.iter().map(|m| m.is_end()), gold.iter().map(|m| m.is_end()));
    Ok((begin, end))
}

/// Per-kind reports plus the micro-averaged report over all kinds.
/// Entities are `(kind, start, end)`; only exact triples match.
pub fn ner_metrics(
    pred: &[(u16, usize, usize)],
    gold: &[(u16, usize, usize)],
) -> (BTreeMap<u16, ClassReport>, ClassReport) {
    let p: HashSet<_> = pred.iter().copied().collect();
    let g: HashSet<_> = gold.iter().copied().collect();
    let mut counts: BTreeMap<u16, (usize, usize, usize)> = BTreeMap::new();
    for e in &p {
        let c = counts.entry(e.0).or_default();
        if g.contains(e) {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    for e in g.difference(&p) {
        counts.entry(e.0).or_default().2 += 1;
    }
    let (tp, fp, fn_) = counts
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let per_kind = counts
        .into_iter()
        .map(|(k, (tp, fp, fn_))| (k, ClassReport::from_counts(tp, fp, fn_)))
        .collect();
    (per_kind, ClassReport::from_counts(tp, fp, fn_))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ebegin: ClassReport,
    pub eend: ClassReport,
    /// Per entity kind name.
    pub entities: BTreeMap<String, ClassReport>,
    pub ner_micro: Option<ClassReport>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f: f64,
    pub n_runs: usize,
    pub malformed: usize,
    pub projection: ProjectionStats,
    pub predicted_entries: usize,
    pub gold_entries: usize,
}

impl EvalReport {
    fn set_macro(&mut self) {
        self.macro_precision = (self.ebegin.precision + self.eend.precision) / 2.0;
        self.macro_recall = (self.ebegin.recall + self.eend.recall) / 2.0;
        self.macro_f = f_score(self.macro_precision, self.macro_recall);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores predicted labels against gold labels over a set of streams.
/// Counts are pooled over streams.
pub fn evaluate(
    scheme: &LabelScheme,
    pred: &[Vec<Label>],
    gold: &[Vec<Label>],
    projection: ProjectionStats,
) -> Result<EvalReport> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    let mut pm = Vec::new();
    let mut gm = Vec::new();
    let mut pe = Vec::new();
    let mut ge = Vec::new();
    let mut report = EvalReport {
        n_runs: 1,
        projection,
        ..Default::default()
    };
    let mut offset = 0;
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch(p.len(), g.len()));
        }
        let (entries, malformed) = decode_entries(p.iter().map(|l| l.mark));
        report.malformed += malformed;
        report.predicted_entries += entries.len();
        report.gold_entries += decode_entries(g.iter().map(|l| l.mark)).0.len();
        pm.extend(p.iter().map(|l| l.mark));
        gm.extend(g.iter().map(|l| l.mark));
        if scheme.ner {
            let shift = |v: Vec<(u16, usize, usize)>| {
                v.into_iter().map(move |(k, s, e)| (k, s + offset, e + offset))
            };
            pe.extend(shift(decode_entities(p.iter().map(|l| l.tag))));
            ge.extend(shift(decode_entities(g.iter().map(|l| l.tag))));
        }
        offset += p.len();
    }
    let (b, e) = boundary_metrics(&pm, &gm)?;
    report.ebegin = b;
    report.eend = e;
    if scheme.ner {
        let (per_kind, micro) = ner_metrics(&pe, &ge);
        report.entities = per_kind
            .into_iter()
            .map(|(k, r)| (scheme.kinds[k as usize].clone(), r))
            .collect();
        report.ner_micro = Some(micro);
    }
    report.set_macro();
    Ok(report)
}

/// Averages precision and recall per class over runs; F-scores are
/// recomputed from the averages.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport> {
    let Some(first) = reports.first() else {
        return Err(Error::Empty("evaluation reports"));
    };
    let has_ner = first.ner_micro.is_some();
    if reports.iter().any(|r| r.ner_micro.is_some() != has_ner) {
        return Err(Error::Validation("reports use different label schemes".into()));
    }
    let collect = |f: &dyn Fn(&EvalReport) -> ClassReport| {
        ClassReport::averaged(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let mut out = EvalReport {
        ebegin: collect(&|r| r.ebegin),
        eend: collect(&|r| r.eend),
        n_runs: reports.iter().map(|r| r.n_runs).sum(),
        ..Default::default()
    };
    if has_ner {
        out.ner_micro = Some(collect(&|r| r.ner_micro.unwrap_or_default()));
        let kinds: std::collections::BTreeSet<&String> =
            reports.iter().flat_map(|r| r.entities.keys()).collect();
        for k in kinds {
            let v = collect(&|r| r.entities.get(k).copied().unwrap_or_default());
            out.entities.insert(k.clone(), v);
        }
    }
    for r in reports {
        out.malformed += r.malformed;
        out.projection += r.projection;
        out.predicted_entries += r.predicted_entries;
        out.gold_entries += r.gold_entries;
    }
    out.set_macro();
    Ok(out)
}

/// Marks every line as a one-line entry under `policy`: EBEGIN at each
/// line start and EEND at each line end.
pub fn dummy_baseline(
    stream: &TokenStream,
    encoded: &EncodedStream,
    policy: BoundaryPolicy,
) -> Vec<Label> {
    let n = stream.n_lines;
    let mut first_text = vec![None; n];
    let mut last_text = vec![None; n];
    let mut lh = vec![None; n];
    let mut rh = vec![None; n];
    for (pos, o) in encoded.origin.iter().enumerate() {
        let t = &stream.tokens[o.token];
        match t.kind {
            TokenKind::TextChunk => {
                first_text[t.line].get_or_insert(pos);
                last_text[t.line] = Some(pos);
            }
            TokenKind::LhSpace(_) => lh[t.line] = Some(pos),
            TokenKind::RhSpace(_) => rh[t.line] = Some(pos),
            _ => {}
        }
    }
    let (begins, ends) = match policy {
        BoundaryPolicy::SpaceTokens => (lh, rh),
        _ => (first_text, last_text),
    };
    let mut labels = vec![Label::O; encoded.len()];
    for p in begins.into_iter().flatten() {
        labels[p].mark = Mark::Begin;
    }
    for p in ends.into_iter().flatten() {
        labels[p].mark = if labels[p].mark == Mark::Begin { Mark::Both } else { Mark::End };
    }
    labels
}

/// Dummy-baseline scores at line level: EBEGIN-only F and the macro
/// F over EBEGIN and EEND. Entries are inclusive line ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub lines: usize,
    pub entries: usize,
    pub ebegin: ClassReport,
    pub eend: ClassReport,
    pub macro_f: f64,
}

pub fn dummy_baseline_lines(n_lines: usize, entries: &[(usize, usize)]) -> BaselineReport {
    let mut begin = vec![false; n_lines];
    let mut end = vec![false; n_lines];
    for &(s, e) in entries {
        begin[s] = true;
        end[e] = true;
    }
    let all = vec![true; n_lines];
    let b = class_report(all.iter().copied(), begin.into_iter());
    let e = class_report(all.iter().copied(), end.into_iter());
    let p = (b.precision + e.precision) / 2.0;
    let r = (b.recall + e.recall) / 2.0;
    BaselineReport {
        lines: n_lines,
        entries: entries.len(),
        ebegin: b,
        eend: e,
        macro_f: f_score(p, r),
    }
}

/// One summary row per experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub text: bool,
    pub breaks: bool,
    pub left: String,
    pub right: String,
    pub ner: bool,
    pub policy: String,
    pub report: EvalReport,
}

/// Markdown table sorted by ascending macro F.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut rows: Vec<&SummaryRow> = rows.iter().collect();
    rows.sort_by(|a, b| a.report.macro_f.total_cmp(&b.report.macro_f));
    let yes = |b: bool| if b { "yes" } else { "no" };
    let mut s = String::from(
        "| Experiment | Text | Breaks | Left space | Right space | NER | Labels on | P | R | F | NER F |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        let ner_f = r
            .report
            .ner_micro
            .map(|m| format!("{:.2}", 100.0 * m.f))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {:.2} | {:.2} | {:.2} | {} |",
            r.preset,
            yes(r.text),
            yes(r.breaks),
            r.left,
            r.right,
            yes(r.ner),
            r.policy,
            100.0 * r.report.macro_precision,
            100.0 * r.report.macro_recall,
            100.0 * r.report.macro_f,
            ner_f
        );
    }
    s
}

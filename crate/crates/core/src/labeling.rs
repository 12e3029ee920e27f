//! Per-token labels from entry and entity annotations, projection of clean
//! annotations onto noisy OCR text, and decoding of predicted labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{join_entry_text, write_jsonl, EntryAnnotation};
use crate::error::{Error, Result};
use crate::stream::{BoundaryPolicy, TokenKind, TokenStream};
use crate::tokenizer::EncodedStream;

/// Entry boundary mark carried by a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mark {
    None,
    Begin,
    End,
    /// The token both opens and closes an entry (single-token entries).
    Both,
}

impl Mark {
    pub fn is_begin(self) -> bool {
        matches!(self, Mark::Begin | Mark::Both)
    }

    pub fn is_end(self) -> bool {
        matches!(self, Mark::End | Mark::Both)
    }

    fn with(self, other: Mark) -> Mark {
        match (self.is_begin() || other.is_begin(), self.is_end() || other.is_end()) {
            (true, true) => Mark::Both,
            (true, false) => Mark::Begin,
            (false, true) => Mark::End,
            _ => Mark::None,
        }
    }
}

const MARKS: [Mark; 4] = [Mark::None, Mark::Begin, Mark::End, Mark::Both];

/// IOB2 entity tag; the payload indexes the scheme's entity kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    O,
    B(u16),
    I(u16),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub tag: Tag,
    pub mark: Mark,
}

impl Label {
    pub const O: Label = Label {
        tag: Tag::O,
        mark: Mark::None,
    };
}

/// The finite label inventory of one experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelScheme {
    pub policy: BoundaryPolicy,
    pub ner: bool,
    pub kinds: Vec<String>,
    labels: Vec<Label>,
    index: HashMap<Label, u16>,
}

/// Serializable description a scheme can be rebuilt from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub policy: BoundaryPolicy,
    pub ner: bool,
    pub kinds: Vec<String>,
}

impl LabelScheme {
    /// Inventories:
    /// * no entities: `O × {none, EBEGIN, EEND, EBEGIN+EEND}`;
    /// * SPACE_TOKENS with entities: the boundary marks on `O` plus plain
    ///   `B-`/`I-` tags (the two never share a token);
    /// * JOINT: the full product of entity tags and marks.
    pub fn new(policy: BoundaryPolicy, ner: bool, kinds: Vec<String>) -> Result<Self> {
        if ner && policy == BoundaryPolicy::TextTokens {
            return Err(Error::Config(
                "entity labels on text tokens need the JOINT policy".into(),
            ));
        }
        let n_kinds = if ner { kinds.len() } else { 0 };
        let mut tags = vec![Tag::O];
        for k in 0..n_kinds as u16 {
            tags.push(Tag::B(k));
            tags.push(Tag::I(k));
        }
        let mut labels = Vec::new();
        for &tag in &tags {
            for &mark in &MARKS {
                let keep = tag == Tag::O || mark == Mark::None || policy == BoundaryPolicy::Joint;
                if keep {
                    labels.push(Label { tag, mark });
                }
            }
        }
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i as u16))
            .collect();
        Ok(LabelScheme {
            policy,
            ner,
            kinds,
            labels,
            index,
        })
    }

    pub fn from_spec(spec: &SchemeSpec) -> Result<Self> {
        Self::new(spec.policy, spec.ner, spec.kinds.clone())
    }

    pub fn spec(&self) -> SchemeSpec {
        SchemeSpec {
            policy: self.policy,
            ner: self.ner,
            kinds: self.kinds.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn id(&self, label: Label) -> Option<u16> {
        self.index.get(&label).copied()
    }

    pub fn label(&self, id: u16) -> Option<Label> {
        self.labels.get(id as usize).copied()
    }

    pub fn kind_index(&self, kind: &str) -> Option<u16> {
        self.kinds.iter().position(|k| k == kind).map(|i| i as u16)
    }

    pub fn name(&self, label: Label) -> String {
        let tag = match label.tag {
            Tag::O => None,
            Tag::B(k) => Some(format!("B-{}", self.kinds[k as usize])),
            Tag::I(k) => Some(format!("I-{}", self.kinds[k as usize])),
        };
        let mark = match label.mark {
            Mark::None => None,
            Mark::Begin => Some("EBEGIN"),
            Mark::End => Some("EEND"),
            Mark::Both => Some("EBEGIN+EEND"),
        };
        match (tag, mark) {
            (None, None) => "O".into(),
            (Some(t), None) => t,
            (None, Some(m)) => m.into(),
            (Some(t), Some(m)) => format!("({t}, {m})"),
        }
    }

    pub fn to_ids(&self, labels: &[Label]) -> Result<Vec<u16>> {
        labels
            .iter()
            .map(|&l| {
                self.id(l).ok_or_else(|| {
                    Error::Validation(format!("label {} is not in the scheme", self.name(l)))
                })
            })
            .collect()
    }

    pub fn from_ids(&self, ids: &[u16]) -> Result<Vec<Label>> {
        ids.iter()
            .map(|&i| {
                self.label(i)
                    .ok_or_else(|| Error::Validation(format!("label id {i} out of range")))
            })
            .collect()
    }
}

/// Encoded ids with one label id per token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledStream {
    pub ids: Vec<u32>,
    pub labels: Vec<u16>,
}

impl LabeledStream {
    pub fn new(ids: Vec<u32>, labels: Vec<u16>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::LengthMismatch(ids.len(), labels.len()));
        }
        Ok(LabeledStream { ids, labels })
    }
}

pub fn write_labeled(path: &Path, streams: &[LabeledStream]) -> Result<()> {
    write_jsonl(path, streams)
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledStream>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledStream = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(LabeledStream::new(s.ids, s.labels)?);
    }
    Ok(out)
}

/// Counters reported alongside metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionStats {
    /// Entries with no token able to carry their boundary labels.
    pub skipped_entries: usize,
    pub projected_entities: usize,
    /// Entities lost to alignment failure or token collisions.
    pub dropped_entities: usize,
}

impl std::ops::AddAssign for ProjectionStats {
    fn add_assign(&mut self, o: Self) {
        self.skipped_entries += o.skipped_entries;
        self.projected_entities += o.projected_entities;
        self.dropped_entities += o.dropped_entities;
    }
}

/// Per-line positions of the encoded tokens that may carry labels.
struct LineIndex {
    text: Vec<Vec<usize>>,
    lhspace: Vec<Option<usize>>,
    rhspace: Vec<Option<usize>>,
}

impl LineIndex {
    fn new(stream: &TokenStream, encoded: &EncodedStream) -> Self {
        let n = stream.n_lines;
        let mut idx = LineIndex {
            text: vec![Vec::new(); n],
            lhspace: vec![None; n],
            rhspace: vec![None; n],
        };
        for (pos, o) in encoded.origin.iter().enumerate() {
            let t = &stream.tokens[o.token];
            match t.kind {
                TokenKind::TextChunk => idx.text[t.line].push(pos),
                TokenKind::LhSpace(_) => idx.lhspace[t.line] = Some(pos),
                TokenKind::RhSpace(_) => idx.rhspace[t.line] = Some(pos),
                _ => {}
            }
        }
        idx
    }
}

/// Places one begin and one end mark per entry according to `policy`.
/// Entry line indices refer to the stream's lines.
pub fn project_boundary_labels(
    stream: &TokenStream,
    encoded: &EncodedStream,
    entries: &[EntryAnnotation],
    policy: BoundaryPolicy,
) -> Result<(Vec<Label>, ProjectionStats)> {
    let idx = LineIndex::new(stream, encoded);
    let mut labels = vec![Label::O; encoded.len()];
    let mut stats = ProjectionStats::default();
    if policy == BoundaryPolicy::SpaceTokens
        && stream.n_lines > 0
        && (idx.lhspace.iter().all(Option::is_none) || idx.rhspace.iter().all(Option::is_none))
    {
        return Err(Error::Config(
            "SPACE_TOKENS policy on a stream without left and right space tokens".into(),
        ));
    }
    for e in entries {
        if e.end_line >= stream.n_lines {
            stats.skipped_entries += 1;
            continue;
        }
        let lines = e.start_line..=e.end_line;
        let (begin, end) = match policy {
            BoundaryPolicy::SpaceTokens => (idx.lhspace[e.start_line], idx.rhspace[e.end_line]),
            BoundaryPolicy::TextTokens | BoundaryPolicy::Joint => (
                lines.clone().find_map(|l| idx.text[l].first().copied()),
                lines.rev().find_map(|l| idx.text[l].last().copied()),
            ),
        };
        let (Some(b), Some(en)) = (begin, end) else {
            stats.skipped_entries += 1;
            continue;
        };
        labels[b].mark = labels[b].mark.with(Mark::Begin);
        labels[en].mark = labels[en].mark.with(Mark::End);
    }
    Ok((labels, stats))
}

/// Alignment parameters for projecting clean annotations onto noisy text.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Minimum fraction of a span's clean characters matched exactly.
    pub min_similarity: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            min_similarity: 0.5,
        }
    }
}

/// Global alignment (match +1, mismatch −1, gap −1) of `clean` onto
/// `noisy`. Returns, per clean character, the aligned noisy character and
/// whether the two are equal; `None` for clean characters facing a gap.
pub fn align_chars(clean: &[char], noisy: &[char]) -> Vec<Option<(usize, bool)>> {
    let (n, m) = (clean.len(), noisy.len());
    let w = m + 1;
    let mut score = vec![0i32; (n + 1) * w];
    for i in 0..=n {
        score[i * w] = -(i as i32);
    }
    for (j, s) in score.iter_mut().enumerate().take(m + 1) {
        *s = -(j as i32);
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = score[(i - 1) * w + j - 1] + if clean[i - 1] == noisy[j - 1] { 1 } else { -1 };
            let up = score[(i - 1) * w + j] - 1;
            let left = score[i * w + j - 1] - 1;
            score[i * w + j] = diag.max(up).max(left);
        }
    }
    let mut out = vec![None; n];
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = score[i * w + j];
        if i > 0 && j > 0 {
            let same = clean[i - 1] == noisy[j - 1];
            if here == score[(i - 1) * w + j - 1] + if same { 1 } else { -1 } {
                out[i - 1] = Some((j - 1, same));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == score[(i - 1) * w + j] - 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out
}

/// Maps clean character spans to the smallest covering noisy spans.
/// A span is dropped (`None`) when fewer than `min_similarity` of its
/// characters align to identical characters.
pub fn align_annotations(
    clean: &str,
    noisy: &str,
    spans: &[(usize, usize)],
    config: &AlignConfig,
) -> Vec<Option<(usize, usize)>> {
    let c: Vec<char> = clean.chars().collect();
    let n: Vec<char> = noisy.chars().collect();
    let alignment = if c == n {
        (0..c.len()).map(|i| Some((i, true))).collect()
    } else {
        align_chars(&c, &n)
    };
    spans
        .iter()
        .map(|&(s, e)| {
            if s >= e || e > c.len() {
                return None;
            }
            let mut lo = usize::MAX;
            let mut hi = 0;
            let mut matches = 0;
            for &(j, same) in alignment[s..e].iter().flatten() {
                lo = lo.min(j);
                hi = hi.max(j + 1);
                matches += same as usize;
            }
            let similarity = matches as f64 / (e - s) as f64;
            (lo < hi && similarity >= config.min_similarity).then_some((lo, hi))
        })
        .collect()
}

/// Adds IOB entity tags on text subwords.
///
/// `clean` holds the ground-truth text of every stream line when the stream
/// text is noisy; entity offsets refer to the clean entry text.
pub fn project_entity_labels(
    stream: &TokenStream,
    encoded: &EncodedStream,
    entries: &[EntryAnnotation],
    clean: Option<&[String]>,
    scheme: &LabelScheme,
    align: &AlignConfig,
    labels: &mut [Label],
) -> Result<ProjectionStats> {
    if labels.len() != encoded.len() {
        return Err(Error::LengthMismatch(labels.len(), encoded.len()));
    }
    let idx = LineIndex::new(stream, encoded);
    let noisy_lines = stream.line_texts();
    let mut stats = ProjectionStats::default();
    for e in entries {
        if e.entities.is_empty() {
            continue;
        }
        if e.end_line >= stream.n_lines {
            stats.dropped_entities += e.entities.len();
            continue;
        }
        let lines = e.start_line..=e.end_line;
        let noisy = join_entry_text(lines.clone().map(|l| noisy_lines[l].as_str()));
        let clean_text = match clean {
            Some(c) => join_entry_text(lines.clone().map(|l| c[l].as_str())),
            None => noisy.clone(),
        };
        // Entry-relative character range of every text subword.
        let mut subwords = Vec::new();
        let mut offset = 0;
        for l in lines {
            for &pos in &idx.text[l] {
                let (s, e) = encoded.origin[pos].span.unwrap_or((0, 0));
                subwords.push((pos, offset + s, offset + e));
            }
            offset += noisy_lines[l].chars().count() + 1;
        }
        let spans: Vec<(usize, usize)> =
            e.entities.iter().map(|s| (s.start_char, s.end_char)).collect();
        let projected = align_annotations(&clean_text, &noisy, &spans, align);
        for (entity, target) in e.entities.iter().zip(projected) {
            let Some(kind) = scheme.kind_index(&entity.kind) else {
                stats.dropped_entities += 1;
                continue;
            };
            let Some((s, t)) = target else {
                stats.dropped_entities += 1;
                continue;
            };
            let covered: Vec<usize> = subwords
                .iter()
                .filter(|&&(pos, a, b)| a < t && b > s && labels[pos].tag == Tag::O)
                .map(|&(pos, _, _)| pos)
                .collect();
            if covered.is_empty() {
                stats.dropped_entities += 1;
                continue;
            }
            for (i, &pos) in covered.iter().enumerate() {
                labels[pos].tag = if i == 0 { Tag::B(kind) } else { Tag::I(kind) };
            }
            stats.projected_entities += 1;
        }
    }
    Ok(stats)
}

/// Boundary labels, then entity labels when the scheme has entities.
pub fn project_labels(
    stream: &TokenStream,
    encoded: &EncodedStream,
    entries: &[EntryAnnotation],
    clean: Option<&[String]>,
    scheme: &LabelScheme,
    align: &AlignConfig,
) -> Result<(Vec<Label>, ProjectionStats)> {
    let (mut labels, mut stats) =
        project_boundary_labels(stream, encoded, entries, scheme.policy)?;
    if scheme.ner {
        stats += project_entity_labels(stream, encoded, entries, clean, scheme, align, &mut labels)?;
    }
    Ok((labels, stats))
}

/// Pairs begin and end marks into inclusive token ranges.
///
/// A begin followed by an end with nothing in between forms an entry;
/// any other mark is discarded and counted as malformed.
pub fn decode_entries(marks: impl IntoIterator<Item = Mark>) -> (Vec<(usize, usize)>, usize) {
    let mut out = Vec::new();
    let mut malformed = 0;
    let mut open: Option<usize> = None;
    for (i, m) in marks.into_iter().enumerate() {
        match m {
            Mark::None => {}
            Mark::Begin => {
                if open.replace(i).is_some() {
                    malformed += 1;
                }
            }
            Mark::End => match open.take() {
                Some(b) => out.push((b, i)),
                None => malformed += 1,
            },
            Mark::Both => {
                if open.take().is_some() {
                    malformed += 1;
                }
                out.push((i, i));
            }
        }
    }
    if open.is_some() {
        malformed += 1;
    }
    (out, malformed)
}

/// Entity spans `(kind, start, end)` (end exclusive) from IOB2 tags; an
/// `I-` tag that does not continue an entity of its kind starts one.
pub fn decode_entities(tags: impl IntoIterator<Item = Tag>) -> Vec<(u16, usize, usize)> {
    let mut out = Vec::new();
    let mut cur: Option<(u16, usize)> = None;
    let mut n = 0;
    for (i, t) in tags.into_iter().enumerate() {
        n = i + 1;
        match t {
            Tag::O => {
                if let Some((k, s)) = cur.take() {
                    out.push((k, s, i));
                }
            }
            Tag::B(k) => {
                if let Some((pk, s)) = cur.take() {
                    out.push((pk, s, i));
                }
                cur = Some((k, i));
            }
            Tag::I(k) => match cur {
                Some((pk, _)) if pk == k => {}
                _ => {
                    if let Some((pk, s)) = cur.take() {
                        out.push((pk, s, i));
                    }
                    cur = Some((k, i));
                }
            },
        }
    }
    if let Some((k, s)) = cur {
        out.push((k, s, n));
    }
    out
}

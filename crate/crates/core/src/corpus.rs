//! OCR line collections, entry annotations and page-level dataset splits.
//!
//! Lines are stored exactly as the upstream layout/OCR stage produced them:
//! geometry stays in page pixel units and is normalized only when a token
//! stream is built. Entries address lines by their position in the
//! reading-order sequence of their document (sorted by page, column, order).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfc, UnicodeNormalization};

use crate::error::{Error, Result};

/// Tolerance, as a fraction of column width, for a line sticking out of its column.
pub const CONTAINMENT_TOLERANCE: f64 = 0.02;

/// Default entity inventory. The set is configurable everywhere it is used.
pub const DEFAULT_ENTITY_KINDS: [&str; 5] = ["PER", "ACT", "TITLE", "LOC", "CARDINAL"];

/// Axis-aligned box `(x0, y0, x1, y1)` in page pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    fn is_proper(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// One OCR text line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    #[serde(rename = "doc")]
    pub doc_id: String,
    pub page: u32,
    pub column: u32,
    pub order: u32,
    pub text: String,
    #[serde(rename = "bbox")]
    pub line_bbox: BBox,
    pub column_bbox: BBox,
}

impl LineRecord {
    pub fn page_id(&self) -> PageId {
        PageId::new(&self.doc_id, self.page)
    }

    fn key(&self) -> (&str, u32, u32, u32) {
        (&self.doc_id, self.page, self.column, self.order)
    }

    fn describe(&self) -> String {
        format!(
            "(doc={}, page={}, column={}, order={})",
            self.doc_id, self.page, self.column, self.order
        )
    }

    /// Checks box sanity and clamps the line into its column when it sticks
    /// out by less than [`CONTAINMENT_TOLERANCE`].
    pub fn validate_and_clamp(&mut self) -> Result<()> {
        if !self.line_bbox.is_proper() {
            return Err(Error::Validation(format!(
                "degenerate line bbox for {}",
                self.describe()
            )));
        }
        if !self.column_bbox.is_proper() {
            return Err(Error::Validation(format!(
                "degenerate column bbox for {}",
                self.describe()
            )));
        }
        let col = self.column_bbox;
        let tol = CONTAINMENT_TOLERANCE * col.width();
        if self.line_bbox.x0 < col.x0 - tol || self.line_bbox.x1 > col.x1 + tol {
            return Err(Error::Validation(format!(
                "line bbox of {} is outside its column",
                self.describe()
            )));
        }
        self.line_bbox.x0 = self.line_bbox.x0.max(col.x0);
        self.line_bbox.x1 = self.line_bbox.x1.min(col.x1);
        if self.line_bbox.x0 >= self.line_bbox.x1 {
            return Err(Error::Validation(format!(
                "line bbox of {} is empty after clamping",
                self.describe()
            )));
        }
        Ok(())
    }
}

/// A page identifier, the unit of dataset splitting.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PageId {
    pub doc: String,
    pub page: u32,
}

impl PageId {
    pub fn new(doc: &str, page: u32) -> Self {
        PageId {
            doc: doc.to_string(),
            page,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub kind: String,
    /// Half-open character offsets into the entry text.
    #[serde(rename = "start")]
    pub start_char: usize,
    #[serde(rename = "end")]
    pub end_char: usize,
}

/// A directory entry: an inclusive range of lines plus its entities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryAnnotation {
    #[serde(rename = "doc")]
    pub doc_id: String,
    pub start_line: usize,
    pub end_line: usize,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
}

/// Clean (ground-truth) transcription of a line, keyed like [`LineRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanText {
    pub doc: String,
    pub page: u32,
    pub column: u32,
    pub order: u32,
    pub text: String,
}

/// Entry text convention: line texts joined by a single newline.
pub fn join_entry_text<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts.into_iter().collect::<Vec<_>>().join("\n")
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes one compact JSON object per line, keys in declaration order.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sorts, clamps and validates a line collection.
pub fn validate_lines(mut lines: Vec<LineRecord>) -> Result<Vec<LineRecord>> {
    for l in lines.iter_mut() {
        l.validate_and_clamp()?;
    }
    lines.sort_by(|a, b| a.key().cmp(&b.key()));
    for w in lines.windows(2) {
        if w[0].key() == w[1].key() {
            return Err(Error::Validation(format!(
                "duplicate line key {}",
                w[1].describe()
            )));
        }
    }
    // `order` must be dense from 0 inside every column.
    let mut expected: Option<((&str, u32, u32), u32)> = None;
    for l in &lines {
        let col = (l.doc_id.as_str(), l.page, l.column);
        let next = match expected {
            Some((c, n)) if c == col => n,
            _ => 0,
        };
        if l.order != next {
            return Err(Error::Validation(format!(
                "non-dense reading order at {}: expected order {next}",
                l.describe()
            )));
        }
        expected = Some((col, next + 1));
    }
    Ok(lines)
}

/// Loads a JSONL line file, sorted by `(doc, page, column, order)`, with
/// texts in Unicode NFC.
pub fn load_lines(path: impl AsRef<Path>) -> Result<Vec<LineRecord>> {
    let mut lines: Vec<LineRecord> = read_jsonl(path.as_ref())?;
    for l in &mut lines {
        l.text = nfc(&l.text);
    }
    validate_lines(lines)
}

fn nfc(s: &str) -> String {
    if is_nfc(s) {
        s.to_string()
    } else {
        s.nfc().collect()
    }
}

/// Sorts entries and checks range sanity, overlap and entity span shape.
///
/// Bounds against the entry text are checked by [`Corpus::new`], which has
/// the lines at hand.
pub fn validate_annotations(mut entries: Vec<EntryAnnotation>) -> Result<Vec<EntryAnnotation>> {
    for e in &entries {
        if e.start_line > e.end_line {
            return Err(Error::Validation(format!(
                "entry {}:[{}, {}] has start after end",
                e.doc_id, e.start_line, e.end_line
            )));
        }
        let mut spans: Vec<_> = e.entities.iter().collect();
        spans.sort_by_key(|s| (s.start_char, s.end_char));
        for s in &spans {
            if s.start_char >= s.end_char {
                return Err(Error::Validation(format!(
                    "empty entity span [{}, {}) in entry {}:{}",
                    s.start_char, s.end_char, e.doc_id, e.start_line
                )));
            }
        }
        for w in spans.windows(2) {
            if w[1].start_char < w[0].end_char {
                return Err(Error::Validation(format!(
                    "overlapping entities in entry {}:{}",
                    e.doc_id, e.start_line
                )));
            }
        }
    }
    entries.sort_by(|a, b| (&a.doc_id, a.start_line).cmp(&(&b.doc_id, b.start_line)));
    for w in entries.windows(2) {
        if w[0].doc_id == w[1].doc_id && w[1].start_line <= w[0].end_line {
            return Err(Error::Validation(format!(
                "overlapping entries in {}: [{}, {}] and [{}, {}]",
                w[0].doc_id, w[0].start_line, w[0].end_line, w[1].start_line, w[1].end_line
            )));
        }
    }
    Ok(entries)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<EntryAnnotation>> {
    validate_annotations(read_jsonl(path.as_ref())?)
}

/// Entity offsets refer to the NFC form of the clean text.
pub fn load_clean_text(path: impl AsRef<Path>) -> Result<Vec<CleanText>> {
    let mut records: Vec<CleanText> = read_jsonl(path.as_ref())?;
    for r in &mut records {
        r.text = nfc(&r.text);
    }
    Ok(records)
}

/// Train / test / validation fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.80,
            test: 0.15,
            validation: 0.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<PageId>,
    pub test: BTreeSet<PageId>,
    pub validation: BTreeSet<PageId>,
}

/// Deterministic page-level split.
///
/// Test and validation counts are rounded from their ratios; the train set
/// takes the remainder so the three counts always sum to the page count.
pub fn split_dataset(
    pages: &BTreeSet<PageId>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    if pages.is_empty() {
        return Err(Error::Empty("cannot split an empty page set"));
    }
    let SplitRatios {
        train,
        test,
        validation,
    } = ratios;
    if [train, test, validation].iter().any(|r| !(0.0..=1.0).contains(r))
        || (train + test + validation - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios must lie in [0,1] and sum to 1, got ({train}, {test}, {validation})"
        )));
    }
    let n = pages.len();
    let n_test = ((n as f64) * test).round() as usize;
    let n_val = (((n as f64) * validation).round() as usize).min(n - n_test.min(n));
    let n_test = n_test.min(n);

    let mut shuffled: Vec<PageId> = pages.iter().cloned().collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = DatasetSplit::default();
    for (i, p) in shuffled.into_iter().enumerate() {
        if i < n_test {
            split.test.insert(p);
        } else if i < n_test + n_val {
            split.validation.insert(p);
        } else {
            split.train.insert(p);
        }
    }
    Ok(split)
}

/// A validated set of lines with their entries and optional clean text.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    /// Sorted by `(doc, page, column, order)`.
    pub lines: Vec<LineRecord>,
    /// Sorted by `(doc, start_line)`; line indices are relative to the document.
    pub entries: Vec<EntryAnnotation>,
    /// Ground-truth text parallel to `lines`, when the OCR text is noisy.
    pub clean: Option<Vec<String>>,
}

impl Corpus {
    pub fn new(
        lines: Vec<LineRecord>,
        entries: Vec<EntryAnnotation>,
        clean: Option<Vec<String>>,
    ) -> Result<Self> {
        let lines = validate_lines(lines)?;
        let entries = validate_annotations(entries)?;
        if let Some(c) = &clean {
            if c.len() != lines.len() {
                return Err(Error::LengthMismatch(c.len(), lines.len()));
            }
        }
        let corpus = Corpus {
            lines,
            entries,
            clean,
        };
        let docs = corpus.document_ranges();
        for e in &corpus.entries {
            let range = docs.get(e.doc_id.as_str()).ok_or_else(|| {
                Error::Validation(format!("entry refers to unknown document {}", e.doc_id))
            })?;
            if e.end_line >= range.len() {
                return Err(Error::Validation(format!(
                    "entry {}:[{}, {}] exceeds the document's {} lines",
                    e.doc_id,
                    e.start_line,
                    e.end_line,
                    range.len()
                )));
            }
            let text_len = corpus.entry_clean_text(e).chars().count();
            for s in &e.entities {
                if s.end_char > text_len {
                    return Err(Error::Validation(format!(
                        "entity {} [{}, {}) out of bounds for entry {}:{} of length {text_len}",
                        s.kind, s.start_char, s.end_char, e.doc_id, e.start_line
                    )));
                }
            }
        }
        Ok(corpus)
    }

    /// Loads lines, annotations, and an optional clean-text sidecar.
    pub fn load(
        lines: impl AsRef<Path>,
        annotations: impl AsRef<Path>,
        clean: Option<&Path>,
    ) -> Result<Self> {
        let lines = load_lines(lines)?;
        let entries = load_annotations(annotations)?;
        let clean = match clean {
            None => None,
            Some(p) => {
                let mut by_key: BTreeMap<(String, u32, u32, u32), String> = load_clean_text(p)?
                    .into_iter()
                    .map(|c| ((c.doc, c.page, c.column, c.order), c.text))
                    .collect();
                let texts = lines
                    .iter()
                    .map(|l| {
                        by_key
                            .remove(&(l.doc_id.clone(), l.page, l.column, l.order))
                            .ok_or_else(|| {
                                Error::Validation(format!(
                                    "clean text missing for {}",
                                    l.describe()
                                ))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(texts)
            }
        };
        Corpus::new(lines, entries, clean)
    }

    /// Writes `lines.jsonl`, `entries.jsonl` and, when present, `clean.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("lines.jsonl"), &self.lines)?;
        write_jsonl(&dir.join("entries.jsonl"), &self.entries)?;
        if let Some(clean) = &self.clean {
            let records: Vec<CleanText> = self
                .lines
                .iter()
                .zip(clean)
                .map(|(l, t)| CleanText {
                    doc: l.doc_id.clone(),
                    page: l.page,
                    column: l.column,
                    order: l.order,
                    text: t.clone(),
                })
                .collect();
            write_jsonl(&dir.join("clean.jsonl"), &records)?;
        }
        Ok(())
    }

    /// Global index range of every document's lines.
    pub fn document_ranges(&self) -> BTreeMap<&str, std::ops::Range<usize>> {
        let mut out: BTreeMap<&str, std::ops::Range<usize>> = BTreeMap::new();
        for (i, l) in self.lines.iter().enumerate() {
            out.entry(l.doc_id.as_str())
                .and_modify(|r| r.end = i + 1)
                .or_insert(i..i + 1);
        }
        out
    }

    pub fn pages(&self) -> BTreeSet<PageId> {
        self.lines.iter().map(LineRecord::page_id).collect()
    }

    pub fn clean_text(&self, line: usize) -> &str {
        match &self.clean {
            Some(c) => &c[line],
            None => &self.lines[line].text,
        }
    }

    fn entry_global_range(&self, e: &EntryAnnotation) -> std::ops::RangeInclusive<usize> {
        let base = self
            .lines
            .partition_point(|l| l.doc_id.as_str() < e.doc_id.as_str());
        base + e.start_line..=base + e.end_line
    }

    pub fn entry_clean_text(&self, e: &EntryAnnotation) -> String {
        join_entry_text(self.entry_global_range(e).map(|i| self.clean_text(i)))
    }

    /// Restricts the corpus to the given pages.
    ///
    /// An entry belongs to the page its first line is on, and carries its
    /// continuation lines with it even when they sit on another page. Line
    /// indices of the kept entries are renumbered for the subset.
    pub fn subset(&self, pages: &BTreeSet<PageId>) -> Corpus {
        let docs = self.document_ranges();
        let mut owner: Vec<PageId> = self.lines.iter().map(LineRecord::page_id).collect();
        for e in &self.entries {
            let base = docs[e.doc_id.as_str()].start;
            let start_page = self.lines[base + e.start_line].page_id();
            for slot in &mut owner[base + e.start_line..=base + e.end_line] {
                *slot = start_page.clone();
            }
        }
        let keep: Vec<usize> = (0..self.lines.len())
            .filter(|&i| pages.contains(&owner[i]))
            .collect();
        let kept: HashSet<usize> = keep.iter().copied().collect();

        // New document-relative index for every kept line.
        let mut new_index = vec![usize::MAX; self.lines.len()];
        let mut per_doc: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in &keep {
            let c = per_doc.entry(self.lines[i].doc_id.as_str()).or_insert(0);
            new_index[i] = *c;
            *c += 1;
        }
        let entries = self
            .entries
            .iter()
            .filter_map(|e| {
                let base = docs[e.doc_id.as_str()].start;
                if !kept.contains(&(base + e.start_line)) {
                    return None;
                }
                Some(EntryAnnotation {
                    doc_id: e.doc_id.clone(),
                    start_line: new_index[base + e.start_line],
                    end_line: new_index[base + e.end_line],
                    entities: e.entities.clone(),
                })
            })
            .collect();
        Corpus {
            lines: keep.iter().map(|&i| self.lines[i].clone()).collect(),
            entries,
            clean: self
                .clean
                .as_ref()
                .map(|c| keep.iter().map(|&i| c[i].clone()).collect()),
        }
    }

    /// Splits the corpus into one contiguous view per document.
    pub fn documents(&self) -> Vec<Corpus> {
        let docs = self.document_ranges();
        docs.iter()
            .map(|(doc, range)| Corpus {
                lines: self.lines[range.clone()].to_vec(),
                entries: self
                    .entries
                    .iter()
                    .filter(|e| e.doc_id == *doc)
                    .cloned()
                    .collect(),
                clean: self.clean.as_ref().map(|c| c[range.clone()].to_vec()),
            })
            .collect()
    }
}

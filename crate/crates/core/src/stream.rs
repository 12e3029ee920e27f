//! Visual measures, categorical encoding, and the mixed visual/textual
//! token stream.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, LineRecord};
use crate::error::{Error, Result};

const SPACE_EPS: f64 = 1e-6;

/// Horizontal whitespace around a line, as fractions of its column width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceMeasures {
    pub left_abs: f64,
    pub right_abs: f64,
    /// Change of `left_abs` versus the previous line of the same column.
    pub left_rel: f64,
}

fn left_abs(line: &LineRecord) -> Result<f64> {
    let w = line.column_bbox.width();
    if w <= 0.0 {
        return Err(Error::Validation(format!(
            "zero-width column for line {} of page {}",
            line.order, line.page
        )));
    }
    Ok(((line.line_bbox.x0 - line.column_bbox.x0) / w).clamp(0.0, 1.0))
}

/// Measures one line; `prev` is the preceding line of the same column.
pub fn compute_spaces(line: &LineRecord, prev: Option<&LineRecord>) -> Result<SpaceMeasures> {
    let left = left_abs(line)?;
    let w = line.column_bbox.width();
    let right = ((line.column_bbox.x1 - line.line_bbox.x1) / w).clamp(0.0, 1.0);
    let rel = match prev {
        Some(p) => left - left_abs(p)?,
        None => 0.0,
    };
    debug_assert!(left + right <= 1.0 + SPACE_EPS);
    Ok(SpaceMeasures {
        left_abs: left,
        right_abs: right,
        left_rel: rel,
    })
}

/// Right-open bins `[lower, c0[, [c0, c1[, …, [c_last, upper]` over a
/// domain that may be unbounded on either side. A finite upper bound is
/// included in the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerBins {
    pub lower: f64,
    pub cuts: Vec<f64>,
    pub upper: f64,
}

impl QuantizerBins {
    pub fn new(lower: f64, cuts: Vec<f64>, upper: f64) -> Result<Self> {
        let sorted = cuts.windows(2).all(|w| w[0] < w[1]);
        let inside = cuts.iter().all(|&c| lower < c && c < upper);
        if cuts.is_empty() || !sorted || !inside {
            return Err(Error::Config(format!(
                "invalid bins: lower={lower}, cuts={cuts:?}, upper={upper}"
            )));
        }
        Ok(QuantizerBins { lower, cuts, upper })
    }

    /// `]−∞, −0.01[`, `[−0.01, +0.01[`, `[+0.01, +∞[`
    pub fn relative_left() -> Self {
        QuantizerBins::new(f64::NEG_INFINITY, vec![-0.01, 0.01], f64::INFINITY).unwrap()
    }

    /// `[0, 0.02[`, `[0.02, 0.08[`, `[0.08, 1]`
    pub fn absolute_left() -> Self {
        QuantizerBins::new(0.0, vec![0.02, 0.08], 1.0).unwrap()
    }

    /// `[0, 0.05[`, `[0.05, 0.08[`, `[0.08, 1]`
    pub fn absolute_right() -> Self {
        QuantizerBins::new(0.0, vec![0.05, 0.08], 1.0).unwrap()
    }

    pub fn len(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Index of the bin containing `value`.
pub fn quantize(value: f64, bins: &QuantizerBins) -> Result<usize> {
    if value.is_nan() || value < bins.lower || value > bins.upper {
        return Err(Error::Validation(format!(
            "value {value} outside quantizer domain [{}, {}]",
            bins.lower, bins.upper
        )));
    }
    Ok(bins.cuts.partition_point(|&c| c <= value))
}

/// The three quantizers a stream may use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamBins {
    pub left_absolute: QuantizerBins,
    pub left_relative: QuantizerBins,
    pub right_absolute: QuantizerBins,
}

impl Default for StreamBins {
    fn default() -> Self {
        StreamBins {
            left_absolute: QuantizerBins::absolute_left(),
            left_relative: QuantizerBins::relative_left(),
            right_absolute: QuantizerBins::absolute_right(),
        }
    }
}

impl StreamBins {
    /// Every special marker a stream built with these bins can contain.
    pub fn markers(&self) -> Vec<String> {
        let n_left = self.left_absolute.len().max(self.left_relative.len());
        let mut out = vec![BREAK_MARKER.to_string()];
        out.extend((0..n_left).map(lhspace_marker));
        out.extend((0..self.right_absolute.len()).map(rhspace_marker));
        out.push(TEXTLINE_MARKER.to_string());
        out
    }
}

pub const BREAK_MARKER: &str = "<break>";
pub const TEXTLINE_MARKER: &str = "<textline>";

pub fn lhspace_marker(bin: usize) -> String {
    format!("<lhspace-{bin}>")
}

pub fn rhspace_marker(bin: usize) -> String {
    format!("<rhspace-{bin}>")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeftMode {
    None,
    Absolute,
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RightMode {
    None,
    Absolute,
}

/// Which tokens carry the entry boundary labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundaryPolicy {
    TextTokens,
    SpaceTokens,
    Joint,
}

/// Feature flags of one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub use_text: bool,
    pub use_breaks: bool,
    pub left_mode: LeftMode,
    pub right_mode: RightMode,
    pub ner: bool,
    pub boundary_policy: BoundaryPolicy,
}

pub const PRESET_NAMES: [&str; 9] = [
    "xp-1.1", "xp-1.2", "xp-1.3", "xp-1.4", "xp-1.5", "xp-1.6", "xp-1.7", "xp-2.1", "xp-2.2",
];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        use BoundaryPolicy::*;
        use LeftMode as L;
        use RightMode as R;
        let c = |use_text, use_breaks, left_mode, right_mode, ner, boundary_policy| {
            ExperimentConfig {
                use_text,
                use_breaks,
                left_mode,
                right_mode,
                ner,
                boundary_policy,
            }
        };
        Ok(match name {
            "xp-1.1" => c(true, false, L::None, R::None, false, TextTokens),
            "xp-1.2" => c(true, true, L::None, R::None, false, TextTokens),
            "xp-1.3" => c(true, true, L::Absolute, R::None, false, TextTokens),
            "xp-1.4" => c(true, true, L::Relative, R::None, false, TextTokens),
            "xp-1.5" => c(true, true, L::Absolute, R::Absolute, false, TextTokens),
            "xp-1.6" => c(true, true, L::Relative, R::Absolute, false, TextTokens),
            "xp-1.7" => c(false, true, L::Relative, R::Absolute, false, SpaceTokens),
            "xp-2.1" => c(true, true, L::Relative, R::Absolute, true, SpaceTokens),
            "xp-2.2" => c(true, true, L::Relative, R::Absolute, true, Joint),
            _ => {
                return Err(Error::UnknownPreset {
                    name: name.to_string(),
                    valid: PRESET_NAMES.join(", "),
                })
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !self.use_text && !self.use_breaks {
            return fail("a stream without text needs visual breaks");
        }
        if self.boundary_policy == BoundaryPolicy::SpaceTokens
            && (self.left_mode == LeftMode::None || self.right_mode == RightMode::None)
        {
            return fail("SPACE_TOKENS policy needs both left and right space tokens");
        }
        if !self.use_text && self.boundary_policy != BoundaryPolicy::SpaceTokens {
            return fail("without text, boundaries can only be placed on space tokens");
        }
        if self.ner && !self.use_text {
            return fail("entity labels need text tokens");
        }
        if self.ner && self.boundary_policy == BoundaryPolicy::TextTokens {
            return fail("entities and boundaries on the same text tokens need the JOINT policy");
        }
        Ok(())
    }

    /// Loads a config from a preset name or a JSON file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let cfg = if Path::new(name_or_path).is_file() {
            let text = std::fs::read_to_string(name_or_path)
                .map_err(|e| Error::io(name_or_path, e))?;
            serde_json::from_str(&text)?
        } else {
            Self::preset(name_or_path)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Granularity of the transition a break token stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakLevel {
    Line,
    Column,
    Page,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenKind {
    TextChunk,
    Break(BreakLevel),
    LhSpace(usize),
    RhSpace(usize),
    TextLine,
    /// Graphical or presentational token identified by its marker; the
    /// stream builder never emits these.
    Marker,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamToken {
    pub kind: TokenKind,
    /// Raw line text for text chunks, the marker string otherwise.
    pub payload: String,
    pub line: usize,
    /// Character span inside the line, for text chunks.
    pub span: Option<(usize, usize)>,
}

impl StreamToken {
    pub fn is_text(&self) -> bool {
        self.kind == TokenKind::TextChunk
    }

    /// Marker string of a special token, `None` for text chunks.
    pub fn marker(&self) -> Option<&str> {
        match self.kind {
            TokenKind::TextChunk => None,
            _ => Some(&self.payload),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<StreamToken>,
    pub n_lines: usize,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Text of every line, empty for lines without a text chunk.
    pub fn line_texts(&self) -> Vec<String> {
        let mut out = vec![String::new(); self.n_lines];
        for t in self.tokens.iter().filter(|t| t.is_text()) {
            out[t.line].push_str(&t.payload);
        }
        out
    }
}

fn same_column(a: &LineRecord, b: &LineRecord) -> bool {
    a.doc_id == b.doc_id && a.page == b.page && a.column == b.column
}

/// Builds the stream with the default bins.
pub fn build_stream(lines: &[LineRecord], config: &ExperimentConfig) -> Result<TokenStream> {
    build_stream_with(lines, config, &StreamBins::default())
}

/// Emits, per line: left space, text (or the text placeholder), right
/// space, break, each according to `config`. Lines must be in reading order.
pub fn build_stream_with(
    lines: &[LineRecord],
    config: &ExperimentConfig,
    bins: &StreamBins,
) -> Result<TokenStream> {
    let mut tokens = Vec::with_capacity(lines.len() * 4);
    for (i, line) in lines.iter().enumerate() {
        let prev = i
            .checked_sub(1)
            .map(|p| &lines[p])
            .filter(|p| same_column(p, line));
        let spaces = compute_spaces(line, prev)?;
        let special = |kind: TokenKind, payload: String| StreamToken {
            kind,
            payload,
            line: i,
            span: None,
        };
        match config.left_mode {
            LeftMode::None => {}
            LeftMode::Absolute => {
                let b = quantize(spaces.left_abs, &bins.left_absolute)?;
                tokens.push(special(TokenKind::LhSpace(b), lhspace_marker(b)));
            }
            LeftMode::Relative => {
                let b = quantize(spaces.left_rel, &bins.left_relative)?;
                tokens.push(special(TokenKind::LhSpace(b), lhspace_marker(b)));
            }
        }
        if config.use_text {
            tokens.push(StreamToken {
                kind: TokenKind::TextChunk,
                payload: line.text.clone(),
                line: i,
                span: Some((0, line.text.chars().count())),
            });
        } else {
            tokens.push(special(TokenKind::TextLine, TEXTLINE_MARKER.to_string()));
        }
        if config.right_mode == RightMode::Absolute {
            let b = quantize(spaces.right_abs, &bins.right_absolute)?;
            tokens.push(special(TokenKind::RhSpace(b), rhspace_marker(b)));
        }
        if config.use_breaks {
            let level = match lines.get(i + 1) {
                Some(n) if same_column(n, line) => BreakLevel::Line,
                Some(n) if n.doc_id == line.doc_id && n.page == line.page => BreakLevel::Column,
                _ => BreakLevel::Page,
            };
            tokens.push(special(TokenKind::Break(level), BREAK_MARKER.to_string()));
        }
    }
    Ok(TokenStream {
        tokens,
        n_lines: lines.len(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamRecord {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    bin: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    text: Option<String>,
    line: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    span: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    level: Option<BreakLevel>,
}

impl From<&StreamToken> for StreamRecord {
    fn from(t: &StreamToken) -> Self {
        let (kind, bin, text, level) = match &t.kind {
            TokenKind::TextChunk => ("text", None, Some(t.payload.clone()), None),
            TokenKind::Break(l) => ("break", None, None, Some(*l)),
            TokenKind::LhSpace(b) => ("lhspace", Some(*b), None, None),
            TokenKind::RhSpace(b) => ("rhspace", Some(*b), None, None),
            TokenKind::TextLine => ("textline", None, None, None),
            TokenKind::Marker => ("marker", None, Some(t.payload.clone()), None),
        };
        StreamRecord {
            kind: kind.to_string(),
            bin,
            text,
            line: t.line,
            span: t.span.map(|(s, e)| [s, e]),
            level,
        }
    }
}

impl TryFrom<StreamRecord> for StreamToken {
    type Error = Error;

    fn try_from(r: StreamRecord) -> Result<Self> {
        let missing = |f: &str| Error::Validation(format!("{} token without '{f}'", r.kind));
        let (kind, payload) = match r.kind.as_str() {
            "text" => (TokenKind::TextChunk, r.text.clone().ok_or_else(|| missing("text"))?),
            "break" => (
                TokenKind::Break(r.level.unwrap_or(BreakLevel::Line)),
                BREAK_MARKER.to_string(),
            ),
            "lhspace" => {
                let b = r.bin.ok_or_else(|| missing("bin"))?;
                (TokenKind::LhSpace(b), lhspace_marker(b))
            }
            "rhspace" => {
                let b = r.bin.ok_or_else(|| missing("bin"))?;
                (TokenKind::RhSpace(b), rhspace_marker(b))
            }
            "textline" => (TokenKind::TextLine, TEXTLINE_MARKER.to_string()),
            "marker" => (TokenKind::Marker, r.text.clone().ok_or_else(|| missing("text"))?),
            other => return Err(Error::Validation(format!("unknown token kind '{other}'"))),
        };
        Ok(StreamToken {
            kind,
            payload,
            line: r.line,
            span: r.span.map(|[s, e]| (s, e)),
        })
    }
}

pub fn write_stream(path: &Path, stream: &TokenStream) -> Result<()> {
    let records: Vec<StreamRecord> = stream.tokens.iter().map(StreamRecord::from).collect();
    write_jsonl(path, &records)
}

pub fn read_stream(path: &Path) -> Result<TokenStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        tokens.push(StreamToken::try_from(rec)?);
    }
    let n_lines = tokens.iter().map(|t| t.line + 1).max().unwrap_or(0);
    Ok(TokenStream { tokens, n_lines })
}

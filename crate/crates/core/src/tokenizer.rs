//! Subword vocabulary with an extensible registry of special tokens.
//!
//! Text is escaped before segmentation: `<` becomes `\<` and `\` becomes
//! `\\`, and each escaped pair is an indivisible unit. Marker strings start
//! with a bare `<`, so no base subword can ever spell one. Every raw
//! character maps to exactly one unit, so unit offsets are character offsets.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stream::{TokenKind, TokenStream};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
const CONTROLS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Smallest vocabulary the trainer accepts.
pub const MIN_VOCAB_SIZE: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PieceKind {
    Base,
    Special,
    Control,
}

impl PieceKind {
    fn as_str(self) -> &'static str {
        match self {
            PieceKind::Base => "base",
            PieceKind::Special => "special",
            PieceKind::Control => "control",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Greedy pair merges (byte-pair style).
    Merges,
    /// One token per distinct character.
    Characters,
}

/// Splits text into escaped units, one per raw character.
pub fn escape_units(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| match c {
            '<' => "\\<".to_string(),
            '\\' => "\\\\".to_string(),
            c => c.to_string(),
        })
        .collect()
}

pub fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(n) => out.push(n),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    kinds: Vec<PieceKind>,
    base: HashMap<String, u32>,
    specials: HashMap<String, u32>,
    /// Longest base piece, in units.
    max_units: usize,
}

impl SubwordVocab {
    fn with_controls() -> Self {
        SubwordVocab {
            pieces: CONTROLS.iter().map(|s| s.to_string()).collect(),
            kinds: vec![PieceKind::Control; CONTROLS.len()],
            base: HashMap::new(),
            specials: HashMap::new(),
            max_units: 0,
        }
    }

    fn push_base(&mut self, surface: String, units: usize) {
        let id = self.pieces.len() as u32;
        self.base.insert(surface.clone(), id);
        self.pieces.push(surface);
        self.kinds.push(PieceKind::Base);
        self.max_units = self.max_units.max(units);
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: u32) -> Option<PieceKind> {
        self.kinds.get(id as usize).copied()
    }

    pub fn base_id(&self, surface: &str) -> Option<u32> {
        self.base.get(surface).copied()
    }

    pub fn special_id(&self, marker: &str) -> Option<u32> {
        self.specials.get(marker).copied()
    }

    pub fn n_specials(&self) -> usize {
        self.specials.len()
    }

    /// Tab-separated `id, surface, kind` lines; tabs, newlines and
    /// backslashes inside surfaces are backslash-escaped.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, (p, k)) in self.pieces.iter().zip(&self.kinds).enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{}", escape_field(p), k.as_str());
        }
        out
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let mut v = SubwordVocab {
            pieces: Vec::new(),
            kinds: Vec::new(),
            base: HashMap::new(),
            specials: HashMap::new(),
            max_units: 0,
        };
        for (n, line) in s.lines().enumerate() {
            let bad = |m: &str| Error::Validation(format!("vocab line {}: {m}", n + 1));
            let mut parts = line.split('\t');
            let (Some(id), Some(surface), Some(kind), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected three tab-separated fields"));
            };
            let id: usize = id.parse().map_err(|_| bad("bad id"))?;
            if id != v.pieces.len() {
                return Err(bad("ids must be dense and in order"));
            }
            let surface = unescape_field(surface);
            let kind = match kind {
                "base" => PieceKind::Base,
                "special" => PieceKind::Special,
                "control" => PieceKind::Control,
                _ => return Err(bad("unknown kind")),
            };
            match kind {
                PieceKind::Base => {
                    let units = count_units(&surface);
                    v.max_units = v.max_units.max(units);
                    v.base.insert(surface.clone(), id as u32);
                }
                PieceKind::Special => {
                    v.specials.insert(surface.clone(), id as u32);
                }
                PieceKind::Control => {}
            }
            v.pieces.push(surface);
            v.kinds.push(kind);
        }
        if v.pieces.len() < CONTROLS.len() || v.pieces[..CONTROLS.len()] != CONTROLS {
            return Err(Error::Validation("vocab must start with the control tokens".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&s)
    }

    /// SHA-256 of the vocabulary file contents.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }
}

fn count_units(escaped: &str) -> usize {
    let mut n = 0;
    let mut chars = escaped.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            chars.next();
        }
        n += 1;
    }
    n
}

fn escape_field(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Pre-tokenization: a new word starts at every whitespace unit.
fn words_of(units: &[String]) -> Vec<&[String]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..units.len() {
        if units[i].chars().all(char::is_whitespace) {
            out.push(&units[start..i]);
            start = i;
        }
    }
    if start < units.len() {
        out.push(&units[start..]);
    }
    out
}

/// Trains a base vocabulary (controls + alphabet + merges) of at most
/// `vocab_size` entries. Specials are registered afterwards.
pub fn train_tokenizer<S: AsRef<str>>(
    corpus: &[S],
    vocab_size: usize,
    mode: TrainMode,
) -> Result<SubwordVocab> {
    if corpus.is_empty() {
        return Err(Error::Empty("tokenizer corpus is empty"));
    }
    if vocab_size < MIN_VOCAB_SIZE {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is below the minimum of {MIN_VOCAB_SIZE}"
        )));
    }

    // Word frequencies, keyed by unit sequence; BTreeMap keeps it deterministic.
    let mut word_freq: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for text in corpus {
        let units = escape_units(text.as_ref());
        for w in words_of(&units) {
            *word_freq.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    let mut alphabet: Vec<String> = word_freq
        .keys()
        .flat_map(|w| w.iter().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    alphabet.sort();
    if CONTROLS.len() + alphabet.len() > vocab_size {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} cannot hold the {} distinct characters of the corpus",
            alphabet.len()
        )));
    }

    let mut vocab = SubwordVocab::with_controls();
    for a in &alphabet {
        vocab.push_base(a.clone(), 1);
    }
    if mode == TrainMode::Characters {
        return Ok(vocab);
    }

    // Each word is a sequence of symbols: (surface, unit count).
    let mut words: Vec<(Vec<(String, usize)>, usize)> = word_freq
        .into_iter()
        .map(|(w, f)| (w.into_iter().map(|u| (u, 1)).collect(), f))
        .collect();
    while vocab.len() < vocab_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, f) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0].0.as_str(), p[1].0.as_str())).or_insert(0) += f;
            }
        }
        // Highest count wins; ties go to the lexicographically smallest pair.
        let best = pairs
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        let merged = format!("{l}{r}");
        if vocab.base.contains_key(&merged) {
            // Same surface reachable by another split; merge without growing.
            merge_words(&mut words, &l, &r);
            continue;
        }
        let units = merge_words(&mut words, &l, &r);
        vocab.push_base(merged, units);
    }
    Ok(vocab)
}

fn merge_words(words: &mut [(Vec<(String, usize)>, usize)], l: &str, r: &str) -> usize {
    let mut units = 0;
    for (syms, _) in words.iter_mut() {
        let mut i = 0;
        while i + 1 < syms.len() {
            if syms[i].0 == l && syms[i + 1].0 == r {
                let (rs, ru) = syms.remove(i + 1);
                syms[i].0.push_str(&rs);
                syms[i].1 += ru;
                units = syms[i].1;
            }
            i += 1;
        }
    }
    units
}

/// Appends specials after every existing id.
pub fn register_specials<S: AsRef<str>>(
    mut vocab: SubwordVocab,
    markers: &[S],
) -> Result<SubwordVocab> {
    for m in markers {
        let m = m.as_ref();
        if vocab.specials.contains_key(m) || vocab.base.contains_key(m) || CONTROLS.contains(&m)
        {
            return Err(Error::DuplicateMarker(m.to_string()));
        }
        let id = vocab.pieces.len() as u32;
        vocab.specials.insert(m.to_string(), id);
        vocab.pieces.push(m.to_string());
        vocab.kinds.push(PieceKind::Special);
    }
    Ok(vocab)
}

/// Where an encoded id came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Origin {
    /// Index of the stream token.
    pub token: usize,
    /// Character span inside the token's line, for text subwords.
    pub span: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodedStream {
    pub ids: Vec<u32>,
    pub origin: Vec<Origin>,
}

impl EncodedStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Greedy longest-match segmentation of one text, returning
/// `(id, unit span)` pairs.
pub fn segment(vocab: &SubwordVocab, text: &str) -> Vec<(u32, (usize, usize))> {
    let units = escape_units(text);
    let mut out = Vec::new();
    let mut pos = 0;
    let mut buf = String::new();
    while pos < units.len() {
        let max = vocab.max_units.min(units.len() - pos).max(1);
        let mut found = None;
        for len in (1..=max).rev() {
            buf.clear();
            for u in &units[pos..pos + len] {
                buf.push_str(u);
            }
            if let Some(&id) = vocab.base.get(&buf) {
                found = Some((id, len));
                break;
            }
        }
        let (id, len) = found.unwrap_or((UNK, 1));
        out.push((id, (pos, pos + len)));
        pos += len;
    }
    out
}

/// Maps every stream token to ids: one per special, subwords for text.
pub fn encode(vocab: &SubwordVocab, stream: &TokenStream) -> Result<EncodedStream> {
    let mut enc = EncodedStream::default();
    for (i, t) in stream.tokens.iter().enumerate() {
        match t.kind {
            TokenKind::TextChunk => {
                let base = t.span.map(|s| s.0).unwrap_or(0);
                for (id, (s, e)) in segment(vocab, &t.payload) {
                    enc.ids.push(id);
                    enc.origin.push(Origin {
                        token: i,
                        span: Some((base + s, base + e)),
                    });
                }
            }
            _ => {
                let marker = t.marker().unwrap_or_default();
                let id = vocab
                    .special_id(marker)
                    .ok_or_else(|| Error::UnregisteredSpecial(marker.to_string()))?;
                enc.ids.push(id);
                enc.origin.push(Origin { token: i, span: None });
            }
        }
    }
    Ok(enc)
}

/// Reassembles the text of every text chunk from its subword ids.
///
/// Unknown characters decode to U+FFFD.
pub fn decode_text(vocab: &SubwordVocab, encoded: &EncodedStream) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (&id, o) in encoded.ids.iter().zip(&encoded.origin) {
        if vocab.kind(id) != Some(PieceKind::Base) && id != UNK {
            continue;
        }
        let piece = if id == UNK {
            "\u{FFFD}"
        } else {
            vocab.piece(id).unwrap_or_default()
        };
        match out.last_mut() {
            Some((tok, s)) if *tok == o.token => s.push_str(piece),
            _ => out.push((o.token, piece.to_string())),
        }
    }
    for (_, s) in out.iter_mut() {
        *s = unescape(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{StreamBins, StreamToken, BREAK_MARKER};

    fn specials() -> Vec<String> {
        StreamBins::default().markers()
    }

    #[test]
    fn character_mode_lists_the_alphabet() {
        let v = train_tokenizer(&["abab"], 300, TrainMode::Characters).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.base_id("a").is_some() && v.base_id("b").is_some());
        assert_eq!(v.piece(PAD), Some("<pad>"));
        assert_eq!(v.kind(UNK), Some(PieceKind::Control));
    }

    #[test]
    fn repeated_word_merges_into_one_token() {
        // Eight merges: co, cou, cout, ... coutelier (each pair count 50).
        let corpus = vec!["coutelier"; 50];
        let v = train_tokenizer(&corpus, 400, TrainMode::Merges).unwrap();
        let id = v.base_id("coutelier").expect("merged");
        assert_eq!(segment(&v, "coutelier"), vec![(id, (0, 9))]);
        // 4 controls + 8 distinct letters + 8 merges.
        assert_eq!(v.len(), 4 + 8 + 8);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["Bailly, coutelier. S.Honoré, 416.", "Dupont, boucher, Richelieu, 12."];
        let a = train_tokenizer(&corpus, 300, TrainMode::Merges).unwrap();
        let b = train_tokenizer(&corpus, 300, TrainMode::Merges).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_vocab_sizes_are_rejected() {
        assert!(train_tokenizer(&["abc"], 299, TrainMode::Merges).is_err());
        let many: String = (0..400u32).filter_map(|c| char::from_u32(0x4e00 + c)).collect();
        assert!(train_tokenizer(&[many], 300, TrainMode::Characters).is_err());
        assert!(train_tokenizer::<&str>(&[], 300, TrainMode::Merges).is_err());
    }

    #[test]
    fn specials_get_consecutive_fresh_ids() {
        let v = train_tokenizer(&["abab"], 300, TrainMode::Characters).unwrap();
        let before = v.len() as u32;
        let v = register_specials(v, &[BREAK_MARKER]).unwrap();
        assert_eq!(v.special_id(BREAK_MARKER), Some(before));
        let err = register_specials(v.clone(), &[BREAK_MARKER]).unwrap_err();
        assert!(matches!(err, Error::DuplicateMarker(_)));

        let seven: Vec<String> = specials().into_iter().filter(|m| m != BREAK_MARKER).take(7).collect();
        let n = v.len() as u32;
        let v2 = register_specials(v.clone(), &seven).unwrap();
        let ids: Vec<u32> = seven.iter().map(|m| v2.special_id(m).unwrap()).collect();
        assert_eq!(ids, (n..n + 7).collect::<Vec<_>>());
        // Existing ids are unchanged.
        for id in 0..n {
            assert_eq!(v.piece(id), v2.piece(id));
        }
    }

    fn tok(kind: TokenKind, payload: &str, line: usize) -> StreamToken {
        let span = (kind == TokenKind::TextChunk).then(|| (0, payload.chars().count()));
        StreamToken {
            kind,
            payload: payload.into(),
            line,
            span,
        }
    }

    fn vocab() -> SubwordVocab {
        let v = train_tokenizer(
            &["Bailly, coutelier. S.Honoré, 416.", "Bailly <break> \\ x", "Bailly"],
            300,
            TrainMode::Merges,
        )
        .unwrap();
        register_specials(v, &specials()).unwrap()
    }

    #[test]
    fn specials_are_single_ids_around_subwords() {
        let v = vocab();
        let stream = TokenStream {
            tokens: vec![
                tok(TokenKind::LhSpace(0), "<lhspace-0>", 0),
                tok(TokenKind::TextChunk, "Bailly", 0),
                tok(TokenKind::Break(crate::stream::BreakLevel::Line), BREAK_MARKER, 0),
            ],
            n_lines: 1,
        };
        let enc = encode(&v, &stream).unwrap();
        assert_eq!(enc.ids.first(), v.special_id("<lhspace-0>").as_ref());
        assert_eq!(enc.ids.last(), v.special_id(BREAK_MARKER).as_ref());
        let middle: Vec<u32> = segment(&v, "Bailly").into_iter().map(|(id, _)| id).collect();
        assert_eq!(&enc.ids[1..enc.ids.len() - 1], &middle[..]);
        assert_eq!(enc.origin[0].span, None);
        assert_eq!(enc.origin[1].token, 1);
    }

    #[test]
    fn empty_chunk_emits_nothing() {
        let v = vocab();
        let stream = TokenStream {
            tokens: vec![tok(TokenKind::TextChunk, "", 0)],
            n_lines: 1,
        };
        assert!(encode(&v, &stream).unwrap().is_empty());
    }

    #[test]
    fn marker_text_inside_a_chunk_stays_text() {
        let v = vocab();
        let stream = TokenStream {
            tokens: vec![tok(TokenKind::TextChunk, "a <break> b \\<", 0)],
            n_lines: 1,
        };
        let enc = encode(&v, &stream).unwrap();
        let brk = v.special_id(BREAK_MARKER).unwrap();
        assert!(!enc.ids.contains(&brk));
        assert!(enc.ids.iter().all(|&id| v.kind(id) == Some(PieceKind::Base)));
        assert_eq!(decode_text(&v, &enc), vec![(0, "a <break> b \\<".to_string())]);
    }

    #[test]
    fn unregistered_special_is_an_error() {
        let v = train_tokenizer(&["abab"], 300, TrainMode::Characters).unwrap();
        let stream = TokenStream {
            tokens: vec![tok(TokenKind::TextLine, "<textline>", 0)],
            n_lines: 1,
        };
        assert!(matches!(encode(&v, &stream), Err(Error::UnregisteredSpecial(_))));
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = vocab();
        let segs = segment(&v, "Bz");
        assert_eq!(segs.last().unwrap().0, UNK);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = register_specials(
            train_tokenizer(&["a\tb\\c <d>", "a\tb"], 300, TrainMode::Merges).unwrap(),
            &specials(),
        )
        .unwrap();
        let s = v.to_file_string();
        assert!(s.starts_with("0\t<pad>\tcontrol\n"));
        let back = SubwordVocab::from_file_string(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segmentation_is_lossless(text in "[a-eBH ,.<>\\\\]{0,40}") {
                let v = train_tokenizer(&["abcde BH ,.<>\\ abc abd"], 300, TrainMode::Merges).unwrap();
                let segs = segment(&v, &text);
                let mut joined = String::new();
                let mut pos = 0;
                for (id, (s, e)) in segs {
                    prop_assert_eq!(s, pos);
                    pos = e;
                    joined.push_str(v.piece(id).unwrap());
                }
                prop_assert_eq!(pos, text.chars().count());
                prop_assert_eq!(unescape(&joined), text);
            }
        }
    }
}

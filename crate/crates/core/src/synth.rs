//! Synthetic trade-directory corpora.
//!
//! Pages hold columns of vertically stacked lines. Entries follow the
//! template `Name (initials), activity, street, number.` and wrap over a
//! geometric number of lines with a hanging indent; a fraction of pages
//! invert the indent convention. Gold annotations always reference the
//! clean text, which is kept next to the noisy OCR text.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::corpus::{BBox, Corpus, EntitySpan, EntryAnnotation, LineRecord};
use crate::error::{Error, Result};

const PAGE_LEFT: f64 = 100.0;
const PAGE_TOP: f64 = 120.0;
const COLUMN_WIDTH: f64 = 480.0;
const COLUMN_GAP: f64 = 40.0;
const LINE_PITCH: f64 = 30.0;
const LINE_HEIGHT: f64 = 24.0;
const CHAR_WIDTH: f64 = 10.0;

/// Name of the single document a synthetic corpus is written to.
pub const SYNTH_DOC: &str = "synth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    pub surnames: Vec<String>,
    pub activities: Vec<String>,
    pub titles: Vec<String>,
    pub streets: Vec<String>,
}

fn owned(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicons {
    fn default() -> Self {
        Lexicons {
            surnames: owned(&[
                "Bailly", "Dupont", "Durand", "Lefebvre", "Moreau", "Laurent", "Simon", "Michel",
                "Garnier", "Rousseau", "Blanc", "Guerin", "Muller", "Henry", "Roussel", "Nicolas",
                "Perrin", "Morin", "Mathieu", "Clement", "Gauthier", "Dumont", "Lopez", "Fontaine",
                "Chevalier", "Robin", "Masson", "Sanchez", "Gerard", "Nguyen", "Boyer", "Denis",
                "Lemaire", "Duval", "Joly", "Gautier", "Roger", "Roche", "Roy", "Noel", "Meyer",
                "Lucas", "Meunier", "Jean", "Perez", "Marchand", "Dufour", "Blanchard", "Marie",
                "Barbier", "Brun", "Dumas", "Brunet", "Schmitt", "Leroux", "Colin", "Fernandez",
                "Pierre", "Renard", "Arnaud", "Rolland", "Caron", "Aubert", "Giraud", "Leclerc",
                "Vidal", "Bourgeois", "Renaud", "Lemoine", "Picard", "Gaillard", "Philippe",
                "Leclercq", "Lacroix", "Fabre", "Dupuis", "Olivier", "Rodriguez", "Da Silva",
                "Hubert", "Louis", "Charles", "Guillot", "Riviere", "Le Gall", "Guillaume",
                "Adam", "Rey", "Moulin", "Gonzalez", "Berger", "Lecomte", "Menard", "Fleury",
                "Deschamps", "Carpentier", "Julien", "Benoit", "Paris", "Maillard", "Marchal",
                "Aubry", "Vasseur", "Le Roux", "Renault", "Jacquet", "Collet", "Prevost",
                "Poirier", "Charpentier", "Royer", "Huet", "Baron", "Dupuy", "Pons", "Paul",
                "Laine", "Carre", "Breton", "Remy", "Schneider", "Perrot", "Guyot", "Barre",
                "Marty", "Cousin", "Colbert", "Richelieu", "Mazarin", "Turenne", "Rivoli",
                "Vivienne", "Montorgueil", "Monge", "Buffon", "Cuvier",
            ]),
            activities: owned(&[
                "coutelier", "boulanger", "boucher", "épicier", "tailleur", "cordonnier",
                "horloger", "bijoutier", "orfèvre", "libraire", "imprimeur", "relieur",
                "marchand de vins", "md de vins", "charcutier", "pâtissier", "confiseur",
                "chapelier", "bonnetier", "mercier", "drapier", "tapissier", "ébéniste",
                "menuisier", "serrurier", "plombier", "fumiste", "peintre", "vitrier",
                "charpentier", "maçon", "couvreur", "tonnelier", "sellier", "carrossier",
                "bourrelier", "maréchal", "armurier", "fondeur", "ferblantier", "chaudronnier",
                "lampiste", "opticien", "pharmacien", "herboriste", "médecin", "notaire",
                "avoué", "huissier", "architecte", "graveur", "lithographe", "papetier",
                "parfumeur", "coiffeur", "fleuriste", "plumassier", "fab. de chaises",
                "fab. de parapluies", "nourrisseur", "grainetier", "faïencier", "miroitier",
                "layetier", "tabletier", "passementier", "brodeur", "lingère", "modiste",
                "blanchisseur", "teinturier", "corroyeur", "tanneur", "mégissier",
            ]),
            titles: owned(&[
                "Vve", "aîné", "jeune", "fils", "et Ce", "frères", "père", "Mme", "Mlle",
                "neveu", "et fils", "successeur",
            ]),
            streets: owned(&[
                "S.-Honoré", "Richelieu", "r. du Bac", "Montmartre", "r. S.-Denis",
                "S.-Martin", "Vivienne", "Rivoli", "r. de la Paix", "quai des Orfèvres",
                "r. de Seine", "Mazarin", "Colbert", "r. Monge", "Montorgueil", "Turenne",
                "r. du Temple", "Vieille-du-Temple", "r. de Sèvres", "r. de Grenelle",
                "r. de l'Université", "r. Jacob", "r. Dauphine", "pl. Vendôme",
                "boul. des Italiens", "r. Royale", "faub. S.-Antoine", "faub. Poissonnière",
                "r. de Cléry", "r. du Sentier", "r. des Lombards", "r. de la Verrerie",
                "r. Mouffetard", "r. de la Harpe", "r. S.-Jacques", "Buffon", "Cuvier",
                "r. de Charonne", "r. de la Roquette", "r. Saint-Sauveur", "r. Beaubourg",
                "r. du Faub.-du-Temple", "r. de Bondy", "r. d'Enghien", "r. Hauteville",
                "r. Lafayette", "Lepeletier", "Laffitte", "r. Taitbout", "Chaussée-d'Antin",
            ]),
        }
    }
}

/// Generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_pages: usize,
    pub columns_per_page: usize,
    pub target_lines_per_column: usize,
    pub mean_lines_per_entry: f64,
    /// Fraction of column width.
    pub hanging_indent: f64,
    pub indent_jitter: f64,
    /// Fraction of pages whose indent convention is inverted.
    pub inconsistency_rate: f64,
    /// Per-character corruption probability.
    pub noise_rate: f64,
    pub entity_lexicons: Lexicons,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_pages: 10,
            columns_per_page: 2,
            target_lines_per_column: 40,
            mean_lines_per_entry: 1.4,
            hanging_indent: 0.05,
            indent_jitter: 0.005,
            inconsistency_rate: 0.1,
            noise_rate: 0.03,
            entity_lexicons: Lexicons::default(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let lx = &self.entity_lexicons;
        if lx.surnames.is_empty()
            || lx.activities.is_empty()
            || lx.titles.is_empty()
            || lx.streets.is_empty()
        {
            return Err(Error::Config("entity lexicons must not be empty".into()));
        }
        if !(self.mean_lines_per_entry >= 1.0) {
            return Err(Error::Config("mean_lines_per_entry must be >= 1".into()));
        }
        for (name, r) in [
            ("inconsistency_rate", self.inconsistency_rate),
            ("noise_rate", self.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.columns_per_page == 0 || self.target_lines_per_column == 0 {
            return Err(Error::Config("pages need at least one column and line".into()));
        }
        if !(0.0..0.5).contains(&self.hanging_indent)
            || !(0.0..=self.hanging_indent.max(0.0)).contains(&self.indent_jitter)
        {
            return Err(Error::Config(
                "hanging_indent must lie in [0, 0.5) and jitter must not exceed it".into(),
            ));
        }
        Ok(())
    }

    /// Success probability of the geometric law giving the continuation count.
    fn geometric_p(&self) -> f64 {
        1.0 / self.mean_lines_per_entry
    }
}

/// Which corruption operations the noise model may pick from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseOps {
    pub substitute: bool,
    pub delete: bool,
    pub insert: bool,
}

impl NoiseOps {
    pub const ALL: NoiseOps = NoiseOps {
        substitute: true,
        delete: true,
        insert: true,
    };
    pub const SUBSTITUTE_ONLY: NoiseOps = NoiseOps {
        substitute: true,
        delete: false,
        insert: false,
    };
}

/// Visually confusable replacements, in the spirit of common OCR errors.
const CONFUSIONS: &[(char, &[&str])] = &[
    ('o', &["u", "0", "e"]),
    ('u', &["o", "n", "ii"]),
    ('n', &["ri", "u", "m"]),
    ('m', &["rn", "in", "n"]),
    ('e', &["c", "é", "o"]),
    ('é', &["e", "è", "c"]),
    ('è', &["e", "é"]),
    ('c', &["e", "o"]),
    ('a', &["o", "e", "à"]),
    ('i', &["l", "1", "í"]),
    ('l', &["1", "I", "i"]),
    ('r', &["t", "n"]),
    ('t', &["r", "f", "l"]),
    ('f', &["t", "ſ"]),
    ('h', &["b", "li"]),
    ('b', &["h", "6"]),
    ('s', &["z", "a"]),
    ('d', &["cl", "a"]),
    ('H', &["Il", "N"]),
    ('S', &["8", "5"]),
    ('B', &["8", "R"]),
    ('D', &["O", "B"]),
    ('O', &["0", "Q"]),
    ('0', &["O", "o"]),
    ('1', &["l", "I", "7"]),
    ('3', &["8", "5"]),
    ('5', &["S", "6"]),
    ('6', &["b", "5"]),
    ('8', &["3", "B"]),
    (',', &[".", ";"]),
    ('.', &[",", ":"]),
    ('-', &["_", "~"]),
];

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_letter(rng: &mut impl Rng) -> char {
    LETTERS[rng.random_range(0..LETTERS.len())] as char
}

fn substitute(c: char, rng: &mut impl Rng) -> String {
    if let Some((_, options)) = CONFUSIONS.iter().find(|(k, _)| *k == c) {
        return options.choose(rng).expect("non-empty").to_string();
    }
    loop {
        let r = random_letter(rng);
        if r != c {
            return r.to_string();
        }
    }
}

/// Corrupts `text` character by character; newlines are never touched.
pub fn apply_ocr_noise(text: &str, rate: f64, rng: &mut impl Rng) -> String {
    apply_ocr_noise_with(text, rate, NoiseOps::ALL, rng).0
}

/// Like [`apply_ocr_noise`], restricted to `ops`; also returns how many
/// characters were corrupted.
pub fn apply_ocr_noise_with(
    text: &str,
    rate: f64,
    ops: NoiseOps,
    rng: &mut impl Rng,
) -> (String, usize) {
    let mut enabled = Vec::with_capacity(3);
    if ops.substitute {
        enabled.push(0u8);
    }
    if ops.delete {
        enabled.push(1);
    }
    if ops.insert {
        enabled.push(2);
    }
    let mut out = String::with_capacity(text.len() + 8);
    let mut corrupted = 0;
    for c in text.chars() {
        if c == '\n' || enabled.is_empty() || !rng.random_bool(rate) {
            out.push(c);
            continue;
        }
        corrupted += 1;
        match *enabled.choose(rng).expect("non-empty") {
            0 => out.push_str(&substitute(c, rng)),
            1 => {}
            _ => {
                out.push(c);
                out.push(random_letter(rng));
            }
        }
    }
    (out, corrupted)
}

/// Incrementally built entry text with entity spans in character offsets.
struct EntryBuilder {
    parts: Vec<(String, Option<&'static str>)>,
}

impl EntryBuilder {
    fn new() -> Self {
        EntryBuilder { parts: Vec::new() }
    }

    fn push(&mut self, s: impl Into<String>, kind: Option<&'static str>) {
        self.parts.push((s.into(), kind));
    }

    fn render(&self) -> (String, Vec<EntitySpan>) {
        let mut text = String::new();
        let mut pos = 0;
        let mut spans = Vec::new();
        for (s, kind) in &self.parts {
            let n = s.chars().count();
            if let Some(k) = kind {
                spans.push(EntitySpan {
                    kind: k.to_string(),
                    start_char: pos,
                    end_char: pos + n,
                });
            }
            text.push_str(s);
            pos += n;
        }
        text.push('.');
        (text, spans)
    }
}

fn house_number(rng: &mut impl Rng) -> String {
    let n: u32 = if rng.random_bool(0.7) {
        rng.random_range(1..100)
    } else {
        rng.random_range(100..420)
    };
    if rng.random_bool(0.08) {
        format!("{n} bis")
    } else {
        n.to_string()
    }
}

fn base_entry(lx: &Lexicons, rng: &mut impl Rng, simple: bool) -> EntryBuilder {
    let mut b = EntryBuilder::new();
    let mut name = lx.surnames.choose(rng).unwrap().clone();
    if !simple && rng.random_bool(0.35) {
        let a = random_letter(rng).to_ascii_uppercase();
        name.push_str(&format!(" ({a}.)"));
    }
    b.push(name, Some("PER"));
    if !simple && rng.random_bool(0.15) {
        b.push(", ", None);
        b.push(lx.titles.choose(rng).unwrap().clone(), Some("TITLE"));
    }
    b.push(", ", None);
    b.push(lx.activities.choose(rng).unwrap().clone(), Some("ACT"));
    if simple || rng.random_bool(0.1) {
        return b;
    }
    b.push(if rng.random_bool(0.3) { ". " } else { ", " }, None);
    b.push(lx.streets.choose(rng).unwrap().clone(), Some("LOC"));
    b.push(", ", None);
    b.push(house_number(rng), Some("CARDINAL"));
    b
}

fn extend_entry(b: &mut EntryBuilder, lx: &Lexicons, rng: &mut impl Rng) {
    match rng.random_range(0..3) {
        0 => {
            b.push(", et ", None);
            b.push(lx.activities.choose(rng).unwrap().clone(), Some("ACT"));
        }
        1 => {
            b.push("; ", None);
            b.push(lx.streets.choose(rng).unwrap().clone(), Some("LOC"));
            b.push(", ", None);
            b.push(house_number(rng), Some("CARDINAL"));
        }
        _ => {
            b.push(", succ. de ", None);
            b.push(lx.surnames.choose(rng).unwrap().clone(), Some("PER"));
        }
    }
}

/// Greedy word wrap at `capacity` characters; returns the char offsets of
/// the spaces turned into line breaks.
fn wrap_points(text: &str, capacity: usize) -> Vec<usize> {
    let mut breaks = Vec::new();
    let mut line_start = 0;
    let mut last_space: Option<usize> = None;
    for (i, c) in text.chars().enumerate() {
        if c == ' ' {
            if i - line_start > capacity {
                if let Some(s) = last_space {
                    breaks.push(s);
                    line_start = s + 1;
                }
            }
            last_space = Some(i);
        }
    }
    let len = text.chars().count();
    if len - line_start > capacity {
        if let Some(s) = last_space.filter(|&s| s >= line_start) {
            breaks.push(s);
        }
    }
    breaks
}

/// Entry text split into exactly `k` lines.
fn entry_lines(
    lx: &Lexicons,
    k: usize,
    capacity: usize,
    rng: &mut impl Rng,
) -> (Vec<String>, String, Vec<EntitySpan>) {
    let mut attempt = 0;
    let (text, spans, mut breaks) = loop {
        let mut b = base_entry(lx, rng, attempt >= 4);
        let mut extensions = 0;
        let rendered = loop {
            let (text, spans) = b.render();
            let breaks = wrap_points(&text, capacity);
            if breaks.len() + 1 >= k || extensions > 4 * k + 8 {
                break (text, spans, breaks);
            }
            extend_entry(&mut b, lx, rng);
            extensions += 1;
        };
        if rendered.2.len() < k || attempt >= 8 {
            break rendered;
        }
        attempt += 1;
    };
    // Overflowing wraps are folded into the last line; short ones (only when
    // the text has too few spaces) are split at remaining spaces.
    breaks.truncate(k.saturating_sub(1));
    if breaks.len() + 1 < k {
        let spaces: Vec<usize> = text
            .chars()
            .enumerate()
            .filter(|(i, c)| *c == ' ' && !breaks.contains(i))
            .map(|(i, _)| i)
            .collect();
        for s in spaces.into_iter().rev() {
            if breaks.len() + 1 >= k {
                break;
            }
            breaks.push(s);
        }
        breaks.sort_unstable();
    }
    let joined: String = text
        .chars()
        .enumerate()
        .map(|(i, c)| if breaks.contains(&i) { '\n' } else { c })
        .collect();
    let lines = joined.split('\n').map(str::to_string).collect();
    (lines, joined, spans)
}

struct LineSlot {
    page: usize,
    column: usize,
    order: usize,
}

/// Generates a corpus: noisy lines, gold entries, and the clean text.
pub fn generate_corpus(params: &SynthParams, seed: u64) -> Result<Corpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lx = &params.entity_lexicons;
    let continuation = Geometric::new(params.geometric_p())
        .map_err(|e| Error::Config(format!("entry length law: {e}")))?;

    let inverted: Vec<bool> = (0..params.n_pages)
        .map(|_| rng.random_bool(params.inconsistency_rate))
        .collect();
    let slots: Vec<LineSlot> = (0..params.n_pages)
        .flat_map(|page| {
            (0..params.columns_per_page).flat_map(move |column| {
                (0..params.target_lines_per_column).map(move |order| LineSlot {
                    page,
                    column,
                    order,
                })
            })
        })
        .collect();

    let capacity = ((COLUMN_WIDTH * (1.0 - params.hanging_indent - params.indent_jitter))
        / CHAR_WIDTH)
        .floor() as usize
        - 1;
    let mut lines = Vec::with_capacity(slots.len());
    let mut clean = Vec::with_capacity(slots.len());
    let mut entries = Vec::new();
    let mut next = 0;
    while next < slots.len() {
        let k = (1 + continuation.sample(&mut rng) as usize).min(slots.len() - next);
        let (texts, _, spans) = entry_lines(lx, k, capacity, &mut rng);
        entries.push(EntryAnnotation {
            doc_id: SYNTH_DOC.to_string(),
            start_line: next,
            end_line: next + k - 1,
            entities: spans,
        });
        for (j, text) in texts.into_iter().enumerate() {
            let slot = &slots[next + j];
            let indented = (j > 0) != inverted[slot.page];
            let col_x0 = PAGE_LEFT + slot.column as f64 * (COLUMN_WIDTH + COLUMN_GAP);
            let col_x1 = col_x0 + COLUMN_WIDTH;
            let column_bbox = BBox::new(
                col_x0,
                PAGE_TOP,
                col_x1,
                PAGE_TOP + LINE_PITCH * params.target_lines_per_column as f64,
            );
            let left = if indented {
                params.hanging_indent
                    + rng.random_range(-params.indent_jitter..=params.indent_jitter)
            } else {
                rng.random_range(0.0..=0.01)
            };
            let x0 = col_x0 + left * COLUMN_WIDTH;
            let chars = text.chars().count() as f64;
            let x1 = if j + 1 < k {
                col_x1 - rng.random_range(0.0..0.012) * COLUMN_WIDTH
            } else {
                let natural = chars * CHAR_WIDTH * rng.random_range(0.97..1.0);
                (x0 + natural.max(CHAR_WIDTH)).min(col_x1 - rng.random_range(0.0..0.004) * COLUMN_WIDTH)
            };
            let y0 = PAGE_TOP + LINE_PITCH * slot.order as f64;
            let noisy = apply_ocr_noise(&text, params.noise_rate, &mut rng);
            lines.push(LineRecord {
                doc_id: SYNTH_DOC.to_string(),
                page: slot.page as u32,
                column: slot.column as u32,
                order: slot.order as u32,
                text: noisy,
                line_bbox: BBox::new(round2(x0), y0, round2(x1.max(x0 + 1.0)), y0 + LINE_HEIGHT),
                column_bbox,
            });
            clean.push(text);
        }
        next += k;
    }
    Corpus::new(lines, entries, Some(clean))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_pages: usize, mean: f64) -> SynthParams {
        SynthParams {
            n_pages,
            mean_lines_per_entry: mean,
            ..SynthParams::default()
        }
    }

    #[test]
    fn mean_one_gives_single_line_entries() {
        let c = generate_corpus(&params(5, 1.0), 1).unwrap();
        assert!(c.entries.iter().all(|e| e.start_line == e.end_line));
        assert_eq!(c.entries.len(), c.lines.len());
    }

    #[test]
    fn sample_mean_matches_target() {
        // 100 pages x 80 lines -> about 5700 entries.
        let c = generate_corpus(&params(100, 1.4), 11).unwrap();
        let n = c.entries.len() as f64;
        assert!(n >= 5000.0, "only {n} entries");
        let mean = c.lines.len() as f64 / n;
        assert!((mean - 1.4).abs() <= 0.05, "mean lines per entry {mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&params(3, 1.4), 5).unwrap();
        let b = generate_corpus(&params(3, 1.4), 5).unwrap();
        assert_eq!(a.lines, b.lines);
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.clean, b.clean);
    }

    #[test]
    fn empty_lexicon_is_an_error() {
        let mut p = params(1, 1.4);
        p.entity_lexicons.streets.clear();
        assert!(generate_corpus(&p, 0).is_err());
    }

    #[test]
    fn lines_sit_inside_columns_and_spans_fit() {
        let c = generate_corpus(&params(6, 1.8), 2).unwrap();
        for l in &c.lines {
            assert!(l.line_bbox.x0 >= l.column_bbox.x0 && l.line_bbox.x1 <= l.column_bbox.x1);
            assert!(l.line_bbox.x0 < l.line_bbox.x1);
        }
        for e in &c.entries {
            let text = c.entry_clean_text(e);
            let chars: Vec<char> = text.chars().collect();
            for s in &e.entities {
                let span: String = chars[s.start_char..s.end_char].iter().collect();
                assert_eq!(span.trim(), span, "entity span with stray whitespace");
                assert!(!span.is_empty());
            }
        }
    }

    #[test]
    fn continuation_lines_follow_the_page_convention() {
        let mut p = params(4, 2.0);
        p.inconsistency_rate = 0.0;
        let c = generate_corpus(&p, 3).unwrap();
        for e in &c.entries {
            let first = &c.lines[e.start_line];
            let rel = (first.line_bbox.x0 - first.column_bbox.x0) / first.column_bbox.width();
            assert!(rel <= 0.0101, "first line indent {rel}");
            for l in &c.lines[e.start_line + 1..=e.end_line] {
                let rel = (l.line_bbox.x0 - l.column_bbox.x0) / l.column_bbox.width();
                assert!((0.044..=0.056).contains(&rel), "continuation indent {rel}");
            }
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = "Bailly, coutelier. S.Honoré, 416.";
        assert_eq!(apply_ocr_noise(s, 0.0, &mut rng), s);
    }

    #[test]
    fn full_substitution_alters_every_char() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src: Vec<char> = "Honoré".chars().collect();
        for _ in 0..20 {
            let (out, n) = apply_ocr_noise_with("Honoré", 1.0, NoiseOps::SUBSTITUTE_ONLY, &mut rng);
            assert_eq!(n, src.len());
            assert_ne!(out, "Honoré");
        }
        for c in src {
            let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
            for _ in 0..10 {
                assert_ne!(substitute(c, &mut rng), c.to_string());
            }
        }
    }

    #[test]
    fn corrupted_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let text: String = std::iter::repeat("coutelier S.Honoré 416 ").take(5000).collect();
        let text: String = text.chars().take(100_000).collect();
        let (_, n) = apply_ocr_noise_with(&text, 0.03, NoiseOps::ALL, &mut rng);
        let frac = n as f64 / 100_000.0;
        assert!((frac - 0.03).abs() <= 0.005, "fraction {frac}");
    }

    #[test]
    fn newlines_survive_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = apply_ocr_noise("ab\ncd\nef", 1.0, &mut rng);
        assert_eq!(out.matches('\n').count(), 2);
    }
}

//! Caption → `{object, attribute, quantity}` triplets.
//!
//! Two routes produce the same [`EntityMention`] output:
//!
//! * the LLM route: [`build_extraction_prompt`] renders a few-shot prompt, the
//!   extractor backend answers, [`parse_extraction_response`] reads one
//!   `object | attribute | quantity` triplet per line;
//! * the rule-based route, [`fallback_extract`], which scans the caption for
//!   lexicon entries and needs no backend at all.

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::datamodel::{CaptionRecord, EntityMention, Quantity};

const DEFAULT_FEW_SHOT: &str = include_str!("../../../config/few_shot.txt");
const DEFAULT_LEXICON: &str = include_str!("../../../config/lexicon.txt");

/// Adjectives the rule-based extractor accepts as attributes.
const ADJECTIVES: &[&str] = &[
    "black", "white", "red", "blue", "green", "yellow", "brown", "gray", "grey", "orange", "pink", "purple",
    "silver", "golden", "gold", "beige", "dark", "light", "bright", "colorful", "large", "small", "big", "little",
    "tiny", "huge", "tall", "short", "long", "young", "old", "new", "wooden", "metal", "plastic", "glass",
    "striped", "spotted", "empty", "full", "open", "closed", "wet", "dry", "busy", "clean", "dirty", "round",
    "square", "fluffy",
];

/// Words that end a clause for quantity and attribute lookup.
const CLAUSE_BREAKS: &[&str] = &[
    "and", "or", "but", "with", "while", "on", "in", "at", "near", "beside", "behind", "under", "over", "of", "by",
    "from", "next", "to", "into", "onto", "above", "below", "across", "along", "around", "between", "through",
];

const NUMBER_WORDS: [&str; 10] = ["one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("people", "person"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("mice", "mouse"),
    ("teeth", "tooth"),
    ("feet", "foot"),
    ("geese", "goose"),
    ("buses", "bus"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("shelves", "shelf"),
    ("loaves", "loaf"),
    ("sheep", "sheep"),
    ("fish", "fish"),
    ("deer", "deer"),
];

/// Words ending in `s` that are already singular.
const SINGULAR_S: &[&str] = &[
    "bus", "gas", "glass", "grass", "dress", "class", "cross", "lens", "species", "series", "news", "scissors",
    "pants", "jeans", "shorts", "canvas", "chess", "mattress", "cactus", "octopus", "tennis", "skis",
    "sunglasses", "goggles",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error("few-shot set needs at least 2 examples, found {0}")]
    TooFewExamples(usize),
    #[error("caption text is empty")]
    EmptyCaption,
    #[error("no parseable triplet in extractor response ({skipped} malformed lines)")]
    Empty { skipped: usize },
    #[error("few-shot file line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

/// One in-context example: a caption and the triplets it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub caption: String,
    pub triplets: Vec<EntityMention>,
}

/// Versioned few-shot data loaded from `config/few_shot.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSet {
    pub version: String,
    pub preamble: String,
    pub examples: Vec<FewShotExample>,
}

impl FewShotSet {
    pub fn parse(text: &str) -> Result<Self, ExtractionError> {
        let mut version = String::from("0");
        let mut preamble = String::new();
        let mut examples: Vec<FewShotExample> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("version:") {
                version = v.trim().to_string();
            } else if let Some(p) = line.strip_prefix("preamble:") {
                preamble = p.trim().to_string();
            } else if let Some(c) = line.strip_prefix("caption:") {
                examples.push(FewShotExample { caption: c.trim().to_string(), triplets: Vec::new() });
            } else {
                let example = examples
                    .last_mut()
                    .ok_or_else(|| ExtractionError::Config { line: idx + 1, msg: "triplet before any caption".into() })?;
                let m = parse_triplet_line(line)
                    .ok_or_else(|| ExtractionError::Config { line: idx + 1, msg: format!("bad triplet `{line}`") })?;
                example.triplets.push(m);
            }
        }
        if preamble.is_empty() {
            return Err(ExtractionError::Config { line: 0, msg: "missing preamble".into() });
        }
        if let Some(e) = examples.iter().find(|e| e.triplets.is_empty()) {
            return Err(ExtractionError::Config { line: 0, msg: format!("example `{}` has no triplets", e.caption) });
        }
        let set = Self { version, preamble, examples };
        set.check()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExtractionError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<(), ExtractionError> {
        if self.examples.len() < 2 {
            return Err(ExtractionError::TooFewExamples(self.examples.len()));
        }
        Ok(())
    }
}

impl Default for FewShotSet {
    fn default() -> Self {
        Self::parse(DEFAULT_FEW_SHOT).expect("bundled few-shot file is valid")
    }
}

/// A fully assembled extraction prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionPrompt {
    pub preamble: String,
    pub few_shot_examples: Vec<FewShotExample>,
    pub target_caption: String,
}

impl ExtractionPrompt {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.preamble);
        out.push_str("\n\n");
        for ex in &self.few_shot_examples {
            out.push_str("Description: ");
            out.push_str(&ex.caption);
            out.push_str("\nTriplets:\n");
            for t in &ex.triplets {
                out.push_str(&render_triplet(t));
                out.push('\n');
            }
            out.push('\n');
        }
        out.push_str("Description: ");
        out.push_str(&self.target_caption);
        out.push_str("\nTriplets:\n");
        out
    }
}

pub fn build_extraction_prompt(caption: &CaptionRecord, shots: &FewShotSet) -> Result<String, ExtractionError> {
    if caption.text.trim().is_empty() {
        return Err(ExtractionError::EmptyCaption);
    }
    shots.check()?;
    let prompt = ExtractionPrompt {
        preamble: shots.preamble.clone(),
        few_shot_examples: shots.examples.clone(),
        target_caption: caption.text.trim_end().to_string(),
    };
    Ok(prompt.render())
}

/// Quantity as written in the triplet format.
pub fn render_quantity(q: Quantity) -> String {
    match q {
        Quantity::Exact { n } if (1..=10).contains(&n) => NUMBER_WORDS[n as usize - 1].to_string(),
        Quantity::Exact { n } => n.to_string(),
        Quantity::UnspecifiedPlural => "several".to_string(),
    }
}

pub fn render_triplet(m: &EntityMention) -> String {
    format!("{} | {} | {}", m.object, m.attribute.as_deref().unwrap_or("none"), render_quantity(m.quantity))
}

/// Mentions parsed from a response plus the number of lines skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedExtraction {
    pub mentions: Vec<EntityMention>,
    pub skipped: usize,
}

fn parse_triplet_line(line: &str) -> Option<EntityMention> {
    let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
    let parts: Vec<&str> = line.split('|').map(str::trim).collect();
    if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
        return None;
    }
    if !parts[0].chars().any(char::is_alphabetic) {
        return None;
    }
    let object = normalize_entity_name(parts[0]);
    let attr = parts[1].to_lowercase();
    let attribute = match attr.as_str() {
        "none" | "n/a" | "-" => None,
        _ => Some(attr.split_whitespace().collect::<Vec<_>>().join(" ")),
    };
    let quantity = normalize_quantity(parts[2]);
    if quantity == Quantity::exact(0) {
        return None;
    }
    Some(EntityMention { object, attribute, quantity, span: None })
}

/// Read one triplet per line; lines that do not parse are skipped and counted.
pub fn parse_extraction_response(text: &str) -> Result<ParsedExtraction, ExtractionError> {
    let mut mentions = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match parse_triplet_line(line) {
            Some(m) => mentions.push(m),
            None => skipped += 1,
        }
    }
    if mentions.is_empty() {
        return Err(ExtractionError::Empty { skipped });
    }
    Ok(ParsedExtraction { mentions, skipped })
}

/// Quantity named by a token. Total: unknown tokens read as an unspecified
/// plural (with a warning).
pub fn normalize_quantity(token: &str) -> Quantity {
    let t = token.trim().to_lowercase();
    match t.as_str() {
        "a" | "an" | "one" | "single" => return Quantity::ONE,
        "several" | "some" | "many" | "few" | "a few" | "multiple" | "numerous" => {
            return Quantity::UnspecifiedPlural
        }
        _ => {}
    }
    if let Some(i) = NUMBER_WORDS.iter().position(|w| *w == t) {
        return Quantity::exact(i as u32 + 1);
    }
    if !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(n) = t.parse::<u32>() {
            return Quantity::exact(n);
        }
    }
    log::warn!("unknown quantity token `{token}`, treating as unspecified plural");
    Quantity::UnspecifiedPlural
}

fn is_quantity_token(t: &str) -> bool {
    matches!(t, "a" | "an" | "one" | "single" | "several" | "some" | "many" | "few" | "multiple" | "numerous")
        || NUMBER_WORDS.contains(&t)
        || (!t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()))
}

fn singularize(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR_PLURALS.iter().find(|(p, _)| *p == word) {
        return s.to_string();
    }
    if SINGULAR_S.contains(&word) || word.len() <= 3 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if word.len() > 4 {
            return format!("{stem}y");
        }
    }
    for suffix in ["sses", "ches", "shes", "xes", "zes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

/// Lowercase, trim, collapse whitespace and singularize the head (last) word.
/// Idempotent.
pub fn normalize_entity_name(name: &str) -> String {
    let lower = name.trim().to_lowercase();
    let mut words: Vec<String> = lower.split_whitespace().map(str::to_string).collect();
    if let Some(last) = words.last_mut() {
        // A few rounds reach the fixed point; each round only shrinks or
        // maps a plural to a non-plural.
        for _ in 0..4 {
            let next = singularize(last);
            if next == *last {
                break;
            }
            *last = next;
        }
    }
    words.join(" ")
}

/// Object names known to the rule-based extractor, stored normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    names: BTreeSet<String>,
    max_words: usize,
}

impl Lexicon {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let names: BTreeSet<String> = names
            .into_iter()
            .map(|n| normalize_entity_name(n.as_ref()))
            .filter(|n| !n.is_empty())
            .collect();
        let max_words = names.iter().map(|n| n.split(' ').count()).max().unwrap_or(1);
        Self { names, max_words }
    }

    /// One name per line, `#` comments.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExtractionError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Ok(Self::parse(&text))
    }

    pub fn with_extras<I, S>(mut self, extras: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for e in extras {
            let n = normalize_entity_name(e.as_ref());
            if !n.is_empty() {
                self.max_words = self.max_words.max(n.split(' ').count());
                self.names.insert(n);
            }
        }
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }
}

#[derive(Debug)]
struct Token {
    lower: String,
    start: usize,
    end: usize,
    clause: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut clause = 0;
    let mut current: Option<(String, usize)> = None;
    let flush = |current: &mut Option<(String, usize)>, end: usize, clause: &mut usize, tokens: &mut Vec<Token>| {
        if let Some((word, start)) = current.take() {
            let lower = word.to_lowercase();
            if CLAUSE_BREAKS.contains(&lower.as_str()) {
                *clause += 1;
            } else {
                tokens.push(Token { lower, start, end, clause: *clause });
            }
        }
    };
    let mut n = 0;
    for (i, ch) in text.chars().enumerate() {
        n = i + 1;
        if ch.is_alphanumeric() || ch == '-' || ch == '\'' {
            match current.as_mut() {
                Some((w, _)) => w.push(ch),
                None => current = Some((ch.to_string(), i)),
            }
        } else {
            flush(&mut current, i, &mut clause, &mut tokens);
            if matches!(ch, ',' | '.' | ';' | ':' | '!' | '?' | '(' | ')') {
                clause += 1;
            }
        }
    }
    flush(&mut current, n, &mut clause, &mut tokens);
    tokens
}

/// Rule-based extraction over a lexicon.
///
/// Scans left to right for the longest lexicon phrase (singularized) at each
/// token. The attribute is the adjective directly before the match; the
/// quantity is the nearest quantity word before it in the same clause and
/// after the previous match. Without one, a plural surface form reads as an
/// unspecified plural and a singular one as exactly one. Repeated mentions
/// are kept separate.
pub fn fallback_extract(caption: &CaptionRecord, lexicon: &Lexicon) -> Vec<EntityMention> {
    let tokens = tokenize(&caption.text);
    let mut out = Vec::new();
    let mut prev_end = 0usize; // token index after the previous match
    let mut i = 0;
    while i < tokens.len() {
        let Some((len, name, surface)) = match_at(&tokens, i, lexicon) else {
            i += 1;
            continue;
        };
        // "orange cat": an adjective that also names an object yields to a
        // match starting right after it.
        if len == 1
            && ADJECTIVES.contains(&tokens[i].lower.as_str())
            && i + 1 < tokens.len()
            && tokens[i + 1].clause == tokens[i].clause
            && match_at(&tokens, i + 1, lexicon).is_some()
        {
            i += 1;
            continue;
        }
        let clause = tokens[i].clause;
        let attribute = (i > prev_end && tokens[i - 1].clause == clause)
            .then(|| tokens[i - 1].lower.as_str())
            .filter(|w| ADJECTIVES.contains(w))
            .map(str::to_string);
        let quantity = (prev_end..i)
            .rev()
            .take_while(|&j| tokens[j].clause == clause)
            .find(|&j| is_quantity_token(&tokens[j].lower))
            .map(|j| normalize_quantity(&tokens[j].lower))
            .unwrap_or(if surface == name { Quantity::ONE } else { Quantity::UnspecifiedPlural });
        out.push(EntityMention {
            object: name,
            attribute,
            quantity,
            span: Some((tokens[i].start, tokens[i + len - 1].end)),
        });
        i += len;
        prev_end = i;
    }
    out
}

/// Longest lexicon phrase starting at token `i`: (token count, normalized
/// name, lowercased surface text).
fn match_at(tokens: &[Token], i: usize, lexicon: &Lexicon) -> Option<(usize, String, String)> {
    let max = lexicon.max_words.min(tokens.len() - i);
    (1..=max).rev().find_map(|len| {
        let window = &tokens[i..i + len];
        if window.iter().any(|t| t.clause != window[0].clause) {
            return None;
        }
        let surface = window.iter().map(|t| t.lower.as_str()).collect::<Vec<_>>().join(" ");
        let name = normalize_entity_name(&surface);
        lexicon.contains(&name).then_some((len, name, surface))
    })
}

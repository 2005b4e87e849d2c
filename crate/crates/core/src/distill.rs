//! Distillation of extractions into IOB-tagged token data.
//!
//! Each extracted entity is located in its interview text by approximate
//! (infix) Levenshtein alignment. Candidate spans start at a token start and
//! end at a token end, and never overlap a span claimed by an earlier, longer
//! entity. Entities scoring below the similarity threshold are discarded.
//! Offsets are in characters (Unicode scalar values) of the interview text.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{FieldCategory, Interview};
use crate::response::{ExtractionResult, Source};
use crate::rng;
use crate::text::{fold_char, nfc};

pub const DEFAULT_ALIGN_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("extraction for unknown interview `{0}`")]
    UnknownInterview(String),
    #[error("learning-curve size {size} exceeds corpus of {available}")]
    SizeExceedsCorpus { size: usize, available: usize },
    #[error("learning-curve sizes must be ascending")]
    SizesNotAscending,
    #[error("document `{interview_id}`: {violation}")]
    Invalid { interview_id: String, violation: IobViolation },
    #[error("line {line}: {message}")]
    Conll { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An IOB tag over the four entity classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(FieldCategory),
    Inside(FieldCategory),
}

impl Tag {
    pub fn category(self) -> Option<FieldCategory> {
        match self {
            Tag::Outside => None,
            Tag::Begin(c) | Tag::Inside(c) => Some(c),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(c) => write!(f, "B-{}", c.label()),
            Tag::Inside(c) => write!(f, "I-{}", c.label()),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Tag, String> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let bad = || format!("tag `{s}` not in the label vocabulary");
        let (prefix, label) = s.split_once('-').ok_or_else(bad)?;
        let cat = FieldCategory::from_label(label).ok_or_else(bad)?;
        match prefix {
            "B" => Ok(Tag::Begin(cat)),
            "I" => Ok(Tag::Inside(cat)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub tag: Tag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IobDocument {
    pub interview_id: String,
    pub tokens: Vec<Token>,
}

/// A located entity.
#[derive(Clone, Debug, PartialEq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity: String,
    pub category: FieldCategory,
    pub similarity: f64,
}

impl Span {
    fn overlaps(&self, start: usize, end: usize) -> bool {
        start < self.end && self.start < end
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    pub start: usize,
    pub end: usize,
    pub distance: usize,
    pub similarity: f64,
}

/// Splits on Unicode word boundaries; whitespace is dropped and punctuation
/// marks become tokens of their own. Returns `(surface, start, end)`.
pub fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut char_pos = 0;
    let mut byte_pos = 0;
    for (byte_start, segment) in text.split_word_bound_indices() {
        char_pos += text[byte_pos..byte_start].chars().count();
        byte_pos = byte_start;
        let len = segment.chars().count();
        if !segment.chars().all(char::is_whitespace) {
            out.push((segment.to_owned(), char_pos, char_pos + len));
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Cell {
    cost: usize,
    start: usize,
}

const UNREACHABLE: Cell = Cell { cost: usize::MAX / 2, start: usize::MAX };

fn better(a: Cell, b: Cell) -> Cell {
    if (a.cost, a.start) <= (b.cost, b.start) { a } else { b }
}

/// Infix alignment of `pattern` inside `text[lo..hi]`, with start and end
/// restricted to the given boundary masks. Ties: lower distance, then leftmost
/// start, then shortest span.
fn infix_align(
    text: &[char],
    pattern: &[char],
    lo: usize,
    hi: usize,
    is_start: &[bool],
    is_end: &[bool],
) -> Option<(usize, usize, usize)> {
    let m = pattern.len();
    let mut prev = vec![UNREACHABLE; m + 1];
    let mut cur = vec![UNREACHABLE; m + 1];
    let mut best: Option<(usize, usize, usize)> = None;
    for j in lo..=hi {
        cur[0] = if is_start[j] {
            Cell { cost: 0, start: j }
        } else if j > lo {
            Cell { cost: prev[0].cost + 1, start: prev[0].start }
        } else {
            UNREACHABLE
        };
        for i in 1..=m {
            let mut cell = Cell { cost: cur[i - 1].cost + 1, start: cur[i - 1].start };
            if j > lo {
                let sub = usize::from(text[j - 1] != pattern[i - 1]);
                cell = better(cell, Cell { cost: prev[i - 1].cost + sub, start: prev[i - 1].start });
                cell = better(cell, Cell { cost: prev[i].cost + 1, start: prev[i].start });
            }
            cur[i] = cell;
        }
        let end_cell = cur[m];
        if is_end[j] && end_cell.start < j && end_cell.cost < UNREACHABLE.cost {
            let cand = (end_cell.cost, end_cell.start, j);
            if best.is_none_or(|b| cand < b) {
                best = Some(cand);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Precomputed, case-folded view of an interview text.
pub struct AlignmentText {
    folded: Vec<char>,
    is_start: Vec<bool>,
    is_end: Vec<bool>,
    tokens: Vec<(String, usize, usize)>,
}

impl AlignmentText {
    pub fn new(text: &str) -> Self {
        let folded: Vec<char> = text.chars().map(fold_char).collect();
        let tokens = tokenize(text);
        let mut is_start = vec![false; folded.len() + 1];
        let mut is_end = vec![false; folded.len() + 1];
        for (_, s, e) in &tokens {
            is_start[*s] = true;
            is_end[*e] = true;
        }
        AlignmentText { folded, is_start, is_end, tokens }
    }

    pub fn len(&self) -> usize {
        self.folded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folded.is_empty()
    }

    /// Best alignment outside `claimed`, regardless of threshold.
    pub fn best_alignment(&self, entity: &str, claimed: &[Span]) -> Option<Alignment> {
        let pattern: Vec<char> = nfc(entity).chars().map(fold_char).collect();
        if pattern.is_empty() {
            return None;
        }
        let mut spans: Vec<(usize, usize)> = claimed.iter().map(|s| (s.start, s.end)).collect();
        spans.sort_unstable();
        let mut best: Option<(usize, usize, usize)> = None;
        let mut lo = 0;
        for (cs, ce) in spans.into_iter().chain(std::iter::once((self.len(), self.len()))) {
            if cs > lo {
                if let Some(cand) = infix_align(&self.folded, &pattern, lo, cs, &self.is_start, &self.is_end) {
                    if best.is_none_or(|b| cand < b) {
                        best = Some(cand);
                    }
                }
            }
            lo = lo.max(ce);
        }
        best.map(|(distance, start, end)| Alignment {
            start,
            end,
            distance,
            similarity: (1.0 - distance as f64 / pattern.len() as f64).max(0.0),
        })
    }
}

/// Locates `entity` in `text` outside `claimed`, if similar enough.
///
/// Returns `(start, end, similarity)` with `similarity = 1 - distance / |entity|`.
pub fn align_entity(text: &str, entity: &str, claimed: &[Span]) -> Option<(usize, usize, f64)> {
    align_entity_with(text, entity, claimed, DEFAULT_ALIGN_THRESHOLD)
}

pub fn align_entity_with(
    text: &str,
    entity: &str,
    claimed: &[Span],
    threshold: f64,
) -> Option<(usize, usize, f64)> {
    AlignmentText::new(text)
        .best_alignment(entity, claimed)
        .filter(|a| a.similarity >= threshold)
        .map(|a| (a.start, a.end, a.similarity))
}

/// An entity that found no acceptable span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub interview_id: String,
    pub category: FieldCategory,
    pub entity: String,
    /// Best similarity among unclaimed spans, if any candidate span existed.
    pub best_similarity: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Distilled {
    pub documents: Vec<IobDocument>,
    pub spans: Vec<Vec<Span>>,
    pub discards: Vec<Discard>,
}

impl Distilled {
    pub fn aligned(&self) -> usize {
        self.spans.iter().map(Vec::len).sum()
    }
}

const ALIGN_CATEGORY_ORDER: [FieldCategory; 4] = [
    FieldCategory::PersonOrg,
    FieldCategory::PersonHobby,
    FieldCategory::SpouseOrg,
    FieldCategory::SpouseHobby,
];

fn category_rank(c: FieldCategory) -> usize {
    ALIGN_CATEGORY_ORDER.iter().position(|x| *x == c).unwrap()
}

/// Aligns one interview's entities, longest first, and tags its tokens.
pub fn distill_interview(
    interview: &Interview,
    extraction: &ExtractionResult,
    threshold: f64,
) -> (IobDocument, Vec<Span>, Vec<Discard>) {
    let text = AlignmentText::new(&interview.source_text);
    let mut entities: Vec<(FieldCategory, &str, usize)> = extraction
        .entities
        .iter()
        .flat_map(|(c, list)| list.iter().map(move |e| (c, e.as_str(), e.chars().count())))
        .collect();
    entities.sort_by(|a, b| {
        b.2.cmp(&a.2)
            .then(category_rank(a.0).cmp(&category_rank(b.0)))
            .then(a.1.cmp(b.1))
    });

    let mut spans: Vec<Span> = Vec::new();
    let mut discards = Vec::new();
    for (category, entity, _) in entities {
        let found = text.best_alignment(entity, &spans);
        match found {
            Some(a) if a.similarity >= threshold => spans.push(Span {
                start: a.start,
                end: a.end,
                entity: entity.to_owned(),
                category,
                similarity: a.similarity,
            }),
            _ => discards.push(Discard {
                interview_id: interview.interview_id.clone(),
                category,
                entity: entity.to_owned(),
                best_similarity: found.map(|a| a.similarity),
            }),
        }
    }
    spans.sort_by_key(|s| s.start);

    let mut tokens: Vec<Token> = text
        .tokens
        .iter()
        .map(|(surface, start, end)| Token { surface: surface.clone(), start: *start, end: *end, tag: Tag::Outside })
        .collect();
    for span in &spans {
        let mut first = true;
        for t in tokens.iter_mut().filter(|t| span.overlaps(t.start, t.end)) {
            if t.tag != Tag::Outside {
                continue;
            }
            t.tag = if first { Tag::Begin(span.category) } else { Tag::Inside(span.category) };
            first = false;
        }
    }
    let doc = IobDocument { interview_id: interview.interview_id.clone(), tokens };
    (doc, spans, discards)
}

/// Distills every extraction against its interview, in extraction order.
pub fn build_iob_dataset(
    interviews: &[Interview],
    extractions: &[ExtractionResult],
    threshold: f64,
) -> Result<Distilled, DistillError> {
    let by_id: HashMap<&str, &Interview> = interviews.iter().map(|i| (i.interview_id.as_str(), i)).collect();
    let mut out = Distilled::default();
    for x in extractions {
        let interview = by_id
            .get(x.interview_id.as_str())
            .ok_or_else(|| DistillError::UnknownInterview(x.interview_id.clone()))?;
        let (doc, spans, discards) = distill_interview(interview, x, threshold);
        out.documents.push(doc);
        out.spans.push(spans);
        out.discards.extend(discards);
    }
    Ok(out)
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum IobViolation {
    #[error("token {index}: `{tag}` does not continue an entity of the same class")]
    OrphanInside { index: usize, tag: String },
    #[error("token {index}: empty or reversed offsets {start}..{end}")]
    EmptyToken { index: usize, start: usize, end: usize },
    #[error("token {index}: offsets overlap or are out of order")]
    OffsetOrder { index: usize },
    #[error("token {index}: offsets {start}..{end} beyond text of length {len}")]
    OutOfBounds { index: usize, start: usize, end: usize, len: usize },
    #[error("token {index}: surface `{surface}` differs from text `{actual}`")]
    SurfaceMismatch { index: usize, surface: String, actual: String },
}

/// Checks tag sequencing and offsets, and surfaces against `text` when given.
pub fn validate_document(doc: &IobDocument, text: Option<&str>) -> Result<(), IobViolation> {
    let chars: Option<Vec<char>> = text.map(|t| t.chars().collect());
    let mut prev: Option<&Token> = None;
    for (index, t) in doc.tokens.iter().enumerate() {
        if t.start >= t.end {
            return Err(IobViolation::EmptyToken { index, start: t.start, end: t.end });
        }
        if prev.is_some_and(|p| t.start < p.end) {
            return Err(IobViolation::OffsetOrder { index });
        }
        if let Tag::Inside(c) = t.tag {
            if prev.and_then(|p| p.tag.category()) != Some(c) {
                return Err(IobViolation::OrphanInside { index, tag: t.tag.to_string() });
            }
        }
        if let Some(chars) = &chars {
            if t.end > chars.len() {
                return Err(IobViolation::OutOfBounds { index, start: t.start, end: t.end, len: chars.len() });
            }
            let actual: String = chars[t.start..t.end].iter().collect();
            if actual != t.surface {
                return Err(IobViolation::SurfaceMismatch { index, surface: t.surface.clone(), actual });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// Decodes `B-X (I-X)*` runs into entity strings; tokens separated by a gap
/// in the text are joined with one space, adjacent tokens without one.
pub fn spans_to_entities(doc: &IobDocument) -> Result<ExtractionResult, IobViolation> {
    validate_document(doc, None)?;
    let mut result = ExtractionResult::empty(doc.interview_id.clone(), Source::Tagger);
    let mut current: Option<(FieldCategory, String, usize)> = None;
    let flush = |cur: &mut Option<(FieldCategory, String, usize)>, result: &mut ExtractionResult| {
        if let Some((c, s, _)) = cur.take() {
            result.entities[c].push(s);
        }
    };
    for t in &doc.tokens {
        match t.tag {
            Tag::Outside => flush(&mut current, &mut result),
            Tag::Begin(c) => {
                flush(&mut current, &mut result);
                current = Some((c, t.surface.clone(), t.end));
            }
            Tag::Inside(_) => {
                let (_, s, last_end) = current.as_mut().expect("validated: I- follows an entity token");
                if t.start > *last_end {
                    s.push(' ');
                }
                s.push_str(&t.surface);
                *last_end = t.end;
            }
        }
    }
    flush(&mut current, &mut result);
    Ok(result)
}

/// Nested random subsets: each returned subset contains every smaller one.
pub fn split_learning_curve<T: Clone>(
    docs: &[T],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, Vec<T>)>, DistillError> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(DistillError::SizesNotAscending);
    }
    if let Some(&size) = sizes.iter().find(|&&s| s > docs.len()) {
        return Err(DistillError::SizeExceedsCorpus { size, available: docs.len() });
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng::derive(seed, &[b"learning-curve"]));
    Ok(sizes
        .iter()
        .map(|&n| (n, order[..n].iter().map(|&i| docs[i].clone()).collect()))
        .collect())
}

/// Writes CoNLL-style TSV: a `# interview_id = …` line, then one
/// `surface<TAB>start<TAB>end<TAB>tag` line per token, then a blank line.
pub fn write_conll<W: Write>(mut w: W, docs: &[IobDocument]) -> io::Result<()> {
    for doc in docs {
        writeln!(w, "# interview_id = {}", doc.interview_id)?;
        for t in &doc.tokens {
            writeln!(w, "{}\t{}\t{}\t{}", t.surface, t.start, t.end, t.tag)?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_conll_file(path: &Path, docs: &[IobDocument]) -> io::Result<()> {
    write_conll(BufWriter::new(File::create(path)?), docs)
}

pub fn read_conll<R: BufRead>(reader: R) -> Result<Vec<IobDocument>, DistillError> {
    let mut docs = Vec::new();
    let mut current: Option<IobDocument> = None;
    let mut anonymous = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |message: String| DistillError::Conll { line: lineno, message };
        if line.trim().is_empty() {
            docs.extend(current.take());
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(id) = rest.trim().strip_prefix("interview_id") {
                let id = id.trim_start().trim_start_matches('=').trim();
                docs.extend(current.take());
                current = Some(IobDocument { interview_id: id.to_owned(), tokens: Vec::new() });
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [surface, start, end, tag] = cols[..] else {
            return Err(err(format!("expected 4 tab-separated columns, got {}", cols.len())));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|e| err(format!("bad offset `{s}`: {e}")));
        let token = Token {
            surface: surface.to_owned(),
            start: parse(start)?,
            end: parse(end)?,
            tag: tag.parse().map_err(err)?,
        };
        current
            .get_or_insert_with(|| {
                anonymous += 1;
                IobDocument { interview_id: format!("doc_{anonymous}"), tokens: Vec::new() }
            })
            .tokens
            .push(token);
    }
    docs.extend(current);
    Ok(docs)
}

pub fn read_conll_file(path: &Path) -> Result<Vec<IobDocument>, DistillError> {
    read_conll(BufReader::new(File::open(path)?))
}

/// Validates every document, against its interview text where one is known.
pub fn validate_dataset(docs: &[IobDocument], interviews: &[Interview]) -> Result<(), DistillError> {
    let by_id: HashMap<&str, &str> =
        interviews.iter().map(|i| (i.interview_id.as_str(), i.source_text.as_str())).collect();
    for doc in docs {
        validate_document(doc, by_id.get(doc.interview_id.as_str()).copied()).map_err(|violation| {
            DistillError::Invalid { interview_id: doc.interview_id.clone(), violation }
        })?;
    }
    Ok(())
}

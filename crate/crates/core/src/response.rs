//! Keyword-structured model responses to [`ExtractionResult`]s.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{
    entity_record_json, read_entity_records, write_jsonl, Annotation, CorpusError, Entities,
    FieldCategory, Interview,
};
use crate::eval::indel_similarity;
use crate::text::{fold, squash_whitespace};

/// Where a set of entity lists came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Model,
    Gold,
    Tagger,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExtractionResult {
    pub interview_id: String,
    pub entities: Entities,
    pub source: Source,
}

impl ExtractionResult {
    pub fn empty(interview_id: impl Into<String>, source: Source) -> Self {
        ExtractionResult { interview_id: interview_id.into(), entities: Entities::new(), source }
    }
}

impl From<Annotation> for ExtractionResult {
    fn from(a: Annotation) -> Self {
        ExtractionResult { interview_id: a.interview_id, entities: a.entities, source: Source::Gold }
    }
}

impl From<ExtractionResult> for Annotation {
    fn from(r: ExtractionResult) -> Self {
        Annotation { interview_id: r.interview_id, entities: r.entities }
    }
}

/// What the parser needs to know about each interview in a prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expected {
    pub interview_id: String,
    pub primary_name: String,
    pub spouse_name: Option<String>,
}

impl From<&Interview> for Expected {
    fn from(i: &Interview) -> Self {
        Expected {
            interview_id: i.interview_id.clone(),
            primary_name: i.primary_name.clone(),
            spouse_name: i.spouse_name.clone(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("no interviews expected")]
    NothingExpected,
    #[error("expected {expected} response block(s), found {found}")]
    BlockCount { expected: usize, found: usize },
    #[error("interview `{interview_id}`: missing keyword {keyword}")]
    MissingKeyword { interview_id: String, keyword: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Field {
    PersonName,
    PersonId,
    SpouseName,
    SpouseId,
    Entities(FieldCategory),
}

impl Field {
    fn from_keyword(k: &str) -> Field {
        match k.to_ascii_lowercase().as_str() {
            "personname" => Field::PersonName,
            "personid" => Field::PersonId,
            "spousename" => Field::SpouseName,
            "spouseid" => Field::SpouseId,
            other => Field::Entities(FieldCategory::from_key(other).expect("keyword regex and categories agree")),
        }
    }
}

const KEYWORD_ALTERNATION: &str = "PersonName|PersonID|PersonHobbies|PersonSocialOrgs|PersonOrgs|\
                                   SpouseName|SpouseID|SpouseHobbies|SpouseSocialOrgs|SpouseOrgs";

/// A keyword line, tolerating list bullets, quoting and emphasis around the key.
static KEYWORD_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?im)^[ \t>#*_•-]*(?:\d+[.)]\s*)?[*_]*\s*({KEYWORD_ALTERNATION})\s*[*_]*\s*[:：][*_]*[ \t]*([^\r\n]*)$"
    ))
    .unwrap()
});

/// A keyword anywhere inside a captured value; the value is cut there.
static EMBEDDED_KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"(?i)[*_]*(?:{KEYWORD_ALTERNATION})")).unwrap()
});

/// Tokens that mean "nothing found". Compared case-insensitively.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullLexicon(Vec<String>);

impl Default for NullLexicon {
    fn default() -> Self {
        NullLexicon::new([
            "none", "n/a", "na", "-", "--", "---", "—", "ei ole", "ei mainittu", "ei tietoa",
            "ei harrastuksia",
        ])
    }
}

impl NullLexicon {
    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        NullLexicon(tokens.into_iter().map(|t| fold(t.as_ref())).collect())
    }

    pub fn extend<S: AsRef<str>>(&mut self, tokens: impl IntoIterator<Item = S>) {
        self.0.extend(tokens.into_iter().map(|t| fold(t.as_ref())));
    }

    pub fn contains(&self, entity: &str) -> bool {
        let f = fold(entity);
        let bare = f.trim_end_matches('.');
        self.0.iter().any(|t| *t == f || *t == bare)
    }
}

/// Trims and squashes whitespace, drops null tokens and case-folded duplicates.
pub fn clean_entities<S: AsRef<str>>(raw: &[S]) -> Vec<String> {
    clean_entities_with(raw, &NullLexicon::default())
}

pub fn clean_entities_with<S: AsRef<str>>(raw: &[S], lexicon: &NullLexicon) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in raw {
        let e = squash_whitespace(r.as_ref());
        if e.is_empty() || lexicon.contains(&e) {
            continue;
        }
        if seen.insert(fold(&e)) {
            out.push(e);
        }
    }
    out
}

struct Block {
    fields: Vec<(Field, String)>,
}

impl Block {
    fn get(&self, field: Field) -> Option<&str> {
        self.fields.iter().find(|(f, _)| *f == field).map(|(_, v)| v.as_str())
    }

    fn name(&self) -> Option<&str> {
        self.get(Field::PersonName).filter(|n| !n.trim().is_empty())
    }
}

fn split_blocks(text: &str) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::new();
    let mut current: Vec<(Field, String)> = Vec::new();
    for caps in KEYWORD_LINE.captures_iter(text) {
        let field = Field::from_keyword(&caps[1]);
        if current.iter().any(|(f, _)| *f == field) {
            blocks.push(Block { fields: std::mem::take(&mut current) });
        }
        let mut value = caps[2].to_owned();
        if let Some(m) = EMBEDDED_KEYWORD.find(&value) {
            value.truncate(m.start());
        }
        let value = value.trim().trim_matches(|c| c == '*' || c == '_').to_owned();
        current.push((field, value));
    }
    if !current.is_empty() {
        blocks.push(Block { fields: current });
    }
    blocks
}

/// Assigns blocks to expected interviews: by primary-name match where names
/// identify a unique interview, then in order for the rest.
fn assign(blocks: &[Block], expected: &[Expected]) -> Vec<usize> {
    let n = expected.len();
    let mut block_for: Vec<Option<usize>> = vec![None; n];
    let mut used = vec![false; blocks.len()];
    if n > 1 {
        let mut candidates = Vec::new();
        for (b, block) in blocks.iter().enumerate() {
            let Some(name) = block.name() else { continue };
            for (e, exp) in expected.iter().enumerate() {
                let s = indel_similarity(name, &exp.primary_name);
                if s >= 0.75 {
                    candidates.push((s, b, e));
                }
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (_, b, e) in candidates {
            if !used[b] && block_for[e].is_none() {
                used[b] = true;
                block_for[e] = Some(b);
            }
        }
    }
    let mut free = (0..blocks.len()).filter(|b| !used[*b]);
    block_for
        .into_iter()
        .map(|slot| slot.unwrap_or_else(|| free.next().expect("block count equals expected count")))
        .collect()
}

fn split_entities(value: &str, lexicon: &NullLexicon) -> Vec<String> {
    let parts: Vec<&str> = value.split(',').collect();
    clean_entities_with(&parts, lexicon)
}

/// Parses a response covering `expected` interviews.
pub fn parse_response(text: &str, expected: &[Expected]) -> Result<Vec<ExtractionResult>, FormatError> {
    parse_response_with(text, expected, &NullLexicon::default())
}

pub fn parse_response_with(
    text: &str,
    expected: &[Expected],
    lexicon: &NullLexicon,
) -> Result<Vec<ExtractionResult>, FormatError> {
    if expected.is_empty() {
        return Err(FormatError::NothingExpected);
    }
    let blocks = split_blocks(text);
    if blocks.len() != expected.len() {
        return Err(FormatError::BlockCount { expected: expected.len(), found: blocks.len() });
    }
    let order = assign(&blocks, expected);
    expected
        .iter()
        .zip(order)
        .map(|(exp, b)| {
            let block = &blocks[b];
            let mut entities = Entities::new();
            for cat in FieldCategory::ALL {
                let required = !cat.is_spouse() || exp.spouse_name.is_some();
                match block.get(Field::Entities(cat)) {
                    Some(v) => entities[cat] = split_entities(v, lexicon),
                    None if required => {
                        return Err(FormatError::MissingKeyword {
                            interview_id: exp.interview_id.clone(),
                            keyword: response_keyword(cat),
                        })
                    }
                    None => {}
                }
            }
            Ok(ExtractionResult { interview_id: exp.interview_id.clone(), entities, source: Source::Model })
        })
        .collect()
}

/// The canonical response keyword for an entity category.
pub const fn response_keyword(cat: FieldCategory) -> &'static str {
    match cat {
        FieldCategory::PersonHobby => "PersonHobbies",
        FieldCategory::PersonOrg => "PersonSocialOrgs",
        FieldCategory::SpouseHobby => "SpouseHobbies",
        FieldCategory::SpouseOrg => "SpouseSocialOrgs",
    }
}

pub fn load_extractions(path: &Path) -> Result<Vec<ExtractionResult>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io { path: path.to_owned(), source: e })?;
    read_extractions(BufReader::new(file), path)
}

pub fn read_extractions<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ExtractionResult>, CorpusError> {
    read_entity_records(reader, path, &["source"])?
        .into_iter()
        .map(|r| {
            let source = match r.extra.get("source") {
                None => Source::Model,
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| CorpusError::Malformed {
                    line: 0,
                    message: format!("interview `{}`: bad source: {e}", r.interview_id),
                })?,
            };
            Ok(ExtractionResult { interview_id: r.interview_id, entities: r.entities, source })
        })
        .collect()
}

pub fn extraction_json(r: &ExtractionResult) -> Value {
    let source = serde_json::to_value(r.source).expect("source serializes");
    entity_record_json(&r.interview_id, &r.entities, [("source".to_owned(), source)])
}

pub fn write_extractions(path: &Path, results: &[ExtractionResult]) -> Result<(), CorpusError> {
    let values: Vec<Value> = results.iter().map(extraction_json).collect();
    let file = File::create(path).map_err(|e| CorpusError::Io { path: path.to_owned(), source: e })?;
    write_jsonl(&mut BufWriter::new(file), &values)
        .map_err(|e| CorpusError::Io { path: path.to_owned(), source: e })
}

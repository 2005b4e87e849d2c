//! Extraction prompt construction.
//!
//! A template is an instruction header followed by a line of five hyphens and a
//! per-interview metadata block. The header may contain `{field_keywords}`; the
//! block uses `{primary_person_name}`, `{primary_person_id}`, `{spouse_name}`,
//! `{spouse_id}` and `{source_text}`. A batched prompt repeats the delimiter
//! and block once per interview.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Interview;
use crate::text::nfc;

/// Response keywords, in the order the model is asked to emit them.
pub const FIELD_KEYWORDS: [&str; 8] = [
    "PersonName",
    "PersonID",
    "PersonHobbies",
    "PersonSocialOrgs",
    "SpouseName",
    "SpouseID",
    "SpouseHobbies",
    "SpouseSocialOrgs",
];

pub const BATCH_DELIMITER: &str = "-----";
pub const MAX_BATCH_SIZE: usize = 3;

const ENGLISH_V1: &str = include_str!("../templates/english_v1.txt");
const FINNISH_V1: &str = include_str!("../templates/finnish_v1.txt");

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no interviews to prompt for")]
    EmptyBatch,
    #[error("batch size must be in 1..={MAX_BATCH_SIZE}, got {0}")]
    BatchSizeOutOfRange(usize),
    #[error("batch size mismatch: config says {expected}, got {got} interviews")]
    BatchSizeMismatch { expected: usize, got: usize },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("field keywords must be exactly {FIELD_KEYWORDS:?}")]
    FieldKeywords,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Finnish,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::English, Language::Finnish];

    /// Identifier of the shipped template for this language.
    pub const fn builtin_template(self) -> &'static str {
        match self {
            Language::English => "english_v1",
            Language::Finnish => "finnish_v1",
        }
    }

    pub const fn other(self) -> Language {
        match self {
            Language::English => Language::Finnish,
            Language::Finnish => Language::English,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::English => "english",
            Language::Finnish => "finnish",
        })
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "english" | "en" => Ok(Language::English),
            "finnish" | "fi" => Ok(Language::Finnish),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub language: Language,
    pub batch_size: usize,
    pub template_id: String,
    pub field_keywords: Vec<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig::for_language(Language::English)
    }
}

impl PromptConfig {
    pub fn for_language(language: Language) -> Self {
        PromptConfig {
            language,
            batch_size: 1,
            template_id: language.builtin_template().to_owned(),
            field_keywords: FIELD_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The same configuration prompting in `language` with its shipped template.
    pub fn with_language(&self, language: Language) -> Self {
        PromptConfig {
            language,
            template_id: language.builtin_template().to_owned(),
            ..self.clone()
        }
    }

    pub fn with_batch_size(&self, batch_size: usize) -> Self {
        PromptConfig { batch_size, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if !(1..=MAX_BATCH_SIZE).contains(&self.batch_size) {
            return Err(PromptError::BatchSizeOutOfRange(self.batch_size));
        }
        if self.field_keywords.iter().map(String::as_str).ne(FIELD_KEYWORDS) {
            return Err(PromptError::FieldKeywords);
        }
        Ok(())
    }
}

/// A rendered prompt and the interviews it covers, in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub interview_ids: Vec<String>,
    pub language: Language,
    pub token_estimate: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    header: String,
    block: String,
}

impl Template {
    pub fn parse(id: impl Into<String>, source: &str) -> Result<Template, PromptError> {
        let mut header = None;
        let mut block_start = 0;
        let mut offset = 0;
        for line in source.split_inclusive('\n') {
            if line.trim_end() == BATCH_DELIMITER {
                header = Some(&source[..offset]);
                block_start = offset + line.len();
                break;
            }
            offset += line.len();
        }
        let header = header.ok_or_else(|| {
            PromptError::InvalidTemplate(format!("missing `{BATCH_DELIMITER}` delimiter line"))
        })?;
        let block = source[block_start..].trim_matches('\n');
        if !block.contains("{source_text}") {
            return Err(PromptError::InvalidTemplate("block lacks {source_text}".into()));
        }
        Ok(Template {
            id: id.into(),
            header: header.trim_end_matches('\n').to_owned(),
            block: block.to_owned(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Template, PromptError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| PromptError::InvalidTemplate(format!("{}: {e}", path.display())))?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Template::parse(id, &source)
    }

    pub fn builtin(id: &str) -> Result<Template, PromptError> {
        let source = match id {
            "english_v1" => ENGLISH_V1,
            "finnish_v1" => FINNISH_V1,
            other => return Err(PromptError::UnknownTemplate(other.to_owned())),
        };
        Template::parse(id, source)
    }

    /// The instruction header with the keyword block filled in.
    pub fn instructions(&self) -> String {
        let keywords: String = FIELD_KEYWORDS.iter().map(|k| format!("{k}:\n")).collect();
        render(&self.header, |name| (name == "field_keywords").then(|| keywords.trim_end().to_owned()))
    }

    pub fn metadata_block(&self, interview: &Interview) -> String {
        render(&self.block, |name| {
            Some(match name {
                "primary_person_name" => nfc(&interview.primary_name),
                "primary_person_id" => nfc(&interview.primary_id),
                "spouse_name" => interview.spouse_name.as_deref().map(nfc).unwrap_or_default(),
                "spouse_id" => interview.spouse_id.as_deref().map(nfc).unwrap_or_default(),
                "source_text" => nfc(&interview.source_text),
                _ => return None,
            })
        })
    }
}

/// Single-pass `{name}` substitution; unknown names are left untouched and
/// substituted values are never rescanned.
fn render(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let name = &after[..close];
                match lookup(name) {
                    Some(v) => out.push_str(&v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders the configured template for `interviews`, in order.
pub fn build_prompt(config: &PromptConfig, interviews: &[Interview]) -> Result<PromptText, PromptError> {
    let template = Template::builtin(&config.template_id)?;
    build_prompt_with(&template, config, interviews)
}

pub fn build_prompt_with(
    template: &Template,
    config: &PromptConfig,
    interviews: &[Interview],
) -> Result<PromptText, PromptError> {
    if interviews.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    config.validate()?;
    if interviews.len() != config.batch_size {
        return Err(PromptError::BatchSizeMismatch {
            expected: config.batch_size,
            got: interviews.len(),
        });
    }
    let mut text = template.instructions();
    text.push('\n');
    for interview in interviews {
        text.push('\n');
        text.push_str(BATCH_DELIMITER);
        text.push_str("\n\n");
        text.push_str(&template.metadata_block(interview));
        text.push('\n');
    }
    let token_estimate = estimate_tokens(&text).max(1);
    Ok(PromptText {
        text,
        interview_ids: interviews.iter().map(|i| i.interview_id.clone()).collect(),
        language: config.language,
        token_estimate,
    })
}

/// Character-based token estimate: `ceil(chars / 4) + ceil(words / 4)`.
///
/// Words are whitespace-separated runs. The estimate is monotone under
/// concatenation and zero for the empty string.
pub fn estimate_tokens(text: &str) -> usize {
    let chars = text.chars().count();
    let words = text.split_whitespace().count();
    chars.div_ceil(4) + words.div_ceil(4)
}

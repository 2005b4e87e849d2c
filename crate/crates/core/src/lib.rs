//! Entity extraction from interview texts with language models, fuzzy
//! evaluation against gold annotations, and distillation into IOB data for
//! training a token classifier.

pub mod cli;
pub mod corpus;
pub mod distill;
pub mod eval;
pub mod gateway;
pub mod prompt;
pub mod response;
pub mod text;

mod rng;

pub use corpus::{Annotation, Entities, FieldCategory, Interview};
pub use eval::{evaluate_corpus, indel_similarity, EvalReport, Scores};
pub use prompt::{build_prompt, Language, PromptConfig, PromptText};
pub use response::{parse_response, ExtractionResult, FormatError, Source};

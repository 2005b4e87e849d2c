//! Chat-completion access: backends, retries, the prompt-language fallback
//! protocol and bounded-parallel corpus runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{Annotation, FieldCategory, Interview, INFLECTION_SUFFIX_CHARS};
use crate::prompt::{build_prompt, estimate_tokens, Language, PromptConfig, PromptError, PromptText};
use crate::response::{parse_response, response_keyword, Expected, ExtractionResult, FormatError};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    /// `false` means greedy decoding; the temperature is then not sent.
    pub sampling: bool,
    pub max_output_tokens: u32,
    pub max_retries: u32,
    pub fallback_language: Option<Language>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.3,
            sampling: false,
            max_output_tokens: 1024,
            max_retries: 3,
            fallback_language: Some(Language::English),
        }
    }
}

impl GenerationConfig {
    pub fn effective_temperature(&self) -> f64 {
        if self.sampling { self.temperature } else { 0.0 }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimit(String),
    #[error("unexpected endpoint response: {0}")]
    Protocol(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::RateLimit(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub interview_ids: Vec<String>,
    pub text: String,
    /// Requests sent for this result, including retries.
    pub attempt_count: u32,
    pub used_language: Language,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// Which attempt a backend is serving.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RequestContext {
    /// Zero-based transport retry counter for the current prompt.
    pub transport_attempt: u32,
    /// Zero-based round of the fallback protocol.
    pub protocol_round: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait Backend: Send + Sync {
    fn send(&self, prompt: &PromptText, gen: &GenerationConfig, ctx: RequestContext) -> Result<Completion, GatewayError>;
}

/// Exponential backoff with equal jitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { base: Duration::from_secs(1), cap: Duration::from_secs(60) }
    }
}

impl Backoff {
    pub const NONE: Backoff = Backoff { base: Duration::ZERO, cap: Duration::ZERO };

    pub fn delay(&self, retry: u32) -> Duration {
        let full = self.base.saturating_mul(1u32 << retry.min(20)).min(self.cap);
        if full.is_zero() {
            return full;
        }
        let half = full / 2;
        half + half.mul_f64(rand::rng().random::<f64>())
    }
}

/// Per-token prices for the cost estimate in run reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        Pricing { prompt_per_1k: 0.01, completion_per_1k: 0.03 }
    }
}

impl Pricing {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 / 1000.0 * self.prompt_per_1k + completion_tokens as f64 / 1000.0 * self.completion_per_1k
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    backoff: Backoff,
    pricing: Pricing,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway { backend: Box::new(backend), backoff: Backoff::default(), pricing: Pricing::default() }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_pricing(mut self, pricing: Pricing) -> Self {
        self.pricing = pricing;
        self
    }

    pub fn pricing(&self) -> Pricing {
        self.pricing
    }

    /// Sends `prompt`, retrying transport failures and rate limits up to
    /// `gen.max_retries` times.
    pub fn complete(&self, prompt: &PromptText, gen: &GenerationConfig) -> Result<RawResponse, GatewayError> {
        self.complete_round(prompt, gen, 0).map_err(|(e, _)| e)
    }

    /// Like [`Gateway::complete`]; on error also returns the request count.
    fn complete_round(
        &self,
        prompt: &PromptText,
        gen: &GenerationConfig,
        protocol_round: u32,
    ) -> Result<RawResponse, (GatewayError, u32)> {
        let started = Instant::now();
        let mut transport_attempt = 0;
        loop {
            let ctx = RequestContext { transport_attempt, protocol_round };
            match self.backend.send(prompt, gen, ctx) {
                Ok(c) => {
                    return Ok(RawResponse {
                        interview_ids: prompt.interview_ids.clone(),
                        text: c.text,
                        attempt_count: transport_attempt + 1,
                        used_language: prompt.language,
                        prompt_tokens: c.prompt_tokens,
                        completion_tokens: c.completion_tokens,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(e) if e.retryable() && transport_attempt < gen.max_retries => {
                    log::warn!("{e}; retrying {:?}", prompt.interview_ids);
                    thread::sleep(self.backoff.delay(transport_attempt));
                    transport_attempt += 1;
                }
                Err(e) => return Err((e, transport_attempt + 1)),
            }
        }
    }
}

/// All protocol attempts for one prompt came back malformed.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("no well-formed response for {interview_ids:?} after {requests} request(s): {last_error}")]
pub struct FormatFailure {
    pub interview_ids: Vec<String>,
    pub requests: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub last_error: FormatError,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error(transparent)]
    Format(#[from] FormatFailure),
    #[error("{error}")]
    Gateway { error: GatewayError, requests: u32 },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl ExtractError {
    pub fn requests(&self) -> u32 {
        match self {
            ExtractError::Format(f) => f.requests,
            ExtractError::Gateway { requests, .. } => *requests,
            ExtractError::Prompt(_) => 0,
        }
    }
}

/// Runs one interview through prompt, completion and parsing, re-running once
/// on a malformed response and then once more in the fallback language.
pub fn extract_with_fallback(
    gateway: &Gateway,
    interview: &Interview,
    config: &PromptConfig,
    gen: &GenerationConfig,
) -> Result<(ExtractionResult, RawResponse), ExtractError> {
    if config.batch_size != 1 {
        return Err(PromptError::BatchSizeMismatch { expected: 1, got: config.batch_size }.into());
    }
    let (mut results, raw) = extract_batch_with_fallback(gateway, std::slice::from_ref(interview), config, gen)?;
    Ok((results.pop().expect("one result per interview"), raw))
}

/// The fallback protocol applied to a whole batch prompt.
pub fn extract_batch_with_fallback(
    gateway: &Gateway,
    interviews: &[Interview],
    config: &PromptConfig,
    gen: &GenerationConfig,
) -> Result<(Vec<ExtractionResult>, RawResponse), ExtractError> {
    let config = config.with_batch_size(interviews.len());
    let expected: Vec<Expected> = interviews.iter().map(Expected::from).collect();
    let mut rounds = vec![config.clone(), config.clone()];
    if let Some(lang) = gen.fallback_language {
        rounds.push(config.with_language(lang));
    }
    let (mut requests, mut prompt_tokens, mut completion_tokens, mut latency) = (0u32, 0u64, 0u64, 0u64);
    let mut last_error = None;
    let mut prompt: Option<PromptText> = None;
    for (round, cfg) in rounds.iter().enumerate() {
        if prompt.as_ref().is_none_or(|p| p.language != cfg.language) {
            prompt = Some(build_prompt(cfg, interviews)?);
        }
        let p = prompt.as_ref().unwrap();
        let mut raw = gateway
            .complete_round(p, gen, round as u32)
            .map_err(|(error, n)| ExtractError::Gateway { error, requests: requests + n })?;
        requests += raw.attempt_count;
        prompt_tokens += raw.prompt_tokens;
        completion_tokens += raw.completion_tokens;
        latency += raw.latency_ms;
        match parse_response(&raw.text, &expected) {
            Ok(results) => {
                raw.attempt_count = requests;
                raw.prompt_tokens = prompt_tokens;
                raw.completion_tokens = completion_tokens;
                raw.latency_ms = latency;
                return Ok((results, raw));
            }
            Err(e) => {
                log::debug!("round {round} malformed for {:?}: {e}", p.interview_ids);
                last_error = Some(e);
            }
        }
    }
    Err(FormatFailure {
        interview_ids: interviews.iter().map(|i| i.interview_id.clone()).collect(),
        requests,
        prompt_tokens,
        completion_tokens,
        last_error: last_error.expect("at least one round"),
    }
    .into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Format,
    Transport,
    Auth,
    RateLimit,
    Protocol,
    Prompt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterviewFailure {
    pub interview_id: String,
    pub kind: FailureKind,
    pub message: String,
}

/// Counters of a corpus run. Everything outside `metadata` is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub interviews: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failures_by_kind: BTreeMap<String, usize>,
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Successful interviews by the language of the prompt that succeeded.
    pub language_usage: BTreeMap<Language, usize>,
    /// Successful interviews that needed the fallback language.
    pub fallback_used: usize,
    pub estimated_cost: f64,
    pub metadata: RunMetadata,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub wall_time_ms: u64,
    pub total_latency_ms: u64,
    pub parallelism: usize,
}

impl RunReport {
    pub fn failure_fraction(&self) -> f64 {
        if self.interviews == 0 { 0.0 } else { self.failed as f64 / self.interviews as f64 }
    }
}

type Outcome = Result<(Vec<ExtractionResult>, RawResponse), ExtractError>;

/// Processes `interviews` in batches of `config.batch_size` with at most
/// `parallelism` requests in flight. Results are in input order.
pub fn run_corpus(
    gateway: &Gateway,
    interviews: &[Interview],
    config: &PromptConfig,
    gen: &GenerationConfig,
    parallelism: usize,
) -> Result<(Vec<Result<ExtractionResult, InterviewFailure>>, RunReport), GatewayError> {
    if parallelism == 0 {
        return Err(GatewayError::Config("parallelism must be at least 1".into()));
    }
    config.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
    gen.validate()?;
    let started = Instant::now();
    let chunks: Vec<&[Interview]> = interviews.chunks(config.batch_size).collect();
    let workers = parallelism.min(chunks.len()).max(1);
    let next = AtomicUsize::new(0);
    let mut outcomes: Vec<Option<Outcome>> = vec![None; chunks.len()];
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, chunks) = (&next, &chunks);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(chunk) = chunks.get(i) else { break };
                let outcome = extract_batch_with_fallback(gateway, chunk, config, gen);
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, outcome) in rx {
            outcomes[i] = Some(outcome);
        }
    });

    let mut report = RunReport { interviews: interviews.len(), ..RunReport::default() };
    let mut results = Vec::with_capacity(interviews.len());
    for (chunk, outcome) in chunks.iter().zip(outcomes) {
        match outcome.expect("every chunk processed") {
            Ok((extractions, raw)) => {
                report.requests += u64::from(raw.attempt_count);
                report.prompt_tokens += raw.prompt_tokens;
                report.completion_tokens += raw.completion_tokens;
                report.metadata.total_latency_ms += raw.latency_ms;
                report.succeeded += extractions.len();
                *report.language_usage.entry(raw.used_language).or_default() += extractions.len();
                if raw.used_language != config.language {
                    report.fallback_used += extractions.len();
                }
                results.extend(extractions.into_iter().map(Ok));
            }
            Err(e) => {
                report.requests += u64::from(e.requests());
                let kind = match &e {
                    ExtractError::Format(f) => {
                        report.prompt_tokens += f.prompt_tokens;
                        report.completion_tokens += f.completion_tokens;
                        FailureKind::Format
                    }
                    ExtractError::Gateway { error, .. } => match error {
                        GatewayError::Transport(_) => FailureKind::Transport,
                        GatewayError::Auth(_) => FailureKind::Auth,
                        GatewayError::RateLimit(_) => FailureKind::RateLimit,
                        GatewayError::Protocol(_) | GatewayError::Config(_) => FailureKind::Protocol,
                    },
                    ExtractError::Prompt(_) => FailureKind::Prompt,
                };
                let key = serde_json::to_value(kind).unwrap().as_str().unwrap().to_owned();
                *report.failures_by_kind.entry(key).or_default() += chunk.len();
                report.failed += chunk.len();
                let message = e.to_string();
                results.extend(chunk.iter().map(|i| {
                    Err(InterviewFailure { interview_id: i.interview_id.clone(), kind, message: message.clone() })
                }));
            }
        }
    }
    report.estimated_cost = gateway.pricing.cost(report.prompt_tokens, report.completion_tokens);
    report.metadata.wall_time_ms = started.elapsed().as_millis() as u64;
    report.metadata.parallelism = workers;
    Ok((results, report))
}

/// Error rates of the mock model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorProfile {
    pub omission_rate: f64,
    pub spurious_rate: f64,
    pub person_swap_rate: f64,
    pub rephrase_rate: f64,
    pub format_break_rate: f64,
    pub seed: u64,
}

impl Default for ErrorProfile {
    fn default() -> Self {
        ErrorProfile::ZERO
    }
}

impl ErrorProfile {
    pub const ZERO: ErrorProfile = ErrorProfile {
        omission_rate: 0.0,
        spurious_rate: 0.0,
        person_swap_rate: 0.0,
        rephrase_rate: 0.0,
        format_break_rate: 0.0,
        seed: 0,
    };

    pub fn validate(&self) -> Result<(), GatewayError> {
        for (name, p) in [
            ("omission_rate", self.omission_rate),
            ("spurious_rate", self.spurious_rate),
            ("person_swap_rate", self.person_swap_rate),
            ("rephrase_rate", self.rephrase_rate),
            ("format_break_rate", self.format_break_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GatewayError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    Omission,
    PersonSwap,
    Rephrase,
    Spurious,
    FormatBreak,
}

/// One error the mock introduced, for checking reports against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub interview_id: String,
    pub kind: InjectionKind,
    pub category: Option<FieldCategory>,
    pub entity: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MockOutput {
    pub text: String,
    pub injections: Vec<Injection>,
}

/// Entities the mock may invent; none resembles the synthetic vocabularies.
pub const SPURIOUS_VOCABULARY: &[&str] = &[
    "purjelento", "golfin peluu", "akvarellimaalaus", "Rotaryklubi", "Lions Club",
    "tennis", "vuorikiipeily", "Partiolippukunta Korpi", "jääkiekko", "astrologia",
    "Kamarikuoro Aalto", "Sirkuskoulu Tähti", "Kuvataidekoulu Pensseli", "moottoriurheilu",
    "lintubongaus", "Tanssiopisto", "Shakkikerho Ratsu", "Radioamatöörit",
];

const FORMAT_BREAK_TEXT: &str = "Here is a Python script that extracts the requested information:\n\n\
```python\nimport re\n\ndef extract(text):\n    return re.findall(r\"[A-Z][a-z]+\", text)\n```\n\n\
Run it on the interview to obtain the fields.";

fn mention_list(list: &[String]) -> String {
    if list.is_empty() { "none".to_owned() } else { list.join(", ") }
}

fn response_block(interview: &Interview, cells: &[Vec<String>; 4]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "PersonName: {}", interview.primary_name);
    let _ = writeln!(s, "PersonID: {}", interview.primary_id);
    for cat in [FieldCategory::PersonHobby, FieldCategory::PersonOrg] {
        let _ = writeln!(s, "{}: {}", response_keyword(cat), mention_list(&cells[cat.index()]));
    }
    let _ = writeln!(s, "SpouseName: {}", interview.spouse_name.as_deref().unwrap_or("none"));
    let _ = writeln!(s, "SpouseID: {}", interview.spouse_id.as_deref().unwrap_or("none"));
    for cat in [FieldCategory::SpouseHobby, FieldCategory::SpouseOrg] {
        let _ = writeln!(s, "{}: {}", response_keyword(cat), mention_list(&cells[cat.index()]));
    }
    s
}

/// Entity cells the mock reports for one interview, with the errors it made.
/// `extra_omission` raises the omission rate, e.g. for later batch positions.
fn mock_cells(
    interview: &Interview,
    gold: &Annotation,
    profile: &ErrorProfile,
    extra_omission: f64,
    log: &mut Vec<Injection>,
) -> [Vec<String>; 4] {
    let id = interview.interview_id.as_str();
    let mut r = rng::derive(profile.seed, &[b"mock-entities", id.as_bytes()]);
    let omission = (profile.omission_rate + extra_omission).min(1.0);
    let mut cells: [Vec<String>; 4] = Default::default();
    let mut note = |kind, category, entity: Option<&str>| {
        log.push(Injection { interview_id: id.to_owned(), kind, category, entity: entity.map(str::to_owned) })
    };
    for (cat, list) in gold.entities.iter() {
        for entity in list {
            // Draw every decision so one rate does not shift another's stream.
            let (u_omit, u_rephrase, u_swap): (f64, f64, f64) = (r.random(), r.random(), r.random());
            let suffix_len = r.random_range(1..=3);
            let suffix: String = (0..suffix_len).map(|_| *INFLECTION_SUFFIX_CHARS.choose(&mut r).unwrap()).collect();
            if u_omit < omission {
                note(InjectionKind::Omission, Some(cat), Some(entity));
                continue;
            }
            let mention = if u_rephrase < profile.rephrase_rate {
                note(InjectionKind::Rephrase, Some(cat), Some(entity));
                format!("{entity}{suffix}")
            } else {
                entity.clone()
            };
            if u_swap < profile.person_swap_rate && interview.has_spouse() {
                note(InjectionKind::PersonSwap, Some(cat), Some(entity));
                cells[cat.other_person().index()].push(mention.clone());
            }
            cells[cat.index()].push(mention);
        }
    }
    for cat in FieldCategory::ALL {
        if cat.is_spouse() && !interview.has_spouse() {
            continue;
        }
        let u: f64 = r.random();
        let pick = *SPURIOUS_VOCABULARY.choose(&mut r).unwrap();
        if u < profile.spurious_rate && !cells[cat.index()].iter().any(|e| e == pick) {
            note(InjectionKind::Spurious, Some(cat), Some(pick));
            cells[cat.index()].push(pick.to_owned());
        }
    }
    cells
}

fn format_breaks(id: &str, profile: &ErrorProfile, language: Language, round: Option<u32>) -> bool {
    let lang = language.to_string();
    let round = round.map(|r| r.to_le_bytes());
    let mut parts: Vec<&[u8]> = vec![b"mock-format", id.as_bytes(), lang.as_bytes()];
    if let Some(r) = &round {
        parts.push(r);
    }
    rng::unit(profile.seed, &parts) < profile.format_break_rate
}

/// A well-shaped response for one interview, derived from its gold entities.
pub fn mock_complete(interview: &Interview, gold: &Annotation, profile: &ErrorProfile) -> String {
    let mut log = Vec::new();
    if format_breaks(&interview.interview_id, profile, Language::English, None) {
        return FORMAT_BREAK_TEXT.to_owned();
    }
    response_block(interview, &mock_cells(interview, gold, profile, 0.0, &mut log))
}

/// Configuration of the deterministic mock model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub profile: ErrorProfile,
    /// Profiles replacing `profile` for prompts in a given language.
    pub language_overrides: BTreeMap<Language, ErrorProfile>,
    /// A broken interview stays broken when the same prompt is re-run.
    pub format_break_persistent: bool,
    /// Added to the omission rate per position in a batch (0 for the first).
    pub positional_degradation: f64,
    /// Transport failures before each prompt first succeeds.
    pub transport_failures: u32,
    pub auth_failure: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            profile: ErrorProfile::ZERO,
            language_overrides: BTreeMap::new(),
            format_break_persistent: true,
            positional_degradation: 0.0,
            transport_failures: 0,
            auth_failure: false,
        }
    }
}

impl MockConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        self.profile.validate()?;
        for p in self.language_overrides.values() {
            p.validate()?;
        }
        if !(0.0..=1.0).contains(&self.positional_degradation) {
            return Err(GatewayError::Config("positional_degradation must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn profile_for(&self, language: Language) -> &ErrorProfile {
        self.language_overrides.get(&language).unwrap_or(&self.profile)
    }
}

/// Answers prompts from gold annotations with configurable errors.
pub struct MockBackend {
    config: MockConfig,
    interviews: HashMap<String, Interview>,
    gold: HashMap<String, Annotation>,
}

impl MockBackend {
    /// Interviews without gold are answered with empty fields.
    pub fn new(config: MockConfig, interviews: &[Interview], gold: &[Annotation]) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(MockBackend {
            config,
            interviews: interviews.iter().map(|i| (i.interview_id.clone(), i.clone())).collect(),
            gold: gold.iter().map(|a| (a.interview_id.clone(), a.clone())).collect(),
        })
    }

    /// The response text and injected errors for a prompt.
    pub fn respond(
        &self,
        ids: &[String],
        language: Language,
        protocol_round: u32,
    ) -> Result<MockOutput, GatewayError> {
        let profile = self.config.profile_for(language);
        let round = (!self.config.format_break_persistent).then_some(protocol_round);
        let mut injections = Vec::new();
        let mut text = String::new();
        let mut broken = false;
        for (position, id) in ids.iter().enumerate() {
            let interview = self
                .interviews
                .get(id)
                .ok_or_else(|| GatewayError::Protocol(format!("mock has no interview `{id}`")))?;
            let empty = Annotation::new(id.clone(), Default::default());
            let gold = self.gold.get(id).unwrap_or(&empty);
            let extra = self.config.positional_degradation * position as f64;
            let cells = mock_cells(interview, gold, profile, extra, &mut injections);
            if format_breaks(id, profile, language, round) {
                injections.push(Injection {
                    interview_id: id.clone(),
                    kind: InjectionKind::FormatBreak,
                    category: None,
                    entity: None,
                });
                broken = true;
            }
            if position > 0 {
                text.push('\n');
            }
            text.push_str(&response_block(interview, &cells));
        }
        if broken {
            text = FORMAT_BREAK_TEXT.to_owned();
        }
        Ok(MockOutput { text, injections })
    }
}

impl Backend for MockBackend {
    fn send(&self, prompt: &PromptText, _gen: &GenerationConfig, ctx: RequestContext) -> Result<Completion, GatewayError> {
        if self.config.auth_failure {
            return Err(GatewayError::Auth("mock configured to reject credentials".into()));
        }
        if ctx.transport_attempt < self.config.transport_failures {
            return Err(GatewayError::Transport("mock connection reset".into()));
        }
        let out = self.respond(&prompt.interview_ids, prompt.language, ctx.protocol_round)?;
        Ok(Completion {
            completion_tokens: estimate_tokens(&out.text) as u64,
            prompt_tokens: prompt.token_estimate as u64,
            text: out.text,
        })
    }
}

pub const DEFAULT_API_KEY_ENV: &str = "ENTEX_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEndpoint {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Environment variable that overrides `api_key` when set.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpEndpoint {
    fn default() -> Self {
        HttpEndpoint {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4-turbo".into(),
            api_key: None,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 300,
        }
    }
}

pub struct HttpBackend {
    endpoint: HttpEndpoint,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        let api_key = std::env::var(&endpoint.api_key_env).ok().or_else(|| endpoint.api_key.clone());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { endpoint, api_key, agent }
    }
}

/// The JSON body of a chat-completion request.
pub fn request_body(model: &str, prompt: &PromptText, gen: &GenerationConfig) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": gen.effective_temperature(),
        "max_tokens": gen.max_output_tokens,
    })
}

/// Extracts the completion from a chat-completion response body.
pub fn parse_completion(body: &Value) -> Result<Completion, GatewayError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Protocol("response lacks choices[0].message.content".into()))?;
    let usage = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        text: text.to_owned(),
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
    })
}

impl Backend for HttpBackend {
    fn send(&self, prompt: &PromptText, gen: &GenerationConfig, _ctx: RequestContext) -> Result<Completion, GatewayError> {
        let mut req = self.agent.post(&self.endpoint.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request_body(&self.endpoint.model, prompt, gen))
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => {
                let value: Value =
                    serde_json::from_str(&body).map_err(|e| GatewayError::Protocol(format!("invalid JSON: {e}")))?;
                parse_completion(&value)
            }
            401 | 403 => Err(GatewayError::Auth(format!("HTTP {status}"))),
            429 => Err(GatewayError::RateLimit(format!("HTTP {status}"))),
            500..=599 => Err(GatewayError::Transport(format!("HTTP {status}"))),
            _ => Err(GatewayError::Protocol(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>()))),
        }
    }
}

/// Endpoint selection, as written in run configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EndpointConfig {
    Http(HttpEndpoint),
    Mock(MockConfig),
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig::Mock(MockConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, Entities, SyntheticProfile};
    use crate::eval::indel_similarity;
    use crate::prompt::tests::sample;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<Result<&'static str, GatewayError>>>,
        seen: Mutex<Vec<(Language, RequestContext)>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<&'static str, GatewayError>>) -> Self {
            replies.reverse();
            Scripted { replies: Mutex::new(replies), seen: Mutex::new(Vec::new()) }
        }
    }

    impl Backend for Scripted {
        fn send(&self, p: &PromptText, _: &GenerationConfig, ctx: RequestContext) -> Result<Completion, GatewayError> {
            self.seen.lock().unwrap().push((p.language, ctx));
            let r = self.replies.lock().unwrap().pop().unwrap_or(Err(GatewayError::Transport("down".into())));
            r.map(|t| Completion { text: t.to_owned(), prompt_tokens: 10, completion_tokens: 5 })
        }
    }

    fn prompt() -> PromptText {
        build_prompt(&PromptConfig::default(), &[sample("x")]).unwrap()
    }

    fn gateway(b: impl Backend + 'static) -> Gateway {
        Gateway::new(b).with_backoff(Backoff::NONE)
    }

    fn synth(n: usize) -> (Vec<Interview>, Vec<Annotation>) {
        generate_synthetic_corpus(&SyntheticProfile::default(), n).unwrap().into_iter().unzip()
    }

    const VALID: &str = "PersonName: A\nPersonHobbies: fishing\nPersonSocialOrgs: none\n\
                         SpouseName: B\nSpouseHobbies: none\nSpouseSocialOrgs: none\n";

    #[test]
    fn greedy_by_default() {
        let g = GenerationConfig::default();
        assert!(!g.sampling);
        assert_eq!(g.effective_temperature(), 0.0);
        let s = GenerationConfig { sampling: true, ..g };
        assert_eq!(s.effective_temperature(), 0.3);
        assert!(GenerationConfig { temperature: -1.0, ..GenerationConfig::default() }.validate().is_err());
    }

    #[test]
    fn first_try_success() {
        let raw = gateway(Scripted::new(vec![Ok(VALID)])).complete(&prompt(), &GenerationConfig::default()).unwrap();
        assert_eq!(raw.attempt_count, 1);
        assert_eq!(raw.interview_ids, ["x"]);
    }

    #[test]
    fn transport_retries_then_success() {
        let down = || Err(GatewayError::Transport("reset".into()));
        let gen = GenerationConfig { max_retries: 3, ..GenerationConfig::default() };
        let raw = gateway(Scripted::new(vec![down(), down(), Ok(VALID)])).complete(&prompt(), &gen).unwrap();
        assert_eq!(raw.attempt_count, 3);
    }

    #[test]
    fn transport_exhausted() {
        let backend = Scripted::new(vec![]);
        let gen = GenerationConfig { max_retries: 2, ..GenerationConfig::default() };
        let g = gateway(backend);
        assert!(matches!(g.complete(&prompt(), &gen), Err(GatewayError::Transport(_))));
        let (err, n) = g.complete_round(&prompt(), &gen, 0).unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)));
        assert_eq!(n, 3);
    }

    #[test]
    fn auth_not_retried_rate_limit_retried() {
        let b = Scripted::new(vec![Err(GatewayError::Auth("401".into())), Ok(VALID)]);
        let g = gateway(b);
        assert!(matches!(g.complete(&prompt(), &GenerationConfig::default()), Err(GatewayError::Auth(_))));
        let b = Scripted::new(vec![Err(GatewayError::RateLimit("429".into())), Ok(VALID)]);
        assert_eq!(gateway(b).complete(&prompt(), &GenerationConfig::default()).unwrap().attempt_count, 2);
    }

    #[test]
    fn backoff_bounds() {
        let b = Backoff::default();
        for k in 0..10 {
            let d = b.delay(k);
            let full = Duration::from_secs(1 << k).min(Duration::from_secs(60));
            assert!(d >= full / 2 && d <= full);
        }
        assert_eq!(Backoff::NONE.delay(5), Duration::ZERO);
    }

    fn finnish() -> PromptConfig {
        PromptConfig::for_language(Language::Finnish)
    }

    #[test]
    fn fallback_valid_first() {
        let g = gateway(Scripted::new(vec![Ok(VALID)]));
        let (x, raw) = extract_with_fallback(&g, &sample("x"), &finnish(), &GenerationConfig::default()).unwrap();
        assert_eq!(raw.used_language, Language::Finnish);
        assert_eq!(raw.attempt_count, 1);
        assert_eq!(x.entities[FieldCategory::PersonHobby], ["fishing"]);
    }

    #[test]
    fn fallback_switches_language() {
        let b = Scripted::new(vec![Ok("garbage"), Ok("garbage"), Ok(VALID)]);
        let g = gateway(b);
        let (_, raw) = extract_with_fallback(&g, &sample("x"), &finnish(), &GenerationConfig::default()).unwrap();
        assert_eq!(raw.used_language, Language::English);
        assert_eq!(raw.attempt_count, 3);
        assert_eq!(raw.prompt_tokens, 30);
    }

    #[test]
    fn fallback_exhausted() {
        let g = gateway(Scripted::new(vec![Ok("a"), Ok("b"), Ok("c"), Ok(VALID)]));
        let err = extract_with_fallback(&g, &sample("x"), &finnish(), &GenerationConfig::default()).unwrap_err();
        let ExtractError::Format(f) = err else { panic!("{err:?}") };
        assert_eq!(f.interview_ids, ["x"]);
        assert_eq!(f.requests, 3);
    }

    #[test]
    fn no_fallback_language_stops_after_retry() {
        let g = gateway(Scripted::new(vec![Ok("a"), Ok("b"), Ok(VALID)]));
        let gen = GenerationConfig { fallback_language: None, ..GenerationConfig::default() };
        let err = extract_with_fallback(&g, &sample("x"), &finnish(), &gen).unwrap_err();
        assert_eq!(err.requests(), 2);
    }

    #[test]
    fn fallback_requires_single_interview() {
        let g = gateway(Scripted::new(vec![Ok(VALID)]));
        let cfg = finnish().with_batch_size(2);
        assert!(matches!(
            extract_with_fallback(&g, &sample("x"), &cfg, &GenerationConfig::default()),
            Err(ExtractError::Prompt(_))
        ));
    }

    #[test]
    fn mock_identity_profile_reproduces_gold() {
        let (interviews, gold) = synth(200);
        for (i, a) in interviews.iter().zip(&gold) {
            let text = mock_complete(i, a, &ErrorProfile::ZERO);
            let parsed = parse_response(&text, &[Expected::from(i)]).unwrap().pop().unwrap();
            assert_eq!(parsed.entities, a.entities, "{}", i.interview_id);
        }
    }

    #[test]
    fn mock_full_omission_empties_fields() {
        let (interviews, gold) = synth(50);
        let profile = ErrorProfile { omission_rate: 1.0, ..ErrorProfile::ZERO };
        for (i, a) in interviews.iter().zip(&gold) {
            let parsed = parse_response(&mock_complete(i, a, &profile), &[Expected::from(i)]).unwrap();
            assert!(parsed[0].entities.is_empty());
        }
    }

    #[test]
    fn mock_is_deterministic_and_logs() {
        let (interviews, gold) = synth(30);
        let cfg = MockConfig {
            profile: ErrorProfile {
                omission_rate: 0.2,
                spurious_rate: 0.2,
                person_swap_rate: 0.2,
                rephrase_rate: 0.2,
                format_break_rate: 0.1,
                seed: 9,
            },
            ..MockConfig::default()
        };
        let m = MockBackend::new(cfg, &interviews, &gold).unwrap();
        let ids: Vec<String> = interviews.iter().map(|i| i.interview_id.clone()).collect();
        let mut kinds = std::collections::HashSet::new();
        for id in &ids {
            let a = m.respond(std::slice::from_ref(id), Language::English, 0).unwrap();
            let b = m.respond(std::slice::from_ref(id), Language::English, 1).unwrap();
            assert_eq!(a, b, "persistent mock must repeat itself");
            kinds.extend(a.injections.iter().map(|x| x.kind));
        }
        assert_eq!(kinds.len(), 5, "{kinds:?}");
    }

    #[test]
    fn spurious_vocabulary_is_far_from_gold_vocabulary() {
        let p = SyntheticProfile::default();
        for s in SPURIOUS_VOCABULARY {
            for g in p.hobby_vocabulary.iter().chain(&p.org_vocabulary) {
                assert!(indel_similarity(s, g) < 0.6, "{s} ~ {g}");
            }
        }
    }

    #[test]
    fn swap_duplicates_into_other_person() {
        let i = sample("x");
        let gold = Annotation::new("x", Entities::from([(FieldCategory::PersonHobby, vec!["kalastus"])]));
        let profile = ErrorProfile { person_swap_rate: 1.0, ..ErrorProfile::ZERO };
        let parsed = parse_response(&mock_complete(&i, &gold, &profile), &[Expected::from(&i)]).unwrap();
        assert_eq!(parsed[0].entities[FieldCategory::PersonHobby], ["kalastus"]);
        assert_eq!(parsed[0].entities[FieldCategory::SpouseHobby], ["kalastus"]);
    }

    #[test]
    fn run_corpus_preserves_order_and_accounts() {
        let (interviews, gold) = synth(100);
        let m = MockBackend::new(MockConfig::default(), &interviews, &gold).unwrap();
        let g = gateway(m);
        let (results, report) = run_corpus(&g, &interviews, &PromptConfig::default(), &GenerationConfig::default(), 8).unwrap();
        assert_eq!(results.len(), 100);
        assert_eq!(report.failed, 0);
        assert_eq!(report.requests, 100);
        for ((r, i), a) in results.iter().zip(&interviews).zip(&gold) {
            let r = r.as_ref().unwrap();
            assert_eq!(r.interview_id, i.interview_id);
            assert_eq!(r.entities, a.entities);
        }
        assert!(run_corpus(&g, &interviews, &PromptConfig::default(), &GenerationConfig::default(), 0).is_err());
    }

    #[test]
    fn run_corpus_independent_of_parallelism() {
        let (interviews, gold) = synth(60);
        let cfg = MockConfig {
            profile: ErrorProfile { omission_rate: 0.3, spurious_rate: 0.3, format_break_rate: 0.2, seed: 4, ..ErrorProfile::ZERO },
            ..MockConfig::default()
        };
        let g = gateway(MockBackend::new(cfg, &interviews, &gold).unwrap());
        let pc = PromptConfig::default().with_batch_size(2);
        let (a, ra) = run_corpus(&g, &interviews, &pc, &GenerationConfig::default(), 1).unwrap();
        let (b, rb) = run_corpus(&g, &interviews, &pc, &GenerationConfig::default(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(RunReport { metadata: Default::default(), ..ra }, RunReport { metadata: Default::default(), ..rb });
    }

    #[test]
    fn run_corpus_fallback_usage() {
        let (interviews, gold) = synth(100);
        let mut overrides = BTreeMap::new();
        overrides.insert(Language::English, ErrorProfile::ZERO);
        let cfg = MockConfig {
            profile: ErrorProfile { format_break_rate: 1.0, ..ErrorProfile::ZERO },
            language_overrides: overrides,
            ..MockConfig::default()
        };
        let g = gateway(MockBackend::new(cfg, &interviews, &gold).unwrap());
        let (results, report) = run_corpus(&g, &interviews, &finnish(), &GenerationConfig::default(), 4).unwrap();
        assert!(results.iter().all(Result::is_ok));
        assert_eq!(report.fallback_used, 100);
        assert_eq!(report.language_usage.get(&Language::English), Some(&100));
        assert_eq!(report.requests, 300);
    }

    #[test]
    fn run_corpus_aggregates_auth_failures() {
        let (interviews, gold) = synth(5);
        let cfg = MockConfig { auth_failure: true, ..MockConfig::default() };
        let g = gateway(MockBackend::new(cfg, &interviews, &gold).unwrap());
        let (results, report) = run_corpus(&g, &interviews, &PromptConfig::default(), &GenerationConfig::default(), 2).unwrap();
        assert!(results.iter().all(|r| r.as_ref().is_err_and(|f| f.kind == FailureKind::Auth)));
        assert_eq!(report.failures_by_kind.get("auth"), Some(&5));
    }

    #[test]
    fn mock_transport_failures_are_retried() {
        let (interviews, gold) = synth(3);
        let cfg = MockConfig { transport_failures: 2, ..MockConfig::default() };
        let g = gateway(MockBackend::new(cfg, &interviews, &gold).unwrap());
        let (results, report) = run_corpus(&g, &interviews, &PromptConfig::default(), &GenerationConfig::default(), 1).unwrap();
        assert!(results.iter().all(Result::is_ok));
        assert_eq!(report.requests, 9);
    }

    #[test]
    fn wire_format() {
        let p = prompt();
        let body = request_body("m", &p, &GenerationConfig::default());
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], p.text.as_str());
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 1024);
        let c = parse_completion(&json!({"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}))
            .unwrap();
        assert_eq!(c, Completion { text: "hi".into(), prompt_tokens: 3, completion_tokens: 1 });
        assert!(parse_completion(&json!({"choices":[]})).is_err());
    }

    /// Serves canned HTTP responses, one per connection, and records request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_owned();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    #[test]
    fn http_round_trip_with_rate_limit() {
        let ok = json!({"choices":[{"message":{"content": VALID}}],"usage":{"prompt_tokens":7,"completion_tokens":2}});
        let (url, server) = serve(vec![(429, "{}".into()), (200, ok.to_string())]);
        let endpoint = HttpEndpoint {
            url,
            model: "test-model".into(),
            api_key: Some("k".into()),
            api_key_env: "ENTEX_TEST_UNSET_KEY".into(),
            timeout_secs: 10,
        };
        let g = gateway(HttpBackend::new(endpoint));
        let raw = g.complete(&prompt(), &GenerationConfig::default()).unwrap();
        assert_eq!(raw.attempt_count, 2);
        assert_eq!((raw.prompt_tokens, raw.completion_tokens), (7, 2));
        assert_eq!(raw.text, VALID);
        let bodies = server.join().unwrap();
        let (auth, body) = bodies[1].split_once('\n').unwrap();
        assert_eq!(auth, "authorization: Bearer k");
        let body: Value = serde_json::from_str(body).unwrap();
        assert_eq!(body["model"], "test-model");
    }

    #[test]
    fn http_auth_error() {
        let (url, server) = serve(vec![(401, "{}".into())]);
        let endpoint = HttpEndpoint { url, api_key_env: "ENTEX_TEST_UNSET_KEY".into(), ..HttpEndpoint::default() };
        let g = gateway(HttpBackend::new(endpoint));
        assert!(matches!(g.complete(&prompt(), &GenerationConfig::default()), Err(GatewayError::Auth(_))));
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn endpoint_config_json() {
        let e: EndpointConfig = serde_json::from_str(r#"{"kind":"mock","profile":{"omission_rate":0.1}}"#).unwrap();
        let EndpointConfig::Mock(m) = e else { panic!() };
        assert_eq!(m.profile.omission_rate, 0.1);
        assert!(m.format_break_persistent);
        let e: EndpointConfig = serde_json::from_str(r#"{"kind":"http","url":"http://x","model":"m"}"#).unwrap();
        assert!(matches!(e, EndpointConfig::Http(h) if h.api_key_env == DEFAULT_API_KEY_ENV));
    }
}
